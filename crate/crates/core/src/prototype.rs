//! Per-class visual prototypes.
//!
//! Prototypes start as the mean of each class's most confidently classified
//! samples. Each refresh round then scores every sample by how well its visual
//! similarity profile (cosine to every prototype) agrees with the semantic
//! profile of its labeled class (a row of the relation graph), and rebuilds
//! every prototype as the score-weighted mean of the samples labeled with it.
//!
//! The agreement score is `1 / (KL(softmax(s_t / T) || softmax(s_v / T)) + eps)^gamma`.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::dataset::{l2_norm, Dataset};
use crate::error::{Error, Result};
use crate::graph::RelationMatrix;
use crate::io::{fmt_float, parse_f64, parse_usize, read_table, write_text, Header};

pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_GAMMA: f64 = 1.0;
pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_ROUNDS: usize = 2;

/// How many top-confidence samples seed each initial prototype.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TopK {
    /// `max(5, ceil(0.05 * class_size))`
    #[default]
    Auto,
    Fixed(usize),
}

impl TopK {
    pub fn resolve(self, class_size: usize) -> usize {
        match self {
            TopK::Auto => 5.max((class_size as f64 * 0.05).ceil() as usize),
            TopK::Fixed(k) => k,
        }
    }
}

impl fmt::Display for TopK {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopK::Auto => f.write_str("auto"),
            TopK::Fixed(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for TopK {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(TopK::Auto);
        }
        match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(TopK::Fixed(k)),
            _ => Err(Error::Config(format!(
                "top-k must be `auto` or a positive integer, got {s:?}"
            ))),
        }
    }
}

/// Whether refreshed prototypes weight samples by their consistence score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PrototypeWeighting {
    /// Every score treated as 1: the prototype is the plain class mean.
    Constant,
    #[default]
    Weighting,
}

impl fmt::Display for PrototypeWeighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PrototypeWeighting::Constant => "constant",
            PrototypeWeighting::Weighting => "weighting",
        })
    }
}

impl FromStr for PrototypeWeighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "constant" => Ok(PrototypeWeighting::Constant),
            "weighting" | "weighted" => Ok(PrototypeWeighting::Weighting),
            other => Err(Error::Config(format!("unknown prototype weighting {other:?}"))),
        }
    }
}

/// Softmax temperature, contrast exponent and floor of the consistence score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistenceParams {
    pub temperature: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

impl Default for ConsistenceParams {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            gamma: DEFAULT_GAMMA,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl ConsistenceParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("temperature", self.temperature),
            ("gamma", self.gamma),
            ("epsilon", self.epsilon),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be a finite value > 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PrototypeParams {
    pub top_k: TopK,
    pub consistence: ConsistenceParams,
    pub rounds: usize,
    pub weighting: PrototypeWeighting,
}

impl PrototypeParams {
    pub fn new() -> Self {
        Self {
            rounds: DEFAULT_ROUNDS,
            ..Self::default()
        }
    }
}

/// Semantic and visual similarity profiles of one sample, both of length C.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityVectors {
    pub semantic: Vec<f64>,
    pub visual: Vec<f64>,
}

/// Prototype rows plus the per-sample consistence scores that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    pub prototypes: Vec<Vec<f64>>,
    pub consistence: Vec<f64>,
    pub round: usize,
}

impl PrototypeSet {
    pub fn num_classes(&self) -> usize {
        self.prototypes.len()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.first().map_or(0, Vec::len)
    }
}

/// `softmax(x / temperature)`, computed with the max subtracted.
pub fn softmax(values: &[f64], temperature: f64) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| ((v - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `KL(p || q) = sum_c p_c ln(p_c / q_c)`; terms with `p_c = 0` contribute 0.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pc, _)| **pc > 0.0)
        .map(|(pc, qc)| pc * (pc / qc).ln())
        .sum()
}

pub fn consistence_score(vecs: &SimilarityVectors, params: &ConsistenceParams) -> Result<f64> {
    if vecs.semantic.len() != vecs.visual.len() {
        return Err(Error::Dimension(format!(
            "semantic profile has length {}, visual {}",
            vecs.semantic.len(),
            vecs.visual.len()
        )));
    }
    if vecs.semantic.iter().chain(&vecs.visual).any(|x| !x.is_finite()) {
        return Err(Error::Numerical(
            "similarity profile contains a non-finite value".into(),
        ));
    }
    let p = softmax(&vecs.semantic, params.temperature);
    let q = softmax(&vecs.visual, params.temperature);
    // Rounding can push the divergence of near-identical distributions a hair below zero.
    let kl = kl_divergence(&p, &q).max(0.0);
    Ok((kl + params.epsilon).powf(-params.gamma))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let denom = l2_norm(a) * l2_norm(b);
    if denom == 0.0 {
        0.0
    } else {
        (dot / denom).clamp(-1.0, 1.0)
    }
}

/// Cosine of `features` with every prototype row.
pub fn visual_profile(features: &[f64], prototypes: &[Vec<f64>]) -> Vec<f64> {
    prototypes.iter().map(|p| cosine(features, p)).collect()
}

/// `sum_i g_i p_i / sum_i p_i`, accumulated in input order.
pub fn weighted_prototype(features: &[&[f64]], scores: &[f64]) -> Result<Vec<f64>> {
    let first = features
        .first()
        .ok_or_else(|| Error::Validation("cannot build a prototype from zero samples".into()))?;
    if features.len() != scores.len() {
        return Err(Error::Dimension(format!(
            "{} feature vectors but {} scores",
            features.len(),
            scores.len()
        )));
    }
    if scores.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::Validation("prototype scores must be finite and > 0".into()));
    }
    let mut acc = vec![0.0; first.len()];
    let mut total = 0.0;
    for (g, &p) in features.iter().zip(scores) {
        for (a, x) in acc.iter_mut().zip(g.iter()) {
            *a += x * p;
        }
        total += p;
    }
    acc.iter_mut().for_each(|a| *a /= total);
    Ok(acc)
}

fn finish_row(mut row: Vec<f64>, renormalize: bool) -> Vec<f64> {
    if renormalize {
        let n = l2_norm(&row);
        if n > 0.0 {
            row.iter_mut().for_each(|x| *x /= n);
        }
    }
    row
}

fn require_all_classes(dataset: &Dataset) -> Result<Vec<Vec<usize>>> {
    let members = dataset.members_by_class();
    let empty: Vec<usize> = members
        .iter()
        .enumerate()
        .filter(|(_, m)| m.is_empty())
        .map(|(c, _)| c)
        .collect();
    if empty.is_empty() {
        Ok(members)
    } else {
        Err(Error::EmptyClasses(empty))
    }
}

/// Mean of the `k` samples per class with the highest confidence on their
/// labeled class. Ties in confidence go to the earlier sample.
pub fn initial_prototypes(dataset: &Dataset, confidences: &[f64], top_k: TopK) -> Result<PrototypeSet> {
    if confidences.len() != dataset.len() {
        return Err(Error::Dimension(format!(
            "{} confidences for {} samples",
            confidences.len(),
            dataset.len()
        )));
    }
    if let TopK::Fixed(0) = top_k {
        return Err(Error::Config("top-k must be >= 1".into()));
    }
    let members = require_all_classes(dataset)?;
    let samples = dataset.samples();
    let prototypes = members
        .iter()
        .map(|idx| {
            let mut ranked = idx.clone();
            ranked.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]).then(a.cmp(&b)));
            ranked.truncate(top_k.resolve(idx.len()).min(idx.len()));
            let feats: Vec<&[f64]> = ranked.iter().map(|&i| samples[i].features.as_slice()).collect();
            let ones = vec![1.0; feats.len()];
            weighted_prototype(&feats, &ones).map(|row| finish_row(row, dataset.is_normalized()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PrototypeSet {
        prototypes,
        consistence: vec![1.0; dataset.len()],
        round: 0,
    })
}

/// Consistence score of every sample against the current prototypes.
pub fn score_samples(
    dataset: &Dataset,
    relation: &RelationMatrix,
    prototypes: &[Vec<f64>],
    params: &ConsistenceParams,
) -> Result<Vec<f64>> {
    if relation.size() != dataset.num_classes() || prototypes.len() != dataset.num_classes() {
        return Err(Error::Dimension(format!(
            "dataset has {} classes, relation graph {}, prototypes {}",
            dataset.num_classes(),
            relation.size(),
            prototypes.len()
        )));
    }
    dataset
        .samples()
        .par_iter()
        .map(|s| {
            let vecs = SimilarityVectors {
                semantic: relation.row(s.noisy_label).to_vec(),
                visual: visual_profile(&s.features, prototypes),
            };
            consistence_score(&vecs, params)
        })
        .collect()
}

/// Rebuilds every prototype from the samples labeled with it.
pub fn rebuild_prototypes(dataset: &Dataset, scores: &[f64], weighting: PrototypeWeighting) -> Result<Vec<Vec<f64>>> {
    let members = require_all_classes(dataset)?;
    let samples = dataset.samples();
    members
        .par_iter()
        .map(|idx| {
            let feats: Vec<&[f64]> = idx.iter().map(|&i| samples[i].features.as_slice()).collect();
            let weights: Vec<f64> = match weighting {
                PrototypeWeighting::Constant => vec![1.0; idx.len()],
                PrototypeWeighting::Weighting => idx.iter().map(|&i| scores[i]).collect(),
            };
            weighted_prototype(&feats, &weights).map(|row| finish_row(row, dataset.is_normalized()))
        })
        .collect()
}

/// Initial prototypes followed by `params.rounds` score-and-rebuild rounds.
pub fn refresh(
    dataset: &Dataset,
    relation: &RelationMatrix,
    confidences: &[f64],
    params: &PrototypeParams,
) -> Result<PrototypeSet> {
    params.consistence.validate()?;
    let mut set = initial_prototypes(dataset, confidences, params.top_k)?;
    for round in 1..=params.rounds {
        let scores = score_samples(dataset, relation, &set.prototypes, &params.consistence)?;
        let prototypes = rebuild_prototypes(dataset, &scores, params.weighting)?;
        set = PrototypeSet {
            prototypes,
            consistence: scores,
            round,
        };
    }
    Ok(set)
}

/// Writes `class_id<TAB>v_1..v_d` and the companion `id<TAB>p_i` scores file.
pub fn write_prototypes(
    prototypes_path: &Path,
    scores_path: &Path,
    set: &PrototypeSet,
    dataset: &Dataset,
    provenance: Option<&Header>,
) -> Result<()> {
    if set.consistence.len() != dataset.len() {
        return Err(Error::Dimension("scores do not cover the dataset".into()));
    }
    let mut header = Header::new()
        .with("C", set.num_classes())
        .with("d", set.dim())
        .with("round", set.round);
    if let Some(extra) = provenance {
        header.extend(extra);
    }
    let mut out = header.render();
    out.push('\n');
    for (c, row) in set.prototypes.iter().enumerate() {
        let _ = write!(out, "{c}");
        for x in row {
            let _ = write!(out, "\t{}", fmt_float(*x));
        }
        out.push('\n');
    }
    write_text(prototypes_path, &out)?;

    let mut out = header.render();
    out.push('\n');
    for (s, p) in dataset.samples().iter().zip(&set.consistence) {
        let _ = writeln!(out, "{}\t{}", s.id, fmt_float(*p));
    }
    write_text(scores_path, &out)
}

/// Reads a prototypes file and its scores, aligning scores to `dataset` order.
pub fn read_prototypes(prototypes_path: &Path, scores_path: &Path, dataset: &Dataset) -> Result<PrototypeSet> {
    let table = read_table(prototypes_path, true)?;
    let c: usize = table.header.require("C", prototypes_path)?;
    let d: usize = table.header.require("d", prototypes_path)?;
    let round: usize = table.header.require("round", prototypes_path)?;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; c];
    for (line, cols) in table.rows {
        if cols.len() != d + 1 {
            return Err(Error::parse(
                prototypes_path,
                line,
                format!("expected {} columns", d + 1),
            ));
        }
        let class = parse_usize(prototypes_path, line, &cols[0])?;
        if class >= c {
            return Err(Error::parse(
                prototypes_path,
                line,
                format!("class {class} out of range"),
            ));
        }
        rows[class] = Some(
            cols[1..]
                .iter()
                .map(|raw| parse_f64(prototypes_path, line, raw))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    let prototypes = rows
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.ok_or_else(|| Error::Reference(format!("missing prototype row for class {i}"))))
        .collect::<Result<Vec<_>>>()?;

    let table = read_table(scores_path, false)?;
    let mut by_id = std::collections::HashMap::with_capacity(table.rows.len());
    for (line, cols) in table.rows {
        if cols.len() != 2 {
            return Err(Error::parse(scores_path, line, "expected `id<TAB>score`"));
        }
        by_id.insert(cols[0].clone(), parse_f64(scores_path, line, &cols[1])?);
    }
    let consistence = dataset
        .samples()
        .iter()
        .map(|s| {
            by_id
                .get(&s.id)
                .copied()
                .ok_or_else(|| Error::Reference(format!("no consistence score for sample {:?}", s.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PrototypeSet {
        prototypes,
        consistence,
        round,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{normalize_features, ClassMeta, Sample, Taxonomy};

    fn params(gamma: f64, epsilon: f64, temperature: f64) -> ConsistenceParams {
        ConsistenceParams {
            temperature,
            gamma,
            epsilon,
        }
    }

    #[test]
    fn identical_profiles_score_eps_to_minus_gamma() {
        let v = SimilarityVectors {
            semantic: vec![0.3, -0.2, 0.9],
            visual: vec![0.3, -0.2, 0.9],
        };
        let p = consistence_score(&v, &params(1.0, 1e-6, 0.1)).unwrap();
        assert!((p - 1e6).abs() / 1e6 < 1e-12);
        let p2 = consistence_score(&v, &params(2.0, 1e-3, 0.1)).unwrap();
        assert!((p2 - 1e6).abs() / 1e6 < 1e-12);
    }

    #[test]
    fn kl_matches_reference_value() {
        // tests/oracles/oracle.py: KL(softmax(1,0,0) || softmax(0,1,0)) at T = 1
        let p = softmax(&[1.0, 0.0, 0.0], 1.0);
        let q = softmax(&[0.0, 1.0, 0.0], 1.0);
        assert!((kl_divergence(&p, &q) - 0.364_175_327_148_743_7).abs() < 1e-10);
    }

    #[test]
    fn non_finite_profiles_are_rejected() {
        let v = SimilarityVectors {
            semantic: vec![f64::NAN, 0.0],
            visual: vec![0.0, 0.0],
        };
        assert!(consistence_score(&v, &ConsistenceParams::default()).is_err());
    }

    #[test]
    fn weighted_prototype_exact_case() {
        let g1 = [0.6, 0.8];
        let g2 = [1.0, 0.0];
        let v = weighted_prototype(&[&g1, &g2], &[3.0, 1.0]).unwrap();
        // (3 * (0.6, 0.8) + (1, 0)) / 4 = (0.7, 0.6)
        assert!((v[0] - 0.7).abs() < 1e-15);
        assert!((v[1] - 0.6).abs() < 1e-15);
        assert!(weighted_prototype(&[], &[]).is_err());
        assert_eq!(weighted_prototype(&[&g1], &[5.0]).unwrap(), g1.to_vec());
    }

    fn toy() -> Dataset {
        let tax = Taxonomy::from_classes(vec![ClassMeta::new(0, "a", ""), ClassMeta::new(1, "b", "")]).unwrap();
        Dataset::new(
            vec![
                Sample::new("a0", vec![1.0, 0.0], 0),
                Sample::new("a1", vec![0.0, 1.0], 0),
                Sample::new("a2", vec![2.0, 2.0], 0),
                Sample::new("a3", vec![4.0, 0.0], 0),
                Sample::new("b0", vec![-1.0, 0.0], 1),
            ],
            tax,
            2,
        )
        .unwrap()
    }

    #[test]
    fn top_one_picks_most_confident() {
        let ds = toy();
        let set = initial_prototypes(&ds, &[0.1, 0.9, 0.3, 0.2, 0.5], TopK::Fixed(1)).unwrap();
        assert_eq!(set.prototypes[0], vec![0.0, 1.0]);
        assert_eq!(set.prototypes[1], vec![-1.0, 0.0]);
        assert_eq!(set.consistence, vec![1.0; 5]);
    }

    #[test]
    fn top_k_mean_matches_full_sort() {
        let ds = toy();
        let conf = [0.1, 0.9, 0.3, 0.2, 0.5];
        let set = initial_prototypes(&ds, &conf, TopK::Fixed(2)).unwrap();
        // brute force: sort class-0 members by descending confidence, take two
        let mut members: Vec<(f64, usize)> = (0..4).map(|i| (conf[i], i)).collect();
        members.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let mut mean = [0.0; 2];
        for &(_, i) in &members[..2] {
            for (m, x) in mean.iter_mut().zip(&ds.samples()[i].features) {
                *m += x / 2.0;
            }
        }
        assert_eq!(set.prototypes[0], mean.to_vec());
    }

    #[test]
    fn large_k_gives_class_mean() {
        let ds = toy();
        let set = initial_prototypes(&ds, &[0.0; 5], TopK::Fixed(100)).unwrap();
        assert_eq!(set.prototypes[0], vec![1.75, 0.75]);
    }

    #[test]
    fn empty_class_is_reported() {
        let tax = Taxonomy::from_classes(vec![
            ClassMeta::new(0, "a", ""),
            ClassMeta::new(1, "b", ""),
            ClassMeta::new(2, "c", ""),
        ])
        .unwrap();
        let ds = Dataset::new(
            vec![
                Sample::new("x", vec![1.0], 0),
                Sample::new("y", vec![1.0], 0),
                Sample::new("z", vec![1.0], 2),
            ],
            tax,
            1,
        )
        .unwrap();
        match initial_prototypes(&ds, &[1.0; 3], TopK::Auto) {
            Err(Error::EmptyClasses(c)) => assert_eq!(c, vec![1]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_rounds_returns_initial() {
        let ds = normalize_features(toy()).unwrap();
        let rel = RelationMatrix::from_rows(
            vec![vec![1.0, 0.2], vec![0.2, 1.0]],
            crate::graph::RelationSource::Hierarchy,
        )
        .unwrap();
        let conf = [0.1, 0.9, 0.3, 0.2, 0.5];
        let p = PrototypeParams {
            rounds: 0,
            ..PrototypeParams::new()
        };
        let a = refresh(&ds, &rel, &conf, &p).unwrap();
        let b = initial_prototypes(&ds, &conf, p.top_k).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn auto_top_k() {
        assert_eq!(TopK::Auto.resolve(10), 5);
        assert_eq!(TopK::Auto.resolve(200), 10);
        assert_eq!(TopK::Auto.resolve(201), 11);
        assert_eq!("auto".parse::<TopK>().unwrap(), TopK::Auto);
        assert!("0".parse::<TopK>().is_err());
    }
}
