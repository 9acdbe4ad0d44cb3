//! Synthetic datasets whose class hierarchy mirrors their feature geometry,
//! plus uniform label-flip corruption.
//!
//! A complete tree of the given branching factor and depth is grown from a
//! root mean of zero; each child adds an isotropic Gaussian drift to its
//! parent's mean. The first C leaves become classes. Class descriptions list
//! the tokens of every node on the path below the root, so siblings share all
//! tokens but their own.

use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{normalize_features, ClassMeta, Dataset, Sample, Taxonomy};
use crate::error::{Error, Result};
use crate::io::{write_clean_labels, write_features, write_taxonomy, Header};
use crate::pipeline::derive_seed;

const NOISE_STREAM: u64 = 0x6e6f;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    pub dim: usize,
    pub n_per_class: usize,
    pub branching: usize,
    pub depth: usize,
    /// Per-coordinate std of samples around their class mean.
    pub sigma_within: f64,
    /// Per-coordinate std of the drift from a parent mean to a child mean.
    pub sigma_between: f64,
    pub flip_rate: f64,
    /// Extra clean validation samples per class, as a fraction of `n_per_class`.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 20,
            dim: 16,
            n_per_class: 200,
            branching: 3,
            depth: 3,
            sigma_within: 0.25,
            sigma_between: 1.0,
            flip_rate: 0.4,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("synthetic data needs at least 2 classes".into()));
        }
        if self.dim < 1 || self.n_per_class < 1 || self.branching < 1 || self.depth < 1 {
            return Err(Error::Config(
                "dim, n_per_class, branching and depth must be >= 1".into(),
            ));
        }
        let leaves = (self.branching as f64).powi(self.depth as i32);
        if leaves < self.classes as f64 {
            return Err(Error::Config(format!(
                "branching^depth = {leaves} leaves cannot hold {} classes",
                self.classes
            )));
        }
        if !(0.0..1.0).contains(&self.flip_rate) {
            return Err(Error::Config(format!(
                "flip rate must lie in [0, 1), got {}",
                self.flip_rate
            )));
        }
        if !(self.sigma_within >= 0.0 && self.sigma_between >= 0.0) {
            return Err(Error::Config("standard deviations must be >= 0".into()));
        }
        if self.val_fraction.is_nan() || self.val_fraction < 0.0 {
            return Err(Error::Config("validation fraction must be >= 0".into()));
        }
        Ok(())
    }

    pub fn val_per_class(&self) -> usize {
        ((self.n_per_class as f64 * self.val_fraction).round() as usize).max(1)
    }
}

/// Clean training set (noisy label = clean label) and a held-out clean validation set.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub train: Dataset,
    pub validation: Dataset,
}

struct Node {
    id: usize,
    token: String,
    parent: Option<usize>,
    mean: Vec<f64>,
    path: Vec<String>,
}

pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let drift = Normal::new(0.0, config.sigma_between).map_err(|e| Error::Config(e.to_string()))?;
    let within = Normal::new(0.0, config.sigma_within).map_err(|e| Error::Config(e.to_string()))?;
    let c = config.classes;

    // Grow level by level. Leaves that become classes get ids 0..C; every
    // other node gets an id >= C in creation order.
    let mut next_internal = c;
    let root_id = next_internal;
    next_internal += 1;
    let mut internal: Vec<Node> = Vec::new();
    let mut level = vec![Node {
        id: root_id,
        token: "root".into(),
        parent: None,
        mean: vec![0.0; config.dim],
        path: Vec::new(),
    }];
    for depth in 1..=config.depth {
        let mut next = Vec::with_capacity(level.len() * config.branching);
        let mut counter = 0;
        for parent in &level {
            for _ in 0..config.branching {
                let mean: Vec<f64> = parent.mean.iter().map(|m| m + drift.sample(&mut rng)).collect();
                let token = format!("lvl{depth}n{counter}");
                counter += 1;
                let mut path = parent.path.clone();
                path.push(token.clone());
                next.push(Node {
                    id: usize::MAX,
                    token,
                    parent: Some(parent.id),
                    mean,
                    path,
                });
            }
        }
        internal.extend(level);
        level = next;
        if depth < config.depth {
            for node in &mut level {
                node.id = next_internal;
                next_internal += 1;
            }
        }
    }
    let leaves: Vec<Node> = level
        .into_iter()
        .take(c)
        .enumerate()
        .map(|(i, mut n)| {
            n.id = i;
            n
        })
        .collect();

    let mut nodes: Vec<ClassMeta> = leaves
        .iter()
        .map(|n| ClassMeta {
            class_id: n.id,
            name: n.token.clone(),
            description: n.path.join(" "),
            parent: n.parent,
        })
        .collect();
    nodes.extend(internal.iter().map(|n| ClassMeta {
        class_id: n.id,
        name: n.token.clone(),
        description: n.path.join(" "),
        parent: n.parent,
    }));
    let taxonomy = Taxonomy::new(nodes, c)?;

    let id_width = (c * config.n_per_class).to_string().len();
    let draw =
        |rng: &mut ChaCha8Rng, mean: &[f64]| -> Vec<f64> { mean.iter().map(|m| m + within.sample(rng)).collect() };
    let mut train = Vec::with_capacity(c * config.n_per_class);
    for leaf in &leaves {
        for _ in 0..config.n_per_class {
            let id = format!("s{:0id_width$}", train.len());
            let mut s = Sample::new(id, draw(&mut rng, &leaf.mean), leaf.id);
            s.clean_label = Some(leaf.id);
            train.push(s);
        }
    }
    let n_val = config.val_per_class();
    let mut validation = Vec::with_capacity(c * n_val);
    for leaf in &leaves {
        for _ in 0..n_val {
            let id = format!("v{:0id_width$}", validation.len());
            let mut s = Sample::new(id, draw(&mut rng, &leaf.mean), leaf.id);
            s.clean_label = Some(leaf.id);
            validation.push(s);
        }
    }
    let train = normalize_features(Dataset::new(train, taxonomy.clone(), config.dim)?)?;
    let validation = normalize_features(Dataset::new(validation, taxonomy, config.dim)?)?;
    Ok(SynthData { train, validation })
}

/// Which samples had their label flipped, and what the label was before.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRecord {
    pub ids: Vec<String>,
    pub flipped: Vec<bool>,
    pub clean_labels: Vec<usize>,
}

impl NoiseRecord {
    pub fn flip_count(&self) -> usize {
        self.flipped.iter().filter(|f| **f).count()
    }
}

/// Flips exactly `floor(rho * n_c)` labels in every class `c`, each to a class
/// drawn uniformly from the other C - 1. The pre-corruption label is kept as
/// the sample's clean label.
pub fn corrupt(dataset: &Dataset, rho: f64, seed: u64) -> Result<(Dataset, NoiseRecord)> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Config(format!("flip rate must lie in [0, 1), got {rho}")));
    }
    let c = dataset.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = dataset.noisy_labels();
    let mut flipped = vec![false; dataset.len()];
    for members in dataset.members_by_class() {
        let count = (rho * members.len() as f64).floor() as usize;
        let mut chosen: Vec<usize> = sample_indices(&mut rng, members.len(), count).into_vec();
        chosen.sort_unstable();
        for pos in chosen {
            let i = members[pos];
            let original = labels[i];
            let draw = rng.random_range(0..c - 1);
            labels[i] = if draw >= original { draw + 1 } else { draw };
            flipped[i] = true;
        }
    }
    let clean_labels = dataset.noisy_labels();
    let corrupted = dataset.with_noisy_labels(&labels)?;
    let pairs: Vec<(String, usize)> = corrupted
        .samples()
        .iter()
        .zip(&clean_labels)
        .map(|(s, &l)| (s.id.clone(), l))
        .collect();
    let corrupted = corrupted.with_clean_labels(&pairs)?;
    let record = NoiseRecord {
        ids: dataset.samples().iter().map(|s| s.id.clone()).collect(),
        flipped,
        clean_labels,
    };
    Ok((corrupted, record))
}

/// Generates from `config.seed` and corrupts at `config.flip_rate` with a
/// seed derived from it. The returned training set carries clean labels.
pub fn simulate(config: &SynthConfig) -> Result<(SynthData, NoiseRecord)> {
    let data = generate(config)?;
    let (train, record) = corrupt(&data.train, config.flip_rate, derive_seed(config.seed, NOISE_STREAM))?;
    Ok((
        SynthData {
            train,
            validation: data.validation,
        },
        record,
    ))
}

/// Rebuilds a noise record from a dataset carrying both label fields.
pub fn noise_record(dataset: &Dataset) -> Result<NoiseRecord> {
    let mut out = NoiseRecord {
        ids: Vec::with_capacity(dataset.len()),
        flipped: Vec::with_capacity(dataset.len()),
        clean_labels: Vec::with_capacity(dataset.len()),
    };
    for s in dataset.samples() {
        let clean = s
            .clean_label
            .ok_or_else(|| Error::Validation(format!("sample {:?} has no clean label", s.id)))?;
        out.ids.push(s.id.clone());
        out.flipped.push(clean != s.noisy_label);
        out.clean_labels.push(clean);
    }
    Ok(out)
}

/// Writes the training features, taxonomy, clean sidecar and validation files.
pub struct SynthPaths<'a> {
    pub features: &'a Path,
    pub taxonomy: &'a Path,
    pub clean_labels: &'a Path,
    pub val_features: &'a Path,
}

pub fn write_synth(
    train: &Dataset,
    validation: &Dataset,
    paths: &SynthPaths<'_>,
    provenance: Option<&Header>,
) -> Result<()> {
    write_features(paths.features, &train.without_clean_labels(), provenance)?;
    write_taxonomy(paths.taxonomy, train.taxonomy())?;
    write_clean_labels(paths.clean_labels, train, provenance)?;
    // validation labels are clean by construction
    write_features(paths.val_features, validation, provenance)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            classes: 6,
            dim: 4,
            n_per_class: 10,
            branching: 2,
            depth: 3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn rejects_too_small_tree() {
        let cfg = SynthConfig {
            classes: 9,
            branching: 2,
            depth: 3,
            ..small()
        };
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn shapes_and_normalization() {
        let data = generate(&small()).unwrap();
        assert_eq!(data.train.len(), 60);
        assert_eq!(data.validation.len(), 6);
        assert_eq!(data.train.num_classes(), 6);
        for s in data.train.samples() {
            let n: f64 = s.features.iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
            assert_eq!(s.clean_label, Some(s.noisy_label));
        }
    }

    #[test]
    fn zero_within_noise_gives_identical_class_samples() {
        let data = generate(&SynthConfig {
            sigma_within: 0.0,
            ..small()
        })
        .unwrap();
        for members in data.train.members_by_class() {
            let first = &data.train.samples()[members[0]].features;
            for &i in &members {
                assert_eq!(&data.train.samples()[i].features, first);
            }
        }
    }

    #[test]
    fn siblings_share_all_but_last_token() {
        let data = generate(&small()).unwrap();
        let classes = data.train.classes();
        let a: Vec<&str> = classes[0].description.split(' ').collect();
        let b: Vec<&str> = classes[1].description.split(' ').collect();
        assert_eq!(a.len(), 3);
        assert_eq!(a[..2], b[..2]);
        assert_ne!(a[2], b[2]);
        assert_eq!(classes[0].parent, classes[1].parent);
    }

    #[test]
    fn corrupt_zero_rate_is_identity() {
        let data = generate(&small()).unwrap();
        let (ds, record) = corrupt(&data.train, 0.0, 3).unwrap();
        assert_eq!(ds.noisy_labels(), data.train.noisy_labels());
        assert_eq!(record.flip_count(), 0);
    }

    #[test]
    fn corrupt_half_flips_exactly_half_per_class() {
        let data = generate(&small()).unwrap();
        let (ds, record) = corrupt(&data.train, 0.5, 3).unwrap();
        for members in data.train.members_by_class() {
            let flips = members.iter().filter(|&&i| record.flipped[i]).count();
            assert_eq!(flips, 5);
        }
        for (i, s) in ds.samples().iter().enumerate() {
            assert_eq!(record.flipped[i], s.noisy_label != record.clean_labels[i]);
        }
        assert_eq!(noise_record(&ds).unwrap(), record);
    }

    #[test]
    fn corrupt_rejects_rate_of_one() {
        let data = generate(&small()).unwrap();
        assert!(corrupt(&data.train, 1.0, 0).is_err());
    }
}
