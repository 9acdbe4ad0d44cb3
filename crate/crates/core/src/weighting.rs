//! Per-sample training weights from prototype distances, and top-k label smoothing.

use std::collections::HashMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use log::warn;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::io::{fmt_float, parse_f64, read_table, write_text, Header};
use crate::prototype::PrototypeSet;

pub const DEFAULT_ALPHA: f64 = 1.2;
pub const DEFAULT_BETA: f64 = 1.5;
pub const DEFAULT_SMOOTHING_LAMBDA: f64 = 0.7;
pub const DEFAULT_SMOOTHING_K: usize = 5;

/// Training-strategy choice for the noisy set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum WeightStrategy {
    /// Model-A: train on everything with weight 1.
    AllUniform,
    /// Model-B: keep samples closer than `alpha` to their prototype, unweighted.
    HardSelect,
    /// Model-C: weight `(max(0, alpha - distance))^beta`.
    #[default]
    SoftWeight,
}

impl WeightStrategy {
    pub const ALL: [WeightStrategy; 3] = [
        WeightStrategy::AllUniform,
        WeightStrategy::HardSelect,
        WeightStrategy::SoftWeight,
    ];

    pub fn model_label(&self) -> &'static str {
        match self {
            WeightStrategy::AllUniform => "A",
            WeightStrategy::HardSelect => "B",
            WeightStrategy::SoftWeight => "C",
        }
    }
}

impl fmt::Display for WeightStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightStrategy::AllUniform => "uniform",
            WeightStrategy::HardSelect => "hard",
            WeightStrategy::SoftWeight => "soft",
        })
    }
}

impl FromStr for WeightStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" | "alluniform" | "a" | "model-a" => Ok(WeightStrategy::AllUniform),
            "hard" | "hardselect" | "b" | "model-b" => Ok(WeightStrategy::HardSelect),
            "soft" | "softweight" | "c" | "model-c" => Ok(WeightStrategy::SoftWeight),
            other => Err(Error::Config(format!("unknown weighting strategy {other:?}"))),
        }
    }
}

/// `(max(0, alpha - distance))^beta`.
///
/// The clamp comes before the power so that fractional `beta` stays real.
pub fn sample_weight(distance: f64, alpha: f64, beta: f64) -> f64 {
    let shifted = alpha - distance;
    if shifted <= 0.0 {
        0.0
    } else {
        shifted.powf(beta)
    }
}

/// Per-sample weights keyed by sample id, with the distance each came from.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightAssignment {
    pub ids: Vec<String>,
    pub weights: Vec<f64>,
    pub distances: Vec<f64>,
    pub strategy: WeightStrategy,
    pub alpha: f64,
    pub beta: f64,
}

impl WeightAssignment {
    /// Weight 1 for every sample, without distances.
    pub fn uniform(dataset: &Dataset) -> Self {
        Self {
            ids: dataset.samples().iter().map(|s| s.id.clone()).collect(),
            weights: vec![1.0; dataset.len()],
            distances: vec![f64::NAN; dataset.len()],
            strategy: WeightStrategy::AllUniform,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Weights in `dataset` sample order.
    pub fn aligned_to(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        let same_order =
            self.ids.len() == dataset.len() && self.ids.iter().zip(dataset.samples()).all(|(id, s)| *id == s.id);
        if same_order {
            return Ok(self.weights.clone());
        }
        let lookup: HashMap<&str, f64> = self
            .ids
            .iter()
            .map(String::as_str)
            .zip(self.weights.iter().copied())
            .collect();
        dataset
            .samples()
            .iter()
            .map(|s| {
                lookup
                    .get(s.id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Reference(format!("no weight for sample {:?}", s.id)))
            })
            .collect()
    }
}

/// Euclidean distance from each sample to its labeled class's prototype.
pub fn prototype_distances(dataset: &Dataset, prototypes: &PrototypeSet) -> Result<Vec<f64>> {
    if prototypes.num_classes() != dataset.num_classes() {
        return Err(Error::Reference(format!(
            "{} prototype rows for {} classes",
            prototypes.num_classes(),
            dataset.num_classes()
        )));
    }
    if prototypes.dim() != dataset.dim() {
        return Err(Error::Dimension(format!(
            "prototypes have dimension {}, features {}",
            prototypes.dim(),
            dataset.dim()
        )));
    }
    Ok(dataset
        .samples()
        .iter()
        .map(|s| {
            prototypes.prototypes[s.noisy_label]
                .iter()
                .zip(&s.features)
                .map(|(v, g)| (v - g) * (v - g))
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

pub fn check_alpha_beta(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Config(format!("alpha must be > 0, got {alpha}")));
    }
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::Config(format!("beta must be > 0, got {beta}")));
    }
    Ok(())
}

/// Weights from precomputed distances.
pub fn weights_from_distances(distances: &[f64], strategy: WeightStrategy, alpha: f64, beta: f64) -> Vec<f64> {
    distances
        .iter()
        .map(|&d| match strategy {
            WeightStrategy::AllUniform => 1.0,
            WeightStrategy::HardSelect => {
                if d < alpha {
                    1.0
                } else {
                    0.0
                }
            }
            WeightStrategy::SoftWeight => sample_weight(d, alpha, beta),
        })
        .collect()
}

pub fn assign_weights(
    dataset: &Dataset,
    prototypes: &PrototypeSet,
    strategy: WeightStrategy,
    alpha: f64,
    beta: f64,
) -> Result<WeightAssignment> {
    check_alpha_beta(alpha, beta)?;
    let distances = prototype_distances(dataset, prototypes)?;
    Ok(WeightAssignment {
        ids: dataset.samples().iter().map(|s| s.id.clone()).collect(),
        weights: weights_from_distances(&distances, strategy, alpha, beta),
        distances,
        strategy,
        alpha,
        beta,
    })
}

/// Writes `# strategy=<s> alpha=<a> beta=<b>` then `id<TAB>weight<TAB>distance`.
pub fn write_weights(path: &Path, weights: &WeightAssignment, provenance: Option<&Header>) -> Result<()> {
    let mut header = Header::new()
        .with("strategy", weights.strategy)
        .with("alpha", weights.alpha)
        .with("beta", weights.beta);
    if let Some(extra) = provenance {
        header.extend(extra);
    }
    let mut out = header.render();
    out.push('\n');
    for ((id, w), d) in weights.ids.iter().zip(&weights.weights).zip(&weights.distances) {
        let _ = writeln!(out, "{id}\t{}\t{}", fmt_float(*w), fmt_float(*d));
    }
    write_text(path, &out)
}

pub fn read_weights(path: &Path) -> Result<WeightAssignment> {
    let table = read_table(path, true)?;
    let strategy: WeightStrategy = table
        .header
        .get("strategy")
        .ok_or_else(|| Error::parse(path, 1, "header lacks `strategy=`"))?
        .parse()?;
    let alpha: f64 = table.header.require("alpha", path)?;
    let beta: f64 = table.header.require("beta", path)?;
    let mut out = WeightAssignment {
        ids: Vec::with_capacity(table.rows.len()),
        weights: Vec::with_capacity(table.rows.len()),
        distances: Vec::with_capacity(table.rows.len()),
        strategy,
        alpha,
        beta,
    };
    for (line, cols) in table.rows {
        if cols.len() != 3 {
            return Err(Error::parse(
                path,
                line,
                format!("expected 3 columns, found {}", cols.len()),
            ));
        }
        let w = parse_f64(path, line, &cols[1])?;
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::parse(
                path,
                line,
                format!("weight must be finite and >= 0, got {w}"),
            ));
        }
        out.ids.push(cols[0].clone());
        out.weights.push(w);
        out.distances.push(parse_f64(path, line, &cols[2])?);
    }
    Ok(out)
}

/// A per-sample target distribution over the C classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedTarget(pub Vec<f64>);

/// `lambda * onehot(label) + (1 - lambda) * q`, where `q` keeps the `k` largest
/// predictions (ties to the lower class index) and renormalizes them.
pub fn smooth_labels(label: usize, predictions: &[f64], k: usize, lambda: f64) -> Result<SmoothedTarget> {
    let c = predictions.len();
    if label >= c {
        return Err(Error::Reference(format!("label {label} outside {c} classes")));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!(
            "smoothing lambda must lie in [0, 1], got {lambda}"
        )));
    }
    if k == 0 {
        return Err(Error::Config("smoothing k must be >= 1".into()));
    }
    if predictions.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::Validation("predictions must be finite and nonnegative".into()));
    }
    let total: f64 = predictions.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Validation(format!("predictions sum to {total}, expected 1")));
    }
    let k = if k > c {
        warn!("smoothing k={k} exceeds {c} classes; clamping");
        c
    } else {
        k
    };
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| predictions[b].total_cmp(&predictions[a]).then(a.cmp(&b)));
    let mut q = vec![0.0; c];
    let kept: f64 = order[..k].iter().map(|&i| predictions[i]).sum();
    for &i in &order[..k] {
        q[i] = if kept > 0.0 {
            predictions[i] / kept
        } else {
            1.0 / k as f64
        };
    }
    let target = (0..c)
        .map(|i| {
            let onehot = if i == label { 1.0 } else { 0.0 };
            lambda * onehot + (1.0 - lambda) * q[i]
        })
        .collect();
    Ok(SmoothedTarget(target))
}
