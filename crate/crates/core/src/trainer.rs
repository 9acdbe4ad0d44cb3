//! Multinomial softmax regression trained by mini-batch SGD on a weighted,
//! weight-normalized cross-entropy objective.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::io::{fmt_float, parse_f64, read_table, write_text, Header};
use crate::weighting::{smooth_labels, SmoothedTarget, WeightAssignment};

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-300;

/// Linear softmax classifier: `softmax(W g + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    /// Row-major C×d.
    weights: Vec<f64>,
    bias: Vec<f64>,
    classes: usize,
    dim: usize,
}

impl ClassifierModel {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            weights: vec![0.0; classes * dim],
            bias: vec![0.0; classes],
            classes,
            dim,
        }
    }

    pub fn from_parts(weight_rows: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self> {
        let classes = weight_rows.len();
        let dim = weight_rows.first().map_or(0, Vec::len);
        if classes == 0 || dim == 0 || weight_rows.iter().any(|r| r.len() != dim) || bias.len() != classes {
            return Err(Error::Dimension("inconsistent model parameter shapes".into()));
        }
        Ok(Self {
            weights: weight_rows.into_iter().flatten().collect(),
            bias,
            classes,
            dim,
        })
    }

    /// Parameters drawn from N(0, 0.01^2) with a seeded generator; bias starts at zero.
    pub fn gaussian(classes: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.01).expect("valid std");
        let weights = (0..classes * dim).map(|_| normal.sample(&mut rng)).collect();
        Self {
            weights,
            bias: vec![0.0; classes],
            classes,
            dim,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weight_row(&self, c: usize) -> &[f64] {
        &self.weights[c * self.dim..(c + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|x| x.is_finite())
    }

    pub fn logits(&self, features: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|c| self.weight_row(c).iter().zip(features).map(|(w, x)| w * x).sum::<f64>() + self.bias[c])
            .collect()
    }

    pub fn probabilities(&self, features: &[f64]) -> Vec<f64> {
        softmax(&self.logits(features))
    }

    /// Euclidean distance between the flattened parameter vectors.
    pub fn distance(&self, other: &ClassifierModel) -> f64 {
        self.weights
            .iter()
            .chain(&self.bias)
            .zip(other.weights.iter().chain(&other.bias))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Target distribution for one sample.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    Soft(SmoothedTarget),
}

impl Target {
    fn mass(&self, c: usize) -> f64 {
        match self {
            Target::Class(label) => {
                if *label == c {
                    1.0
                } else {
                    0.0
                }
            }
            Target::Soft(t) => t.0[c],
        }
    }
}

/// Gradient with the same layout as [`ClassifierModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// `sum_i w_i CE(t_i, softmax(W g_i + b)) / sum_i w_i` (0 when the weights sum to 0)
/// and its exact gradient. Samples are accumulated in the order given.
pub fn weighted_ce_loss(
    model: &ClassifierModel,
    features: &[&[f64]],
    targets: &[&Target],
    weights: &[f64],
) -> (f64, Gradient) {
    let c = model.classes;
    let d = model.dim;
    let mut grad = Gradient {
        weights: vec![0.0; c * d],
        bias: vec![0.0; c],
    };
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return (0.0, grad);
    }
    let mut loss = 0.0;
    for ((g, t), &w) in features.iter().zip(targets).zip(weights) {
        if w == 0.0 {
            continue;
        }
        let probs = model.probabilities(g);
        let scale = w / total;
        for (k, &p) in probs.iter().enumerate() {
            let mass = t.mass(k);
            if mass > 0.0 {
                loss -= scale * mass * p.max(PROB_FLOOR).ln();
            }
            // d/dz_k of CE with a target summing to one is p_k - t_k
            let dz = scale * (p - mass);
            grad.bias[k] += dz;
            let row = &mut grad.weights[k * d..(k + 1) * d];
            for (gw, x) in row.iter_mut().zip(g.iter()) {
                *gw += dz * x;
            }
        }
    }
    (loss, grad)
}

/// Learning rate that starts at `initial` and is multiplied by `decay_factor`
/// at each fraction of the epoch budget listed in `decay_at`.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay_factor: f64,
    pub decay_at: Vec<f64>,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            initial: 0.1,
            decay_factor: 0.1,
            decay_at: vec![0.6, 0.85],
        }
    }
}

impl LrSchedule {
    pub fn rate(&self, epoch: usize, epochs: usize) -> f64 {
        let passed = self
            .decay_at
            .iter()
            .filter(|&&frac| epoch >= (frac * epochs as f64).floor() as usize)
            .count();
        self.initial * self.decay_factor.powi(passed as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingParams {
    pub lambda: f64,
    pub k: usize,
}

impl Default for SmoothingParams {
    fn default() -> Self {
        Self {
            lambda: crate::weighting::DEFAULT_SMOOTHING_LAMBDA,
            k: crate::weighting::DEFAULT_SMOOTHING_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub schedule: LrSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub smoothing: Option<SmoothingParams>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schedule: LrSchedule::default(),
            epochs: 100,
            batch_size: 64,
            seed: 0,
            smoothing: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.schedule.initial.is_finite() && self.schedule.initial > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                self.schedule.initial
            )));
        }
        if !(self.schedule.decay_factor.is_finite() && self.schedule.decay_factor > 0.0) {
            return Err(Error::Config("learning-rate decay factor must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if let Some(s) = self.smoothing {
            if !(0.0..=1.0).contains(&s.lambda) || s.k == 0 {
                return Err(Error::Config("smoothing needs lambda in [0, 1] and k >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Final parameters and the weighted mean loss of every epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ClassifierModel,
    pub epoch_losses: Vec<f64>,
}

/// One-hot targets from the noisy labels, or smoothed targets when
/// `config.smoothing` is set (which then requires `predictions`).
pub fn build_targets(dataset: &Dataset, config: &TrainConfig, predictions: Option<&[Vec<f64>]>) -> Result<Vec<Target>> {
    match config.smoothing {
        None => Ok(dataset.samples().iter().map(|s| Target::Class(s.noisy_label)).collect()),
        Some(params) => {
            let preds = predictions.ok_or_else(|| Error::Config("label smoothing needs warmup predictions".into()))?;
            if preds.len() != dataset.len() {
                return Err(Error::Dimension("predictions do not cover the dataset".into()));
            }
            dataset
                .samples()
                .iter()
                .zip(preds)
                .map(|(s, p)| smooth_labels(s.noisy_label, p, params.k, params.lambda).map(Target::Soft))
                .collect()
        }
    }
}

/// Trains from the seeded Gaussian initialization on the noisy labels.
pub fn train(dataset: &Dataset, weights: &WeightAssignment, config: &TrainConfig) -> Result<TrainOutcome> {
    let targets = build_targets(dataset, config, None)?;
    let init = ClassifierModel::gaussian(dataset.num_classes(), dataset.dim(), config.seed);
    fit(init, dataset, &targets, &weights.aligned_to(dataset)?, config)
}

/// Runs the SGD loop from `init`. Each epoch visits the samples in a seeded
/// shuffle; each batch step uses the batch-normalized weighted loss.
pub fn fit(
    init: ClassifierModel,
    dataset: &Dataset,
    targets: &[Target],
    weights: &[f64],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if init.dim != dataset.dim() || init.classes != dataset.num_classes() {
        return Err(Error::Dimension(format!(
            "model is {}x{}, dataset has {} classes of dimension {}",
            init.classes,
            init.dim,
            dataset.num_classes(),
            dataset.dim()
        )));
    }
    if targets.len() != dataset.len() || weights.len() != dataset.len() {
        return Err(Error::Dimension("targets and weights must cover every sample".into()));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Validation("weights must be finite and >= 0".into()));
    }
    let mut model = init;
    // shuffles use a stream distinct from the initialization stream
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed_5eed_5eed);
    let samples = dataset.samples();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.schedule.rate(epoch, config.epochs);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut weight_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let feats: Vec<&[f64]> = batch.iter().map(|&i| samples[i].features.as_slice()).collect();
            let tgts: Vec<&Target> = batch.iter().map(|&i| &targets[i]).collect();
            let ws: Vec<f64> = batch.iter().map(|&i| weights[i]).collect();
            let batch_weight: f64 = ws.iter().sum();
            if batch_weight <= 0.0 {
                continue;
            }
            let (loss, grad) = weighted_ce_loss(&model, &feats, &tgts, &ws);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("loss became {loss} in epoch {epoch}")));
            }
            loss_sum += loss * batch_weight;
            weight_sum += batch_weight;
            for (p, g) in model.weights.iter_mut().zip(&grad.weights) {
                *p -= lr * g;
            }
            for (p, g) in model.bias.iter_mut().zip(&grad.bias) {
                *p -= lr * g;
            }
        }
        if !model.is_finite() {
            return Err(Error::Numerical(format!(
                "parameters became non-finite in epoch {epoch}"
            )));
        }
        epoch_losses.push(if weight_sum > 0.0 { loss_sum / weight_sum } else { 0.0 });
    }
    Ok(TrainOutcome { model, epoch_losses })
}

/// Softmax probabilities for every sample.
pub fn predict(model: &ClassifierModel, dataset: &Dataset) -> Result<Vec<Vec<f64>>> {
    if model.dim != dataset.dim() {
        return Err(Error::Dimension(format!(
            "model expects dimension {}, dataset has {}",
            model.dim,
            dataset.dim()
        )));
    }
    Ok(dataset
        .samples()
        .iter()
        .map(|s| model.probabilities(&s.features))
        .collect())
}

/// Which label an evaluation scores against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelField {
    Noisy,
    Clean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub top1: f64,
    pub top5: f64,
    pub n: usize,
}

/// Top-1 and top-min(5, C) accuracy. Rank ties go to the lower class index.
pub fn evaluate(model: &ClassifierModel, dataset: &Dataset, field: LabelField) -> Result<Metrics> {
    let probs = predict(model, dataset)?;
    let labels = dataset
        .samples()
        .iter()
        .map(|s| match field {
            LabelField::Noisy => Ok(s.noisy_label),
            LabelField::Clean => s
                .clean_label
                .ok_or_else(|| Error::Validation(format!("sample {:?} has no clean label", s.id))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(accuracy(&probs, &labels))
}

pub fn accuracy(probs: &[Vec<f64>], labels: &[usize]) -> Metrics {
    let mut hit1 = 0usize;
    let mut hit5 = 0usize;
    for (p, &label) in probs.iter().zip(labels) {
        let k = 5.min(p.len());
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
        if order[0] == label {
            hit1 += 1;
        }
        if order[..k].contains(&label) {
            hit5 += 1;
        }
    }
    let n = labels.len();
    let frac = |h: usize| if n == 0 { 0.0 } else { h as f64 / n as f64 };
    Metrics {
        top1: frac(hit1),
        top5: frac(hit5),
        n,
    }
}

/// Writes `# C=<C> d=<d>`, then C rows of W and one row of b.
pub fn write_model(path: &Path, model: &ClassifierModel, provenance: Option<&Header>) -> Result<()> {
    let mut header = Header::new().with("C", model.classes).with("d", model.dim);
    if let Some(extra) = provenance {
        header.extend(extra);
    }
    let mut out = header.render();
    out.push('\n');
    for c in 0..model.classes {
        let cells: Vec<String> = model.weight_row(c).iter().map(|x| fmt_float(*x)).collect();
        let _ = writeln!(out, "{}", cells.join("\t"));
    }
    let cells: Vec<String> = model.bias.iter().map(|x| fmt_float(*x)).collect();
    let _ = writeln!(out, "{}", cells.join("\t"));
    write_text(path, &out)
}

pub fn read_model(path: &Path) -> Result<ClassifierModel> {
    let table = read_table(path, true)?;
    let classes: usize = table.header.require("C", path)?;
    let dim: usize = table.header.require("d", path)?;
    if table.rows.len() != classes + 1 {
        return Err(Error::parse(
            path,
            1,
            format!("expected {} rows, found {}", classes + 1, table.rows.len()),
        ));
    }
    let mut rows = Vec::with_capacity(classes);
    let mut bias = Vec::new();
    for (idx, (line, cols)) in table.rows.into_iter().enumerate() {
        let width = if idx < classes { dim } else { classes };
        if cols.len() != width {
            return Err(Error::parse(
                path,
                line,
                format!("expected {width} columns, found {}", cols.len()),
            ));
        }
        let values = cols
            .iter()
            .map(|raw| parse_f64(path, line, raw))
            .collect::<Result<Vec<_>>>()?;
        if idx < classes {
            rows.push(values);
        } else {
            bias = values;
        }
    }
    ClassifierModel::from_parts(rows, bias)
}

/// Writes `id<TAB>p_1..p_C`, one row per sample in dataset order.
pub fn write_predictions(
    path: &Path,
    dataset: &Dataset,
    predictions: &[Vec<f64>],
    provenance: Option<&Header>,
) -> Result<()> {
    if predictions.len() != dataset.len() {
        return Err(Error::Dimension("predictions do not cover the dataset".into()));
    }
    let mut header = Header::new().with("C", dataset.num_classes());
    if let Some(extra) = provenance {
        header.extend(extra);
    }
    let mut out = header.render();
    out.push('\n');
    for (s, p) in dataset.samples().iter().zip(predictions) {
        let _ = write!(out, "{}", s.id);
        for x in p {
            let _ = write!(out, "\t{}", fmt_float(*x));
        }
        out.push('\n');
    }
    write_text(path, &out)
}

/// Reads predictions and aligns them to `dataset` order by sample id.
pub fn read_predictions(path: &Path, dataset: &Dataset) -> Result<Vec<Vec<f64>>> {
    let table = read_table(path, true)?;
    let classes: usize = table.header.require("C", path)?;
    if classes != dataset.num_classes() {
        return Err(Error::Dimension(format!(
            "{} has {classes} classes, dataset has {}",
            path.display(),
            dataset.num_classes()
        )));
    }
    let mut by_id = std::collections::HashMap::with_capacity(table.rows.len());
    for (line, cols) in table.rows {
        if cols.len() != classes + 1 {
            return Err(Error::parse(path, line, format!("expected {} columns", classes + 1)));
        }
        let probs = cols[1..]
            .iter()
            .map(|raw| parse_f64(path, line, raw))
            .collect::<Result<Vec<_>>>()?;
        if by_id.insert(cols[0].clone(), probs).is_some() {
            return Err(Error::parse(path, line, format!("duplicate id {:?}", cols[0])));
        }
    }
    dataset
        .samples()
        .iter()
        .map(|s| {
            by_id
                .remove(&s.id)
                .ok_or_else(|| Error::Reference(format!("{} has no prediction for {:?}", path.display(), s.id)))
        })
        .collect()
}
