//! The curation stages chained in memory: warmup, relation graph, prototypes,
//! weights and final training.

use crate::dataset::Dataset;
use crate::embed::{HashingEmbedder, LabelEmbedder, DEFAULT_EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::graph::{build_relation, BlendCoefficients, GraphSources, RelationMatrix};
use crate::prototype::{refresh, PrototypeParams, PrototypeSet};
use crate::trainer::{build_targets, fit, predict, train, ClassifierModel, TrainConfig, TrainOutcome};
use crate::weighting::{
    assign_weights, check_alpha_beta, WeightAssignment, WeightStrategy, DEFAULT_ALPHA, DEFAULT_BETA,
};

pub const DEFAULT_WARMUP_FRACTION: f64 = 0.3;

/// SplitMix64 step; derives independent sub-seeds from one base seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const WARMUP_STREAM: u64 = 1;
const FINAL_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSettings {
    pub graph: GraphSources,
    pub coefficients: BlendCoefficients,
    pub embedding_dim: usize,
    pub prototype: PrototypeParams,
    pub strategy: WeightStrategy,
    pub alpha: f64,
    pub beta: f64,
    pub train: TrainConfig,
    /// Share of the epoch budget spent on the uniform-weight warmup model.
    pub warmup_fraction: f64,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            graph: GraphSources::default(),
            coefficients: BlendCoefficients::default(),
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            prototype: PrototypeParams::new(),
            strategy: WeightStrategy::default(),
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            train: TrainConfig::default(),
            warmup_fraction: DEFAULT_WARMUP_FRACTION,
        }
    }
}

impl PipelineSettings {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.prototype.consistence.validate()?;
        check_alpha_beta(self.alpha, self.beta)?;
        if self.embedding_dim < 2 {
            return Err(Error::Config("embedding dimension must be >= 2".into()));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "warmup fraction must lie in (0, 1], got {}",
                self.warmup_fraction
            )));
        }
        Ok(())
    }

    /// Same schedule shape over `warmup_fraction` of the epochs, no smoothing.
    pub fn warmup_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: ((self.train.epochs as f64 * self.warmup_fraction).round() as usize).max(1),
            seed: derive_seed(self.train.seed, WARMUP_STREAM),
            smoothing: None,
            ..self.train.clone()
        }
    }

    pub fn final_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.train.seed, FINAL_STREAM),
            ..self.train.clone()
        }
    }

    pub fn embedder(&self) -> Result<HashingEmbedder> {
        HashingEmbedder::new(self.embedding_dim)
    }
}

/// Warmup model trained uniformly on the noisy labels, and its predictions.
pub fn run_warmup(dataset: &Dataset, settings: &PipelineSettings) -> Result<(ClassifierModel, Vec<Vec<f64>>)> {
    let outcome = train(dataset, &WeightAssignment::uniform(dataset), &settings.warmup_config())?;
    let preds = predict(&outcome.model, dataset)?;
    Ok((outcome.model, preds))
}

/// Each sample's predicted probability of its own noisy label.
pub fn label_confidences(dataset: &Dataset, predictions: &[Vec<f64>]) -> Vec<f64> {
    dataset
        .samples()
        .iter()
        .zip(predictions)
        .map(|(s, p)| p[s.noisy_label])
        .collect()
}

pub fn build_graph(
    dataset: &Dataset,
    settings: &PipelineSettings,
    embedder: &dyn LabelEmbedder,
) -> Result<RelationMatrix> {
    build_relation(dataset.taxonomy(), settings.graph, settings.coefficients, embedder)
}

pub fn build_prototypes(
    dataset: &Dataset,
    relation: &RelationMatrix,
    predictions: &[Vec<f64>],
    settings: &PipelineSettings,
) -> Result<PrototypeSet> {
    if predictions.len() != dataset.len() {
        return Err(Error::Dimension("warmup predictions do not cover the dataset".into()));
    }
    refresh(
        dataset,
        relation,
        &label_confidences(dataset, predictions),
        &settings.prototype,
    )
}

pub fn weigh(dataset: &Dataset, prototypes: &PrototypeSet, settings: &PipelineSettings) -> Result<WeightAssignment> {
    assign_weights(dataset, prototypes, settings.strategy, settings.alpha, settings.beta)
}

/// Final weighted training. Warmup predictions are needed only with label smoothing.
pub fn train_final(
    dataset: &Dataset,
    weights: &WeightAssignment,
    predictions: Option<&[Vec<f64>]>,
    settings: &PipelineSettings,
) -> Result<TrainOutcome> {
    let config = settings.final_config();
    let targets = build_targets(dataset, &config, predictions)?;
    let init = ClassifierModel::gaussian(dataset.num_classes(), dataset.dim(), config.seed);
    fit(init, dataset, &targets, &weights.aligned_to(dataset)?, &config)
}

/// Everything one pass of the pipeline produces.
#[derive(Debug, Clone)]
pub struct CurationRun {
    pub warmup_predictions: Vec<Vec<f64>>,
    pub relation: RelationMatrix,
    pub prototypes: PrototypeSet,
    pub weights: WeightAssignment,
    pub outcome: TrainOutcome,
}

/// Graph, prototypes, weights and final training from given warmup predictions.
pub fn curate_from_warmup(
    dataset: &Dataset,
    warmup_predictions: Vec<Vec<f64>>,
    settings: &PipelineSettings,
) -> Result<CurationRun> {
    settings.validate()?;
    let embedder = settings.embedder()?;
    let relation = build_graph(dataset, settings, &embedder)?;
    let prototypes = build_prototypes(dataset, &relation, &warmup_predictions, settings)?;
    let weights = weigh(dataset, &prototypes, settings)?;
    let outcome = train_final(dataset, &weights, Some(&warmup_predictions), settings)?;
    Ok(CurationRun {
        warmup_predictions,
        relation,
        prototypes,
        weights,
        outcome,
    })
}

pub fn curate(dataset: &Dataset, settings: &PipelineSettings) -> Result<CurationRun> {
    settings.validate()?;
    let (_, preds) = run_warmup(dataset, settings)?;
    curate_from_warmup(dataset, preds, settings)
}
