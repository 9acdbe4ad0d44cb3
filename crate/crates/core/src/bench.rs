//! Desk-scale ablation benchmark: generate, corrupt, curate, train and score
//! a grid of settings over several seeds.
//!
//! Every cell with the same seed sees the same generated and corrupted data and
//! the same warmup model, so settings are compared on paired inputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::dataset::Dataset;
use crate::error::Result;
use crate::graph::GraphSources;
use crate::metrics::weight_separation;
use crate::pipeline::{curate_from_warmup, derive_seed, run_warmup, PipelineSettings};
use crate::prototype::PrototypeWeighting;
use crate::synth::{simulate, NoiseRecord, SynthConfig};
use crate::trainer::{evaluate, LabelField};
use crate::weighting::WeightStrategy;

const DATA_STREAM: u64 = 10;
const TRAIN_STREAM: u64 = 11;

/// One point of the ablation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchSetting {
    pub family: String,
    pub strategy: WeightStrategy,
    pub graph: GraphSources,
    pub prototype: PrototypeWeighting,
    pub alpha: f64,
    pub beta: f64,
}

impl BenchSetting {
    pub fn from_base(family: &str, base: &PipelineSettings) -> Self {
        Self {
            family: family.to_string(),
            strategy: base.strategy,
            graph: base.graph,
            prototype: base.prototype.weighting,
            alpha: base.alpha,
            beta: base.beta,
        }
    }

    pub fn label(&self) -> String {
        format!(
            "{}:model={} graph={} prototype={} alpha={} beta={}",
            self.family,
            self.strategy.model_label(),
            self.graph.short_label(),
            self.prototype,
            self.alpha,
            self.beta
        )
    }

    pub fn apply(&self, base: &PipelineSettings) -> PipelineSettings {
        let mut s = base.clone();
        s.strategy = self.strategy;
        s.graph = self.graph;
        s.prototype.weighting = self.prototype;
        s.alpha = self.alpha;
        s.beta = self.beta;
        s
    }

    pub fn to_json(&self) -> Value {
        json!({
            "family": self.family,
            "strategy": self.strategy.to_string(),
            "model": self.strategy.model_label(),
            "graph": self.graph.short_label(),
            "prototype": self.prototype.to_string(),
            "alpha": self.alpha,
            "beta": self.beta,
        })
    }
}

/// Model-A, -B and -C at the base hyper-parameters.
pub fn strategy_suite(base: &PipelineSettings) -> Vec<BenchSetting> {
    WeightStrategy::ALL
        .iter()
        .map(|&strategy| BenchSetting {
            strategy,
            ..BenchSetting::from_base("strategy", base)
        })
        .collect()
}

/// The five relation-graph constructions, soft weighting.
pub fn graph_suite(base: &PipelineSettings) -> Vec<BenchSetting> {
    GraphSources::ablation_set()
        .into_iter()
        .map(|graph| BenchSetting {
            graph,
            strategy: WeightStrategy::SoftWeight,
            ..BenchSetting::from_base("graph", base)
        })
        .collect()
}

pub fn prototype_suite(base: &PipelineSettings) -> Vec<BenchSetting> {
    [PrototypeWeighting::Constant, PrototypeWeighting::Weighting]
        .into_iter()
        .map(|prototype| BenchSetting {
            prototype,
            strategy: WeightStrategy::SoftWeight,
            ..BenchSetting::from_base("prototype", base)
        })
        .collect()
}

pub const ALPHA_SWEEP: [f64; 4] = [0.8, 1.0, 1.2, 1.4];
pub const BETA_SWEEP: [f64; 4] = [1.0, 1.5, 2.0, 2.5];

pub fn alpha_suite(base: &PipelineSettings) -> Vec<BenchSetting> {
    ALPHA_SWEEP
        .iter()
        .map(|&alpha| BenchSetting {
            alpha,
            strategy: WeightStrategy::SoftWeight,
            ..BenchSetting::from_base("alpha", base)
        })
        .collect()
}

pub fn beta_suite(base: &PipelineSettings) -> Vec<BenchSetting> {
    BETA_SWEEP
        .iter()
        .map(|&beta| BenchSetting {
            beta,
            strategy: WeightStrategy::SoftWeight,
            ..BenchSetting::from_base("beta", base)
        })
        .collect()
}

/// Result of one (setting, seed) cell. Metrics are `None` when the cell failed
/// or, for `auc`, when the data had no corrupted samples.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchCell {
    pub setting: BenchSetting,
    pub seed: u64,
    pub top1: Option<f64>,
    pub top5: Option<f64>,
    pub auc: Option<f64>,
    pub error: Option<String>,
}

impl BenchCell {
    pub fn to_json(&self) -> Value {
        let mut v = json!({
            "setting": self.setting.to_json(),
            "seed": self.seed,
            "top1": self.top1,
            "top5": self.top5,
            "auc": self.auc,
        });
        if let Some(e) = &self.error {
            v["error"] = json!(e);
        }
        v
    }
}

/// Mean and population standard deviation over the seeds that produced a value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Stat {
    fn of(values: impl Iterator<Item = f64>) -> Option<Self> {
        let v: Vec<f64> = values.collect();
        if v.is_empty() {
            return None;
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
        Some(Self {
            mean,
            std: var.sqrt(),
            count: v.len(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct SettingSummary {
    pub setting: BenchSetting,
    pub top1: Option<Stat>,
    pub top5: Option<Stat>,
    pub auc: Option<Stat>,
    pub failed: usize,
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub cells: Vec<BenchCell>,
}

impl BenchReport {
    pub fn summary(&self) -> Vec<SettingSummary> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: BTreeMap<String, Vec<&BenchCell>> = BTreeMap::new();
        for cell in &self.cells {
            let key = cell.setting.label();
            if !groups.contains_key(&key) {
                order.push(key.clone());
            }
            groups.entry(key).or_default().push(cell);
        }
        order
            .into_iter()
            .map(|key| {
                let cells = &groups[&key];
                SettingSummary {
                    setting: cells[0].setting.clone(),
                    top1: Stat::of(cells.iter().filter_map(|c| c.top1)),
                    top5: Stat::of(cells.iter().filter_map(|c| c.top5)),
                    auc: Stat::of(cells.iter().filter_map(|c| c.auc)),
                    failed: cells.iter().filter(|c| c.error.is_some()).count(),
                }
            })
            .collect()
    }

    /// Summary entry for a setting, matched by label.
    pub fn stats_for(&self, setting: &BenchSetting) -> Option<SettingSummary> {
        let label = setting.label();
        self.summary().into_iter().find(|s| s.setting.label() == label)
    }

    pub fn to_json(&self) -> Value {
        Value::Array(self.cells.iter().map(BenchCell::to_json).collect())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("family\tmodel\tgraph\tprototype\talpha\tbeta\tseed\ttop1\ttop5\tauc\terror\n");
        let fmt = |x: Option<f64>| x.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
        for c in &self.cells {
            let s = &c.setting;
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                s.family,
                s.strategy.model_label(),
                s.graph.short_label(),
                s.prototype,
                s.alpha,
                s.beta,
                c.seed,
                fmt(c.top1),
                fmt(c.top5),
                fmt(c.auc),
                c.error.as_deref().unwrap_or("")
            );
        }
        out
    }

    /// Human-readable mean ± std table.
    pub fn render_summary(&self) -> String {
        let mut out = String::new();
        let fmt = |s: Option<Stat>, scale: f64| {
            s.map_or_else(
                || "NA".to_string(),
                |s| format!("{:.2} ± {:.2}", s.mean * scale, s.std * scale),
            )
        };
        for s in self.summary() {
            let _ = writeln!(
                out,
                "{:<70} top1 {:>14}  top5 {:>14}  auc {:>12}{}",
                s.setting.label(),
                fmt(s.top1, 100.0),
                fmt(s.top5, 100.0),
                fmt(s.auc, 1.0),
                if s.failed > 0 {
                    format!("  ({} failed)", s.failed)
                } else {
                    String::new()
                }
            );
        }
        out
    }
}

struct SeedData {
    seed: u64,
    train: Dataset,
    validation: Dataset,
    record: NoiseRecord,
    warmup: Vec<Vec<f64>>,
}

fn prepare_seed(synth: &SynthConfig, base: &PipelineSettings, seed: u64) -> Result<SeedData> {
    let config = SynthConfig {
        seed: derive_seed(seed, DATA_STREAM),
        ..synth.clone()
    };
    let (data, record) = simulate(&config)?;
    // training stages never see the clean labels
    let train = data.train.without_clean_labels();
    let settings = seeded(base, seed);
    let (_, warmup) = run_warmup(&train, &settings)?;
    Ok(SeedData {
        seed,
        train,
        validation: data.validation,
        record,
        warmup,
    })
}

fn seeded(base: &PipelineSettings, seed: u64) -> PipelineSettings {
    let mut s = base.clone();
    s.train.seed = derive_seed(seed, TRAIN_STREAM);
    s
}

fn run_cell(data: &SeedData, setting: &BenchSetting, base: &PipelineSettings) -> Result<(f64, f64, Option<f64>)> {
    let settings = seeded(&setting.apply(base), data.seed);
    let run = curate_from_warmup(&data.train, data.warmup.clone(), &settings)?;
    let metrics = evaluate(&run.outcome.model, &data.validation, LabelField::Clean)?;
    let auc = if data.record.flip_count() == 0 {
        None
    } else {
        Some(weight_separation(&run.weights, &data.record)?)
    };
    Ok((metrics.top1, metrics.top5, auc))
}

/// Runs every setting on every seed. Cells fail independently; a failed seed
/// preparation marks all of that seed's cells failed.
pub fn run_benchmark(
    synth: &SynthConfig,
    base: &PipelineSettings,
    settings: &[BenchSetting],
    seeds: &[u64],
    parallel: bool,
) -> BenchReport {
    let prepare = |&seed: &u64| (seed, prepare_seed(synth, base, seed));
    let prepared: Vec<(u64, Result<SeedData>)> = if parallel {
        seeds.par_iter().map(prepare).collect()
    } else {
        seeds.iter().map(prepare).collect()
    };
    let jobs: Vec<(&(u64, Result<SeedData>), &BenchSetting)> = prepared
        .iter()
        .flat_map(|p| settings.iter().map(move |s| (p, s)))
        .collect();
    let run = |(prep, setting): &(&(u64, Result<SeedData>), &BenchSetting)| {
        let (seed, data) = prep;
        let outcome = match data {
            Ok(d) => run_cell(d, setting, base).map_err(|e| e.to_string()),
            Err(e) => Err(format!("data preparation failed: {e}")),
        };
        match outcome {
            Ok((top1, top5, auc)) => BenchCell {
                setting: (*setting).clone(),
                seed: *seed,
                top1: Some(top1),
                top5: Some(top5),
                auc,
                error: None,
            },
            Err(error) => BenchCell {
                setting: (*setting).clone(),
                seed: *seed,
                top1: None,
                top5: None,
                auc: None,
                error: Some(error),
            },
        }
    };
    let cells = if parallel {
        jobs.par_iter().map(run).collect()
    } else {
        jobs.iter().map(run).collect()
    };
    BenchReport { cells }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_have_expected_sizes() {
        let base = PipelineSettings::default();
        assert_eq!(strategy_suite(&base).len(), 3);
        assert_eq!(graph_suite(&base).len(), 5);
        assert_eq!(prototype_suite(&base).len(), 2);
        assert_eq!(alpha_suite(&base).len(), 4);
        assert_eq!(beta_suite(&base).len(), 4);
    }

    #[test]
    fn labels_distinguish_settings() {
        let base = PipelineSettings::default();
        let labels: std::collections::HashSet<String> = strategy_suite(&base)
            .iter()
            .chain(alpha_suite(&base).iter())
            .map(BenchSetting::label)
            .collect();
        assert_eq!(labels.len(), 7);
    }

    #[test]
    fn stat_mean_and_std() {
        let s = Stat::of([1.0, 3.0].into_iter()).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        assert!(Stat::of(std::iter::empty()).is_none());
    }
}
