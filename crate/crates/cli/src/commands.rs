//! One function per subcommand. Stages exchange data only through files in
//! the output directory.

use std::path::{Path, PathBuf};

use log::{info, warn};
use sideinfo_core::bench::{
    alpha_suite, beta_suite, graph_suite, prototype_suite, run_benchmark, strategy_suite, BenchSetting,
};
use sideinfo_core::embed::{read_embeddings, PrecomputedEmbedder};
use sideinfo_core::graph::{read_relation, write_relation};
use sideinfo_core::io::{load_dataset, read_clean_labels, Header};
use sideinfo_core::pipeline::{build_graph, build_prototypes, run_warmup, train_final, weigh};
use sideinfo_core::prototype::{read_prototypes, write_prototypes};
use sideinfo_core::synth::{noise_record, simulate, write_synth, SynthPaths};
use sideinfo_core::trainer::{evaluate, read_model, read_predictions, write_model, write_predictions, LabelField};
use sideinfo_core::weighting::{read_weights, write_weights};
use sideinfo_core::{normalize_features, weight_separation, Dataset, Error};

use crate::config::{PipelineConfig, Suite};
use crate::error::{CliError, CliResult};

pub const TRAIN: &str = "train.tsv";
pub const TAXONOMY: &str = "taxonomy.json";
pub const CLEAN: &str = "clean.tsv";
pub const VALIDATION: &str = "val.tsv";
pub const GRAPH: &str = "graph.tsv";
pub const WARMUP_MODEL: &str = "warmup_model.tsv";
pub const WARMUP_PREDICTIONS: &str = "warmup_predictions.tsv";
pub const PROTOTYPES: &str = "prototypes.tsv";
pub const SCORES: &str = "scores.tsv";
pub const WEIGHTS: &str = "weights.tsv";
pub const MODEL: &str = "model.tsv";
pub const METRICS: &str = "metrics.json";
pub const BENCH_JSON: &str = "bench.json";
pub const BENCH_TSV: &str = "bench.tsv";
pub const RESOLVED_CONFIG: &str = "config.resolved";

const GRAPH_KEYS: &[&str] = &[
    "graph",
    "coef_name",
    "coef_description",
    "coef_hierarchy",
    "embedding_dim",
];
const TRAIN_KEYS: &[&str] = &[
    "learning_rate",
    "lr_decay",
    "lr_decay_at",
    "epochs",
    "batch_size",
    "seed",
    "normalize",
];
const PROTOTYPE_KEYS: &[&str] = &[
    "temperature",
    "gamma",
    "epsilon",
    "top_k",
    "rounds",
    "prototype_weighting",
];

pub struct Context {
    pub config: PipelineConfig,
    pub out_dir: PathBuf,
}

impl Context {
    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// A stage input: the configured path, else the conventional file in the
    /// output directory, which `producer` writes.
    fn input(&self, configured: Option<&PathBuf>, name: &str, producer: &'static str) -> CliResult<PathBuf> {
        match configured {
            Some(p) if p.exists() => Ok(p.clone()),
            Some(p) => Err(CliError::InputNotFound(p.clone())),
            None => self.produced(name, producer),
        }
    }

    fn produced(&self, name: &str, producer: &'static str) -> CliResult<PathBuf> {
        let path = self.out(name);
        if path.exists() {
            Ok(path)
        } else {
            Err(CliError::MissingInput { path, producer })
        }
    }

    fn provenance(&self, command: &str, groups: &[&[&str]]) -> Header {
        let keys: Vec<&str> = groups.iter().flat_map(|g| g.iter().copied()).collect();
        self.config.provenance(command, &keys)
    }

    fn prepare(&self, dataset: Dataset) -> CliResult<Dataset> {
        Ok(if self.config.normalize {
            normalize_features(dataset)?
        } else {
            dataset
        })
    }

    fn training_set(&self) -> CliResult<Dataset> {
        let features = self.input(self.config.paths.features.as_ref(), TRAIN, "simulate")?;
        let taxonomy = self.input(self.config.paths.taxonomy.as_ref(), TAXONOMY, "simulate")?;
        self.prepare(load_dataset(&features, &taxonomy)?)
    }

    /// Training set with clean labels attached, when a sidecar is available.
    fn training_set_with_clean(&self) -> CliResult<Dataset> {
        let dataset = self.training_set()?;
        let sidecar = self.config.paths.clean_labels.clone().or_else(|| {
            let p = self.out(CLEAN);
            (self.config.paths.features.is_none() && p.exists()).then_some(p)
        });
        match sidecar {
            Some(path) if path.exists() => Ok(dataset.with_clean_labels(&read_clean_labels(&path)?)?),
            Some(path) => Err(CliError::InputNotFound(path)),
            None => Ok(dataset),
        }
    }
}

fn wrote(path: &Path) {
    println!("wrote {}", path.display());
}

pub fn simulate_cmd(ctx: &Context) -> CliResult<()> {
    let synth = &ctx.config.synth;
    let (data, record) = simulate(synth)?;
    let header = ctx.provenance(
        "simulate",
        &[&[
            "synth_classes",
            "synth_dim",
            "synth_n_per_class",
            "synth_branching",
            "synth_depth",
            "synth_sigma_within",
            "synth_sigma_between",
            "synth_flip_rate",
            "synth_val_fraction",
            "seed",
        ]],
    );
    let paths = [ctx.out(TRAIN), ctx.out(TAXONOMY), ctx.out(CLEAN), ctx.out(VALIDATION)];
    write_synth(
        &data.train,
        &data.validation,
        &SynthPaths {
            features: &paths[0],
            taxonomy: &paths[1],
            clean_labels: &paths[2],
            val_features: &paths[3],
        },
        Some(&header),
    )?;
    println!(
        "simulated {} training samples ({} flipped), {} validation samples",
        data.train.len(),
        record.flip_count(),
        data.validation.len()
    );
    paths.iter().for_each(|p| wrote(p));
    Ok(())
}

pub fn build_graph_cmd(ctx: &Context) -> CliResult<()> {
    let dataset = ctx.training_set()?;
    let c = dataset.num_classes();
    let paths = &ctx.config.paths;
    let load = |p: &Option<PathBuf>| -> CliResult<_> {
        match p {
            Some(path) if !path.exists() => Err(CliError::InputNotFound(path.clone())),
            Some(path) => Ok(Some(read_embeddings(path, c)?)),
            None => Ok(None),
        }
    };
    let embedder = PrecomputedEmbedder {
        name: load(&paths.name_embeddings)?,
        description: load(&paths.description_embeddings)?,
        fallback: ctx.config.settings.embedder()?,
    };
    let relation = build_graph(&dataset, &ctx.config.settings, &embedder)?;
    let path = ctx.out(GRAPH);
    write_relation(&path, &relation, Some(&ctx.provenance("build-graph", &[GRAPH_KEYS])))?;
    wrote(&path);
    Ok(())
}

pub fn warmup_cmd(ctx: &Context) -> CliResult<()> {
    let dataset = ctx.training_set()?;
    let (model, predictions) = run_warmup(&dataset, &ctx.config.settings)?;
    let header = ctx.provenance("warmup", &[TRAIN_KEYS, &["warmup_fraction"]]);
    let model_path = ctx.out(WARMUP_MODEL);
    let pred_path = ctx.out(WARMUP_PREDICTIONS);
    write_model(&model_path, &model, Some(&header))?;
    write_predictions(&pred_path, &dataset, &predictions, Some(&header))?;
    wrote(&model_path);
    wrote(&pred_path);
    Ok(())
}

pub fn prototypes_cmd(ctx: &Context) -> CliResult<()> {
    let dataset = ctx.training_set()?;
    let relation = read_relation(&ctx.produced(GRAPH, "build-graph")?)?;
    if relation.size() != dataset.num_classes() {
        return Err(Error::Dimension(format!(
            "graph covers {} classes, dataset has {}",
            relation.size(),
            dataset.num_classes()
        ))
        .into());
    }
    let predictions = read_predictions(&ctx.produced(WARMUP_PREDICTIONS, "warmup")?, &dataset)?;
    let set = build_prototypes(&dataset, &relation, &predictions, &ctx.config.settings)?;
    let (protos, scores) = (ctx.out(PROTOTYPES), ctx.out(SCORES));
    let header = ctx.provenance("prototypes", &[PROTOTYPE_KEYS, &["seed"]]);
    write_prototypes(&protos, &scores, &set, &dataset, Some(&header))?;
    wrote(&protos);
    wrote(&scores);
    Ok(())
}

pub fn weigh_cmd(ctx: &Context) -> CliResult<()> {
    let dataset = ctx.training_set_with_clean()?;
    let protos = ctx.produced(PROTOTYPES, "prototypes")?;
    let scores = ctx.produced(SCORES, "prototypes")?;
    let set = read_prototypes(&protos, &scores, &dataset)?;
    let weights = weigh(&dataset, &set, &ctx.config.settings)?;
    let path = ctx.out(WEIGHTS);
    write_weights(&path, &weights, Some(&ctx.provenance("weigh", &[&["seed"]])))?;
    if dataset.has_clean_labels() {
        match weight_separation(&weights, &noise_record(&dataset)?) {
            Ok(auc) => println!("weight separation AUC {auc:.4}"),
            Err(e) => info!("weight separation not reported: {e}"),
        }
    }
    wrote(&path);
    Ok(())
}

pub fn train_cmd(ctx: &Context) -> CliResult<()> {
    let dataset = ctx.training_set()?;
    let weights = read_weights(&ctx.produced(WEIGHTS, "weigh")?)?;
    let predictions = if ctx.config.smoothing {
        Some(read_predictions(
            &ctx.produced(WARMUP_PREDICTIONS, "warmup")?,
            &dataset,
        )?)
    } else {
        None
    };
    let outcome = train_final(&dataset, &weights, predictions.as_deref(), &ctx.config.settings)?;
    let path = ctx.out(MODEL);
    let header = ctx.provenance(
        "train",
        &[
            TRAIN_KEYS,
            &[
                "strategy",
                "alpha",
                "beta",
                "smoothing",
                "smoothing_lambda",
                "smoothing_k",
            ],
        ],
    );
    write_model(&path, &outcome.model, Some(&header))?;
    if let Some(last) = outcome.epoch_losses.last() {
        println!("final epoch loss {last:.6}");
    }
    wrote(&path);
    Ok(())
}

pub fn eval_cmd(ctx: &Context) -> CliResult<()> {
    let model = read_model(&ctx.produced(MODEL, "train")?)?;
    let taxonomy = ctx.input(ctx.config.paths.taxonomy.as_ref(), TAXONOMY, "simulate")?;
    let (dataset, field) = if let Some(path) = &ctx.config.paths.eval_features {
        if !path.exists() {
            return Err(CliError::InputNotFound(path.clone()));
        }
        (ctx.prepare(load_dataset(path, &taxonomy)?)?, LabelField::Noisy)
    } else if ctx.config.paths.features.is_none() {
        let path = ctx.produced(VALIDATION, "simulate")?;
        (ctx.prepare(load_dataset(&path, &taxonomy)?)?, LabelField::Noisy)
    } else {
        let train = ctx.training_set_with_clean()?;
        let field = if train.has_clean_labels() {
            LabelField::Clean
        } else {
            LabelField::Noisy
        };
        warn!("no eval_features configured; scoring the training set against its {field:?} labels");
        (train, field)
    };
    let metrics = evaluate(&model, &dataset, field)?;
    let path = ctx.out(METRICS);
    // JSON has no comment syntax, so provenance rides along as an extra key
    let header = ctx.provenance("eval", &[&["seed", "normalize"]]);
    let mut report = serde_json::to_value(metrics).map_err(Error::from)?;
    report["provenance"] = header
        .pairs()
        .iter()
        .map(|(k, v)| (k.clone(), serde_json::Value::from(v.as_str())))
        .collect();
    let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    std::fs::write(&path, json + "\n").map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    println!("top1 {:.4}  top5 {:.4}  n {}", metrics.top1, metrics.top5, metrics.n);
    wrote(&path);
    Ok(())
}

pub fn pipeline_cmd(ctx: &Context) -> CliResult<()> {
    if ctx.config.paths.features.is_none() {
        simulate_cmd(ctx)?;
    }
    build_graph_cmd(ctx)?;
    warmup_cmd(ctx)?;
    prototypes_cmd(ctx)?;
    weigh_cmd(ctx)?;
    train_cmd(ctx)?;
    eval_cmd(ctx)
}

pub fn bench_cmd(ctx: &Context) -> CliResult<()> {
    let base = &ctx.config.settings;
    let settings: Vec<BenchSetting> = ctx
        .config
        .bench_suites
        .iter()
        .flat_map(|suite| match suite {
            Suite::Strategy => strategy_suite(base),
            Suite::Graph => graph_suite(base),
            Suite::Prototype => prototype_suite(base),
            Suite::Alpha => alpha_suite(base),
            Suite::Beta => beta_suite(base),
        })
        .collect();
    let seeds = ctx.config.bench_seed_list();
    let report = run_benchmark(&ctx.config.synth, base, &settings, &seeds, !ctx.config.reproducible);
    let json_path = ctx.out(BENCH_JSON);
    let tsv_path = ctx.out(BENCH_TSV);
    std::fs::create_dir_all(&ctx.out_dir).map_err(|source| Error::Io {
        path: ctx.out_dir.clone(),
        source,
    })?;
    let json = serde_json::to_string_pretty(&report.to_json()).map_err(Error::from)?;
    std::fs::write(&json_path, json + "\n").map_err(|source| Error::Io {
        path: json_path.clone(),
        source,
    })?;
    std::fs::write(&tsv_path, report.to_tsv()).map_err(|source| Error::Io {
        path: tsv_path.clone(),
        source,
    })?;
    print!("{}", report.render_summary());
    let failed = report.cells.iter().filter(|c| c.error.is_some()).count();
    if failed > 0 {
        warn!(
            "{failed} of {} cells failed; see {}",
            report.cells.len(),
            tsv_path.display()
        );
    }
    wrote(&json_path);
    wrote(&tsv_path);
    Ok(())
}
