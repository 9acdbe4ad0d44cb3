//! Flat `key = value` configuration covering every stage.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sideinfo_core::graph::GraphSources;
use sideinfo_core::io::Header;
use sideinfo_core::prototype::{PrototypeWeighting, TopK};
use sideinfo_core::trainer::SmoothingParams;
use sideinfo_core::weighting::{WeightStrategy, DEFAULT_SMOOTHING_K, DEFAULT_SMOOTHING_LAMBDA};
use sideinfo_core::{PipelineSettings, SynthConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Strategy,
    Graph,
    Prototype,
    Alpha,
    Beta,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Strategy,
        Suite::Graph,
        Suite::Prototype,
        Suite::Alpha,
        Suite::Beta,
    ];

    fn name(self) -> &'static str {
        match self {
            Suite::Strategy => "strategy",
            Suite::Graph => "graph",
            Suite::Prototype => "prototype",
            Suite::Alpha => "alpha",
            Suite::Beta => "beta",
        }
    }
}

/// Input locations. `None` means the conventional file in the output directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InputPaths {
    pub features: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub clean_labels: Option<PathBuf>,
    pub eval_features: Option<PathBuf>,
    pub name_embeddings: Option<PathBuf>,
    pub description_embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub settings: PipelineSettings,
    pub synth: SynthConfig,
    pub seed: u64,
    pub smoothing: bool,
    pub smoothing_params: SmoothingParams,
    pub paths: InputPaths,
    pub reproducible: bool,
    pub normalize: bool,
    pub bench_seeds: usize,
    pub bench_suites: Vec<Suite>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            settings: PipelineSettings::default(),
            synth: SynthConfig::default(),
            seed: 0,
            smoothing: false,
            smoothing_params: SmoothingParams {
                lambda: DEFAULT_SMOOTHING_LAMBDA,
                k: DEFAULT_SMOOTHING_K,
            },
            paths: InputPaths::default(),
            reproducible: true,
            normalize: true,
            bench_seeds: 5,
            bench_suites: Suite::ALL.to_vec(),
        }
    }
}

fn parse<T: FromStr>(key: &str, raw: &str, expected: &str) -> CliResult<T> {
    raw.parse()
        .map_err(|_| CliError::range(key, format!("expected {expected}"), raw))
}

fn positive(key: &str, raw: &str) -> CliResult<f64> {
    let v: f64 = parse(key, raw, "a number")?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::range(key, "must be > 0", raw))
    }
}

fn non_negative(key: &str, raw: &str) -> CliResult<f64> {
    let v: f64 = parse(key, raw, "a number")?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(CliError::range(key, "must be >= 0", raw))
    }
}

fn in_range(key: &str, raw: &str, lo: f64, hi: f64, lo_open: bool, hi_open: bool) -> CliResult<f64> {
    let v: f64 = parse(key, raw, "a number")?;
    let above = if lo_open { v > lo } else { v >= lo };
    let below = if hi_open { v < hi } else { v <= hi };
    if above && below {
        Ok(v)
    } else {
        let constraint = format!(
            "must lie in {}{lo}, {hi}{}",
            if lo_open { "(" } else { "[" },
            if hi_open { ")" } else { "]" }
        );
        Err(CliError::range(key, constraint, raw))
    }
}

fn at_least(key: &str, raw: &str, min: usize) -> CliResult<usize> {
    let v: usize = parse(key, raw, "a non-negative integer")?;
    if v >= min {
        Ok(v)
    } else {
        Err(CliError::range(key, format!("must be >= {min}"), raw))
    }
}

fn boolean(key: &str, raw: &str) -> CliResult<bool> {
    match raw.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(CliError::range(key, "expected true or false", raw)),
    }
}

fn enum_value<T: FromStr>(key: &str, raw: &str, expected: &str) -> CliResult<T> {
    raw.parse()
        .map_err(|_| CliError::range(key, format!("expected {expected}"), raw))
}

fn path_value(raw: &str) -> Option<PathBuf> {
    if raw.is_empty() {
        None
    } else {
        Some(PathBuf::from(raw))
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::ConfigSyntax {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        Self::parse_text(&text, path)
    }

    pub fn parse_text(text: &str, origin: &Path) -> CliResult<Self> {
        let mut config = Self::default();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CliError::ConfigSyntax {
                path: origin.to_path_buf(),
                line: idx + 1,
                message: format!("expected `key = value`, found {line:?}"),
            })?;
            config.set(key.trim(), value.trim())?;
        }
        config.check()?;
        Ok(config)
    }

    /// Applies one key. Single-value range checks happen here; cross-key checks in `check`.
    pub fn set(&mut self, key: &str, v: &str) -> CliResult<()> {
        let s = &mut self.settings;
        match key {
            "graph" => s.graph = enum_value(key, v, "`+`-joined name, description, hierarchy (or CN, CD, HW)")?,
            "coef_name" => s.coefficients.name = non_negative(key, v)?,
            "coef_description" => s.coefficients.description = non_negative(key, v)?,
            "coef_hierarchy" => s.coefficients.hierarchy = non_negative(key, v)?,
            "embedding_dim" => s.embedding_dim = at_least(key, v, 2)?,
            "temperature" => s.prototype.consistence.temperature = positive(key, v)?,
            "gamma" => s.prototype.consistence.gamma = positive(key, v)?,
            "epsilon" => s.prototype.consistence.epsilon = positive(key, v)?,
            "top_k" => s.prototype.top_k = enum_value::<TopK>(key, v, "`auto` or an integer >= 1")?,
            "rounds" => s.prototype.rounds = parse(key, v, "a non-negative integer")?,
            "prototype_weighting" => {
                s.prototype.weighting = enum_value::<PrototypeWeighting>(key, v, "constant or weighting")?
            }
            "strategy" => s.strategy = enum_value::<WeightStrategy>(key, v, "uniform, hard or soft (A, B, C)")?,
            "alpha" => s.alpha = positive(key, v)?,
            "beta" => s.beta = positive(key, v)?,
            "smoothing" => self.smoothing = boolean(key, v)?,
            "smoothing_lambda" => self.smoothing_params.lambda = in_range(key, v, 0.0, 1.0, false, false)?,
            "smoothing_k" => self.smoothing_params.k = at_least(key, v, 1)?,
            "learning_rate" => s.train.schedule.initial = positive(key, v)?,
            "lr_decay" => s.train.schedule.decay_factor = in_range(key, v, 0.0, 1.0, true, false)?,
            "lr_decay_at" => {
                s.train.schedule.decay_at = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',')
                        .map(|part| in_range(key, part.trim(), 0.0, 1.0, true, true))
                        .collect::<CliResult<_>>()?
                }
            }
            "epochs" => s.train.epochs = at_least(key, v, 1)?,
            "batch_size" => s.train.batch_size = at_least(key, v, 1)?,
            "warmup_fraction" => s.warmup_fraction = in_range(key, v, 0.0, 1.0, true, false)?,
            "seed" => self.seed = parse(key, v, "an unsigned 64-bit integer")?,
            "synth_classes" => self.synth.classes = at_least(key, v, 2)?,
            "synth_dim" => self.synth.dim = at_least(key, v, 1)?,
            "synth_n_per_class" => self.synth.n_per_class = at_least(key, v, 1)?,
            "synth_branching" => self.synth.branching = at_least(key, v, 1)?,
            "synth_depth" => self.synth.depth = at_least(key, v, 1)?,
            "synth_sigma_within" => self.synth.sigma_within = non_negative(key, v)?,
            "synth_sigma_between" => self.synth.sigma_between = non_negative(key, v)?,
            "synth_flip_rate" => self.synth.flip_rate = in_range(key, v, 0.0, 1.0, false, true)?,
            "synth_val_fraction" => self.synth.val_fraction = in_range(key, v, 0.0, 1.0, true, false)?,
            "features" => self.paths.features = path_value(v),
            "taxonomy" => self.paths.taxonomy = path_value(v),
            "clean_labels" => self.paths.clean_labels = path_value(v),
            "eval_features" => self.paths.eval_features = path_value(v),
            "name_embeddings" => self.paths.name_embeddings = path_value(v),
            "description_embeddings" => self.paths.description_embeddings = path_value(v),
            "reproducible" => self.reproducible = boolean(key, v)?,
            "normalize" => self.normalize = boolean(key, v)?,
            "bench_seeds" => self.bench_seeds = at_least(key, v, 1)?,
            "bench_suite" => {
                self.bench_suites = if v.eq_ignore_ascii_case("all") {
                    Suite::ALL.to_vec()
                } else {
                    v.split(',')
                        .map(|part| {
                            let part = part.trim();
                            Suite::ALL
                                .into_iter()
                                .find(|s| s.name().eq_ignore_ascii_case(part))
                                .ok_or_else(|| {
                                    CliError::range(
                                        key,
                                        "expected all or a list of strategy, graph, prototype, alpha, beta",
                                        part,
                                    )
                                })
                        })
                        .collect::<CliResult<_>>()?
                };
            }
            other => return Err(CliError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    fn check(&self) -> CliResult<()> {
        let leaves = (self.synth.branching as f64).powi(self.synth.depth as i32);
        if leaves < self.synth.classes as f64 {
            return Err(CliError::range(
                "synth_classes",
                format!("must be <= synth_branching^synth_depth = {leaves}"),
                self.synth.classes.to_string(),
            ));
        }
        if self.settings.graph
            == (GraphSources {
                name: false,
                description: false,
                hierarchy: false,
            })
        {
            return Err(CliError::range("graph", "needs at least one source", ""));
        }
        Ok(())
    }

    /// Propagates the seed and smoothing switch into the stage settings.
    pub fn resolve(&mut self) {
        self.settings.train.seed = self.seed;
        self.synth.seed = self.seed;
        self.settings.train.smoothing = self.smoothing.then_some(self.smoothing_params);
    }

    pub fn bench_seed_list(&self) -> Vec<u64> {
        (0..self.bench_seeds as u64)
            .map(|i| self.seed.wrapping_add(i))
            .collect()
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.settings;
        let p = |x: &Option<PathBuf>| x.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let decay_at: Vec<String> = s.train.schedule.decay_at.iter().map(f64::to_string).collect();
        let suites: Vec<&str> = self.bench_suites.iter().map(|s| s.name()).collect();
        vec![
            ("graph", s.graph.to_string()),
            ("coef_name", s.coefficients.name.to_string()),
            ("coef_description", s.coefficients.description.to_string()),
            ("coef_hierarchy", s.coefficients.hierarchy.to_string()),
            ("embedding_dim", s.embedding_dim.to_string()),
            ("temperature", s.prototype.consistence.temperature.to_string()),
            ("gamma", s.prototype.consistence.gamma.to_string()),
            ("epsilon", s.prototype.consistence.epsilon.to_string()),
            ("top_k", s.prototype.top_k.to_string()),
            ("rounds", s.prototype.rounds.to_string()),
            ("prototype_weighting", s.prototype.weighting.to_string()),
            ("strategy", s.strategy.to_string()),
            ("alpha", s.alpha.to_string()),
            ("beta", s.beta.to_string()),
            ("smoothing", self.smoothing.to_string()),
            ("smoothing_lambda", self.smoothing_params.lambda.to_string()),
            ("smoothing_k", self.smoothing_params.k.to_string()),
            ("learning_rate", s.train.schedule.initial.to_string()),
            ("lr_decay", s.train.schedule.decay_factor.to_string()),
            ("lr_decay_at", decay_at.join(",")),
            ("epochs", s.train.epochs.to_string()),
            ("batch_size", s.train.batch_size.to_string()),
            ("warmup_fraction", s.warmup_fraction.to_string()),
            ("seed", self.seed.to_string()),
            ("synth_classes", self.synth.classes.to_string()),
            ("synth_dim", self.synth.dim.to_string()),
            ("synth_n_per_class", self.synth.n_per_class.to_string()),
            ("synth_branching", self.synth.branching.to_string()),
            ("synth_depth", self.synth.depth.to_string()),
            ("synth_sigma_within", self.synth.sigma_within.to_string()),
            ("synth_sigma_between", self.synth.sigma_between.to_string()),
            ("synth_flip_rate", self.synth.flip_rate.to_string()),
            ("synth_val_fraction", self.synth.val_fraction.to_string()),
            ("features", p(&self.paths.features)),
            ("taxonomy", p(&self.paths.taxonomy)),
            ("clean_labels", p(&self.paths.clean_labels)),
            ("eval_features", p(&self.paths.eval_features)),
            ("name_embeddings", p(&self.paths.name_embeddings)),
            ("description_embeddings", p(&self.paths.description_embeddings)),
            ("reproducible", self.reproducible.to_string()),
            ("normalize", self.normalize.to_string()),
            ("bench_seeds", self.bench_seeds.to_string()),
            ("bench_suite", suites.join(",")),
        ]
    }

    /// The resolved configuration in the same `key = value` syntax it is read from.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Header naming the producing command and the listed hyper-parameters.
    pub fn provenance(&self, command: &str, keys: &[&str]) -> Header {
        let entries = self.entries();
        let mut header = Header::new().with("command", command);
        for key in keys {
            if let Some((k, v)) = entries.iter().find(|(k, _)| k == key) {
                header.push(
                    *k,
                    if v.is_empty() {
                        "-".to_string()
                    } else {
                        v.replace(char::is_whitespace, "_")
                    },
                );
            }
        }
        header
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_str(text: &str) -> CliResult<PipelineConfig> {
        PipelineConfig::parse_text(text, Path::new("test.cfg"))
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse_str("").unwrap();
        assert_eq!(c.settings.alpha, 1.2);
        assert_eq!(c.settings.beta, 1.5);
        assert_eq!(c.settings.prototype.consistence.gamma, 1.0);
        assert_eq!(c.settings.prototype.consistence.epsilon, 1e-6);
        assert_eq!(c.settings.strategy, WeightStrategy::SoftWeight);
    }

    #[test]
    fn negative_alpha_names_the_key() {
        let err = parse_str("alpha = -1").unwrap_err();
        assert!(matches!(&err, CliError::Range { key, .. } if key == "alpha"), "{err}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(matches!(parse_str("unknown_key = 3"), Err(CliError::UnknownKey(k)) if k == "unknown_key"));
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let c = parse_str("# header\n\nstrategy = A  # trailing\nbeta=2\n").unwrap();
        assert_eq!(c.settings.strategy, WeightStrategy::AllUniform);
        assert_eq!(c.settings.beta, 2.0);
    }

    #[test]
    fn rendered_config_parses_back_identically() {
        let mut c = parse_str("graph = CN+HW\nlr_decay_at = 0.5\nbench_suite = alpha,beta\nsmoothing = on").unwrap();
        c.resolve();
        let mut again = parse_str(&c.render()).unwrap();
        again.resolve();
        assert_eq!(c, again);
    }

    #[test]
    fn too_many_classes_for_tree() {
        let err = parse_str("synth_classes = 30").unwrap_err();
        assert!(matches!(&err, CliError::Range { key, .. } if key == "synth_classes"));
    }

    #[test]
    fn missing_equals_is_syntax_error() {
        assert!(matches!(
            parse_str("alpha 1.0"),
            Err(CliError::ConfigSyntax { line: 1, .. })
        ));
    }
}
