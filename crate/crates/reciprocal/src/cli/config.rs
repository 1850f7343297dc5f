//! Experiment configuration: a flat key-value file (TOML syntax, top-level
//! scalar keys only) merged with command-line overrides. Precedence is
//! flag > file > built-in default.

use crate::backbone::{StopMetric, TrainConfig};
use crate::error::{Error, Result};
use crate::harness::{CandidatePolicy, EvalConfig};
use crate::seed::{derive_seed, SeedStream};
use serde::Serialize;
use std::path::{Path, PathBuf};

/// Every tunable of the pipeline, resolved to concrete values.
///
/// `finetune_*` fields fall back to their pretraining counterparts when
/// not set explicitly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    /// Run directory receiving all artifacts. Not serialized into run
    /// metadata: the artifacts already live there, and identically seeded
    /// runs should stay byte-identical wherever they are written.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,

    /// Interactions TSV to load (mutually exclusive with `synthetic`).
    pub data_path: Option<PathBuf>,
    pub synthetic: bool,
    pub synthetic_n: usize,
    pub synthetic_m: usize,
    pub synthetic_dim: usize,
    pub density: f64,
    /// Minimum interaction count per user; 0 disables k-core filtering.
    pub kcore: usize,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub test_fraction: f64,

    /// Root seed; each component draws a derived seed from it.
    pub seed: u64,

    /// Backbone latent dimension.
    pub dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub l2_weight: f64,
    pub eval_metric: StopMetric,
    /// List length of the early-stopping validation recall.
    pub eval_k: usize,
    pub negatives_per_positive: usize,

    pub finetune_learning_rate: Option<f64>,
    pub finetune_max_epochs: Option<usize>,
    pub finetune_patience: Option<usize>,
    pub finetune_eval_metric: Option<StopMetric>,

    /// Evaluation list length K.
    pub k: usize,
    pub candidate_policy: CandidatePolicy,
    pub ybar_sample_size: usize,
    pub ybar_top_q: usize,
    /// Weights of the additive treatment-model scoring rule.
    pub w10: f64,
    pub w11: f64,
    pub w01: f64,
}

impl Default for ExperimentConfig {
    fn default() -> ExperimentConfig {
        let train = TrainConfig::default();
        let eval = EvalConfig::default();
        ExperimentConfig {
            out: None,
            data_path: None,
            synthetic: false,
            synthetic_n: 200,
            synthetic_m: 200,
            synthetic_dim: 8,
            density: 0.05,
            kcore: 5,
            train_fraction: 0.8,
            validation_fraction: 0.1,
            test_fraction: 0.1,
            seed: 0,
            dim: 128,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            max_epochs: train.max_epochs,
            patience: train.patience,
            l2_weight: train.l2_weight,
            eval_metric: train.eval_metric,
            eval_k: train.eval_k,
            negatives_per_positive: train.negatives_per_positive,
            finetune_learning_rate: None,
            finetune_max_epochs: None,
            finetune_patience: None,
            finetune_eval_metric: None,
            k: eval.k,
            candidate_policy: eval.candidate_policy,
            ybar_sample_size: eval.ybar_sample_size,
            ybar_top_q: eval.ybar_top_q,
            w10: 1.0,
            w11: 1.0,
            w01: 1.0,
        }
    }
}

fn parse_stop_metric(s: &str) -> Result<StopMetric> {
    match s {
        "validation-recall" => Ok(StopMetric::ValidationRecall),
        "training-loss" => Ok(StopMetric::TrainingLoss),
        other => Err(Error::Config(format!(
            "unknown stopping metric {other:?} (expected \"validation-recall\" or \
             \"training-loss\")"
        ))),
    }
}

fn as_usize(key: &str, value: &toml::Value) -> Result<usize> {
    match value.as_integer() {
        Some(v) if v >= 0 => Ok(v as usize),
        _ => Err(Error::Config(format!(
            "config key {key:?} needs a non-negative integer, got {value}"
        ))),
    }
}

fn as_u64(key: &str, value: &toml::Value) -> Result<u64> {
    match value.as_integer() {
        Some(v) if v >= 0 => Ok(v as u64),
        _ => Err(Error::Config(format!(
            "config key {key:?} needs a non-negative integer, got {value}"
        ))),
    }
}

fn as_f64(key: &str, value: &toml::Value) -> Result<f64> {
    value
        .as_float()
        .or_else(|| value.as_integer().map(|v| v as f64))
        .ok_or_else(|| Error::Config(format!("config key {key:?} needs a number, got {value}")))
}

fn as_bool(key: &str, value: &toml::Value) -> Result<bool> {
    value
        .as_bool()
        .ok_or_else(|| Error::Config(format!("config key {key:?} needs a boolean, got {value}")))
}

fn as_str<'v>(key: &str, value: &'v toml::Value) -> Result<&'v str> {
    value
        .as_str()
        .ok_or_else(|| Error::Config(format!("config key {key:?} needs a string, got {value}")))
}

impl ExperimentConfig {
    /// Defaults overlaid with every key from the file. Unknown keys are
    /// rejected so typos fail loudly.
    pub fn from_file(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
        let mut config = ExperimentConfig::default();
        for (key, value) in &table {
            config.apply(key, value)?;
        }
        Ok(config)
    }

    fn apply(&mut self, key: &str, value: &toml::Value) -> Result<()> {
        match key {
            "out" => self.out = Some(PathBuf::from(as_str(key, value)?)),
            "data_path" => self.data_path = Some(PathBuf::from(as_str(key, value)?)),
            "synthetic" => self.synthetic = as_bool(key, value)?,
            "n" => self.synthetic_n = as_usize(key, value)?,
            "m" => self.synthetic_m = as_usize(key, value)?,
            "synthetic_dim" => self.synthetic_dim = as_usize(key, value)?,
            "density" => self.density = as_f64(key, value)?,
            "kcore" => self.kcore = as_usize(key, value)?,
            "train_fraction" => self.train_fraction = as_f64(key, value)?,
            "validation_fraction" => self.validation_fraction = as_f64(key, value)?,
            "test_fraction" => self.test_fraction = as_f64(key, value)?,
            "seed" => self.seed = as_u64(key, value)?,
            "dim" => self.dim = as_usize(key, value)?,
            "learning_rate" => self.learning_rate = as_f64(key, value)?,
            "batch_size" => self.batch_size = as_usize(key, value)?,
            "max_epochs" => self.max_epochs = as_usize(key, value)?,
            "patience" => self.patience = as_usize(key, value)?,
            "l2_weight" => self.l2_weight = as_f64(key, value)?,
            "eval_metric" => self.eval_metric = parse_stop_metric(as_str(key, value)?)?,
            "eval_k" => self.eval_k = as_usize(key, value)?,
            "negatives_per_positive" => self.negatives_per_positive = as_usize(key, value)?,
            "finetune_learning_rate" => self.finetune_learning_rate = Some(as_f64(key, value)?),
            "finetune_max_epochs" => self.finetune_max_epochs = Some(as_usize(key, value)?),
            "finetune_patience" => self.finetune_patience = Some(as_usize(key, value)?),
            "finetune_eval_metric" => {
                self.finetune_eval_metric = Some(parse_stop_metric(as_str(key, value)?)?)
            }
            "k" => self.k = as_usize(key, value)?,
            "candidate_policy" => self.candidate_policy = as_str(key, value)?.parse()?,
            "ybar_sample_size" => self.ybar_sample_size = as_usize(key, value)?,
            "ybar_top_q" => self.ybar_top_q = as_usize(key, value)?,
            "w10" => self.w10 = as_f64(key, value)?,
            "w11" => self.w11 = as_f64(key, value)?,
            "w01" => self.w01 = as_f64(key, value)?,
            other => {
                return Err(Error::Config(format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be >= 1".into()));
        }
        for (name, value) in [
            ("train_fraction", self.train_fraction),
            ("validation_fraction", self.validation_fraction),
            ("test_fraction", self.test_fraction),
        ] {
            if !(value.is_finite() && (0.0..=1.0).contains(&value)) {
                return Err(Error::Config(format!(
                    "{name} must lie in [0, 1], got {value}"
                )));
            }
        }
        for (name, value) in [("w10", self.w10), ("w11", self.w11), ("w01", self.w01)] {
            if !value.is_finite() {
                return Err(Error::Config(format!("{name} must be finite, got {value}")));
            }
        }
        self.pretrain_config().validate()?;
        self.finetune_config().validate()?;
        self.eval_config().validate()?;
        Ok(())
    }

    /// The run directory, required for every command.
    pub fn out_dir(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| {
            Error::Config("no output directory (pass --out or set the `out` config key)".into())
        })
    }

    pub fn pretrain_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            // Offset from the initializer seed so the two ChaCha streams
            // never share a key.
            seed: derive_seed(self.seed, SeedStream::Pretrain).wrapping_add(1),
            l2_weight: self.l2_weight,
            eval_metric: self.eval_metric,
            eval_k: self.eval_k,
            negatives_per_positive: self.negatives_per_positive,
        }
    }

    pub fn finetune_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.finetune_learning_rate.unwrap_or(self.learning_rate),
            max_epochs: self.finetune_max_epochs.unwrap_or(self.max_epochs),
            patience: self.finetune_patience.unwrap_or(self.patience),
            eval_metric: self.finetune_eval_metric.unwrap_or(self.eval_metric),
            seed: derive_seed(self.seed, SeedStream::Finetune),
            ..self.pretrain_config()
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            k: self.k,
            candidate_policy: self.candidate_policy,
            ybar_sample_size: self.ybar_sample_size,
            ybar_top_q: self.ybar_top_q,
            seed: derive_seed(self.seed, SeedStream::Evaluate),
        }
    }

    /// Seed of the backbone initializer (pretraining and the dual
    /// baseline share it).
    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, SeedStream::Pretrain)
    }
}

/// All component seeds derived from one root, recorded in metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct DerivedSeeds {
    pub synthetic: u64,
    pub split: u64,
    pub pretrain: u64,
    pub finetune: u64,
    pub evaluate: u64,
    pub adjust: u64,
}

impl DerivedSeeds {
    pub fn from_root(root: u64) -> DerivedSeeds {
        DerivedSeeds {
            synthetic: derive_seed(root, SeedStream::Synthetic),
            split: derive_seed(root, SeedStream::Split),
            pretrain: derive_seed(root, SeedStream::Pretrain),
            finetune: derive_seed(root, SeedStream::Finetune),
            evaluate: derive_seed(root, SeedStream::Evaluate),
            adjust: derive_seed(root, SeedStream::Adjust),
        }
    }
}
