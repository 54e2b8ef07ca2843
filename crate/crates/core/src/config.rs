//! Run configuration: one TOML file describing a whole pipeline run,
//! from text generation through the experiment matrix.
//!
//! Every section has full defaults, so `RunConfig::from_toml("")` is a
//! valid starting point; a file only needs the fields it overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{EncoderConfig, EncoderError, LoraConfig};
use crate::experiments::Regime;
use crate::model::{HeadConfig, ModelError};
use crate::tasks::{TaskError, TaskKind, TaskSpec};
use crate::textgen::{GenerationConfig, TextGenError};
use crate::trainer::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {reason}")]
    Invalid { reason: String },
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Generation(#[from] TextGenError),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub task: TaskSection,
    pub generation: GenerationSection,
    pub tts: TtsSection,
    pub corpus: CorpusSection,
    pub encoder: EncoderConfig,
    pub lora: LoraSection,
    pub head: HeadSection,
    pub train: TrainSection,
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSection {
    pub kind: TaskKind,
    /// Closed label set. Defaults to the canonical four emotion classes;
    /// required for intent tasks.
    pub labels: Option<Vec<String>>,
    /// Utterances to generate per label. Defaults: 1000 for emotion,
    /// 100 for intent.
    pub per_label_count: Option<usize>,
    /// Prompt template override; must contain `{label}` exactly once.
    pub template: Option<String>,
}

impl Default for TaskSection {
    fn default() -> Self {
        TaskSection {
            kind: TaskKind::Emotion,
            labels: None,
            per_label_count: None,
            template: None,
        }
    }
}

impl TaskSection {
    pub fn to_spec(&self) -> Result<TaskSpec, ConfigError> {
        let count = self.per_label_count.unwrap_or(match self.kind {
            TaskKind::Emotion => 1000,
            TaskKind::Intent => 100,
        });
        let labels: Vec<String> = match (&self.labels, self.kind) {
            (Some(l), _) => l.clone(),
            (None, TaskKind::Emotion) => crate::tasks::EMOTION_LABELS
                .iter()
                .map(|s| s.to_string())
                .collect(),
            (None, TaskKind::Intent) => {
                return Err(ConfigError::Invalid {
                    reason: "intent tasks need an explicit [task] labels list".into(),
                })
            }
        };
        let spec = match &self.template {
            Some(t) => TaskSpec::with_template(self.kind, &labels, count, t.clone())?,
            None => TaskSpec::new(self.kind, &labels, count)?,
        };
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationSection {
    /// `stub`, `http:<url>`, or `fixture:<path>`.
    pub backend: String,
    #[serde(flatten)]
    pub config: GenerationConfig,
}

impl Default for GenerationSection {
    fn default() -> Self {
        GenerationSection {
            backend: "stub".into(),
            config: GenerationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TtsSection {
    /// `stub`, `stub:<rate>`, or `http:<url>`.
    pub backend: String,
    /// Speaker pool file (JSONL). When absent, a pool of `pool_size`
    /// random embeddings with `embedding_dim` entries is derived from
    /// `seed`.
    pub speaker_pool: Option<PathBuf>,
    pub pool_size: usize,
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for TtsSection {
    fn default() -> Self {
        TtsSection {
            backend: "stub".into(),
            speaker_pool: None,
            pool_size: 64,
            embedding_dim: 512,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSection {
    /// Real-corpus layout: `iemocap`, `msp_improv`, or `slurp`.
    pub dataset: Option<String>,
    /// Root directory of the real corpus.
    pub root: Option<PathBuf>,
    /// Manifest of a previously synthesized corpus.
    pub synthetic_manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LoraSection {
    pub enabled: bool,
    #[serde(flatten)]
    pub config: LoraConfig,
}

impl Default for LoraSection {
    fn default() -> Self {
        LoraSection {
            enabled: true,
            config: LoraConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadSection {
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub fc_hidden: usize,
}

impl Default for HeadSection {
    fn default() -> Self {
        HeadSection {
            conv_channels: 256,
            conv_kernel: 1,
            fc_hidden: 256,
        }
    }
}

impl HeadSection {
    pub fn to_head(&self, n_classes: usize) -> Result<HeadConfig, ConfigError> {
        let head = HeadConfig {
            conv_channels: self.conv_channels,
            conv_kernel: self.conv_kernel,
            fc_hidden: self.fc_hidden,
            n_classes,
        };
        head.validate()?;
        Ok(head)
    }
}

/// Optional overrides over the per-task training defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
}

impl TrainSection {
    /// Concrete training config for one cell of the matrix.
    pub fn resolve(&self, task: TaskKind, low_resource: bool, seed: u64) -> TrainConfig {
        let mut cfg = if low_resource {
            TrainConfig::low_resource(task)
        } else {
            TrainConfig::full_data(task)
        };
        if let Some(lr) = self.lr {
            cfg.lr = lr;
        }
        if let Some(epochs) = self.epochs {
            cfg.epochs = epochs;
        }
        if let Some(batch) = self.batch_size {
            cfg.batch_size = batch;
        }
        cfg.seed = seed;
        cfg
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSection {
    pub regimes: Vec<Regime>,
    /// Labeled-data fractions for the low-resource regimes.
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Validation fraction held out of the synthetic corpus when no real
    /// validation split exists.
    pub holdout_ratio: f64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            regimes: Regime::all().to_vec(),
            ratios: vec![0.05, 0.1, 0.2, 0.5, 1.0],
            seeds: vec![0, 1, 2],
            out_dir: PathBuf::from("runs"),
            holdout_ratio: 0.1,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)?;
        let cfg = Self::from_toml(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.task.to_spec()?;
        self.generation.config.validate()?;
        self.encoder.validate()?;
        if self.lora.enabled {
            self.lora.config.validate()?;
        }
        if self.tts.pool_size == 0 || self.tts.embedding_dim == 0 {
            return Err(ConfigError::Invalid {
                reason: "tts pool_size and embedding_dim must be positive".into(),
            });
        }
        let e = &self.experiment;
        if e.regimes.is_empty() || e.seeds.is_empty() {
            return Err(ConfigError::Invalid {
                reason: "experiment needs at least one regime and one seed".into(),
            });
        }
        if e.ratios.is_empty() || e.ratios.iter().any(|r| !(r.is_finite() && *r > 0.0 && *r <= 1.0)) {
            return Err(ConfigError::Invalid {
                reason: format!("ratios must lie in (0, 1], got {:?}", e.ratios),
            });
        }
        if !(e.holdout_ratio > 0.0 && e.holdout_ratio < 1.0) {
            return Err(ConfigError::Invalid {
                reason: format!("holdout_ratio must lie in (0, 1), got {}", e.holdout_ratio),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ProjectionKind;

    #[test]
    fn empty_config_has_pinned_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.task.kind, TaskKind::Emotion);
        let spec = cfg.task.to_spec().unwrap();
        assert_eq!(spec.labels, ["neutral", "happy", "sad", "angry"]);
        assert_eq!(spec.per_label_count, 1000);
        assert_eq!(cfg.generation.config.max_output_tokens, 32);
        assert_eq!(cfg.generation.config.temperature, 1.0);
        assert_eq!(cfg.encoder.n_layers, 12);
        assert_eq!(cfg.encoder.hidden_dim, 768);
        assert_eq!(cfg.lora.config.rank, 8);
        assert_eq!(cfg.lora.config.alpha, 16.0);
        assert!(cfg.lora.config.targets.contains(&ProjectionKind::Query));
        assert!(cfg.lora.config.targets.contains(&ProjectionKind::Value));
        assert_eq!(cfg.head.conv_channels, 256);
        assert_eq!(cfg.head.fc_hidden, 256);
        assert_eq!(cfg.experiment.ratios, [0.05, 0.1, 0.2, 0.5, 1.0]);
        assert_eq!(cfg.experiment.seeds, [0, 1, 2]);
        assert_eq!(cfg.experiment.holdout_ratio, 0.1);
        assert_eq!(cfg.tts.embedding_dim, 512);
    }

    #[test]
    fn train_section_resolves_defaults_and_overrides() {
        let sec = TrainSection::default();
        let full = sec.resolve(TaskKind::Emotion, false, 7);
        assert_eq!((full.lr, full.epochs, full.seed), (5e-4, 30, 7));
        let low = sec.resolve(TaskKind::Emotion, true, 8);
        assert_eq!((low.lr, low.epochs), (1e-4, 30));
        let intent_low = sec.resolve(TaskKind::Intent, true, 9);
        assert_eq!((intent_low.lr, intent_low.epochs), (5e-3, 50));

        let over = TrainSection {
            lr: Some(2e-3),
            epochs: Some(4),
            batch_size: Some(16),
        };
        let cfg = over.resolve(TaskKind::Emotion, true, 1);
        assert_eq!((cfg.lr, cfg.epochs, cfg.batch_size), (2e-3, 4, 16));
    }

    #[test]
    fn full_toml_roundtrip() {
        let text = r#"
            [task]
            kind = "intent"
            labels = ["set_alarm", "play_music", "weather_query"]
            per_label_count = 10

            [generation]
            backend = "fixture:texts.json"
            seed = 11

            [tts]
            backend = "stub:22050"
            pool_size = 4
            embedding_dim = 16

            [corpus]
            dataset = "slurp"
            root = "/data/slurp"

            [encoder]
            n_layers = 3
            hidden_dim = 32
            window = 64
            hop = 32

            [lora]
            enabled = false

            [head]
            conv_channels = 32
            fc_hidden = 16

            [train]
            lr = 1e-3
            epochs = 2

            [experiment]
            regimes = ["real_baseline", "low_resource"]
            ratios = [0.1, 0.5]
            seeds = [0]
            out_dir = "out/exp"
            holdout_ratio = 0.2
        "#;
        let cfg = RunConfig::from_toml(text).unwrap();
        cfg.validate().unwrap();
        let spec = cfg.task.to_spec().unwrap();
        assert_eq!(spec.kind, TaskKind::Intent);
        assert_eq!(spec.n_classes(), 3);
        assert_eq!(spec.per_label_count, 10);
        assert!(!cfg.lora.enabled);
        assert_eq!(cfg.generation.config.seed, 11);
        assert_eq!(cfg.experiment.regimes.len(), 2);
        assert_eq!(cfg.experiment.out_dir, PathBuf::from("out/exp"));
        let head = cfg.head.to_head(spec.n_classes()).unwrap();
        assert_eq!(head.n_classes, 3);

        // and the serialized form parses back to the same config
        let round = RunConfig::from_toml(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(round.experiment.ratios, cfg.experiment.ratios);
        assert_eq!(round.task.labels, cfg.task.labels);
    }

    #[test]
    fn intent_without_labels_is_rejected() {
        let cfg = RunConfig::from_toml("[task]\nkind = \"intent\"\n").unwrap();
        assert!(matches!(
            cfg.validate(),
            Err(ConfigError::Invalid { .. })
        ));
    }

    #[test]
    fn out_of_range_knobs_are_rejected() {
        let bad_ratio = RunConfig::from_toml("[experiment]\nratios = [0.5, 1.5]\n").unwrap();
        assert!(bad_ratio.validate().is_err());
        let bad_holdout = RunConfig::from_toml("[experiment]\nholdout_ratio = 0.0\n").unwrap();
        assert!(bad_holdout.validate().is_err());
        let bad_seeds = RunConfig::from_toml("[experiment]\nseeds = []\n").unwrap();
        assert!(bad_seeds.validate().is_err());
    }

    #[test]
    fn load_reads_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[encoder]\nn_layers = 2\nhidden_dim = 8\nwindow = 8\nhop = 4\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.encoder.n_layers, 2);
        assert!(RunConfig::load(&dir.path().join("missing.toml")).is_err());
    }
}
