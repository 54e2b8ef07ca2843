//! Task definitions: label sets, prompt templates, and generation plans.
//!
//! A [`TaskSpec`] pins down everything the data-generation pipeline needs
//! to know about a classification task: the kind (emotion vs. intent), the
//! closed label set, how many utterances to request per label, and the
//! prompt template used to steer the text generator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Placeholder that prompt templates must contain exactly once.
pub const LABEL_PLACEHOLDER: &str = "{label}";

const EMOTION_TEMPLATE: &str = "Generate a spoken utterance with {label} emotion";
const INTENT_TEMPLATE: &str = "Generate a spoken utterance with intent to {label}";

/// Default emotion inventory, in canonical order.
pub const EMOTION_LABELS: [&str; 4] = ["neutral", "happy", "sad", "angry"];

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("unknown label {label:?}; task defines {known:?}")]
    UnknownLabel { label: String, known: Vec<String> },
    #[error("invalid task: {reason}")]
    InvalidTask { reason: String },
}

/// The two task families with differing defaults downstream (metric,
/// audio cap, learning rate, epoch budget).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Emotion,
    Intent,
}

impl TaskKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::Emotion => "emotion",
            TaskKind::Intent => "intent",
        }
    }

    /// Headline metric: UAR for emotion, macro-F1 for intent.
    pub fn uses_uar(&self) -> bool {
        matches!(self, TaskKind::Emotion)
    }

    /// Maximum clip length fed to the encoder, in seconds.
    pub fn audio_cap_seconds(&self) -> f64 {
        match self {
            TaskKind::Emotion => 6.0,
            TaskKind::Intent => 3.0,
        }
    }

    fn default_template(&self) -> &'static str {
        match self {
            TaskKind::Emotion => EMOTION_TEMPLATE,
            TaskKind::Intent => INTENT_TEMPLATE,
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = TaskError;
    fn from_str(s: &str) -> Result<Self, TaskError> {
        match s {
            "emotion" => Ok(TaskKind::Emotion),
            "intent" => Ok(TaskKind::Intent),
            other => Err(TaskError::InvalidTask {
                reason: format!("unknown task kind {other:?} (expected emotion|intent)"),
            }),
        }
    }
}

/// A fully specified classification task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Closed label set, canonical order. Index in this list is the class
    /// index used by models and metrics.
    pub labels: Vec<String>,
    /// Utterances to generate per label.
    pub per_label_count: usize,
    /// Prompt template containing [`LABEL_PLACEHOLDER`] exactly once.
    pub template: String,
}

impl TaskSpec {
    /// Build a task over the given labels. Labels are normalized
    /// (trimmed, lowercased) and must end up non-empty and unique.
    pub fn new(
        kind: TaskKind,
        labels: &[impl AsRef<str>],
        per_label_count: usize,
    ) -> Result<Self, TaskError> {
        let template = kind.default_template().to_string();
        Self::with_template(kind, labels, per_label_count, template)
    }

    /// Same as [`TaskSpec::new`] with a caller-supplied prompt template.
    pub fn with_template(
        kind: TaskKind,
        labels: &[impl AsRef<str>],
        per_label_count: usize,
        template: String,
    ) -> Result<Self, TaskError> {
        if labels.is_empty() {
            return Err(TaskError::InvalidTask {
                reason: "label set is empty".into(),
            });
        }
        let mut normalized = Vec::with_capacity(labels.len());
        for raw in labels {
            let label = normalize_label(raw.as_ref());
            if label.is_empty() {
                return Err(TaskError::InvalidTask {
                    reason: format!("label {:?} is empty after normalization", raw.as_ref()),
                });
            }
            if normalized.contains(&label) {
                return Err(TaskError::InvalidTask {
                    reason: format!("duplicate label {label:?} after normalization"),
                });
            }
            normalized.push(label);
        }
        let occurrences = template.matches(LABEL_PLACEHOLDER).count();
        if occurrences != 1 {
            return Err(TaskError::InvalidTask {
                reason: format!(
                    "template must contain {LABEL_PLACEHOLDER} exactly once, found {occurrences}"
                ),
            });
        }
        Ok(TaskSpec {
            kind,
            labels: normalized,
            per_label_count,
            template,
        })
    }

    /// The canonical four-emotion task.
    pub fn emotion_default(per_label_count: usize) -> Self {
        Self::new(TaskKind::Emotion, &EMOTION_LABELS, per_label_count)
            .expect("default emotion task is valid")
    }

    /// Class index of a label, if it belongs to the task.
    pub fn class_index(&self, label: &str) -> Result<usize, TaskError> {
        let norm = normalize_label(label);
        self.labels
            .iter()
            .position(|l| *l == norm)
            .ok_or_else(|| TaskError::UnknownLabel {
                label: label.to_string(),
                known: self.labels.clone(),
            })
    }

    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    /// Instantiate the prompt template for one label.
    pub fn build_prompt(&self, label: &str) -> Result<String, TaskError> {
        let idx = self.class_index(label)?;
        Ok(self.template.replacen(LABEL_PLACEHOLDER, &self.labels[idx], 1))
    }

    /// Enumerate what the text generator should produce: one (label,
    /// prompt, count) entry per label, in canonical label order.
    pub fn plan_generation(&self) -> Result<GenerationPlan, TaskError> {
        if self.labels.is_empty() {
            return Err(TaskError::InvalidTask {
                reason: "cannot plan generation for an empty label set".into(),
            });
        }
        let items = self
            .labels
            .iter()
            .map(|label| {
                Ok(PlanItem {
                    label: label.clone(),
                    prompt: self.build_prompt(label)?,
                    count: self.per_label_count,
                })
            })
            .collect::<Result<Vec<_>, TaskError>>()?;
        Ok(GenerationPlan { items })
    }
}

fn normalize_label(raw: &str) -> String {
    raw.trim().to_lowercase()
}

/// One label's slice of a generation plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanItem {
    pub label: String,
    pub prompt: String,
    pub count: usize,
}

/// Per-label generation quotas, in canonical label order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationPlan {
    pub items: Vec<PlanItem>,
}

impl GenerationPlan {
    pub fn total(&self) -> usize {
        self.items.iter().map(|i| i.count).sum()
    }
}
