//! Label-guided text generation.
//!
//! [`generate_texts`] walks a [`GenerationPlan`](crate::tasks::GenerationPlan),
//! asks a [`TextGenBackend`] for candidate utterances, pushes each candidate
//! through [`filter_text`], and deduplicates exact matches within each
//! label until the per-label quota is met or the retry budget runs out.
//!
//! Labels are independent shards: generation is parallelized across them
//! and results are merged in plan order, so output is deterministic no
//! matter how the shards were scheduled.

mod backend;

pub use backend::{backend_from_name, FixtureTextGen, HttpTextGen, StubTextGen, TextGenBackend};

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tasks::{GenerationPlan, TaskError, TaskKind, TaskSpec};

#[derive(Debug, Error)]
pub enum TextGenError {
    #[error("text backend {backend_id:?} failed: {message}")]
    Backend { backend_id: String, message: String },
    #[error(
        "quota unmet for label {label:?}: {produced}/{requested} texts after {attempts} attempts"
    )]
    QuotaUnmet {
        label: String,
        requested: usize,
        produced: usize,
        attempts: usize,
    },
    #[error("invalid generation config: {reason}")]
    Config { reason: String },
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("text batch i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("text batch line {line}: {message}")]
    Format { line: usize, message: String },
}

/// Knobs for one generation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    /// Upper bound on generated tokens per utterance.
    pub max_output_tokens: u32,
    /// Sampling temperature handed to the backend.
    pub temperature: f64,
    /// Root seed for the run; per-label, per-attempt seeds derive from it.
    pub seed: u64,
    /// Hard cap on accepted text length, in characters.
    pub char_cap: usize,
    /// Retry budget per label, as a multiple of the requested count.
    pub retry_factor: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            max_output_tokens: 32,
            temperature: 1.0,
            seed: 0,
            char_cap: 200,
            retry_factor: 5,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), TextGenError> {
        if self.max_output_tokens == 0 {
            return Err(TextGenError::Config {
                reason: "max_output_tokens must be at least 1".into(),
            });
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(TextGenError::Config {
                reason: format!("temperature must be finite and >= 0, got {}", self.temperature),
            });
        }
        if self.char_cap == 0 {
            return Err(TextGenError::Config {
                reason: "char_cap must be positive".into(),
            });
        }
        Ok(())
    }
}

/// One accepted utterance text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpokenText {
    pub text: String,
    pub label: String,
    pub prompt: String,
    pub backend_id: String,
    /// Per-label ordinal among accepted texts, starting at 0.
    pub index: u64,
}

/// Why a candidate text was rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rejection {
    Empty,
    TooLong { len: usize, cap: usize },
    Duplicate,
}

/// Rejection tallies for one generation run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenStats {
    pub attempts: usize,
    pub rejected_empty: usize,
    pub rejected_too_long: usize,
    pub rejected_duplicate: usize,
}

impl GenStats {
    fn absorb(&mut self, other: &GenStats) {
        self.attempts += other.attempts;
        self.rejected_empty += other.rejected_empty;
        self.rejected_too_long += other.rejected_too_long;
        self.rejected_duplicate += other.rejected_duplicate;
    }
}

/// Accepted texts for a whole run, with enough context to replay it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextBatch {
    pub task: TaskKind,
    pub backend_id: String,
    pub seed: u64,
    pub texts: Vec<SpokenText>,
}

#[derive(Serialize, Deserialize)]
struct TextBatchHeader {
    schema: u32,
    task: TaskKind,
    backend: String,
    seed: u64,
}

impl TextBatch {
    /// Write as a header line plus one JSON record per text.
    pub fn save(&self, path: &Path) -> Result<(), TextGenError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header = TextBatchHeader {
            schema: 1,
            task: self.task,
            backend: self.backend_id.clone(),
            seed: self.seed,
        };
        writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
        for t in &self.texts {
            writeln!(out, "{}", serde_json::to_string(t).expect("record serializes"))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TextGenError> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines().enumerate();
        let (_, first) = lines.next().ok_or(TextGenError::Format {
            line: 1,
            message: "file is empty, expected a header line".into(),
        })?;
        let header: TextBatchHeader =
            serde_json::from_str(&first?).map_err(|e| TextGenError::Format {
                line: 1,
                message: format!("bad header: {e}"),
            })?;
        if header.schema != 1 {
            return Err(TextGenError::Format {
                line: 1,
                message: format!("unsupported schema {}", header.schema),
            });
        }
        let mut texts = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t: SpokenText = serde_json::from_str(&line).map_err(|e| TextGenError::Format {
                line: i + 1,
                message: e.to_string(),
            })?;
            texts.push(t);
        }
        Ok(TextBatch {
            task: header.task,
            backend_id: header.backend,
            seed: header.seed,
            texts,
        })
    }
}

/// Normalize and vet one candidate text.
///
/// Trims surrounding whitespace and strips matched surrounding quote pairs
/// until none remain, so the result is a fixed point: filtering an already
/// accepted text returns it unchanged.
pub fn filter_text(raw: &str, char_cap: usize) -> Result<String, Rejection> {
    let mut text = raw.trim();
    loop {
        let stripped = strip_quote_pair(text).trim();
        if stripped == text {
            break;
        }
        text = stripped;
    }
    if text.is_empty() {
        return Err(Rejection::Empty);
    }
    let len = text.chars().count();
    if len > char_cap {
        return Err(Rejection::TooLong { len, cap: char_cap });
    }
    Ok(text.to_string())
}

const QUOTE_PAIRS: [(char, char); 4] = [('"', '"'), ('\'', '\''), ('\u{201c}', '\u{201d}'), ('\u{2018}', '\u{2019}')];

fn strip_quote_pair(text: &str) -> &str {
    let mut chars = text.chars();
    let (Some(first), Some(last)) = (chars.next(), chars.next_back()) else {
        return text;
    };
    for (open, close) in QUOTE_PAIRS {
        if first == open && last == close {
            return &text[first.len_utf8()..text.len() - last.len_utf8()];
        }
    }
    text
}

/// Generate texts for every plan item against `backend`.
///
/// Each label gets `retry_factor * count` attempts; a label that still has
/// fewer than `count` accepted texts afterwards aborts the run with
/// [`TextGenError::QuotaUnmet`]. Backend failures abort immediately.
pub fn generate_texts(
    task: &TaskSpec,
    plan: &GenerationPlan,
    backend: &dyn TextGenBackend,
    cfg: &GenerationConfig,
) -> Result<(TextBatch, GenStats), TextGenError> {
    cfg.validate()?;
    for item in &plan.items {
        task.class_index(&item.label)?;
    }
    let shards: Vec<Result<(Vec<SpokenText>, GenStats), TextGenError>> = plan
        .items
        .par_iter()
        .map(|item| generate_label_shard(item.label.as_str(), &item.prompt, item.count, backend, cfg))
        .collect();

    let mut texts = Vec::with_capacity(plan.total());
    let mut stats = GenStats::default();
    for shard in shards {
        let (mut shard_texts, shard_stats) = shard?;
        stats.absorb(&shard_stats);
        texts.append(&mut shard_texts);
    }
    Ok((
        TextBatch {
            task: task.kind,
            backend_id: backend.id().to_string(),
            seed: cfg.seed,
            texts,
        },
        stats,
    ))
}

fn generate_label_shard(
    label: &str,
    prompt: &str,
    count: usize,
    backend: &dyn TextGenBackend,
    cfg: &GenerationConfig,
) -> Result<(Vec<SpokenText>, GenStats), TextGenError> {
    let mut accepted: Vec<SpokenText> = Vec::with_capacity(count);
    let mut seen: HashSet<String> = HashSet::with_capacity(count);
    let mut stats = GenStats::default();
    let budget = cfg.retry_factor.max(1).saturating_mul(count);
    while accepted.len() < count && stats.attempts < budget {
        let attempt = stats.attempts as u64;
        stats.attempts += 1;
        let raw = backend
            .generate(prompt, cfg, attempt)
            .map_err(|e| TextGenError::Backend {
                backend_id: backend.id().to_string(),
                message: e.to_string(),
            })?;
        match filter_text(&raw, cfg.char_cap) {
            Ok(text) => {
                if seen.insert(text.clone()) {
                    let index = accepted.len() as u64;
                    accepted.push(SpokenText {
                        text,
                        label: label.to_string(),
                        prompt: prompt.to_string(),
                        backend_id: backend.id().to_string(),
                        index,
                    });
                } else {
                    stats.rejected_duplicate += 1;
                }
            }
            Err(Rejection::Empty) => stats.rejected_empty += 1,
            Err(Rejection::TooLong { .. }) => stats.rejected_too_long += 1,
            Err(Rejection::Duplicate) => unreachable!("filter_text does not see history"),
        }
    }
    if accepted.len() < count {
        return Err(TextGenError::QuotaUnmet {
            label: label.to_string(),
            requested: count,
            produced: accepted.len(),
            attempts: stats.attempts,
        });
    }
    Ok((accepted, stats))
}
