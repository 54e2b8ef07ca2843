//! Corpus manifests: one header line plus one JSON record per utterance.
//!
//! The on-disk form is line-delimited UTF-8 JSON. The header is exactly
//! `{"schema":1,"task":"emotion"}` (or `"intent"`); every following line
//! is a record with the fields of [`UtteranceRecord`] in declaration
//! order. Audio references are stored relative to the manifest location,
//! so corpora can be moved wholesale.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::tasks::TaskKind;

use super::CorpusError;

/// Whether an utterance came from a real corpus or was synthesized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Real,
    Synthetic,
}

/// One utterance: where its audio lives and how it is labelled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub utt_id: String,
    /// Path to the audio file, relative to the manifest's directory
    /// unless absolute.
    pub audio_ref: String,
    pub label: String,
    pub speaker_id: String,
    pub session_id: String,
    /// Clip length in seconds.
    pub duration: f64,
    pub origin: Origin,
}

#[derive(Serialize, Deserialize)]
struct ManifestHeader {
    schema: u32,
    task: TaskKind,
}

/// An ordered collection of utterance records for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub task: TaskKind,
    records: Vec<UtteranceRecord>,
    /// Directory audio references resolve against; set on load/save and
    /// by ingest adapters.
    root: Option<PathBuf>,
}

impl Manifest {
    pub fn new(task: TaskKind) -> Self {
        Manifest {
            task,
            records: Vec::new(),
            root: None,
        }
    }

    /// Append a record after validating it against the manifest.
    pub fn push(&mut self, rec: UtteranceRecord) -> Result<(), CorpusError> {
        if rec.utt_id.is_empty()
            || rec.audio_ref.is_empty()
            || rec.label.is_empty()
            || rec.speaker_id.is_empty()
            || rec.session_id.is_empty()
        {
            return Err(CorpusError::InvalidRecord {
                utt_id: rec.utt_id.clone(),
                reason: "all string fields must be non-empty".into(),
            });
        }
        if !(rec.duration > 0.0) || !rec.duration.is_finite() {
            return Err(CorpusError::InvalidRecord {
                utt_id: rec.utt_id.clone(),
                reason: format!("duration must be finite and positive, got {}", rec.duration),
            });
        }
        if self.records.iter().any(|r| r.utt_id == rec.utt_id) {
            return Err(CorpusError::DuplicateUttId {
                utt_id: rec.utt_id.clone(),
            });
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn records(&self) -> &[UtteranceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn set_root(&mut self, root: impl Into<PathBuf>) {
        self.root = Some(root.into());
    }

    /// Absolute path to a record's audio file.
    pub fn resolve_audio(&self, rec: &UtteranceRecord) -> Result<PathBuf, CorpusError> {
        let ref_path = Path::new(&rec.audio_ref);
        if ref_path.is_absolute() {
            return Ok(ref_path.to_path_buf());
        }
        match &self.root {
            Some(root) => Ok(root.join(ref_path)),
            None => Err(CorpusError::InvalidRecord {
                utt_id: rec.utt_id.clone(),
                reason: format!(
                    "audio_ref {:?} is relative but the manifest has no root directory",
                    rec.audio_ref
                ),
            }),
        }
    }

    /// Distinct session ids, lexicographically sorted.
    pub fn sessions(&self) -> Vec<String> {
        let mut s: Vec<String> = self
            .records
            .iter()
            .map(|r| r.session_id.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        s.sort();
        s
    }

    /// Distinct labels, lexicographically sorted.
    pub fn labels(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| r.label.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Distinct speaker ids, lexicographically sorted.
    pub fn speakers(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| r.speaker_id.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn label_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.label.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// Sub-manifest of records whose session is in `sessions`, keeping
    /// record order and the audio root.
    pub fn filter_sessions(&self, sessions: &[String]) -> Manifest {
        let records = self
            .records
            .iter()
            .filter(|r| sessions.contains(&r.session_id))
            .cloned()
            .collect();
        Manifest {
            task: self.task,
            records,
            root: self.root.clone(),
        }
    }

    /// Sub-manifest of records whose utt_id passes `keep`, preserving
    /// order and root.
    pub fn filter_records(&self, mut keep: impl FnMut(&UtteranceRecord) -> bool) -> Manifest {
        Manifest {
            task: self.task,
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            root: self.root.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let wrap = |source: std::io::Error| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(wrap)?;
        }
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(wrap)?);
        let header = ManifestHeader {
            schema: 1,
            task: self.task,
        };
        writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))
            .map_err(wrap)?;
        for rec in &self.records {
            writeln!(out, "{}", serde_json::to_string(rec).expect("record serializes"))
                .map_err(wrap)?;
        }
        out.flush().map_err(wrap)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let wrap_io = |source: std::io::Error| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        let display = path.display().to_string();
        let reader = BufReader::new(std::fs::File::open(path).map_err(wrap_io)?);
        let mut lines = reader.lines().enumerate();
        let (_, first) = lines.next().ok_or_else(|| CorpusError::Format {
            path: display.clone(),
            line: 1,
            message: "file is empty, expected a header line".into(),
        })?;
        let header: ManifestHeader =
            serde_json::from_str(&first.map_err(wrap_io)?).map_err(|e| CorpusError::Format {
                path: display.clone(),
                line: 1,
                message: format!("bad header: {e}"),
            })?;
        if header.schema != 1 {
            return Err(CorpusError::Format {
                path: display.clone(),
                line: 1,
                message: format!("unsupported schema {}", header.schema),
            });
        }
        let mut manifest = Manifest::new(header.task);
        for (i, line) in lines {
            let line = line.map_err(wrap_io)?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: UtteranceRecord =
                serde_json::from_str(&line).map_err(|e| CorpusError::Format {
                    path: display.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            manifest.push(rec)?;
        }
        if let Some(parent) = path.parent() {
            manifest.root = Some(parent.to_path_buf());
        }
        Ok(manifest)
    }
}
