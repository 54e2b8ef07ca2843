//! Corpus handling: manifests, dataset ingest, session folds, stratified
//! subsampling, and standardized audio loading.

mod folds;
mod ingest;
mod manifest;
mod subsample;

pub use folds::{leave_one_session_out, make_folds, split_by_fold, Fold, FoldPlan};
pub use ingest::{ingest, shape_warnings, DatasetKind, IngestOptions};
pub use manifest::{Manifest, Origin, UtteranceRecord};
pub use subsample::{split_holdout, subsample};

use thiserror::Error;

use crate::audio::{self, AudioError, Waveform};
use crate::tasks::TaskKind;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{dataset} layout: {reason}")]
    Layout { dataset: String, reason: String },
    #[error("manifest {path} line {line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },
    #[error("corpus i/o at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("duplicate utterance id {utt_id:?}")]
    DuplicateUttId { utt_id: String },
    #[error("record {utt_id:?}: {reason}")]
    InvalidRecord { utt_id: String, reason: String },
    #[error("{context}: expected {expected}, found {found}")]
    SessionCount {
        context: String,
        expected: String,
        found: usize,
    },
    #[error("subsample ratio {ratio} outside (0, 1]")]
    RatioOutOfRange { ratio: f64 },
    #[error("no records left: {context}")]
    EmptyAfterFiltering { context: String },
    #[error("cannot read audio for {utt_id:?} at {path}: {message}")]
    UnreadableAudio {
        utt_id: String,
        path: String,
        message: String,
    },
    #[error(transparent)]
    Audio(#[from] AudioError),
}

/// Load one record's audio in the 16 kHz mono normal form, truncated to
/// the task's clip cap.
pub fn load_standardized(
    manifest: &Manifest,
    rec: &UtteranceRecord,
    task: TaskKind,
) -> Result<Waveform, CorpusError> {
    let path = manifest.resolve_audio(rec)?;
    let buf = audio::read_wav(&path).map_err(|e| CorpusError::UnreadableAudio {
        utt_id: rec.utt_id.clone(),
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    audio::standardize(&buf, Some(task.audio_cap_seconds())).map_err(|e| {
        CorpusError::UnreadableAudio {
            utt_id: rec.utt_id.clone(),
            path: path.display().to_string(),
            message: e.to_string(),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::write_wav_mono16;

    #[test]
    fn standardized_loading_caps_duration_by_task() {
        let dir = tempfile::tempdir().unwrap();
        // 8 seconds of 8 kHz audio; long enough to hit both caps
        let samples: Vec<f32> = (0..64_000)
            .map(|i| 0.2 * (0.05 * i as f32).sin())
            .collect();
        write_wav_mono16(&dir.path().join("long.wav"), &samples, 8_000).unwrap();

        let mut m = Manifest::new(TaskKind::Emotion);
        m.push(UtteranceRecord {
            utt_id: "u1".into(),
            audio_ref: "long.wav".into(),
            label: "happy".into(),
            speaker_id: "spk".into(),
            session_id: "s1".into(),
            duration: 8.0,
            origin: Origin::Real,
        })
        .unwrap();
        m.set_root(dir.path());

        let emo = load_standardized(&m, &m.records()[0], TaskKind::Emotion).unwrap();
        assert_eq!(emo.sample_rate, 16_000);
        assert_eq!(emo.samples.len(), 6 * 16_000, "emotion clips cap at 6 s");

        let intent = load_standardized(&m, &m.records()[0], TaskKind::Intent).unwrap();
        assert_eq!(intent.samples.len(), 3 * 16_000, "intent clips cap at 3 s");
    }

    #[test]
    fn unreadable_audio_names_the_utterance() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::new(TaskKind::Emotion);
        m.push(UtteranceRecord {
            utt_id: "ghost".into(),
            audio_ref: "missing.wav".into(),
            label: "sad".into(),
            speaker_id: "spk".into(),
            session_id: "s1".into(),
            duration: 1.0,
            origin: Origin::Real,
        })
        .unwrap();
        m.set_root(dir.path());
        match load_standardized(&m, &m.records()[0], TaskKind::Emotion) {
            Err(CorpusError::UnreadableAudio { utt_id, .. }) => assert_eq!(utt_id, "ghost"),
            other => panic!("expected UnreadableAudio, got {other:?}"),
        }
    }
}
