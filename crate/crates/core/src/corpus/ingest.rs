//! Dataset adapters: turn corpus-specific directory layouts into
//! manifests.
//!
//! Each adapter knows one corpus family's annotation format and audio
//! layout. None of them ship corpus data; they expect the licensed
//! datasets on local disk. Label inventories are reduced to the closed
//! task label set during ingest (e.g. the "excited" category merges into
//! "happy" for four-class emotion).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use walkdir::WalkDir;

use crate::corpus::{CorpusError, Manifest, Origin, UtteranceRecord};
use crate::tasks::TaskKind;

/// Supported corpus families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Iemocap,
    MspImprov,
    Slurp,
    /// A manifest previously written by the synthesis pipeline.
    Synthetic,
}

impl std::str::FromStr for DatasetKind {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self, CorpusError> {
        match s {
            "iemocap" => Ok(DatasetKind::Iemocap),
            "msp_improv" => Ok(DatasetKind::MspImprov),
            "slurp" => Ok(DatasetKind::Slurp),
            "synthetic" => Ok(DatasetKind::Synthetic),
            other => Err(CorpusError::Layout {
                dataset: other.to_string(),
                reason: "expected iemocap | msp_improv | slurp | synthetic".into(),
            }),
        }
    }
}

/// Adapter knobs.
#[derive(Debug, Clone)]
pub struct IngestOptions {
    /// Fold the "excited" emotion into "happy" (four-class convention).
    pub merge_excited: bool,
    /// Fail if a referenced audio file is missing.
    pub require_audio: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            merge_excited: true,
            require_audio: true,
        }
    }
}

/// Ingest a corpus rooted at `source` into a manifest.
pub fn ingest(
    kind: DatasetKind,
    source: &Path,
    opts: &IngestOptions,
) -> Result<Manifest, CorpusError> {
    let manifest = match kind {
        DatasetKind::Iemocap => ingest_iemocap(source, opts),
        DatasetKind::MspImprov => ingest_msp_improv(source, opts),
        DatasetKind::Slurp => ingest_slurp(source, opts),
        DatasetKind::Synthetic => ingest_synthetic(source),
    }?;
    if manifest.is_empty() {
        return Err(CorpusError::EmptyAfterFiltering {
            context: format!("{kind:?} ingest from {}", source.display()),
        });
    }
    for warning in shape_warnings(kind, &manifest) {
        log::warn!("{warning}");
    }
    Ok(manifest)
}

/// Known full-dataset shapes; mismatches are worth a warning but a
/// subset (or fixture) is perfectly usable.
pub fn shape_warnings(kind: DatasetKind, manifest: &Manifest) -> Vec<String> {
    let expected: Option<(usize, usize, usize)> = match kind {
        DatasetKind::Iemocap => Some((10, 4, 5_531)),
        DatasetKind::MspImprov => Some((12, 4, 7_798)),
        DatasetKind::Slurp => Some((177, 46, 72_277)),
        DatasetKind::Synthetic => None,
    };
    let Some((speakers, labels, utterances)) = expected else {
        return Vec::new();
    };
    let mut warnings = Vec::new();
    let found = (
        manifest.speakers().len(),
        manifest.labels().len(),
        manifest.len(),
    );
    if found != (speakers, labels, utterances) {
        warnings.push(format!(
            "{kind:?} manifest has {} speakers / {} labels / {} utterances; \
             the full corpus has {speakers} / {labels} / {utterances}",
            found.0, found.1, found.2
        ));
    }
    warnings
}

fn layout_err(dataset: &str, reason: impl Into<String>) -> CorpusError {
    CorpusError::Layout {
        dataset: dataset.to_string(),
        reason: reason.into(),
    }
}

fn check_audio(
    dataset: &str,
    root: &Path,
    manifest: &Manifest,
    opts: &IngestOptions,
) -> Result<(), CorpusError> {
    if !opts.require_audio {
        return Ok(());
    }
    let missing: Vec<&str> = manifest
        .records()
        .iter()
        .filter(|r| !root.join(&r.audio_ref).is_file())
        .map(|r| r.audio_ref.as_str())
        .collect();
    if !missing.is_empty() {
        let shown: Vec<&str> = missing.iter().take(3).copied().collect();
        return Err(layout_err(
            dataset,
            format!(
                "{} referenced audio files are missing, e.g. {:?}",
                missing.len(),
                shown
            ),
        ));
    }
    Ok(())
}

// --- IEMOCAP --------------------------------------------------------------

/// Categorical annotation lines look like
/// `[6.2901 - 8.2357]\tSes01F_impro01_F000\tneu\t[2.5, 2.5, 2.5]`.
fn ingest_iemocap(source: &Path, opts: &IngestOptions) -> Result<Manifest, CorpusError> {
    let mut eval_files: Vec<PathBuf> = Vec::new();
    for session in 1..=5 {
        let dir = source
            .join(format!("Session{session}"))
            .join("dialog")
            .join("EmoEvaluation");
        if !dir.is_dir() {
            continue;
        }
        for entry in WalkDir::new(&dir).max_depth(1) {
            let entry = entry.map_err(|e| layout_err("iemocap", e.to_string()))?;
            if entry.file_type().is_file()
                && entry.path().extension().is_some_and(|e| e == "txt")
            {
                eval_files.push(entry.into_path());
            }
        }
    }
    if eval_files.is_empty() {
        return Err(layout_err(
            "iemocap",
            format!(
                "no Session*/dialog/EmoEvaluation/*.txt files under {}",
                source.display()
            ),
        ));
    }
    eval_files.sort();

    let mut manifest = Manifest::new(TaskKind::Emotion);
    for file in &eval_files {
        let text = std::fs::read_to_string(file).map_err(|source| CorpusError::Io {
            path: file.display().to_string(),
            source,
        })?;
        for line in text.lines() {
            let Some(parsed) = parse_iemocap_line(line) else {
                continue;
            };
            let (start, end, turn, code) = parsed;
            let Some(label) = map_iemocap_code(code, opts.merge_excited) else {
                continue;
            };
            let (session_num, speaker) = parse_iemocap_turn(&turn)
                .ok_or_else(|| layout_err("iemocap", format!("malformed turn id {turn:?}")))?;
            // turn Ses01F_impro01_F000 sits in dialog folder Ses01F_impro01
            let dialog = turn
                .rsplit_once('_')
                .map(|(d, _)| d.to_string())
                .unwrap_or_else(|| turn.clone());
            let audio_ref = format!(
                "Session{session_num}/sentences/wav/{dialog}/{turn}.wav"
            );
            manifest.push(UtteranceRecord {
                utt_id: turn.clone(),
                audio_ref,
                label: label.to_string(),
                speaker_id: speaker,
                session_id: format!("Session{session_num}"),
                duration: end - start,
                origin: Origin::Real,
            })?;
        }
    }
    manifest.set_root(source);
    check_audio("iemocap", source, &manifest, opts)?;
    Ok(manifest)
}

fn parse_iemocap_line(line: &str) -> Option<(f64, f64, String, &str)> {
    let line = line.trim();
    if !line.starts_with('[') {
        return None;
    }
    let mut fields = line.split('\t');
    let times = fields.next()?;
    let turn = fields.next()?.trim();
    let code = fields.next()?.trim();
    let times = times.trim_start_matches('[').trim_end_matches(']');
    let (start, end) = times.split_once('-')?;
    let start: f64 = start.trim().parse().ok()?;
    let end: f64 = end.trim().parse().ok()?;
    if end <= start || turn.is_empty() {
        return None;
    }
    Some((start, end, turn.to_string(), code))
}

/// Session number and speaker id from a turn like `Ses01F_impro01_F000`.
/// The trailing segment's gender letter identifies the speaker; the
/// letter after the session number only says who wore the markers.
fn parse_iemocap_turn(turn: &str) -> Option<(u32, String)> {
    let rest = turn.strip_prefix("Ses")?;
    let session_num: u32 = rest.get(0..2)?.parse().ok()?;
    let last = turn.rsplit('_').next()?;
    let gender = last.chars().next()?;
    if gender != 'F' && gender != 'M' {
        return None;
    }
    Some((session_num, format!("Ses{session_num:02}{gender}")))
}

fn map_iemocap_code(code: &str, merge_excited: bool) -> Option<&'static str> {
    match code {
        "neu" => Some("neutral"),
        "hap" => Some("happy"),
        "sad" => Some("sad"),
        "ang" => Some("angry"),
        "exc" if merge_excited => Some("happy"),
        _ => None,
    }
}

// --- MSP-Improv ------------------------------------------------------------

/// Evaluation lines look like `MSP-IMPROV-S01A-F01-P-FF01.avi; A; ...`
/// (a `UTD-` prefix on the clip name is tolerated). Single-letter labels:
/// A(ngry), H(appy), S(ad), N(eutral); everything else is skipped.
fn ingest_msp_improv(source: &Path, opts: &IngestOptions) -> Result<Manifest, CorpusError> {
    let eval_path = ["Evaluation.txt", "Evalution.txt"]
        .iter()
        .map(|name| source.join(name))
        .find(|p| p.is_file())
        .ok_or_else(|| {
            layout_err(
                "msp_improv",
                format!("no Evaluation.txt under {}", source.display()),
            )
        })?;

    // audio files are found once by stem, wherever they sit under the root
    let mut wavs_by_stem: BTreeMap<String, PathBuf> = BTreeMap::new();
    for entry in WalkDir::new(source) {
        let entry = entry.map_err(|e| layout_err("msp_improv", e.to_string()))?;
        if entry.file_type().is_file()
            && entry.path().extension().is_some_and(|e| e == "wav")
        {
            if let Some(stem) = entry.path().file_stem().and_then(|s| s.to_str()) {
                wavs_by_stem.insert(stem.to_string(), entry.into_path());
            }
        }
    }

    let text = std::fs::read_to_string(&eval_path).map_err(|source| CorpusError::Io {
        path: eval_path.display().to_string(),
        source,
    })?;
    let mut manifest = Manifest::new(TaskKind::Emotion);
    for line in text.lines() {
        let Some((stem, label)) = parse_msp_line(line) else {
            continue;
        };
        let Some((speaker, session)) = parse_msp_stem(&stem) else {
            continue;
        };
        let Some(wav) = wavs_by_stem.get(&stem) else {
            if opts.require_audio {
                return Err(layout_err(
                    "msp_improv",
                    format!("no wav found for clip {stem:?}"),
                ));
            }
            continue;
        };
        let duration = wav_duration_seconds(wav)?;
        let audio_ref = wav
            .strip_prefix(source)
            .unwrap_or(wav)
            .to_string_lossy()
            .into_owned();
        manifest.push(UtteranceRecord {
            utt_id: stem.clone(),
            audio_ref,
            label: label.to_string(),
            speaker_id: speaker,
            session_id: session,
            duration,
            origin: Origin::Real,
        })?;
    }
    if manifest.is_empty() {
        return Err(layout_err(
            "msp_improv",
            "evaluation file yielded no usable records",
        ));
    }
    manifest.set_root(source);
    Ok(manifest)
}

fn parse_msp_line(line: &str) -> Option<(String, &'static str)> {
    let mut fields = line.split(';');
    let clip = fields.next()?.trim();
    let label = fields.next()?.trim();
    if !clip.to_ascii_lowercase().ends_with(".avi") {
        return None;
    }
    let stem = clip
        .trim_start_matches("UTD-")
        .trim_end_matches(".avi")
        .trim_end_matches(".AVI")
        .to_string();
    let label = match label {
        "A" => "angry",
        "H" => "happy",
        "S" => "sad",
        "N" => "neutral",
        _ => return None,
    };
    Some((stem, label))
}

/// Speaker and session from a stem like `MSP-IMPROV-S01A-F01-P-FF01`:
/// the fourth dash field is the speaker (F01), whose digits give the
/// session pair (session1 hosts F01 and M01).
fn parse_msp_stem(stem: &str) -> Option<(String, String)> {
    let fields: Vec<&str> = stem.split('-').collect();
    let speaker = fields.get(3)?;
    let gender = speaker.chars().next()?;
    if gender != 'F' && gender != 'M' {
        return None;
    }
    let num: u32 = speaker[1..].parse().ok()?;
    Some((speaker.to_string(), format!("session{num}")))
}

fn wav_duration_seconds(path: &Path) -> Result<f64, CorpusError> {
    let reader = hound::WavReader::open(path).map_err(|e| CorpusError::UnreadableAudio {
        utt_id: String::new(),
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let spec = reader.spec();
    Ok(reader.duration() as f64 / spec.sample_rate as f64)
}

// --- SLURP -----------------------------------------------------------------

#[derive(Deserialize)]
struct SlurpEntry {
    #[serde(default)]
    intent: Option<String>,
    #[serde(default)]
    scenario: Option<String>,
    #[serde(default)]
    action: Option<String>,
    recordings: Vec<SlurpRecording>,
}

#[derive(Deserialize)]
struct SlurpRecording {
    file: String,
    #[serde(default)]
    user_id: Option<String>,
}

/// Metadata lives in `train.jsonl` / `devel.jsonl` / `test.jsonl`; audio
/// sits under `audio/` as 16 kHz wavs named after the recordings (the
/// distribution's flac files are expected to be converted beforehand).
fn ingest_slurp(source: &Path, opts: &IngestOptions) -> Result<Manifest, CorpusError> {
    let mut manifest = Manifest::new(TaskKind::Intent);
    let mut found_any_split = false;
    for split in ["train", "devel", "test"] {
        let path = source.join(format!("{split}.jsonl"));
        if !path.is_file() {
            continue;
        }
        found_any_split = true;
        let text = std::fs::read_to_string(&path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: SlurpEntry =
                serde_json::from_str(line).map_err(|e| CorpusError::Format {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            let intent = match (&entry.intent, &entry.scenario, &entry.action) {
                (Some(intent), _, _) => intent.clone(),
                (None, Some(s), Some(a)) => format!("{s}_{a}"),
                _ => {
                    return Err(CorpusError::Format {
                        path: path.display().to_string(),
                        line: i + 1,
                        message: "entry has neither intent nor scenario+action".into(),
                    })
                }
            };
            for rec in &entry.recordings {
                let stem = rec
                    .file
                    .trim_end_matches(".flac")
                    .trim_end_matches(".wav")
                    .to_string();
                let audio_ref = format!("audio/{stem}.wav");
                let wav_path = source.join(&audio_ref);
                let duration = if wav_path.is_file() {
                    wav_duration_seconds(&wav_path)?
                } else if opts.require_audio {
                    return Err(layout_err(
                        "slurp",
                        format!("missing audio file {audio_ref:?}"),
                    ));
                } else {
                    continue;
                };
                manifest.push(UtteranceRecord {
                    utt_id: format!("{split}-{stem}"),
                    audio_ref,
                    label: intent.clone(),
                    speaker_id: rec
                        .user_id
                        .clone()
                        .unwrap_or_else(|| "unknown".to_string()),
                    session_id: split.to_string(),
                    duration,
                    origin: Origin::Real,
                })?;
            }
        }
    }
    if !found_any_split {
        return Err(layout_err(
            "slurp",
            format!(
                "no train.jsonl/devel.jsonl/test.jsonl under {}",
                source.display()
            ),
        ));
    }
    manifest.set_root(source);
    Ok(manifest)
}

// --- synthetic -------------------------------------------------------------

/// `source` is a synthesis output manifest (or the directory holding
/// `manifest.jsonl`). Everything in it must be of synthetic origin.
fn ingest_synthetic(source: &Path) -> Result<Manifest, CorpusError> {
    let path = if source.is_dir() {
        source.join("manifest.jsonl")
    } else {
        source.to_path_buf()
    };
    let manifest = Manifest::load(&path)?;
    if let Some(bad) = manifest
        .records()
        .iter()
        .find(|r| r.origin != Origin::Synthetic)
    {
        return Err(CorpusError::InvalidRecord {
            utt_id: bad.utt_id.clone(),
            reason: "synthetic ingest found a record of real origin".into(),
        });
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio;

    fn write_tone(path: &Path, seconds: f64) {
        let n = (16_000.0 * seconds) as usize;
        let samples: Vec<f32> = (0..n)
            .map(|i| 0.3 * (2.0 * std::f64::consts::PI * 220.0 * i as f64 / 16_000.0).sin() as f32)
            .collect();
        audio::write_wav_mono16(path, &samples, 16_000).unwrap();
    }

    fn fake_iemocap(root: &Path) {
        // two sessions, four turns each; one "exc" and one "fru" line to
        // exercise merging and skipping
        for (session, dialog, lines) in [
            (
                1,
                "Ses01F_impro01",
                vec![
                    ("Ses01F_impro01_F000", "neu", 0.0, 1.5),
                    ("Ses01F_impro01_M001", "hap", 1.5, 3.1),
                    ("Ses01F_impro01_F002", "exc", 3.1, 4.0),
                    ("Ses01F_impro01_M003", "fru", 4.0, 5.0),
                ],
            ),
            (
                2,
                "Ses02M_script01",
                vec![
                    ("Ses02M_script01_F000", "sad", 0.0, 2.0),
                    ("Ses02M_script01_M001", "ang", 2.0, 4.5),
                ],
            ),
        ] {
            let eval_dir = root
                .join(format!("Session{session}"))
                .join("dialog")
                .join("EmoEvaluation");
            std::fs::create_dir_all(&eval_dir).unwrap();
            let mut text = String::from("% header chatter\n\n");
            for (turn, code, start, end) in &lines {
                text.push_str(&format!(
                    "[{start:.4} - {end:.4}]\t{turn}\t{code}\t[2.5000, 2.5000, 2.5000]\n"
                ));
                let wav = root
                    .join(format!("Session{session}"))
                    .join("sentences")
                    .join("wav")
                    .join(dialog)
                    .join(format!("{turn}.wav"));
                write_tone(&wav, end - start);
            }
            std::fs::write(eval_dir.join(format!("{dialog}.txt")), text).unwrap();
        }
    }

    #[test]
    fn iemocap_adapter_parses_fixture() {
        let dir = tempfile::tempdir().unwrap();
        fake_iemocap(dir.path());
        let m = ingest(DatasetKind::Iemocap, dir.path(), &IngestOptions::default()).unwrap();
        // fru dropped, exc merged into happy
        assert_eq!(m.len(), 5);
        assert_eq!(m.labels(), vec!["angry", "happy", "neutral", "sad"]);
        assert_eq!(m.label_counts()["happy"], 2);
        assert_eq!(m.sessions(), vec!["Session1", "Session2"]);
        // speaker comes from the turn suffix, not the dialog prefix
        let rec = m
            .records()
            .iter()
            .find(|r| r.utt_id == "Ses01F_impro01_M001")
            .unwrap();
        assert_eq!(rec.speaker_id, "Ses01M");
        assert_eq!(rec.session_id, "Session1");
        assert!((rec.duration - 1.6).abs() < 1e-9);
        assert_eq!(
            rec.audio_ref,
            "Session1/sentences/wav/Ses01F_impro01/Ses01F_impro01_M001.wav"
        );
        // resolved audio exists and standardizes
        let path = m.resolve_audio(rec).unwrap();
        assert!(path.is_file());

        // without merging, exc disappears
        let opts = IngestOptions {
            merge_excited: false,
            ..IngestOptions::default()
        };
        let m2 = ingest(DatasetKind::Iemocap, dir.path(), &opts).unwrap();
        assert_eq!(m2.len(), 4);
        assert_eq!(m2.label_counts()["happy"], 1);
    }

    #[test]
    fn iemocap_missing_audio_is_a_layout_error() {
        let dir = tempfile::tempdir().unwrap();
        fake_iemocap(dir.path());
        std::fs::remove_file(
            dir.path()
                .join("Session1/sentences/wav/Ses01F_impro01/Ses01F_impro01_F000.wav"),
        )
        .unwrap();
        let err =
            ingest(DatasetKind::Iemocap, dir.path(), &IngestOptions::default()).unwrap_err();
        assert!(matches!(err, CorpusError::Layout { .. }), "{err}");
        // tolerated when existence checks are off
        let opts = IngestOptions {
            require_audio: false,
            ..IngestOptions::default()
        };
        assert!(ingest(DatasetKind::Iemocap, dir.path(), &opts).is_ok());
    }

    #[test]
    fn msp_adapter_parses_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let audio_dir = dir.path().join("Audio").join("session1");
        let clips = [
            ("MSP-IMPROV-S01A-F01-P-FF01", "A", "F01", "session1"),
            ("MSP-IMPROV-S01A-M01-R-MM01", "H", "M01", "session1"),
            ("MSP-IMPROV-S02B-F02-S-FF02", "N", "F02", "session2"),
        ];
        let mut eval = String::new();
        for (stem, label, _, _) in &clips {
            write_tone(&audio_dir.join(format!("{stem}.wav")), 1.0);
            eval.push_str(&format!("UTD-{stem}.avi; {label}; A:2.0;\n"));
        }
        eval.push_str("MSP-IMPROV-S03A-F03-P-FF03.avi; O; other label skipped\n");
        std::fs::write(dir.path().join("Evaluation.txt"), eval).unwrap();

        let m = ingest(DatasetKind::MspImprov, dir.path(), &IngestOptions::default()).unwrap();
        assert_eq!(m.len(), 3);
        for (stem, _, speaker, session) in &clips {
            let rec = m.records().iter().find(|r| r.utt_id == *stem).unwrap();
            assert_eq!(&rec.speaker_id, speaker);
            assert_eq!(&rec.session_id, session);
            assert!((rec.duration - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn slurp_adapter_parses_fixture() {
        let dir = tempfile::tempdir().unwrap();
        for (split, intent, file) in [
            ("train", r#""scenario":"alarm","action":"set""#, "audio-1"),
            ("devel", r#""intent":"audio_volume_mute""#, "audio-2"),
            ("test", r#""intent":"contacts_query""#, "audio-3"),
        ] {
            let line = format!(
                "{{{intent},\"recordings\":[{{\"file\":\"{file}.flac\",\"user_id\":\"U42\"}}]}}\n"
            );
            std::fs::write(dir.path().join(format!("{split}.jsonl")), line).unwrap();
            write_tone(&dir.path().join("audio").join(format!("{file}.wav")), 0.5);
        }
        let m = ingest(DatasetKind::Slurp, dir.path(), &IngestOptions::default()).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.task, TaskKind::Intent);
        assert_eq!(m.sessions(), vec!["devel", "test", "train"]);
        let rec = &m.records()[0];
        assert_eq!(rec.label, "alarm_set");
        assert_eq!(rec.speaker_id, "U42");
        assert_eq!(rec.session_id, "train");
    }

    #[test]
    fn shape_warnings_fire_on_subset() {
        let dir = tempfile::tempdir().unwrap();
        fake_iemocap(dir.path());
        let m = ingest(DatasetKind::Iemocap, dir.path(), &IngestOptions::default()).unwrap();
        let warnings = shape_warnings(DatasetKind::Iemocap, &m);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("5531") || warnings[0].contains("5_531"), "{warnings:?}");
    }

    #[test]
    fn missing_layout_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        for kind in [DatasetKind::Iemocap, DatasetKind::MspImprov, DatasetKind::Slurp] {
            let err = ingest(kind, dir.path(), &IngestOptions::default()).unwrap_err();
            assert!(matches!(err, CorpusError::Layout { .. }), "{kind:?}: {err}");
        }
    }
}
