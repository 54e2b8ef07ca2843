//! End-to-end runs of the `asulab` binary against stub backends.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use asulab::audio::write_wav_mono16;
use asulab::corpus::{Manifest, Origin, UtteranceRecord};
use asulab::seeds;
use asulab::tasks::TaskKind;
use rand::Rng;

fn asulab(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_asulab"))
        .args(args)
        .output()
        .expect("binary must launch");
    assert!(
        out.status.success(),
        "asulab {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Tiny two-label corpus distinguishable by amplitude, one manifest per
/// directory so relative audio refs resolve.
fn write_corpus(dir: &Path, sessions: &[&str], per_label: usize, origin: Origin) -> std::path::PathBuf {
    let mut manifest = Manifest::new(TaskKind::Emotion);
    manifest.set_root(dir);
    for session in sessions {
        for (label, amp) in [("neutral", 0.05f32), ("happy", 0.6f32)] {
            for i in 0..per_label {
                let utt_id = format!("{session}-{label}-{i}");
                let mut rng = seeds::rng_for("test.cli.wave", 0, &[&utt_id]);
                let samples: Vec<f32> = (0..64).map(|_| rng.random_range(-amp..amp)).collect();
                let rel = format!("{utt_id}.wav");
                write_wav_mono16(&dir.join(&rel), &samples, 16_000).unwrap();
                manifest
                    .push(UtteranceRecord {
                        utt_id,
                        audio_ref: rel,
                        label: label.to_string(),
                        speaker_id: format!("spk-{session}"),
                        session_id: session.to_string(),
                        duration: 64.0 / 16_000.0,
                        origin,
                    })
                    .unwrap();
            }
        }
    }
    let path = dir.join("manifest.jsonl");
    manifest.save(&path).unwrap();
    path
}

#[test]
fn text_and_speech_stages_build_a_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("task.toml");
    fs::write(
        &cfg_path,
        r#"
        [task]
        kind = "emotion"
        labels = ["neutral", "happy"]
        per_label_count = 3
    "#,
    )
    .unwrap();

    let texts = dir.path().join("texts.jsonl");
    let out = asulab(&[
        "generate-text",
        "--task",
        cfg_path.to_str().unwrap(),
        "--backend",
        "stub",
        "--seed",
        "1",
        "--out",
        texts.to_str().unwrap(),
    ]);
    assert!(
        stdout(&out).contains("wrote 6 texts"),
        "expected 6 texts: {}",
        stdout(&out)
    );

    let syn_dir = dir.path().join("syn");
    asulab(&[
        "synthesize",
        "--texts",
        texts.to_str().unwrap(),
        "--backend",
        "stub",
        "--seed",
        "2",
        "--pool-size",
        "4",
        "--embedding-dim",
        "8",
        "--out-dir",
        syn_dir.to_str().unwrap(),
    ]);
    let manifest = Manifest::load(&syn_dir.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.len(), 6);
    let wavs = fs::read_dir(syn_dir.join("wav")).unwrap().count();
    assert_eq!(wavs, 6);

    // halving 3 per label keeps ceil(1.5) = 2 per label
    let sub_path = dir.path().join("sub.jsonl");
    asulab(&[
        "subsample",
        "--manifest",
        syn_dir.join("manifest.jsonl").to_str().unwrap(),
        "--ratio",
        "0.5",
        "--seed",
        "0",
        "--out",
        sub_path.to_str().unwrap(),
    ]);
    let sub = Manifest::load(&sub_path).unwrap();
    assert_eq!(sub.len(), 4);
    assert!(sub.label_counts().values().all(|&n| n == 2));
}

#[test]
fn train_run_and_report_stages_work() {
    let dir = tempfile::tempdir().unwrap();
    let real = write_corpus(
        &dir.path().join("real"),
        &["s1", "s2", "s3", "s4", "s5"],
        4,
        Origin::Real,
    );
    let synthetic = write_corpus(&dir.path().join("syn"), &["synthetic"], 6, Origin::Synthetic);
    let out_dir = dir.path().join("runs");

    let cfg_path = dir.path().join("run.toml");
    fs::write(
        &cfg_path,
        format!(
            r#"
            [task]
            kind = "emotion"
            labels = ["neutral", "happy"]
            per_label_count = 4

            [corpus]
            dataset = "iemocap"
            root = {real:?}
            synthetic_manifest = {synthetic:?}

            [encoder]
            n_layers = 2
            hidden_dim = 8
            window = 8
            hop = 4

            [lora]
            enabled = false

            [head]
            conv_channels = 8
            fc_hidden = 8

            [train]
            lr = 1e-2
            epochs = 2
            batch_size = 8

            [experiment]
            regimes = ["real_baseline"]
            ratios = [0.5]
            seeds = [0]
            out_dir = {out_dir:?}
            holdout_ratio = 0.25
        "#
        ),
    )
    .unwrap();

    let plan = stdout(&asulab(&[
        "folds",
        "--manifest",
        real.to_str().unwrap(),
        "--dataset",
        "iemocap",
    ]));
    let plan: serde_json::Value = serde_json::from_str(&plan).unwrap();
    assert_eq!(plan["folds"].as_array().unwrap().len(), 5);

    let train_out = dir.path().join("train");
    let out = asulab(&[
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--regime",
        "real_baseline",
        "--fold",
        "0",
        "--out",
        train_out.to_str().unwrap(),
    ]);
    assert!(train_out.join("model.ckpt.json").is_file());
    assert!(train_out.join("history.jsonl").is_file());
    assert!(
        stdout(&out).contains("test (fold 0)"),
        "missing test metrics: {}",
        stdout(&out)
    );

    // one regime x five folds x one ratio x one seed
    let out = stdout(&asulab(&["run", "--config", cfg_path.to_str().unwrap()]));
    assert!(out.contains("5 cells (5 executed, 0 resumed)"), "{out}");
    assert!(out_dir.join("results.csv").is_file());

    // resume executes only the dropped cell
    fs::remove_file(
        out_dir
            .join("cells")
            .join("real_baseline_fold2_r1.0000_s0.json"),
    )
    .unwrap();
    let out = stdout(&asulab(&[
        "run",
        "--config",
        cfg_path.to_str().unwrap(),
        "--resume",
    ]));
    assert!(out.contains("5 cells (1 executed, 4 resumed)"), "{out}");

    let report_dir = dir.path().join("report");
    asulab(&[
        "report",
        "--results",
        out_dir.to_str().unwrap(),
        "--out",
        report_dir.to_str().unwrap(),
        "--render",
    ]);
    assert!(report_dir.join("results.csv").is_file());
    assert!(report_dir.join("summary.csv").is_file());
    let svg = fs::read_to_string(report_dir.join("report.svg")).unwrap();
    assert!(svg.contains("<svg"));
    assert_eq!(
        fs::read(report_dir.join("results.csv")).unwrap(),
        fs::read(out_dir.join("results.csv")).unwrap(),
        "report must rebuild identical CSVs from the same cells"
    );
}
