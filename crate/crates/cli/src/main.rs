//! `asulab` — synthetic speech corpora and low-resource classification
//! experiments from the command line.
//!
//! The subcommands mirror the pipeline stages: `generate-text` →
//! `synthesize` → (`ingest` | `subsample` | `folds`) → `train` | `run` →
//! `report`. Every stage takes explicit seeds and writes plain files, so
//! any stage can be rerun or inspected in isolation.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use asulab::config::RunConfig;
use asulab::corpus::{
    ingest, make_folds, split_by_fold, subsample, DatasetKind, IngestOptions, Manifest,
};
use asulab::encoder::{build_encoder, build_encoder_with_lora, EncoderBackend};
use asulab::experiments::{
    emit_report_to, run_matrix, MatrixInputs, Regime, RunOptions,
};
use asulab::model::AsuModel;
use asulab::speechsynth::{synthesize_corpus, tts_from_name, SpeakerPool};
use asulab::textgen::{backend_from_name, generate_texts, TextBatch};
use asulab::trainer::{self, Checkpoint, Example};

#[derive(Parser)]
#[command(name = "asulab", version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate labeled utterance texts from the task's prompt plan.
    GenerateText(GenerateTextArgs),
    /// Synthesize a text batch into WAV files plus a corpus manifest.
    Synthesize(SynthesizeArgs),
    /// Build a manifest from an on-disk corpus layout.
    Ingest(IngestArgs),
    /// Stratified label-preserving subsample of a manifest.
    Subsample(SubsampleArgs),
    /// Print the session-fold plan for a manifest.
    Folds(FoldsArgs),
    /// Train one model under a named regime and save a checkpoint.
    Train(TrainArgs),
    /// Run (or resume) the full experiment matrix from a config.
    Run(RunArgs),
    /// Rebuild CSV reports (and optionally a plot) from finished cells.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateTextArgs {
    /// Config file providing the [task] and [generation] sections.
    #[arg(long, value_name = "CONFIG")]
    task: PathBuf,
    /// Backend override: `stub`, `http:<url>`, or `fixture:<path>`.
    #[arg(long)]
    backend: Option<String>,
    /// Seed override for generation.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path for the line-delimited text batch.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthesizeArgs {
    /// Text batch produced by `generate-text`.
    #[arg(long)]
    texts: PathBuf,
    /// Speaker pool file (JSONL). Omit to derive a random pool.
    #[arg(long)]
    speakers: Option<PathBuf>,
    /// Backend: `stub`, `stub:<rate>`, or `http:<url>`.
    #[arg(long, default_value = "stub")]
    backend: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pool size when no speaker file is given.
    #[arg(long, default_value_t = 64)]
    pool_size: usize,
    /// Embedding width when no speaker file is given.
    #[arg(long, default_value_t = 512)]
    embedding_dim: usize,
    /// Output directory for `wav/` and `manifest.jsonl`.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    /// Corpus layout: iemocap | msp_improv | slurp | synthetic.
    #[arg(long)]
    dataset: String,
    /// Corpus root directory.
    #[arg(long)]
    source: PathBuf,
    /// Output manifest path.
    #[arg(long)]
    out: PathBuf,
    /// Keep "excited" as its own label instead of folding into "happy".
    #[arg(long)]
    keep_excited: bool,
    /// Accept records whose audio file is missing.
    #[arg(long)]
    allow_missing_audio: bool,
}

#[derive(Args)]
struct SubsampleArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Fraction of each label to keep, in (0, 1].
    #[arg(long)]
    ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FoldsArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Corpus layout the fold rule applies to.
    #[arg(long)]
    dataset: String,
    /// Write the plan here as JSON instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// real_baseline | synthetic_zero_shot | low_resource |
    /// synthetic_init_low_resource.
    #[arg(long)]
    regime: String,
    /// Warm-start checkpoint; defaults to none (synthetic_init regimes
    /// then train their own synthetic stage first).
    #[arg(long)]
    init: Option<PathBuf>,
    /// Session fold index for the real data splits.
    #[arg(long, default_value_t = 0)]
    fold: usize,
    /// Labeled fraction for the low-resource regimes.
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for history.jsonl and model.ckpt.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Worker threads for cell execution.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Skip cells whose result files already exist.
    #[arg(long)]
    resume: bool,
    /// Also render the ratio-curve SVG.
    #[arg(long)]
    render: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Experiment output directory (the one holding `cells/`).
    #[arg(long)]
    results: PathBuf,
    /// Where to write the report files; defaults to the results dir.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    render: bool,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::GenerateText(args) => cmd_generate_text(args),
        Command::Synthesize(args) => cmd_synthesize(args),
        Command::Ingest(args) => cmd_ingest(args),
        Command::Subsample(args) => cmd_subsample(args),
        Command::Folds(args) => cmd_folds(args),
        Command::Train(args) => cmd_train(args),
        Command::Run(args) => cmd_run(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn cmd_generate_text(args: GenerateTextArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.task)?;
    let spec = cfg.task.to_spec()?;
    let plan = spec.plan_generation()?;
    let mut gen_cfg = cfg.generation.config.clone();
    if let Some(seed) = args.seed {
        gen_cfg.seed = seed;
    }
    let backend_name = args.backend.as_deref().unwrap_or(&cfg.generation.backend);
    let backend = backend_from_name(backend_name)
        .map_err(|e| anyhow::anyhow!("{e}"))
        .with_context(|| format!("building text backend {backend_name:?}"))?;

    let (batch, stats) = generate_texts(&spec, &plan, backend.as_ref(), &gen_cfg)?;
    batch.save(&args.out)?;
    println!(
        "wrote {} texts to {} ({} attempts; rejected {} empty, {} duplicate, {} too long)",
        batch.texts.len(),
        args.out.display(),
        stats.attempts,
        stats.rejected_empty,
        stats.rejected_duplicate,
        stats.rejected_too_long,
    );
    Ok(())
}

fn cmd_synthesize(args: SynthesizeArgs) -> Result<()> {
    let batch = TextBatch::load(&args.texts)?;
    let pool = match &args.speakers {
        Some(path) => SpeakerPool::load(path)?,
        None => SpeakerPool::synthetic(args.pool_size, args.embedding_dim, args.seed)?,
    };
    let tts = tts_from_name(&args.backend)
        .map_err(|e| anyhow::anyhow!("{e}"))
        .with_context(|| format!("building TTS backend {:?}", args.backend))?;

    let manifest = synthesize_corpus(&batch, &pool, tts.as_ref(), args.seed, &args.out_dir)?;
    println!(
        "synthesized {} utterances into {} (manifest.jsonl + wav/)",
        manifest.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let kind: DatasetKind = args.dataset.parse()?;
    let opts = IngestOptions {
        merge_excited: !args.keep_excited,
        require_audio: !args.allow_missing_audio,
    };
    let manifest = ingest(kind, &args.source, &opts)?;
    manifest.save(&args.out)?;
    println!(
        "ingested {} utterances / {} labels / {} sessions into {}",
        manifest.len(),
        manifest.labels().len(),
        manifest.sessions().len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_subsample(args: SubsampleArgs) -> Result<()> {
    let manifest = Manifest::load(&args.manifest)?;
    let sub = subsample(&manifest, args.ratio, args.seed)?;
    sub.save(&args.out)?;
    println!(
        "kept {} of {} utterances (ratio {}) in {}",
        sub.len(),
        manifest.len(),
        args.ratio,
        args.out.display()
    );
    Ok(())
}

fn cmd_folds(args: FoldsArgs) -> Result<()> {
    let manifest = Manifest::load(&args.manifest)?;
    let kind: DatasetKind = args.dataset.parse()?;
    let plan = make_folds(&manifest, kind)?;
    let json = serde_json::to_string_pretty(&plan)?;
    match &args.out {
        Some(path) => {
            fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {} folds to {}", plan.len(), path.display());
        }
        None => println!("{json}"),
    }
    Ok(())
}

/// Real corpus named by the config: either a manifest file or a corpus
/// root directory to ingest.
fn load_real(cfg: &RunConfig) -> Result<(DatasetKind, Manifest)> {
    let dataset = cfg
        .corpus
        .dataset
        .as_deref()
        .context("config has no [corpus] dataset")?;
    let kind: DatasetKind = dataset.parse()?;
    let root = cfg
        .corpus
        .root
        .as_ref()
        .context("config has no [corpus] root")?;
    let manifest = if root.is_file() {
        Manifest::load(root)?
    } else {
        ingest(kind, root, &IngestOptions::default())?
    };
    Ok((kind, manifest))
}

fn load_synthetic(cfg: &RunConfig) -> Result<Option<Manifest>> {
    match &cfg.corpus.synthetic_manifest {
        Some(path) => Ok(Some(Manifest::load(path)?)),
        None => Ok(None),
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    cfg.validate()?;
    let regime: Regime = args.regime.parse().map_err(|e: String| anyhow::anyhow!(e))?;
    let spec = cfg.task.to_spec()?;
    let seed = args.seed.unwrap_or_else(|| {
        cfg.experiment.seeds.first().copied().unwrap_or_default()
    });
    let ratio = args.ratio.unwrap_or_else(|| {
        cfg.experiment.ratios.first().copied().unwrap_or(1.0)
    });

    let encoder: Arc<dyn EncoderBackend> = if cfg.lora.enabled {
        build_encoder_with_lora(&cfg.encoder, &cfg.lora.config)?.into()
    } else {
        build_encoder(&cfg.encoder)?.into()
    };
    let head = cfg.head.to_head(spec.n_classes())?;
    let mut model = AsuModel::new(encoder, head, seed)?;
    if let Some(path) = &args.init {
        let ckpt = Checkpoint::load(path)?;
        ckpt.transfer_params_into(&mut model)?;
        println!("warm-started from {}", path.display());
    }

    // Assemble the splits this regime trains and evaluates on.
    let (train_m, val_m, test_m): (Manifest, Manifest, Option<Manifest>) = match regime {
        Regime::SyntheticZeroShot => {
            let synthetic = load_synthetic(&cfg)?
                .context("synthetic regimes need [corpus] synthetic_manifest")?;
            let (train, holdout) =
                asulab::corpus::split_holdout(&synthetic, cfg.experiment.holdout_ratio, seed)?;
            let test = match load_real(&cfg) {
                Ok((kind, real)) => {
                    let plan = make_folds(&real, kind)?;
                    let (_, _, test) = split_by_fold(&real, &plan.folds[args.fold])?;
                    Some(test)
                }
                Err(_) => None,
            };
            (train, holdout, test)
        }
        _ => {
            let (kind, real) = load_real(&cfg)?;
            let plan = make_folds(&real, kind)?;
            if args.fold >= plan.len() {
                bail!("fold {} out of range: plan has {} folds", args.fold, plan.len());
            }
            let (mut train, val, test) = split_by_fold(&real, &plan.folds[args.fold])?;
            if regime.uses_ratio() {
                train = subsample(&train, ratio, seed)?;
            }
            if regime == Regime::SyntheticInitLowResource && args.init.is_none() {
                bail!("synthetic_init_low_resource needs --init <ckpt> (train one with --regime synthetic_zero_shot)");
            }
            (train, val, Some(test))
        }
    };

    let load = |m: &Manifest| -> Result<Vec<Example>> {
        m.records()
            .iter()
            .map(|rec| {
                let wave = asulab::corpus::load_standardized(m, rec, spec.kind)?;
                Ok(Example {
                    wave: wave.samples,
                    label: spec.class_index(&rec.label)?,
                })
            })
            .collect()
    };
    let train_ex = load(&train_m)?;
    let val_ex = load(&val_m)?;

    let train_cfg = cfg.train.resolve(spec.kind, regime.is_low_resource(), seed);
    let fit = trainer::fit(&mut model, &train_ex, &val_ex, &train_cfg)?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let history_path = args.out.join("history.jsonl");
    let mut out = fs::File::create(&history_path)
        .with_context(|| format!("writing {}", history_path.display()))?;
    for epoch in &fit.history {
        writeln!(out, "{}", serde_json::to_string(epoch)?)?;
    }
    let ckpt = Checkpoint::from_model(&model, &train_cfg, fit.best_epoch, fit.best_val_metric);
    let ckpt_path = args.out.join("model.ckpt.json");
    ckpt.save(&ckpt_path)?;

    println!(
        "{regime}: best epoch {} with validation {:.4}; checkpoint at {}",
        fit.best_epoch,
        fit.best_val_metric,
        ckpt_path.display()
    );
    if let Some(test_m) = test_m {
        let test_ex = load(&test_m)?;
        let metrics = trainer::evaluate(&model, &test_ex)?;
        println!(
            "test (fold {}): uar {:.4}, macro_f1 {:.4} over {} utterances",
            args.fold, metrics.uar, metrics.macro_f1, metrics.n
        );
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    cfg.validate()?;
    let (dataset, real) = load_real(&cfg)?;
    let synthetic = load_synthetic(&cfg)?;
    let inputs = MatrixInputs {
        dataset,
        real,
        synthetic,
        fold_override: None,
    };
    let opts = RunOptions {
        resume: args.resume,
        render: args.render,
        workers: args.workers,
    };
    let outcome = run_matrix(&cfg, &inputs, &opts)?;
    println!(
        "{} cells ({} executed, {} resumed); results at {} and {}",
        outcome.cells.len(),
        outcome.executed,
        outcome.skipped,
        outcome.report.results_csv.display(),
        outcome.report.summary_csv.display()
    );
    if let Some(svg) = &outcome.report.plot_svg {
        println!("plot at {}", svg.display());
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let out_dir = args.out.as_deref().unwrap_or(&args.results);
    let paths = emit_report_to(&args.results, out_dir, args.render)?;
    println!(
        "wrote {} and {}",
        paths.results_csv.display(),
        paths.summary_csv.display()
    );
    if let Some(svg) = &paths.plot_svg {
        println!("plot at {}", svg.display());
    }
    Ok(())
}
