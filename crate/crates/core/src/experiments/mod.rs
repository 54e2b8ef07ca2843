//! Experiment matrix: regimes × folds × label ratios × seeds.
//!
//! Four training regimes are compared on the same session folds:
//!
//! * `real_baseline` — train on the full real training split.
//! * `synthetic_zero_shot` — train on synthetic speech only (validation
//!   held out of the synthetic corpus), evaluate on real test splits.
//! * `low_resource` — train on a stratified fraction of the real
//!   training split, from random initialization.
//! * `synthetic_init_low_resource` — same fraction, but trainable state
//!   starts from the synthetic-only checkpoint for that seed.
//!
//! Each cell writes one JSON file under `<out_dir>/cells/`, named by a
//! deterministic key, via temp-file + rename. A finished cell is never
//! recomputed when resuming: presence of its file is the completion
//! marker. Reports are always rebuilt from the cell files, so a resumed
//! run reproduces them byte for byte.

mod report;

pub use report::{emit_report, emit_report_to, ReportPaths};

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::corpus::{
    load_standardized, make_folds, split_by_fold, split_holdout, subsample, CorpusError,
    DatasetKind, FoldPlan, Manifest,
};
use crate::encoder::{
    build_encoder, build_encoder_with_lora, EncoderBackend, EncoderError,
};
use crate::metrics::{Metrics, MetricsError};
use crate::model::{AsuModel, HeadConfig, ModelError};
use crate::tasks::{TaskError, TaskSpec};
use crate::trainer::{self, Checkpoint, Example, FitReport, TrainError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("missing input: {reason}")]
    MissingInput { reason: String },
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cell file {path} is unreadable: {message}")]
    CellFormat { path: String, message: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("report error: {0}")]
    Report(String),
}

pub(crate) fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Training regime for one cell of the matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    RealBaseline,
    SyntheticZeroShot,
    LowResource,
    SyntheticInitLowResource,
}

impl Regime {
    pub fn all() -> [Regime; 4] {
        [
            Regime::RealBaseline,
            Regime::SyntheticZeroShot,
            Regime::LowResource,
            Regime::SyntheticInitLowResource,
        ]
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::RealBaseline => "real_baseline",
            Regime::SyntheticZeroShot => "synthetic_zero_shot",
            Regime::LowResource => "low_resource",
            Regime::SyntheticInitLowResource => "synthetic_init_low_resource",
        }
    }

    /// Whether the labeled-data ratio grid applies to this regime.
    pub fn uses_ratio(&self) -> bool {
        matches!(self, Regime::LowResource | Regime::SyntheticInitLowResource)
    }

    /// Whether this regime requires a synthetic corpus.
    pub fn needs_synthetic(&self) -> bool {
        matches!(
            self,
            Regime::SyntheticZeroShot | Regime::SyntheticInitLowResource
        )
    }

    /// Whether training uses the reduced-data learning rate schedule.
    pub fn is_low_resource(&self) -> bool {
        self.uses_ratio()
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Regime::all()
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| {
                format!(
                    "unknown regime {s:?}; expected one of {:?}",
                    Regime::all().map(|r| r.as_str())
                )
            })
    }
}

/// Identity of one cell. `ratio` is fixed to 1.0 for regimes that do not
/// subsample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub regime: Regime,
    pub fold: usize,
    pub ratio: f64,
    pub seed: u64,
}

impl CellSpec {
    /// Deterministic key; doubles as the cell's file stem.
    pub fn key(&self) -> String {
        format!(
            "{}_fold{}_r{:.4}_s{}",
            self.regime.as_str(),
            self.fold,
            self.ratio,
            self.seed
        )
    }
}

/// Outcome of one trained-and-evaluated cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellResult {
    pub key: String,
    pub regime: Regime,
    pub fold: usize,
    pub ratio: f64,
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub best_epoch: usize,
    pub best_val_metric: f64,
    pub test: Metrics,
    /// Primary test metric (UAR or macro-F1 depending on task).
    pub test_primary: f64,
    /// Recorded for operators; deliberately excluded from reports so
    /// that resumed runs reproduce them exactly.
    pub wall_time_secs: f64,
}

/// Corpora feeding the matrix. `fold_override` substitutes a custom fold
/// plan for the dataset's standard one (useful for harnesses and small
/// smoke corpora).
pub struct MatrixInputs {
    pub dataset: DatasetKind,
    pub real: Manifest,
    pub synthetic: Option<Manifest>,
    pub fold_override: Option<FoldPlan>,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Skip cells whose result files already exist.
    pub resume: bool,
    /// Also draw the ratio-curve plot.
    pub render: bool,
    /// Worker threads for cell execution; 0 or 1 runs sequentially.
    pub workers: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            resume: false,
            render: false,
            workers: 1,
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub cells: Vec<CellResult>,
    pub executed: usize,
    pub skipped: usize,
    pub report: ReportPaths,
}

/// All cells implied by a config, in deterministic order. Regimes keep
/// config order; within a regime the order is fold-major, then ratio,
/// then seed.
pub fn enumerate_cells(cfg: &RunConfig, n_folds: usize) -> Vec<CellSpec> {
    let e = &cfg.experiment;
    let mut cells = Vec::new();
    for &regime in &e.regimes {
        let ratios: Vec<f64> = if regime.uses_ratio() {
            e.ratios.clone()
        } else {
            vec![1.0]
        };
        for fold in 0..n_folds {
            for &ratio in &ratios {
                for &seed in &e.seeds {
                    cells.push(CellSpec {
                        regime,
                        fold,
                        ratio,
                        seed,
                    });
                }
            }
        }
    }
    cells
}

/// Waveforms for one manifest, loaded once and shared across cells.
struct ExampleStore {
    examples: Vec<Example>,
    by_id: HashMap<String, usize>,
}

impl ExampleStore {
    fn load(manifest: &Manifest, spec: &TaskSpec) -> Result<Self, ExperimentError> {
        let examples = manifest
            .records()
            .par_iter()
            .map(|rec| {
                let wave = load_standardized(manifest, rec, spec.kind)?;
                let label = spec.class_index(&rec.label)?;
                Ok(Example {
                    wave: wave.samples,
                    label,
                })
            })
            .collect::<Result<Vec<_>, ExperimentError>>()?;
        let by_id = manifest
            .records()
            .iter()
            .enumerate()
            .map(|(i, r)| (r.utt_id.clone(), i))
            .collect();
        Ok(ExampleStore { examples, by_id })
    }

    /// Examples for a filtered view of the same corpus, in view order.
    fn select(&self, view: &Manifest) -> Vec<Example> {
        view.records()
            .iter()
            .map(|r| self.examples[self.by_id[&r.utt_id]].clone())
            .collect()
    }
}

/// Synthetic-only training artifact shared by all folds of one seed.
struct SynTrained {
    ckpt: Checkpoint,
    n_train: usize,
    n_val: usize,
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    spec: TaskSpec,
    fold_plan: FoldPlan,
    real: &'a Manifest,
    real_store: ExampleStore,
    syn_trained: HashMap<u64, SynTrained>,
    encoder: Arc<dyn EncoderBackend>,
    head: HeadConfig,
    cells_dir: PathBuf,
}

impl Ctx<'_> {
    fn fresh_model(&self, seed: u64) -> Result<AsuModel, ExperimentError> {
        Ok(AsuModel::new(self.encoder.clone(), self.head.clone(), seed)?)
    }
}

/// Run (or resume) the full matrix and rebuild the report.
pub fn run_matrix(
    cfg: &RunConfig,
    inputs: &MatrixInputs,
    opts: &RunOptions,
) -> Result<RunOutcome, ExperimentError> {
    cfg.validate()?;
    let spec = cfg.task.to_spec()?;
    let fold_plan = match &inputs.fold_override {
        Some(plan) => plan.clone(),
        None => make_folds(&inputs.real, inputs.dataset)?,
    };

    let out_dir = &cfg.experiment.out_dir;
    let cells_dir = out_dir.join("cells");
    let ckpt_dir = out_dir.join("checkpoints");
    fs::create_dir_all(&cells_dir).map_err(io_at(&cells_dir))?;
    fs::create_dir_all(&ckpt_dir).map_err(io_at(&ckpt_dir))?;

    let encoder: Arc<dyn EncoderBackend> = if cfg.lora.enabled {
        build_encoder_with_lora(&cfg.encoder, &cfg.lora.config)?.into()
    } else {
        build_encoder(&cfg.encoder)?.into()
    };
    let head = cfg.head.to_head(spec.n_classes())?;
    let real_store = ExampleStore::load(&inputs.real, &spec)?;

    let mut ctx = Ctx {
        cfg,
        spec,
        fold_plan,
        real: &inputs.real,
        real_store,
        syn_trained: HashMap::new(),
        encoder,
        head,
        cells_dir,
    };

    // Phase 1: one synthetic-only training per seed, shared across folds.
    if cfg.experiment.regimes.iter().any(|r| r.needs_synthetic()) {
        let synthetic = inputs.synthetic.as_ref().ok_or_else(|| {
            ExperimentError::MissingInput {
                reason: "regimes using synthetic speech need a synthetic corpus".into(),
            }
        })?;
        let syn_store = ExampleStore::load(synthetic, &ctx.spec)?;
        for &seed in &cfg.experiment.seeds {
            let trained =
                ensure_synthetic_trained(&ctx, synthetic, &syn_store, seed, &ckpt_dir, opts)?;
            ctx.syn_trained.insert(seed, trained);
        }
    }

    // Phase 2: cells, each persisted as it finishes.
    let cells = enumerate_cells(cfg, ctx.fold_plan.len());
    let run_one = |cell: &CellSpec| -> Result<(CellResult, bool), ExperimentError> {
        let path = ctx.cells_dir.join(format!("{}.json", cell.key()));
        if opts.resume && path.exists() {
            return Ok((load_cell(&path)?, false));
        }
        let result = run_cell(&ctx, cell)?;
        save_cell(&path, &result)?;
        append_index(&ctx.cells_dir, &result.key)?;
        Ok((result, true))
    };
    let outcomes: Vec<(CellResult, bool)> = if opts.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers)
            .build()
            .map_err(|e| ExperimentError::Report(format!("cannot build worker pool: {e}")))?;
        pool.install(|| cells.par_iter().map(run_one).collect::<Result<_, _>>())?
    } else {
        let mut acc = Vec::with_capacity(cells.len());
        for cell in &cells {
            acc.push(run_one(cell)?);
        }
        acc
    };

    let executed = outcomes.iter().filter(|(_, fresh)| *fresh).count();
    let skipped = outcomes.len() - executed;
    let results: Vec<CellResult> = outcomes.into_iter().map(|(r, _)| r).collect();

    // Phase 3: reports, always rebuilt from the cell files on disk.
    let report = emit_report(out_dir, opts.render)?;

    Ok(RunOutcome {
        cells: results,
        executed,
        skipped,
        report,
    })
}

fn ensure_synthetic_trained(
    ctx: &Ctx<'_>,
    synthetic: &Manifest,
    syn_store: &ExampleStore,
    seed: u64,
    ckpt_dir: &Path,
    opts: &RunOptions,
) -> Result<SynTrained, ExperimentError> {
    let (train_m, val_m) = split_holdout(synthetic, ctx.cfg.experiment.holdout_ratio, seed)?;
    let path = ckpt_dir.join(format!("synthetic_s{seed}.ckpt.json"));
    if opts.resume && path.exists() {
        let ckpt = Checkpoint::load(&path)?;
        if ckpt.base_digest != ctx.encoder.base_digest() {
            return Err(ExperimentError::Train(TrainError::CheckpointMismatch {
                reason: format!(
                    "synthetic checkpoint {} was trained against a different frozen encoder",
                    path.display()
                ),
            }));
        }
        return Ok(SynTrained {
            ckpt,
            n_train: train_m.len(),
            n_val: val_m.len(),
        });
    }

    let train_ex = syn_store.select(&train_m);
    let val_ex = syn_store.select(&val_m);
    let train_cfg = ctx.cfg.train.resolve(ctx.spec.kind, false, seed);
    let mut model = ctx.fresh_model(seed)?;
    let fit = trainer::fit(&mut model, &train_ex, &val_ex, &train_cfg)?;
    let ckpt = Checkpoint::from_model(&model, &train_cfg, fit.best_epoch, fit.best_val_metric);
    ckpt.save(&path)?;
    Ok(SynTrained {
        ckpt,
        n_train: train_ex.len(),
        n_val: val_ex.len(),
    })
}

fn run_cell(ctx: &Ctx<'_>, cell: &CellSpec) -> Result<CellResult, ExperimentError> {
    let started = Instant::now();
    let fold = &ctx.fold_plan.folds[cell.fold];
    let (train_m, val_m, test_m) = split_by_fold(ctx.real, fold)?;
    let test_ex = ctx.real_store.select(&test_m);

    struct Trained {
        model: AsuModel,
        fit: FitReport,
        n_train: usize,
        n_val: usize,
    }

    let trained = match cell.regime {
        Regime::RealBaseline => {
            let train_ex = ctx.real_store.select(&train_m);
            let val_ex = ctx.real_store.select(&val_m);
            let cfg = ctx.cfg.train.resolve(ctx.spec.kind, false, cell.seed);
            let mut model = ctx.fresh_model(cell.seed)?;
            let fit = trainer::fit(&mut model, &train_ex, &val_ex, &cfg)?;
            Trained {
                model,
                fit,
                n_train: train_ex.len(),
                n_val: val_ex.len(),
            }
        }
        Regime::SyntheticZeroShot => {
            let trained = &ctx.syn_trained[&cell.seed];
            let mut model = ctx.fresh_model(cell.seed)?;
            trained.ckpt.transfer_params_into(&mut model)?;
            Trained {
                model,
                fit: FitReport {
                    history: Vec::new(),
                    best_epoch: trained.ckpt.best_epoch,
                    best_val_metric: trained.ckpt.best_val_metric,
                },
                n_train: trained.n_train,
                n_val: trained.n_val,
            }
        }
        Regime::LowResource | Regime::SyntheticInitLowResource => {
            let train_sub = subsample(&train_m, cell.ratio, cell.seed)?;
            let train_ex = ctx.real_store.select(&train_sub);
            let val_ex = ctx.real_store.select(&val_m);
            let cfg = ctx.cfg.train.resolve(ctx.spec.kind, true, cell.seed);
            let mut model = ctx.fresh_model(cell.seed)?;
            if cell.regime == Regime::SyntheticInitLowResource {
                ctx.syn_trained[&cell.seed]
                    .ckpt
                    .transfer_params_into(&mut model)?;
            }
            let fit = trainer::fit(&mut model, &train_ex, &val_ex, &cfg)?;
            Trained {
                model,
                fit,
                n_train: train_ex.len(),
                n_val: val_ex.len(),
            }
        }
    };

    let test = trainer::evaluate(&trained.model, &test_ex)?;
    let test_primary = test.primary(ctx.spec.kind.uses_uar());
    Ok(CellResult {
        key: cell.key(),
        regime: cell.regime,
        fold: cell.fold,
        ratio: cell.ratio,
        seed: cell.seed,
        n_train: trained.n_train,
        n_val: trained.n_val,
        n_test: test_ex.len(),
        best_epoch: trained.fit.best_epoch,
        best_val_metric: trained.fit.best_val_metric,
        test,
        test_primary,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

fn save_cell(path: &Path, result: &CellResult) -> Result<(), ExperimentError> {
    let bytes = serde_json::to_vec_pretty(result).map_err(|e| ExperimentError::CellFormat {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(io_at(&tmp))?;
    fs::rename(&tmp, path).map_err(io_at(path))?;
    Ok(())
}

pub(crate) fn load_cell(path: &Path) -> Result<CellResult, ExperimentError> {
    let bytes = fs::read(path).map_err(io_at(path))?;
    serde_json::from_slice(&bytes).map_err(|e| ExperimentError::CellFormat {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Append-only log of finished cells, one key per line.
fn append_index(cells_dir: &Path, key: &str) -> Result<(), ExperimentError> {
    let path = cells_dir.join("index.log");
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(io_at(&path))?;
    writeln!(f, "{key}").map_err(io_at(&path))?;
    Ok(())
}
