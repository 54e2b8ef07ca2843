//! Classification metrics: confusion matrices, unweighted average recall,
//! macro-averaged F1, and cross-fold aggregation.
//!
//! Conventions, fixed once and relied on by every caller:
//! * confusion rows index the true class, columns the predicted class;
//! * UAR averages per-class recall over classes that actually occur
//!   (zero-support rows are skipped);
//! * macro-F1 averages over *all* classes, counting an undefined per-class
//!   F1 (no true or predicted instances) as 0;
//! * fold aggregation reports mean and population standard deviation.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction/label length mismatch: {n_true} true vs {n_pred} predicted")]
    LengthMismatch { n_true: usize, n_pred: usize },
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("confusion matrix has no populated rows")]
    AllRowsZero,
    #[error("cannot aggregate an empty score list")]
    EmptyScores,
}

/// Evaluation summary for one model on one split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metrics {
    pub uar: f64,
    pub macro_f1: f64,
    /// Row-major confusion counts, rows = true class.
    pub confusion: Vec<Vec<u64>>,
    /// Number of scored utterances.
    pub n: usize,
}

impl Metrics {
    /// Compute all metrics from aligned true/predicted label indices.
    pub fn from_predictions(
        y_true: &[usize],
        y_pred: &[usize],
        n_classes: usize,
    ) -> Result<Self, MetricsError> {
        let confusion = confusion_matrix(y_true, y_pred, n_classes)?;
        Ok(Metrics {
            uar: uar(&confusion)?,
            macro_f1: macro_f1(&confusion)?,
            confusion: confusion
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
            n: y_true.len(),
        })
    }

    /// The headline number for a task: UAR for emotion-style tasks,
    /// macro-F1 for intent-style tasks. Selection happens at the caller.
    pub fn primary(&self, use_uar: bool) -> f64 {
        if use_uar {
            self.uar
        } else {
            self.macro_f1
        }
    }
}

/// Count co-occurrences of true and predicted labels.
pub fn confusion_matrix(
    y_true: &[usize],
    y_pred: &[usize],
    n_classes: usize,
) -> Result<Array2<u64>, MetricsError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::LengthMismatch {
            n_true: y_true.len(),
            n_pred: y_pred.len(),
        });
    }
    let mut m = Array2::<u64>::zeros((n_classes, n_classes));
    for (&t, &p) in y_true.iter().zip(y_pred) {
        for &label in [t, p].iter() {
            if label >= n_classes {
                return Err(MetricsError::LabelOutOfRange { label, n_classes });
            }
        }
        m[[t, p]] += 1;
    }
    Ok(m)
}

/// Unweighted average recall: mean of diag/rowsum over nonzero rows.
pub fn uar(confusion: &Array2<u64>) -> Result<f64, MetricsError> {
    let mut sum = 0.0;
    let mut rows = 0usize;
    for (i, row) in confusion.rows().into_iter().enumerate() {
        let support: u64 = row.sum();
        if support == 0 {
            continue;
        }
        sum += confusion[[i, i]] as f64 / support as f64;
        rows += 1;
    }
    if rows == 0 {
        return Err(MetricsError::AllRowsZero);
    }
    Ok(sum / rows as f64)
}

/// Macro-averaged F1 over all classes; a class with neither true nor
/// predicted instances contributes 0.
pub fn macro_f1(confusion: &Array2<u64>) -> Result<f64, MetricsError> {
    let c = confusion.nrows();
    if confusion.sum() == 0 {
        return Err(MetricsError::AllRowsZero);
    }
    let mut sum = 0.0;
    for i in 0..c {
        let tp = confusion[[i, i]] as f64;
        let fn_: f64 = (confusion.row(i).sum() as f64) - tp;
        let fp: f64 = (confusion.column(i).sum() as f64) - tp;
        let denom = 2.0 * tp + fp + fn_;
        if denom > 0.0 {
            sum += 2.0 * tp / denom;
        }
    }
    Ok(sum / c as f64)
}

/// Mean and population standard deviation of per-fold scores.
pub fn aggregate_folds(scores: &[f64]) -> Result<(f64, f64), MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyScores);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}
