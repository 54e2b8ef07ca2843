//! Session-based cross-validation folds.
//!
//! Speaker-independent evaluation leaves one recording session out per
//! fold: fold *k* tests on session *k* (in sorted order), validates on
//! the cyclically next session, and trains on everything else. Corpora
//! with canonical train/devel/test splits instead get a single fold that
//! mirrors those splits.

use serde::{Deserialize, Serialize};

use super::{CorpusError, DatasetKind, Manifest};

/// One train/validation/test split, expressed over session ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train_sessions: Vec<String>,
    pub val_sessions: Vec<String>,
    pub test_sessions: Vec<String>,
}

/// All folds for one corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }
}

/// Leave-one-session-out plan over the given sessions.
///
/// Sessions are sorted first so the plan depends only on the session
/// *set*. Needs at least three sessions, otherwise some fold would have
/// an empty training side.
pub fn leave_one_session_out(sessions: &[String]) -> Result<FoldPlan, CorpusError> {
    let mut sorted: Vec<String> = sessions.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() < 3 {
        return Err(CorpusError::SessionCount {
            context: "leave-one-session-out folds".into(),
            expected: "at least 3 distinct sessions".into(),
            found: sorted.len(),
        });
    }
    let n = sorted.len();
    let folds = (0..n)
        .map(|k| {
            let test = sorted[k].clone();
            let val = sorted[(k + 1) % n].clone();
            let train = sorted
                .iter()
                .filter(|s| **s != test && **s != val)
                .cloned()
                .collect();
            Fold {
                index: k,
                train_sessions: train,
                val_sessions: vec![val],
                test_sessions: vec![test],
            }
        })
        .collect();
    Ok(FoldPlan { folds })
}

/// Build the fold plan appropriate for a dataset family.
pub fn make_folds(manifest: &Manifest, kind: DatasetKind) -> Result<FoldPlan, CorpusError> {
    let sessions = manifest.sessions();
    match kind {
        DatasetKind::Iemocap => {
            expect_sessions(&sessions, 5, "iemocap")?;
            leave_one_session_out(&sessions)
        }
        DatasetKind::MspImprov => {
            expect_sessions(&sessions, 6, "msp_improv")?;
            leave_one_session_out(&sessions)
        }
        DatasetKind::Slurp => {
            // canonical splits ride in as pseudo-sessions
            for required in ["train", "devel", "test"] {
                if !sessions.iter().any(|s| s == required) {
                    return Err(CorpusError::Layout {
                        dataset: "slurp".into(),
                        reason: format!(
                            "missing {required:?} split; found sessions {sessions:?}"
                        ),
                    });
                }
            }
            Ok(FoldPlan {
                folds: vec![Fold {
                    index: 0,
                    train_sessions: vec!["train".into()],
                    val_sessions: vec!["devel".into()],
                    test_sessions: vec!["test".into()],
                }],
            })
        }
        DatasetKind::Synthetic => Err(CorpusError::Layout {
            dataset: "synthetic".into(),
            reason: "synthetic corpora have no session structure to fold over".into(),
        }),
    }
}

fn expect_sessions(sessions: &[String], expected: usize, dataset: &str) -> Result<(), CorpusError> {
    if sessions.len() != expected {
        return Err(CorpusError::SessionCount {
            context: format!("{dataset} fold plan"),
            expected: format!("{expected} sessions"),
            found: sessions.len(),
        });
    }
    Ok(())
}

/// Materialize a fold into (train, val, test) manifests.
pub fn split_by_fold(
    manifest: &Manifest,
    fold: &Fold,
) -> Result<(Manifest, Manifest, Manifest), CorpusError> {
    let train = manifest.filter_sessions(&fold.train_sessions);
    let val = manifest.filter_sessions(&fold.val_sessions);
    let test = manifest.filter_sessions(&fold.test_sessions);
    for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
        if part.is_empty() {
            return Err(CorpusError::EmptyAfterFiltering {
                context: format!("fold {} {name} split", fold.index),
            });
        }
    }
    Ok((train, val, test))
}
