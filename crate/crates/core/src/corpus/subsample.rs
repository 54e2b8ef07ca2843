//! Stratified subsampling for low-resource simulations.
//!
//! For each label, records are shuffled by a label-scoped seeded
//! permutation and the first ⌈ratio·n⌉ are kept. Because the permutation
//! depends only on (seed, label), a smaller ratio always selects a subset
//! of a larger one at the same seed — the low-resource grid is nested by
//! construction. Output preserves the original manifest order.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;

use crate::seeds;

use super::{CorpusError, Manifest};

/// Keep ⌈ratio·n⌉ records per label, deterministically in `seed`.
pub fn subsample(manifest: &Manifest, ratio: f64, seed: u64) -> Result<Manifest, CorpusError> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(CorpusError::RatioOutOfRange { ratio });
    }
    let selected = select_per_label(manifest, seed, |n| (ratio * n as f64).ceil() as usize);
    let out = manifest.filter_records(|r| selected.contains(r.utt_id.as_str()));
    if out.is_empty() {
        return Err(CorpusError::EmptyAfterFiltering {
            context: format!("subsample at ratio {ratio}"),
        });
    }
    Ok(out)
}

/// Split into (train, holdout) with ⌈holdout_ratio·n⌉ records per label
/// in the holdout. Used for validation splits of corpora that have no
/// session structure.
pub fn split_holdout(
    manifest: &Manifest,
    holdout_ratio: f64,
    seed: u64,
) -> Result<(Manifest, Manifest), CorpusError> {
    if !(holdout_ratio > 0.0 && holdout_ratio < 1.0) {
        return Err(CorpusError::RatioOutOfRange {
            ratio: holdout_ratio,
        });
    }
    let held = select_per_label(manifest, seed, |n| {
        ((holdout_ratio * n as f64).ceil() as usize).min(n)
    });
    let holdout = manifest.filter_records(|r| held.contains(r.utt_id.as_str()));
    let train = manifest.filter_records(|r| !held.contains(r.utt_id.as_str()));
    for (name, part) in [("train", &train), ("holdout", &holdout)] {
        if part.is_empty() {
            return Err(CorpusError::EmptyAfterFiltering {
                context: format!("{name} side of holdout split (ratio {holdout_ratio})"),
            });
        }
    }
    Ok((train, holdout))
}

/// Per-label seeded permutation prefix; returns the selected utt_ids.
fn select_per_label(
    manifest: &Manifest,
    seed: u64,
    take: impl Fn(usize) -> usize,
) -> HashSet<String> {
    let mut by_label: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for rec in manifest.records() {
        by_label
            .entry(rec.label.as_str())
            .or_default()
            .push(rec.utt_id.as_str());
    }
    let mut selected = HashSet::new();
    for (label, mut ids) in by_label {
        let mut rng = seeds::rng_for("corpus.subsample", seed, &[label]);
        ids.shuffle(&mut rng);
        let k = take(ids.len()).min(ids.len());
        for id in ids.into_iter().take(k) {
            selected.insert(id.to_string());
        }
    }
    selected
}
