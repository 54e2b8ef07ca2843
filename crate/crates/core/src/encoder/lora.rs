//! Low-rank adapters for frozen projection weights.
//!
//! A targeted projection `W` (d_out × d_in) is augmented with a delta
//! `(alpha/rank) · B · A`, where `A` is rank × d_in with small random
//! init and `B` is d_out × rank initialized to zero. Zero `B` makes a
//! freshly adapted model exactly transparent: it computes what the
//! unadapted model computes until the first optimizer step.

use std::collections::BTreeSet;

use ndarray::ArrayD;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::params::ParamSet;
use crate::seeds;

use super::EncoderError;

/// Standard deviation of the `A` initialization.
const A_INIT_STD: f64 = 0.02;

/// Attention-style projections an adapter can target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionKind {
    Query,
    Key,
    Value,
    Output,
}

impl ProjectionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProjectionKind::Query => "query",
            ProjectionKind::Key => "key",
            ProjectionKind::Value => "value",
            ProjectionKind::Output => "output",
        }
    }
}

impl std::str::FromStr for ProjectionKind {
    type Err = EncoderError;
    fn from_str(s: &str) -> Result<Self, EncoderError> {
        match s {
            "query" => Ok(ProjectionKind::Query),
            "key" => Ok(ProjectionKind::Key),
            "value" => Ok(ProjectionKind::Value),
            "output" => Ok(ProjectionKind::Output),
            other => Err(EncoderError::InvalidConfig {
                reason: format!("unknown projection kind {other:?}"),
            }),
        }
    }
}

/// Adapter hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub targets: BTreeSet<ProjectionKind>,
    pub dropout: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        LoraConfig {
            rank: 8,
            alpha: 16.0,
            targets: BTreeSet::from([ProjectionKind::Query, ProjectionKind::Value]),
            dropout: 0.0,
        }
    }
}

impl LoraConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.rank == 0 {
            return Err(EncoderError::InvalidConfig {
                reason: "lora rank must be at least 1".into(),
            });
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(EncoderError::InvalidConfig {
                reason: format!("lora alpha must be positive and finite, got {}", self.alpha),
            });
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(EncoderError::InvalidConfig {
                reason: format!("lora dropout must be in [0, 1), got {}", self.dropout),
            });
        }
        if self.targets.is_empty() {
            return Err(EncoderError::InvalidConfig {
                reason: "lora target set is empty".into(),
            });
        }
        Ok(())
    }

    /// Delta scale `alpha / rank`.
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// One adapted projection site.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoraEntry {
    pub layer: usize,
    pub kind: ProjectionKind,
    pub d_in: usize,
    pub d_out: usize,
}

impl LoraEntry {
    pub fn a_name(&self) -> String {
        format!("encoder.layer{:02}.{}.lora_a", self.layer, self.kind.as_str())
    }

    pub fn b_name(&self) -> String {
        format!("encoder.layer{:02}.{}.lora_b", self.layer, self.kind.as_str())
    }
}

/// The full set of adapters installed on an encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAttachment {
    pub config: LoraConfig,
    pub entries: Vec<LoraEntry>,
}

impl LoraAttachment {
    /// Trainable scalars added by the adapters: `rank · (d_in + d_out)`
    /// per entry.
    pub fn param_count(&self) -> usize {
        self.entries
            .iter()
            .map(|e| self.config.rank * (e.d_in + e.d_out))
            .sum()
    }

    /// Register freshly initialized A/B tensors: `A ~ N(0, 0.02²)`,
    /// `B = 0`.
    pub fn init_params(&self, params: &mut ParamSet, seed: u64) {
        let normal = Normal::new(0.0, A_INIT_STD).expect("std is positive");
        for entry in &self.entries {
            let a_name = entry.a_name();
            let mut rng = seeds::rng_for("lora.init", seed, &[&a_name]);
            let a = ArrayD::from_shape_fn(vec![self.config.rank, entry.d_in], |_| {
                normal.sample(&mut rng)
            });
            params.insert(a_name, a);
            params.insert(
                entry.b_name(),
                ArrayD::zeros(vec![entry.d_out, self.config.rank]),
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_convention() {
        let cfg = LoraConfig::default();
        assert_eq!(cfg.rank, 8);
        assert_eq!(cfg.alpha, 16.0);
        assert_eq!(cfg.dropout, 0.0);
        assert_eq!(cfg.scaling(), 2.0);
        assert!(cfg.targets.contains(&ProjectionKind::Query));
        assert!(cfg.targets.contains(&ProjectionKind::Value));
        assert_eq!(cfg.targets.len(), 2);
        cfg.validate().unwrap();
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut cfg = LoraConfig {
            rank: 0,
            ..LoraConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.rank = 8;
        cfg.alpha = 0.0;
        assert!(cfg.validate().is_err());
        cfg.alpha = 16.0;
        cfg.dropout = 1.0;
        assert!(cfg.validate().is_err());
        cfg.dropout = 0.0;
        cfg.targets.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn param_count_is_rank_times_dims() {
        let attachment = LoraAttachment {
            config: LoraConfig::default(),
            entries: vec![LoraEntry {
                layer: 0,
                kind: ProjectionKind::Query,
                d_in: 64,
                d_out: 64,
            }],
        };
        // rank 8 on a square d x d projection adds 2 * 8 * d scalars
        assert_eq!(attachment.param_count(), 2 * 8 * 64);
    }

    #[test]
    fn init_shapes_and_zero_b() {
        let attachment = LoraAttachment {
            config: LoraConfig::default(),
            entries: vec![
                LoraEntry {
                    layer: 3,
                    kind: ProjectionKind::Query,
                    d_in: 16,
                    d_out: 16,
                },
                LoraEntry {
                    layer: 3,
                    kind: ProjectionKind::Value,
                    d_in: 16,
                    d_out: 16,
                },
            ],
        };
        let mut params = ParamSet::new();
        attachment.init_params(&mut params, 7);
        assert_eq!(params.len(), 4);
        let a = params.expect("encoder.layer03.query.lora_a");
        assert_eq!(a.shape(), &[8, 16]);
        assert!(a.iter().any(|x| *x != 0.0), "A must be random");
        assert!(
            a.iter().all(|x| x.abs() < 0.2),
            "A init should be small-variance"
        );
        let b = params.expect("encoder.layer03.query.lora_b");
        assert_eq!(b.shape(), &[16, 8]);
        assert!(b.iter().all(|x| *x == 0.0), "B must start at zero");

        // reproducible in the seed, distinct across entries
        let mut params2 = ParamSet::new();
        attachment.init_params(&mut params2, 7);
        assert_eq!(params.digest(), params2.digest());
        let a_q = params.expect("encoder.layer03.query.lora_a");
        let a_v = params.expect("encoder.layer03.value.lora_a");
        assert_ne!(a_q, a_v);
    }
}
