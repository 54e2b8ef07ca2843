//! Self-describing training checkpoints.
//!
//! A checkpoint carries every config needed to rebuild the model, the
//! full trainable state, and digests of both the trainable state and
//! the frozen encoder base. Loading verifies the digests, so a restored
//! model is bit-identical to the one that was saved or the load fails.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{build_encoder, build_encoder_with_lora, EncoderConfig, LoraConfig};
use crate::model::{AsuModel, HeadConfig};
use crate::params::ParamSet;
use crate::trainer::{TrainConfig, TrainError};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub encoder: EncoderConfig,
    pub lora: Option<LoraConfig>,
    pub head: HeadConfig,
    pub train: TrainConfig,
    pub best_epoch: usize,
    pub best_val_metric: f64,
    /// Digest of the frozen encoder base weights at save time.
    pub base_digest: String,
    /// Digest of `params` at save time; verified on load.
    pub params_digest: String,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn from_model(
        model: &AsuModel,
        train: &TrainConfig,
        best_epoch: usize,
        best_val_metric: f64,
    ) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            encoder: model.encoder.config().clone(),
            lora: model.encoder.lora().map(|a| a.config.clone()),
            head: model.head.clone(),
            train: train.clone(),
            best_epoch,
            best_val_metric,
            base_digest: model.encoder.base_digest(),
            params_digest: model.params.digest(),
            params: model.params.clone(),
        }
    }

    /// Write as JSON via a temp file + rename, so a crash never leaves a
    /// truncated checkpoint at `path`.
    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let bytes = serde_json::to_vec(self)?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, &bytes)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let bytes = fs::read(path)?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(TrainError::CheckpointVersion {
                found: ckpt.version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let actual = ckpt.params.digest();
        if actual != ckpt.params_digest {
            return Err(TrainError::CheckpointMismatch {
                reason: format!(
                    "trainable state digest {actual} does not match recorded {}",
                    ckpt.params_digest
                ),
            });
        }
        Ok(ckpt)
    }

    /// Rebuild the full model this checkpoint was saved from.
    pub fn build_model(&self) -> Result<AsuModel, TrainError> {
        let encoder = match &self.lora {
            Some(lora) => build_encoder_with_lora(&self.encoder, lora)?,
            None => build_encoder(&self.encoder)?,
        };
        if encoder.base_digest() != self.base_digest {
            return Err(TrainError::CheckpointMismatch {
                reason: format!(
                    "frozen encoder digest {} does not match recorded {}",
                    encoder.base_digest(),
                    self.base_digest
                ),
            });
        }
        let mut model = AsuModel::new(encoder.into(), self.head.clone(), self.train.seed)?;
        self.transfer_params_into(&mut model)?;
        Ok(model)
    }

    /// Copy this checkpoint's trainable state into `model`. The two
    /// parameter sets must agree exactly on names and shapes; the error
    /// names the first offending tensor.
    pub fn transfer_params_into(&self, model: &mut AsuModel) -> Result<(), TrainError> {
        for info in model.trainable_state() {
            let src = self.params.get(&info.name).ok_or_else(|| {
                TrainError::CheckpointMismatch {
                    reason: format!("checkpoint lacks parameter {:?}", info.name),
                }
            })?;
            if src.shape() != info.shape.as_slice() {
                return Err(TrainError::CheckpointMismatch {
                    reason: format!(
                        "parameter {:?} has shape {:?} in checkpoint but {:?} in model",
                        info.name,
                        src.shape(),
                        info.shape
                    ),
                });
            }
        }
        if self.params.len() != model.params.len() {
            let extra = self
                .params
                .names()
                .find(|n| !model.params.contains(n))
                .cloned()
                .unwrap_or_default();
            return Err(TrainError::CheckpointMismatch {
                reason: format!("checkpoint has unexpected parameter {extra:?}"),
            });
        }
        for (name, value) in self.params.iter() {
            *model.params.get_mut(name).expect("verified above") = value.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::build_encoder;
    use crate::seeds;
    use crate::tasks::TaskKind;
    use rand::Rng;
    use std::sync::Arc;

    fn encoder_cfg() -> EncoderConfig {
        EncoderConfig {
            backend: "stub".into(),
            n_layers: 2,
            hidden_dim: 8,
            window: 8,
            hop: 4,
            include_embedding: true,
            seed: 5,
        }
    }

    fn head_cfg(n_classes: usize) -> HeadConfig {
        HeadConfig {
            conv_channels: 8,
            conv_kernel: 1,
            fc_hidden: 8,
            n_classes,
        }
    }

    fn some_model(seed: u64) -> AsuModel {
        let encoder: Arc<_> = build_encoder(&encoder_cfg()).unwrap().into();
        AsuModel::new(encoder, head_cfg(3), seed).unwrap()
    }

    fn probe_wave(seed: u64) -> Vec<f32> {
        let mut rng = seeds::rng_for("test.probe", seed, &[]);
        (0..48).map(|_| rng.random_range(-0.5..0.5)).collect()
    }

    #[test]
    fn save_load_rebuild_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        let model = some_model(42);
        let cfg = TrainConfig::full_data(TaskKind::Emotion);
        let ckpt = Checkpoint::from_model(&model, &cfg, 7, 0.625);
        ckpt.save(&path).unwrap();

        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.best_epoch, 7);
        assert_eq!(loaded.best_val_metric, 0.625);
        assert_eq!(loaded.params.digest(), model.params.digest());

        let rebuilt = loaded.build_model().unwrap();
        assert_eq!(rebuilt.params.digest(), model.params.digest());
        let wave = probe_wave(1);
        let a = model.logits_for_wave(&wave).unwrap();
        let b = rebuilt.logits_for_wave(&wave).unwrap();
        assert_eq!(a, b, "rebuilt model must produce identical logits");
    }

    #[test]
    fn transfer_into_fresh_model_matches_source() {
        let source = some_model(1);
        let cfg = TrainConfig::full_data(TaskKind::Emotion);
        let ckpt = Checkpoint::from_model(&source, &cfg, 0, 0.0);

        // fresh model, different init seed: different params until transfer
        let mut target = some_model(2);
        assert_ne!(target.params.digest(), source.params.digest());
        ckpt.transfer_params_into(&mut target).unwrap();
        assert_eq!(target.params.digest(), source.params.digest());
    }

    #[test]
    fn mismatched_head_is_named_in_the_error() {
        let source = some_model(1);
        let cfg = TrainConfig::full_data(TaskKind::Emotion);
        let ckpt = Checkpoint::from_model(&source, &cfg, 0, 0.0);

        let encoder: Arc<_> = build_encoder(&encoder_cfg()).unwrap().into();
        let mut other = AsuModel::new(encoder, head_cfg(5), 3).unwrap();
        let err = ckpt.transfer_params_into(&mut other).unwrap_err();
        match err {
            TrainError::CheckpointMismatch { reason } => {
                assert!(reason.contains("head.fc2"), "got: {reason}");
            }
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn corrupted_params_fail_to_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        let model = some_model(4);
        let cfg = TrainConfig::full_data(TaskKind::Emotion);
        let mut ckpt = Checkpoint::from_model(&model, &cfg, 0, 0.0);
        // tamper after digesting
        ckpt.params.get_mut("layer_weights").unwrap()[[0]] += 1e-9;
        ckpt.save(&path).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(TrainError::CheckpointMismatch { .. })
        ));
    }

    #[test]
    fn future_versions_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        let model = some_model(4);
        let cfg = TrainConfig::full_data(TaskKind::Emotion);
        let mut ckpt = Checkpoint::from_model(&model, &cfg, 0, 0.0);
        ckpt.version = 99;
        ckpt.save(&path).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(TrainError::CheckpointVersion { found: 99, .. })
        ));
    }
}
