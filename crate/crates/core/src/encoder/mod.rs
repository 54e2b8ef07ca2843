//! Frozen speech encoders behind a pluggable trait, with optional
//! low-rank adapters.
//!
//! The encoder contract: take a 16 kHz mono waveform, return a stack of
//! per-layer hidden states `[n_states, n_frames, hidden_dim]`. Base
//! weights are frozen — they live inside the backend, not in any
//! [`ParamSet`] — while adapter weights (when installed) are ordinary
//! trainable parameters passed in at call time.
//!
//! The in-tree backend is [`StubEncoder`], a deterministic stand-in with
//! the same shape contract and full gradient support. Hub-scale
//! pretrained encoders are expected to plug in behind the same trait;
//! they are deliberately out of scope here.

mod lora;
mod stub;

pub use lora::{LoraAttachment, LoraConfig, LoraEntry, ProjectionKind};
pub use stub::StubEncoder;

use ndarray::{Array3, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{GradSet, ParamSet};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("waveform too short: {got} samples, need at least {needed} for one frame")]
    InputTooShort { got: usize, needed: usize },
    #[error("invalid encoder config: {reason}")]
    InvalidConfig { reason: String },
    #[error("backend {backend:?} cannot adapt {target:?}; supported targets: {supported:?}")]
    UnknownTarget {
        backend: String,
        target: ProjectionKind,
        supported: Vec<ProjectionKind>,
    },
    #[error("backend {backend:?} does not support traced encoding")]
    TracingUnsupported { backend: String },
    #[error("unknown encoder backend {name:?}: only \"stub\" ships in-tree")]
    UnknownBackend { name: String },
}

/// Encoder construction parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Backend name; `stub` is the only in-tree implementation.
    pub backend: String,
    /// Mixing layers above the frame embedding.
    pub n_layers: usize,
    pub hidden_dim: usize,
    /// Analysis window length in samples at 16 kHz.
    pub window: usize,
    /// Hop between frames in samples.
    pub hop: usize,
    /// Expose the frame embedding as state 0 of the hidden stack.
    pub include_embedding: bool,
    /// Seed for the frozen base weights.
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            backend: "stub".into(),
            n_layers: 12,
            hidden_dim: 768,
            window: 400,
            hop: 320,
            include_embedding: true,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.n_layers == 0 || self.hidden_dim == 0 {
            return Err(EncoderError::InvalidConfig {
                reason: "n_layers and hidden_dim must be positive".into(),
            });
        }
        if self.window == 0 || self.hop == 0 || self.hop > self.window {
            return Err(EncoderError::InvalidConfig {
                reason: format!(
                    "need 0 < hop <= window, got window={} hop={}",
                    self.window, self.hop
                ),
            });
        }
        Ok(())
    }

    /// States in the hidden stack: mixing layers plus the optional
    /// embedding state.
    pub fn n_states(&self) -> usize {
        self.n_layers + usize::from(self.include_embedding)
    }
}

/// Per-layer hidden states for one utterance: `[n_states, n_frames, dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStack {
    pub states: Array3<f64>,
}

impl HiddenStack {
    pub fn n_states(&self) -> usize {
        self.states.shape()[0]
    }

    pub fn n_frames(&self) -> usize {
        self.states.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.states.shape()[2]
    }

    pub fn state(&self, l: usize) -> ArrayView2<'_, f64> {
        self.states.index_axis(ndarray::Axis(0), l)
    }
}

/// Forward activations retained for a later backward pass. `detail` is
/// backend-private state, downcast by the backend that produced it.
pub struct EncoderActivations {
    pub stack: HiddenStack,
    pub detail: Box<dyn std::any::Any + Send>,
}

/// A frozen encoder, possibly with trainable adapters installed.
pub trait EncoderBackend: Send + Sync {
    fn config(&self) -> &EncoderConfig;

    /// Digest of the frozen base weights; must not change across any
    /// amount of training.
    fn base_digest(&self) -> String;

    /// The adapters installed on this encoder, if any.
    fn lora(&self) -> Option<&LoraAttachment>;

    /// Register this encoder's trainable parameters (adapters only) into
    /// `params`.
    fn init_params(&self, params: &mut ParamSet, seed: u64);

    /// Inference-mode encoding: deterministic, no dropout.
    fn encode(&self, wave: &[f32], params: &ParamSet) -> Result<HiddenStack, EncoderError>;

    /// Training-mode encoding that retains activations for [`EncoderBackend::backward`].
    /// `dropout_seed` scopes adapter dropout masks; with dropout 0 the
    /// output equals [`EncoderBackend::encode`].
    fn encode_traced(
        &self,
        wave: &[f32],
        params: &ParamSet,
        dropout_seed: u64,
    ) -> Result<EncoderActivations, EncoderError>;

    /// Accumulate adapter gradients given `d loss / d stack`.
    fn backward(
        &self,
        acts: &EncoderActivations,
        grad_stack: ArrayView3<'_, f64>,
        params: &ParamSet,
        grads: &mut GradSet,
    ) -> Result<(), EncoderError>;
}

/// Build an encoder from its config.
pub fn build_encoder(cfg: &EncoderConfig) -> Result<Box<dyn EncoderBackend>, EncoderError> {
    match cfg.backend.as_str() {
        "stub" => Ok(Box::new(StubEncoder::new(cfg.clone())?)),
        other => Err(EncoderError::UnknownBackend {
            name: other.to_string(),
        }),
    }
}

/// Build an encoder and install adapters on it.
pub fn build_encoder_with_lora(
    cfg: &EncoderConfig,
    lora: &LoraConfig,
) -> Result<Box<dyn EncoderBackend>, EncoderError> {
    match cfg.backend.as_str() {
        "stub" => Ok(Box::new(StubEncoder::new(cfg.clone())?.with_lora(lora)?)),
        other => Err(EncoderError::UnknownBackend {
            name: other.to_string(),
        }),
    }
}
