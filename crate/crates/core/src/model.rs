//! Classification model over a frozen encoder's hidden stack.
//!
//! The hidden states are combined by a learned softmax-weighted average
//! over layers, then passed through a lightweight head:
//!
//! ```text
//! feat = Σ_l softmax(raw)_l · stack_l              [T, D]
//! conv1 (1x1, D→C) → ReLU → conv2 (1x1, C→C) → ReLU
//! masked mean over frames                          [C]
//! fc1 (C→H) → ReLU → fc2 (H→n_classes)             logits
//! ```
//!
//! Everything here is differentiated by hand against the named tensors
//! in a [`ParamSet`]; gradients are validated against finite differences
//! in the tests. 1x1 convolutions over frames are exactly per-frame
//! linear maps, which is how they are implemented.

use std::sync::Arc;

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{EncoderBackend, EncoderError, HiddenStack};
use crate::params::{GradSet, ParamInfo, ParamSet};
use crate::seeds;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid head config: {reason}")]
    InvalidConfig { reason: String },
    #[error("frame mask length {mask_len} does not match {frames} frames")]
    MaskLengthMismatch { frames: usize, mask_len: usize },
    #[error("no valid frames after masking")]
    EmptyMask,
    #[error("logits contain non-finite values")]
    NonFiniteLogits,
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

/// Head hyperparameters. The convolution is pointwise by construction;
/// `conv_kernel` exists to make that explicit and is validated to be 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub fc_hidden: usize,
    pub n_classes: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            conv_channels: 256,
            conv_kernel: 1,
            fc_hidden: 256,
            n_classes: 2,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.conv_kernel != 1 {
            return Err(ModelError::InvalidConfig {
                reason: format!("conv_kernel must be 1 (pointwise), got {}", self.conv_kernel),
            });
        }
        if self.conv_channels == 0 || self.fc_hidden == 0 {
            return Err(ModelError::InvalidConfig {
                reason: "conv_channels and fc_hidden must be positive".into(),
            });
        }
        if self.n_classes < 2 {
            return Err(ModelError::InvalidConfig {
                reason: format!("need at least 2 classes, got {}", self.n_classes),
            });
        }
        Ok(())
    }

    /// Dimension of the pooled utterance vector (= conv output channels).
    pub fn pooled_dim(&self) -> usize {
        self.conv_channels
    }
}

/// Numerically stable softmax.
pub fn softmax(raw: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = raw.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exp = raw.mapv(|x| (x - max).exp());
    let sum = exp.sum();
    exp / sum
}

/// Combine a hidden stack with the given normalized layer weights.
pub fn weighted_layer_average(stack: &HiddenStack, weights: ArrayView1<'_, f64>) -> Array2<f64> {
    assert_eq!(
        weights.len(),
        stack.n_states(),
        "one weight per encoder state"
    );
    let mut feat = Array2::<f64>::zeros((stack.n_frames(), stack.dim()));
    for (l, &w) in weights.iter().enumerate() {
        feat.scaled_add(w, &stack.state(l));
    }
    feat
}

/// Cross entropy from logits; returns the loss and d loss / d logits.
pub fn cross_entropy(logits: ArrayView1<'_, f64>, label: usize) -> Result<(f64, Array1<f64>), ModelError> {
    if label >= logits.len() {
        return Err(ModelError::LabelOutOfRange {
            label,
            n_classes: logits.len(),
        });
    }
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if !max.is_finite() {
        return Err(ModelError::NonFiniteLogits);
    }
    let shifted = logits.mapv(|x| x - max);
    let lse = shifted.mapv(f64::exp).sum().ln();
    let loss = lse - shifted[label];
    let mut dlogits = shifted.mapv(|x| (x - lse).exp()); // softmax
    dlogits[label] -= 1.0;
    Ok((loss, dlogits))
}

/// Argmax with ties resolved to the lowest class index.
pub fn predict(logits: ArrayView1<'_, f64>) -> Result<usize, ModelError> {
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(ModelError::NonFiniteLogits);
    }
    let mut best = 0usize;
    for (i, &x) in logits.iter().enumerate() {
        if x > logits[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Frozen encoder + trainable combination weights and head.
pub struct AsuModel {
    pub encoder: Arc<dyn EncoderBackend>,
    pub head: HeadConfig,
    pub params: ParamSet,
}

struct HeadTrace {
    feat: Array2<f64>,
    z1: Array2<f64>,
    a1: Array2<f64>,
    z2: Array2<f64>,
    a2: Array2<f64>,
    pooled: Array1<f64>,
    z3: Array1<f64>,
    a3: Array1<f64>,
    mask_weights: Array1<f64>,
    logits: Array1<f64>,
}

impl AsuModel {
    /// Build a model with freshly initialized trainable parameters:
    /// zero layer-weight logits (uniform mixing), small random linear
    /// weights, zero biases, and freshly initialized adapters when the
    /// encoder carries them.
    pub fn new(
        encoder: Arc<dyn EncoderBackend>,
        head: HeadConfig,
        seed: u64,
    ) -> Result<Self, ModelError> {
        head.validate()?;
        let mut params = ParamSet::new();
        let n_states = encoder.config().n_states();
        let d = encoder.config().hidden_dim;
        params.insert("layer_weights", ndarray::ArrayD::zeros(vec![n_states]));

        let (c, h, k) = (head.conv_channels, head.fc_hidden, head.n_classes);
        for (name, rows, cols) in [
            ("head.conv1.weight", c, d),
            ("head.conv2.weight", c, c),
            ("head.fc1.weight", h, c),
            ("head.fc2.weight", k, h),
        ] {
            let std = (2.0 / (rows + cols) as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("positive std");
            let mut rng = seeds::rng_for("model.init", seed, &[name]);
            params.insert(
                name,
                ndarray::ArrayD::from_shape_fn(vec![rows, cols], |_| dist.sample(&mut rng)),
            );
            let bias_name = name.replace(".weight", ".bias");
            params.insert(bias_name, ndarray::ArrayD::zeros(vec![rows]));
        }
        encoder.init_params(&mut params, seed);
        Ok(AsuModel {
            encoder,
            head,
            params,
        })
    }

    /// Everything the optimizer may touch: layer weights, head tensors,
    /// and adapter tensors. Frozen encoder weights never appear here.
    pub fn trainable_state(&self) -> Vec<ParamInfo> {
        self.params.infos()
    }

    /// Current normalized layer weights.
    pub fn layer_weights(&self) -> Array1<f64> {
        let raw = self
            .params
            .expect("layer_weights")
            .view()
            .into_dimensionality()
            .expect("layer_weights is a vector");
        softmax(raw)
    }

    pub fn logits_for_stack(
        &self,
        stack: &HiddenStack,
        mask: Option<&[bool]>,
    ) -> Result<Array1<f64>, ModelError> {
        Ok(self.head_forward(stack, mask)?.logits)
    }

    pub fn logits_for_wave(&self, wave: &[f32]) -> Result<Array1<f64>, ModelError> {
        let stack = self.encoder.encode(wave, &self.params)?;
        self.logits_for_stack(&stack, None)
    }

    fn mat<'a>(&'a self, name: &str) -> ArrayView2<'a, f64> {
        self.params
            .expect(name)
            .view()
            .into_dimensionality()
            .expect("matrix parameter")
    }

    fn vec<'a>(&'a self, name: &str) -> ArrayView1<'a, f64> {
        self.params
            .expect(name)
            .view()
            .into_dimensionality()
            .expect("vector parameter")
    }

    fn head_forward(
        &self,
        stack: &HiddenStack,
        mask: Option<&[bool]>,
    ) -> Result<HeadTrace, ModelError> {
        let t = stack.n_frames();
        let mask_weights: Array1<f64> = match mask {
            Some(m) => {
                if m.len() != t {
                    return Err(ModelError::MaskLengthMismatch {
                        frames: t,
                        mask_len: m.len(),
                    });
                }
                Array1::from_iter(m.iter().map(|&b| if b { 1.0 } else { 0.0 }))
            }
            None => Array1::ones(t),
        };
        let valid = mask_weights.sum();
        if valid == 0.0 {
            return Err(ModelError::EmptyMask);
        }

        let weights = self.layer_weights();
        let feat = weighted_layer_average(stack, weights.view());

        let z1 = feat.dot(&self.mat("head.conv1.weight").t()) + &self.vec("head.conv1.bias");
        let a1 = z1.mapv(|x| x.max(0.0));
        let z2 = a1.dot(&self.mat("head.conv2.weight").t()) + &self.vec("head.conv2.bias");
        let a2 = z2.mapv(|x| x.max(0.0));

        // masked mean over frames
        let pooled = a2
            .axis_iter(Axis(0))
            .zip(mask_weights.iter())
            .fold(Array1::<f64>::zeros(a2.ncols()), |acc, (row, &mw)| {
                acc + &(&row * mw)
            })
            / valid;

        let z3 = self.mat("head.fc1.weight").dot(&pooled) + &self.vec("head.fc1.bias");
        let a3 = z3.mapv(|x| x.max(0.0));
        let logits = self.mat("head.fc2.weight").dot(&a3) + &self.vec("head.fc2.bias");

        Ok(HeadTrace {
            feat,
            z1,
            a1,
            z2,
            a2,
            pooled,
            z3,
            a3,
            mask_weights,
            logits,
        })
    }

    /// Forward + backward for one utterance. Head and layer-weight
    /// gradients are accumulated into `grads`; the returned stack
    /// gradient feeds [`EncoderBackend::backward`] when adapters are
    /// training. The caller owns batch averaging.
    pub fn backprop_utterance(
        &self,
        stack: &HiddenStack,
        mask: Option<&[bool]>,
        label: usize,
        grads: &mut GradSet,
        want_stack_grad: bool,
    ) -> Result<(f64, Option<Array3<f64>>), ModelError> {
        if label >= self.head.n_classes {
            return Err(ModelError::LabelOutOfRange {
                label,
                n_classes: self.head.n_classes,
            });
        }
        let trace = self.head_forward(stack, mask)?;
        let (loss, dlogits) = cross_entropy(trace.logits.view(), label)?;

        // fc2
        grads.accumulate(
            "head.fc2.weight",
            outer(&dlogits, &trace.a3).into_dyn().view(),
        );
        grads.accumulate("head.fc2.bias", dlogits.clone().into_dyn().view());
        let da3 = self.mat("head.fc2.weight").t().dot(&dlogits);

        // fc1
        let dz3 = &da3 * &trace.z3.mapv(|z| if z > 0.0 { 1.0 } else { 0.0 });
        grads.accumulate(
            "head.fc1.weight",
            outer(&dz3, &trace.pooled).into_dyn().view(),
        );
        grads.accumulate("head.fc1.bias", dz3.clone().into_dyn().view());
        let dpooled = self.mat("head.fc1.weight").t().dot(&dz3);

        // undo masked mean: each valid frame gets mask_t / valid of dpooled
        let valid = trace.mask_weights.sum();
        let mut da2 = Array2::<f64>::zeros(trace.a2.raw_dim());
        for (mut row, &mw) in da2.axis_iter_mut(Axis(0)).zip(trace.mask_weights.iter()) {
            if mw > 0.0 {
                row.assign(&(&dpooled * (mw / valid)));
            }
        }

        // conv2
        let dz2 = &da2 * &trace.z2.mapv(|z| if z > 0.0 { 1.0 } else { 0.0 });
        grads.accumulate(
            "head.conv2.weight",
            dz2.t().dot(&trace.a1).into_dyn().view(),
        );
        grads.accumulate("head.conv2.bias", dz2.sum_axis(Axis(0)).into_dyn().view());
        let da1 = dz2.dot(&self.mat("head.conv2.weight"));

        // conv1
        let dz1 = &da1 * &trace.z1.mapv(|z| if z > 0.0 { 1.0 } else { 0.0 });
        grads.accumulate(
            "head.conv1.weight",
            dz1.t().dot(&trace.feat).into_dyn().view(),
        );
        grads.accumulate("head.conv1.bias", dz1.sum_axis(Axis(0)).into_dyn().view());
        let dfeat = dz1.dot(&self.mat("head.conv1.weight")); // [T, D]

        // layer weights through the softmax
        let weights = self.layer_weights();
        let mut dw = Array1::<f64>::zeros(weights.len());
        for l in 0..weights.len() {
            dw[l] = (&stack.state(l) * &dfeat).sum();
        }
        let inner = weights.dot(&dw);
        let draw = &weights * &(&dw - inner);
        grads.accumulate("layer_weights", draw.into_dyn().view());

        let stack_grad = want_stack_grad.then(|| {
            let mut g = Array3::<f64>::zeros(stack.states.raw_dim());
            for (l, &w) in weights.iter().enumerate() {
                g.index_axis_mut(Axis(0), l).assign(&(&dfeat * w));
            }
            g
        });

        Ok((loss, stack_grad))
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.len(), b.len()));
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[[i, j]] = ai * bj;
        }
    }
    out
}
