//! Deterministic stand-in encoder with real gradient support.
//!
//! Shape-compatible with a hub-scale pretrained encoder (configurable
//! layer count and width, 16 kHz framing) but driven entirely by seeded
//! random frozen weights, so tests and desk-scale experiments run in
//! milliseconds. Structure per mixing layer:
//!
//! ```text
//! Q = X Wq^T (+ adapter)    V = X Wv^T (+ adapter)
//! X' = X + k * tanh(Q) ⊙ tanh(V)
//! ```
//!
//! Frame embedding below the stack: E = tanh(frames · F^T) over sliding
//! windows. Base weights (F, Wq, Wv) are frozen; only adapter tensors
//! receive gradients. Query and value projections are the adaptable
//! sites, mirroring the attention projections adapters usually target.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::params::{GradSet, ParamSet};
use crate::seeds;

use super::lora::{LoraAttachment, LoraConfig, LoraEntry, ProjectionKind};
use super::{EncoderActivations, EncoderBackend, EncoderConfig, EncoderError, HiddenStack};

/// Mixing step size; keeps deep stacks away from tanh saturation.
const MIX_SCALE: f64 = 0.5;

const SUPPORTED_TARGETS: [ProjectionKind; 2] = [ProjectionKind::Query, ProjectionKind::Value];

struct BaseLayer {
    wq: Array2<f64>,
    wv: Array2<f64>,
}

pub struct StubEncoder {
    cfg: EncoderConfig,
    filterbank: Array2<f64>,
    layers: Vec<BaseLayer>,
    lora: Option<LoraAttachment>,
    digest: String,
}

/// Activations retained by traced encoding, downcast in `backward`.
struct TraceDetail {
    /// Input to each mixing layer (layer 0's input is the embedding).
    layer_inputs: Vec<Array2<f64>>,
    /// tanh(Q) per layer.
    hq: Vec<Array2<f64>>,
    /// tanh(V) per layer.
    hv: Vec<Array2<f64>>,
    /// Scaled keep-masks per layer for [query, value], when dropout is on.
    dropout_masks: Vec<[Option<Array2<f64>>; 2]>,
}

fn kind_slot(kind: ProjectionKind) -> usize {
    match kind {
        ProjectionKind::Query => 0,
        ProjectionKind::Value => 1,
        _ => unreachable!("unsupported kinds are rejected at attach time"),
    }
}

impl StubEncoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self, EncoderError> {
        cfg.validate()?;
        let d = cfg.hidden_dim;
        let w = cfg.window;
        let fb_std = 1.0 / (w as f64).sqrt();
        let fb_dist = Normal::new(0.0, fb_std).expect("positive std");
        let mut rng = seeds::rng_for("encoder.stub.base", cfg.seed, &["filterbank"]);
        let filterbank = Array2::from_shape_fn((d, w), |_| fb_dist.sample(&mut rng));

        let proj_std = 1.0 / (d as f64).sqrt();
        let proj_dist = Normal::new(0.0, proj_std).expect("positive std");
        let layers = (0..cfg.n_layers)
            .map(|l| {
                let layer_tag = format!("layer{l:02}");
                let mut rng_q =
                    seeds::rng_for("encoder.stub.base", cfg.seed, &[&layer_tag, "wq"]);
                let mut rng_v =
                    seeds::rng_for("encoder.stub.base", cfg.seed, &[&layer_tag, "wv"]);
                BaseLayer {
                    wq: Array2::from_shape_fn((d, d), |_| proj_dist.sample(&mut rng_q)),
                    wv: Array2::from_shape_fn((d, d), |_| proj_dist.sample(&mut rng_v)),
                }
            })
            .collect::<Vec<_>>();

        let digest = {
            let mut h = Sha256::new();
            for dim in [cfg.n_layers, cfg.hidden_dim, cfg.window, cfg.hop] {
                h.update((dim as u64).to_le_bytes());
            }
            for x in filterbank.iter() {
                h.update(x.to_le_bytes());
            }
            for layer in &layers {
                for x in layer.wq.iter().chain(layer.wv.iter()) {
                    h.update(x.to_le_bytes());
                }
            }
            hex::encode(h.finalize())
        };

        Ok(StubEncoder {
            cfg,
            filterbank,
            layers,
            lora: None,
            digest,
        })
    }

    /// Install adapters on every layer's supported projections.
    pub fn with_lora(mut self, lora_cfg: &LoraConfig) -> Result<Self, EncoderError> {
        lora_cfg.validate()?;
        for target in &lora_cfg.targets {
            if !SUPPORTED_TARGETS.contains(target) {
                return Err(EncoderError::UnknownTarget {
                    backend: "stub".into(),
                    target: *target,
                    supported: SUPPORTED_TARGETS.to_vec(),
                });
            }
        }
        let d = self.cfg.hidden_dim;
        let entries = (0..self.cfg.n_layers)
            .flat_map(|layer| {
                lora_cfg.targets.iter().map(move |kind| LoraEntry {
                    layer,
                    kind: *kind,
                    d_in: d,
                    d_out: d,
                })
            })
            .collect();
        self.lora = Some(LoraAttachment {
            config: lora_cfg.clone(),
            entries,
        });
        Ok(self)
    }

    fn entry_for(&self, layer: usize, kind: ProjectionKind) -> Option<&LoraEntry> {
        self.lora
            .as_ref()?
            .entries
            .iter()
            .find(|e| e.layer == layer && e.kind == kind)
    }

    /// Sliding-window frame matrix `[T, window]`.
    fn frame_wave(&self, wave: &[f32]) -> Result<Array2<f64>, EncoderError> {
        let (w, hop) = (self.cfg.window, self.cfg.hop);
        if wave.len() < w {
            return Err(EncoderError::InputTooShort {
                got: wave.len(),
                needed: w,
            });
        }
        let t = (wave.len() - w) / hop + 1;
        Ok(Array2::from_shape_fn((t, w), |(i, j)| {
            wave[i * hop + j] as f64
        }))
    }

    fn lora_views<'p>(
        &self,
        entry: &LoraEntry,
        params: &'p ParamSet,
    ) -> Result<(ArrayView2<'p, f64>, ArrayView2<'p, f64>), EncoderError> {
        let fetch = |name: String| -> Result<ArrayView2<'p, f64>, EncoderError> {
            params
                .get(&name)
                .ok_or_else(|| EncoderError::InvalidConfig {
                    reason: format!("adapter parameter {name:?} missing from the param set"),
                })?
                .view()
                .into_dimensionality()
                .map_err(|_| EncoderError::InvalidConfig {
                    reason: format!("adapter parameter {name:?} is not a matrix"),
                })
        };
        Ok((fetch(entry.a_name())?, fetch(entry.b_name())?))
    }

    /// `x · base^T` plus the adapter delta when installed:
    /// `s · (mask ⊙ x) A^T B^T`.
    fn project(
        &self,
        x: &Array2<f64>,
        base: &Array2<f64>,
        layer: usize,
        kind: ProjectionKind,
        params: &ParamSet,
        mask: Option<&Array2<f64>>,
    ) -> Result<Array2<f64>, EncoderError> {
        let mut y = x.dot(&base.t());
        if let Some(entry) = self.entry_for(layer, kind) {
            let (a, b) = self.lora_views(entry, params)?;
            let s = self.lora.as_ref().unwrap().config.scaling();
            let xd_store;
            let xd: &Array2<f64> = match mask {
                Some(m) => {
                    xd_store = x * m;
                    &xd_store
                }
                None => x,
            };
            y += &(xd.dot(&a.t()).dot(&b.t()) * s);
        }
        Ok(y)
    }

    fn forward(
        &self,
        wave: &[f32],
        params: &ParamSet,
        dropout_seed: Option<u64>,
        keep_trace: bool,
    ) -> Result<(HiddenStack, Option<TraceDetail>), EncoderError> {
        let frames = self.frame_wave(wave)?;
        let t = frames.nrows();
        let d = self.cfg.hidden_dim;
        let embedding = frames.dot(&self.filterbank.t()).mapv(f64::tanh);

        let dropout_p = self
            .lora
            .as_ref()
            .map(|l| l.config.dropout)
            .unwrap_or(0.0);

        let mut states = Array3::zeros((self.cfg.n_states(), t, d));
        let offset = usize::from(self.cfg.include_embedding);
        if self.cfg.include_embedding {
            states.index_axis_mut(Axis(0), 0).assign(&embedding);
        }

        let mut detail = keep_trace.then(|| TraceDetail {
            layer_inputs: Vec::with_capacity(self.cfg.n_layers),
            hq: Vec::with_capacity(self.cfg.n_layers),
            hv: Vec::with_capacity(self.cfg.n_layers),
            dropout_masks: Vec::with_capacity(self.cfg.n_layers),
        });

        let mut x = embedding;
        for (l, layer) in self.layers.iter().enumerate() {
            let masks: [Option<Array2<f64>>; 2] = match (dropout_seed, dropout_p > 0.0) {
                (Some(seed), true) => {
                    let make = |kind: ProjectionKind| {
                        self.entry_for(l, kind).map(|_| {
                            dropout_mask(t, d, dropout_p, seed, l, kind)
                        })
                    };
                    [make(ProjectionKind::Query), make(ProjectionKind::Value)]
                }
                _ => [None, None],
            };
            let q = self.project(
                &x,
                &layer.wq,
                l,
                ProjectionKind::Query,
                params,
                masks[0].as_ref(),
            )?;
            let v = self.project(
                &x,
                &layer.wv,
                l,
                ProjectionKind::Value,
                params,
                masks[1].as_ref(),
            )?;
            let hq = q.mapv(f64::tanh);
            let hv = v.mapv(f64::tanh);
            let out = &x + &(&hq * &hv * MIX_SCALE);
            states.index_axis_mut(Axis(0), l + offset).assign(&out);
            if let Some(detail) = detail.as_mut() {
                detail.layer_inputs.push(x);
                detail.hq.push(hq);
                detail.hv.push(hv);
                detail.dropout_masks.push(masks);
            }
            x = out;
        }

        Ok((HiddenStack { states }, detail))
    }
}

/// Inverted-dropout keep mask, scaled by 1/(1-p).
fn dropout_mask(
    t: usize,
    d: usize,
    p: f64,
    seed: u64,
    layer: usize,
    kind: ProjectionKind,
) -> Array2<f64> {
    use rand::Rng;
    let mut rng = seeds::rng_for(
        "encoder.lora.dropout",
        seed,
        &[&layer.to_string(), kind.as_str()],
    );
    let scale = 1.0 / (1.0 - p);
    Array2::from_shape_fn((t, d), |_| {
        if rng.random_bool(1.0 - p) {
            scale
        } else {
            0.0
        }
    })
}

impl EncoderBackend for StubEncoder {
    fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    fn base_digest(&self) -> String {
        self.digest.clone()
    }

    fn lora(&self) -> Option<&LoraAttachment> {
        self.lora.as_ref()
    }

    fn init_params(&self, params: &mut ParamSet, seed: u64) {
        if let Some(lora) = &self.lora {
            lora.init_params(params, seed);
        }
    }

    fn encode(&self, wave: &[f32], params: &ParamSet) -> Result<HiddenStack, EncoderError> {
        let (stack, _) = self.forward(wave, params, None, false)?;
        Ok(stack)
    }

    fn encode_traced(
        &self,
        wave: &[f32],
        params: &ParamSet,
        dropout_seed: u64,
    ) -> Result<EncoderActivations, EncoderError> {
        let (stack, detail) = self.forward(wave, params, Some(dropout_seed), true)?;
        Ok(EncoderActivations {
            stack,
            detail: Box::new(detail.expect("trace requested")),
        })
    }

    fn backward(
        &self,
        acts: &EncoderActivations,
        grad_stack: ArrayView3<'_, f64>,
        params: &ParamSet,
        grads: &mut GradSet,
    ) -> Result<(), EncoderError> {
        let Some(lora) = &self.lora else {
            // nothing trainable inside the encoder
            return Ok(());
        };
        let detail = acts
            .detail
            .downcast_ref::<TraceDetail>()
            .ok_or_else(|| EncoderError::InvalidConfig {
                reason: "activations were not produced by this backend".into(),
            })?;
        let offset = usize::from(self.cfg.include_embedding);
        let s = lora.config.scaling();

        let top = self.cfg.n_layers - 1 + offset;
        let mut g = grad_stack.index_axis(Axis(0), top).to_owned();
        for l in (0..self.cfg.n_layers).rev() {
            let x = &detail.layer_inputs[l];
            let hq = &detail.hq[l];
            let hv = &detail.hv[l];
            // X' = X + k tanh(Q) tanh(V)
            let dq = &g * hv * MIX_SCALE * &hq.mapv(|h| 1.0 - h * h);
            let dv = &g * hq * MIX_SCALE * &hv.mapv(|h| 1.0 - h * h);

            let mut gx = g + dq.dot(&self.layers[l].wq) + dv.dot(&self.layers[l].wv);

            for (kind, dz) in [(ProjectionKind::Query, &dq), (ProjectionKind::Value, &dv)] {
                let Some(entry) = self.entry_for(l, kind) else {
                    continue;
                };
                let (a, b) = self.lora_views(entry, params)?;
                let mask = detail.dropout_masks[l][kind_slot(kind)].as_ref();
                let xd_store;
                let xd: &Array2<f64> = match mask {
                    Some(m) => {
                        xd_store = x * m;
                        &xd_store
                    }
                    None => x,
                };
                // dB = s dz^T (xd A^T); dA = s B^T dz^T xd
                let xa = xd.dot(&a.t());
                grads.accumulate(
                    &entry.b_name(),
                    (dz.t().dot(&xa) * s).into_dyn().view(),
                );
                grads.accumulate(
                    &entry.a_name(),
                    (b.t().dot(&dz.t()).dot(xd) * s).into_dyn().view(),
                );
                // adapter contribution to dX
                let through = dz.dot(&b).dot(&a) * s;
                match mask {
                    Some(m) => gx += &(&through * m),
                    None => gx += &through,
                }
            }

            g = gx;
            if l > 0 {
                g += &grad_stack.index_axis(Axis(0), l - 1 + offset);
            }
            // below layer 0 sits the frozen embedding; its direct stack
            // gradient exists but nothing trainable consumes it
        }
        Ok(())
    }
}
