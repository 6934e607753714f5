use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Matrix};
use crate::math::{gelu, gelu_grad, pow, sigmoid, softplus};
use crate::param::ParamSet;

use super::attention::{attention_sublayer, attention_sublayer_backward, AttentionCache};
use super::layers::{layer_norm, layer_norm_backward, linear, linear_backward, NormCache};
use super::{
    build_relative_times, EncoderConfig, EncoderParams, Modality, Pooling, RelativeTimeMatrix,
    TokenSequence,
};

/// Embedding used in place of the projected payload for padded slots.
pub const PADDING_EMBEDDING_VALUE: f64 = 0.0;

/// Fixed sinusoidal positional table, `n × d`.
pub fn sinusoidal_positions(n: usize, d: usize) -> Matrix {
    Matrix::from_fn(n, d, |pos, j| {
        let pair = (j / 2) as f64;
        let angle = pos as f64 / pow(10_000.0, 2.0 * pair / d as f64);
        if j % 2 == 0 {
            libm::sin(angle)
        } else {
            libm::cos(angle)
        }
    })
}

/// Configuration, trainable parameters and the fixed positional table.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    config: EncoderConfig,
    params: EncoderParams,
    positional: Matrix,
}

/// Gradients of the binary cross-entropy for one labelled sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGradients {
    pub loss: f64,
    pub params: EncoderParams,
    /// One entry per token; zeros for padded tokens and cls.
    pub payloads: Vec<Vec<f64>>,
}

struct BlockCache {
    attention: AttentionCache,
    norm2: NormCache,
    normed2: Matrix,
    hidden: Matrix,
    activated: Matrix,
}

struct ForwardCache {
    times: RelativeTimeMatrix,
    padding: Vec<bool>,
    pooled_rows: Vec<usize>,
    blocks: Vec<BlockCache>,
    final_norm: NormCache,
    pooled: Vec<f64>,
    logit: f64,
}

impl EncoderState {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let params = EncoderParams::init(&config);
        Ok(Self::assemble(config, params))
    }

    /// Rebuilds a state from stored parameters, checking every shape.
    pub fn from_params(config: EncoderConfig, params: EncoderParams) -> Result<Self> {
        config.validate()?;
        let reference = EncoderParams::init(&EncoderConfig {
            init_seed: 0,
            ..config.clone()
        });
        let want = reference.tensors();
        let got = params.tensors();
        if want.len() != got.len() {
            return Err(Error::DimensionMismatch {
                what: "parameter tensors",
                expected: want.len(),
                found: got.len(),
            });
        }
        for ((_, w), (_, g)) in want.iter().zip(&got) {
            if w.len() != g.len() {
                return Err(Error::DimensionMismatch {
                    what: "parameter tensor",
                    expected: w.len(),
                    found: g.len(),
                });
            }
        }
        if !params.all_finite() {
            return Err(Error::InvalidValue("non-finite parameters".into()));
        }
        Ok(Self::assemble(config, params))
    }

    fn assemble(config: EncoderConfig, params: EncoderParams) -> Self {
        let positional = sinusoidal_positions(config.sequence_len(), config.model_dim);
        Self {
            config,
            params,
            positional,
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &EncoderParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut EncoderParams {
        &mut self.params
    }

    pub fn positional(&self) -> &Matrix {
        &self.positional
    }

    /// Realized `(b, c)` for every head of every block.
    pub fn tem_parameters(&self) -> Vec<Vec<(f64, f64)>> {
        self.params
            .blocks
            .iter()
            .map(|b| (0..self.config.heads).map(|h| (b.tem_b(h), b.tem_c(h))).collect())
            .collect()
    }

    /// Token embedding + positional + segment, `n × model_dim`.
    pub fn embed(&self, seq: &TokenSequence) -> Result<Matrix> {
        let cfg = &self.config;
        seq.validate(cfg.max_scans, cfg.context_dim, cfg.image_dim)?;
        let p = &self.params;
        let d = cfg.model_dim;
        let mut x = Matrix::zeros(seq.len(), d);
        for (i, tok) in seq.items.iter().enumerate() {
            let row = x.row_mut(i);
            row.copy_from_slice(self.positional.row(i));
            axpy(1.0, p.segment.row(tok.modality.segment()), row);
            match (tok.modality, tok.padding) {
                (Modality::Cls, _) => {}
                (_, true) => row.iter_mut().for_each(|v| *v += PADDING_EMBEDDING_VALUE),
                (Modality::Signature, false) => project_into(&tok.payload, &p.context_proj, &p.context_bias, row),
                (Modality::Image, false) => project_into(&tok.payload, &p.image_proj, &p.image_bias, row),
            }
        }
        Ok(x)
    }

    fn run(&self, seq: &TokenSequence) -> Result<ForwardCache> {
        let cfg = &self.config;
        let mut x = self.embed(seq)?;
        let times = build_relative_times(seq, cfg.relative_time);
        let padding = seq.padding_mask();
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for block in &self.params.blocks {
            let (mid, attention) = attention_sublayer(&x, &times, &padding, block, cfg)?;
            let (normed2, norm2) = layer_norm(&mid, &block.ln2_gain, &block.ln2_bias, cfg.layer_norm_eps);
            let hidden = linear(&normed2, &block.w1, &block.b1);
            let mut activated = hidden.clone();
            activated.as_mut_slice().iter_mut().for_each(|v| *v = gelu(*v));
            let mut out = linear(&activated, &block.w2, &block.b2);
            axpy(1.0, mid.as_slice(), out.as_mut_slice());
            blocks.push(BlockCache {
                attention,
                norm2,
                normed2,
                hidden,
                activated,
            });
            x = out;
        }
        let p = &self.params;
        let (normed, final_norm) = layer_norm(&x, &p.final_gain, &p.final_bias, cfg.layer_norm_eps);
        let pooled_rows: Vec<usize> = match cfg.pooling {
            Pooling::Cls => vec![0],
            Pooling::Mean => seq
                .items
                .iter()
                .enumerate()
                .filter(|(_, t)| !t.padding && t.modality != Modality::Cls)
                .map(|(i, _)| i)
                .collect(),
        };
        let mut pooled = vec![0.0; cfg.model_dim];
        for &i in &pooled_rows {
            axpy(1.0 / pooled_rows.len() as f64, normed.row(i), &mut pooled);
        }
        let logit = dot(&pooled, &p.head_weight) + p.head_bias[0];
        if !logit.is_finite() {
            return Err(Error::NonFiniteLogits);
        }
        Ok(ForwardCache {
            times,
            padding,
            pooled_rows,
            blocks,
            final_norm,
            pooled,
            logit,
        })
    }

    pub fn logit(&self, seq: &TokenSequence) -> Result<f64> {
        Ok(self.run(seq)?.logit)
    }

    /// Malignancy probability in `(0, 1)`.
    pub fn forward(&self, seq: &TokenSequence) -> Result<f64> {
        self.logit(seq).map(sigmoid)
    }

    /// Binary cross-entropy computed from the logit.
    pub fn loss(&self, seq: &TokenSequence, label: bool) -> Result<f64> {
        self.logit(seq).map(|z| bce_from_logit(z, label))
    }

    pub fn backward(&self, seq: &TokenSequence, label: bool) -> Result<EncoderGradients> {
        let mut params = self.params.zeros_like();
        let (loss, payloads) = self.backward_into(seq, label, &mut params)?;
        Ok(EncoderGradients {
            loss,
            params,
            payloads,
        })
    }

    /// Adds this example's gradient into `grad`; returns its loss.
    pub fn accumulate_gradient(&self, seq: &TokenSequence, label: bool, grad: &mut EncoderParams) -> Result<f64> {
        self.backward_into(seq, label, grad).map(|(loss, _)| loss)
    }

    fn backward_into(
        &self,
        seq: &TokenSequence,
        label: bool,
        grad: &mut EncoderParams,
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        let cfg = &self.config;
        let p = &self.params;
        let cache = self.run(seq)?;
        let loss = bce_from_logit(cache.logit, label);
        let y = if label { 1.0 } else { 0.0 };
        let dlogit = sigmoid(cache.logit) - y;

        axpy(dlogit, &cache.pooled, &mut grad.head_weight);
        grad.head_bias[0] += dlogit;
        let n = seq.len();
        let mut dnormed = Matrix::zeros(n, cfg.model_dim);
        let share = 1.0 / cache.pooled_rows.len() as f64;
        for &i in &cache.pooled_rows {
            axpy(dlogit * share, &p.head_weight, dnormed.row_mut(i));
        }
        let mut dx = layer_norm_backward(
            &cache.final_norm,
            &p.final_gain,
            &dnormed,
            &mut grad.final_gain,
            &mut grad.final_bias,
        );

        for (bi, bc) in cache.blocks.iter().enumerate().rev() {
            let block = &p.blocks[bi];
            let g = &mut grad.blocks[bi];
            let dact = linear_backward(&bc.activated, &block.w2, &dx, &mut g.w2, &mut g.b2);
            let mut dhidden = dact;
            for (dh, h) in dhidden.as_mut_slice().iter_mut().zip(bc.hidden.as_slice()) {
                *dh *= gelu_grad(*h);
            }
            let dnormed2 = linear_backward(&bc.normed2, &block.w1, &dhidden, &mut g.w1, &mut g.b1);
            let mut dmid = layer_norm_backward(&bc.norm2, &block.ln2_gain, &dnormed2, &mut g.ln2_gain, &mut g.ln2_bias);
            axpy(1.0, dx.as_slice(), dmid.as_mut_slice());
            dx = attention_sublayer_backward(&bc.attention, &dmid, &cache.times, &cache.padding, block, g, cfg);
        }

        let mut payloads = Vec::with_capacity(n);
        for (i, tok) in seq.items.iter().enumerate() {
            let d_row = dx.row(i);
            axpy(1.0, d_row, grad.segment.row_mut(tok.modality.segment()));
            let (proj, dproj, dbias) = match (tok.modality, tok.padding) {
                (Modality::Signature, false) => (&p.context_proj, &mut grad.context_proj, &mut grad.context_bias),
                (Modality::Image, false) => (&p.image_proj, &mut grad.image_proj, &mut grad.image_bias),
                _ => {
                    payloads.push(vec![0.0; tok.payload.len()]);
                    continue;
                }
            };
            for (r, &v) in tok.payload.iter().enumerate() {
                if v != 0.0 {
                    axpy(v, d_row, dproj.row_mut(r));
                }
            }
            axpy(1.0, d_row, dbias);
            payloads.push(proj.mul_vec(d_row));
        }
        Ok((loss, payloads))
    }
}

fn project_into(payload: &[f64], w: &Matrix, b: &[f64], row: &mut [f64]) {
    axpy(1.0, b, row);
    for (r, &v) in payload.iter().enumerate() {
        if v != 0.0 {
            axpy(v, w.row(r), row);
        }
    }
}

/// `−[y ln σ(z) + (1 − y) ln(1 − σ(z))]`.
pub fn bce_from_logit(z: f64, label: bool) -> f64 {
    if label {
        softplus(-z)
    } else {
        softplus(z)
    }
}
