use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{gemm_nn, gemm_nt, gemm_tn, Matrix};
use crate::math::{exp, sigmoid, sqrt};

use super::layers::{add_columns, columns, layer_norm, layer_norm_backward, linear, linear_backward, NormCache};
use super::params::TEM_B_UNIT_DAYS;
use super::{tem_partials, BlockParams, EncoderConfig, RelativeTimeMatrix, TemMode};

/// One head's result together with the intermediates its backward pass needs.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// `n × d_v`.
    pub output: Matrix,
    /// Post-softmax weights, `n × n`; padded key columns are exactly zero.
    pub weights: Matrix,
    /// Raw `Q·Kᵀ` before gating.
    pub logits: Matrix,
}

/// `softmax(ReLU(Q Kᵀ) ∘ R̂ / √d) V` with padded keys excluded.
pub fn time_scaled_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    rhat: &Matrix,
    key_padding: &[bool],
    d: usize,
) -> Result<AttentionOutput> {
    let n = q.rows();
    let dk = q.cols();
    let mut logits = Matrix::zeros(n, k.rows());
    gemm_nt(n, dk, k.rows(), q.as_slice(), k.as_slice(), logits.as_mut_slice());
    if logits.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLogits);
    }
    let inv_sqrt_d = 1.0 / sqrt(d as f64);
    let m = k.rows();
    let mut weights = Matrix::zeros(n, m);
    for i in 0..n {
        let row = weights.row_mut(i);
        let mut max = f64::NEG_INFINITY;
        for j in 0..m {
            if !key_padding[j] {
                let a = logits[(i, j)].max(0.0) * rhat[(i, j)] * inv_sqrt_d;
                row[j] = a;
                max = max.max(a);
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(Error::InvalidSequence("every key is padding".into()));
        }
        let mut sum = 0.0;
        for j in 0..m {
            if key_padding[j] {
                row[j] = 0.0;
            } else {
                row[j] = exp(row[j] - max);
                sum += row[j];
            }
        }
        row.iter_mut().for_each(|w| *w /= sum);
    }
    let mut output = Matrix::zeros(n, v.cols());
    gemm_nn(n, m, v.cols(), weights.as_slice(), v.as_slice(), output.as_mut_slice());
    Ok(AttentionOutput {
        output,
        weights,
        logits,
    })
}

pub(super) struct HeadGradients {
    pub dq: Matrix,
    pub dk: Matrix,
    pub dv: Matrix,
    pub drhat: Matrix,
}

pub(super) fn time_scaled_attention_backward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    rhat: &Matrix,
    key_padding: &[bool],
    d: usize,
    fwd: &AttentionOutput,
    d_out: &Matrix,
) -> HeadGradients {
    let n = q.rows();
    let m = k.rows();
    let p = &fwd.weights;
    let mut dp = Matrix::zeros(n, m);
    gemm_nt(n, v.cols(), m, d_out.as_slice(), v.as_slice(), dp.as_mut_slice());
    let mut dv = Matrix::zeros(m, v.cols());
    gemm_tn(n, m, v.cols(), p.as_slice(), d_out.as_slice(), dv.as_mut_slice());

    let inv_sqrt_d = 1.0 / sqrt(d as f64);
    let mut ds = Matrix::zeros(n, m);
    let mut drhat = Matrix::zeros(n, m);
    for i in 0..n {
        let inner: f64 = (0..m).map(|j| p[(i, j)] * dp[(i, j)]).sum();
        for j in 0..m {
            if key_padding[j] {
                continue;
            }
            let da = p[(i, j)] * (dp[(i, j)] - inner);
            let s = fwd.logits[(i, j)];
            let gated = s.max(0.0);
            drhat[(i, j)] = da * gated * inv_sqrt_d;
            if s > 0.0 {
                ds[(i, j)] = da * rhat[(i, j)] * inv_sqrt_d;
            }
        }
    }
    let mut dq = Matrix::zeros(n, q.cols());
    gemm_nn(n, m, k.cols(), ds.as_slice(), k.as_slice(), dq.as_mut_slice());
    let mut dk = Matrix::zeros(m, k.cols());
    gemm_tn(n, m, q.cols(), ds.as_slice(), q.as_slice(), dk.as_mut_slice());
    HeadGradients { dq, dk, dv, drhat }
}

/// `R̂` for head `h` of `block` (all ones in [`TemMode::Unit`]).
pub(super) fn head_rhat(
    times: &RelativeTimeMatrix,
    block: &BlockParams,
    head: usize,
    mode: TemMode,
) -> Matrix {
    match mode {
        TemMode::Learned => times.scaled(block.tem_b(head), block.tem_c(head)),
        TemMode::Unit => {
            let n = times.r.rows();
            Matrix::from_fn(n, times.r.cols(), |_, _| 1.0)
        }
    }
}

pub(super) struct AttentionCache {
    norm: NormCache,
    normed: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    heads: Vec<(Matrix, AttentionOutput)>,
    concat: Matrix,
}

/// `x + Attn(LN(x))`.
pub(super) fn attention_sublayer(
    x: &Matrix,
    times: &RelativeTimeMatrix,
    padding: &[bool],
    block: &BlockParams,
    cfg: &EncoderConfig,
) -> Result<(Matrix, AttentionCache)> {
    let (normed, norm) = layer_norm(x, &block.ln1_gain, &block.ln1_bias, cfg.layer_norm_eps);
    let q = linear(&normed, &block.wq, &block.bq);
    let k = linear(&normed, &block.wk, &block.bk);
    let v = linear(&normed, &block.wv, &block.bv);
    let dh = cfg.head_dim;
    let mut concat = Matrix::zeros(x.rows(), cfg.attention_width());
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let rhat = head_rhat(times, block, h, cfg.tem_mode);
        let out = time_scaled_attention(
            &columns(&q, h * dh, dh),
            &columns(&k, h * dh, dh),
            &columns(&v, h * dh, dh),
            &rhat,
            padding,
            dh,
        )?;
        add_columns(&mut concat, h * dh, &out.output);
        heads.push((rhat, out));
    }
    let mut y = linear(&concat, &block.wo, &block.bo);
    for (yi, xi) in y.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *yi += xi;
    }
    Ok((
        y,
        AttentionCache {
            norm,
            normed,
            q,
            k,
            v,
            heads,
            concat,
        },
    ))
}

pub(super) fn attention_sublayer_backward(
    cache: &AttentionCache,
    dy: &Matrix,
    times: &RelativeTimeMatrix,
    padding: &[bool],
    block: &BlockParams,
    grad: &mut BlockParams,
    cfg: &EncoderConfig,
) -> Matrix {
    let dh = cfg.head_dim;
    let dconcat = linear_backward(&cache.concat, &block.wo, dy, &mut grad.wo, &mut grad.bo);
    let n = dy.rows();
    let width = cfg.attention_width();
    let mut dq = Matrix::zeros(n, width);
    let mut dk = Matrix::zeros(n, width);
    let mut dv = Matrix::zeros(n, width);
    for (h, (rhat, out)) in cache.heads.iter().enumerate() {
        let g = time_scaled_attention_backward(
            &columns(&cache.q, h * dh, dh),
            &columns(&cache.k, h * dh, dh),
            &columns(&cache.v, h * dh, dh),
            rhat,
            padding,
            dh,
            out,
            &columns(&dconcat, h * dh, dh),
        );
        add_columns(&mut dq, h * dh, &g.dq);
        add_columns(&mut dk, h * dh, &g.dk);
        add_columns(&mut dv, h * dh, &g.dv);
        if cfg.tem_mode == TemMode::Learned {
            let (b, c) = (block.tem_b(h), block.tem_c(h));
            let (mut db, mut dc) = (0.0, 0.0);
            for (dr, r) in g.drhat.as_slice().iter().zip(times.r.as_slice()) {
                if *dr != 0.0 {
                    let (pb, pc) = tem_partials(*r, b, c);
                    db += dr * pb;
                    dc += dr * pc;
                }
            }
            grad.tem_b_raw[h] += db * sigmoid(block.tem_b_raw[h]) / TEM_B_UNIT_DAYS;
            grad.tem_c_raw[h] += dc * sigmoid(block.tem_c_raw[h]);
        }
    }
    let mut dnormed = linear_backward(&cache.normed, &block.wq, &dq, &mut grad.wq, &mut grad.bq);
    let from_k = linear_backward(&cache.normed, &block.wk, &dk, &mut grad.wk, &mut grad.bk);
    let from_v = linear_backward(&cache.normed, &block.wv, &dv, &mut grad.wv, &mut grad.bv);
    for ((a, b), c) in dnormed
        .as_mut_slice()
        .iter_mut()
        .zip(from_k.as_slice())
        .zip(from_v.as_slice())
    {
        *a += b + c;
    }
    let mut dx = layer_norm_backward(&cache.norm, &block.ln1_gain, &dnormed, &mut grad.ln1_gain, &mut grad.ln1_bias);
    for (a, b) in dx.as_mut_slice().iter_mut().zip(dy.as_slice()) {
        *a += b;
    }
    dx
}

/// Attention sublayer of one encoder block: pre-norm, per-head time-scaled
/// attention, output projection and residual.
pub fn attention_block(
    h: &Matrix,
    times: &RelativeTimeMatrix,
    padding: &[bool],
    block: &BlockParams,
    cfg: &EncoderConfig,
) -> Result<Matrix> {
    if h.cols() != cfg.model_dim {
        return Err(Error::DimensionMismatch {
            what: "token embeddings",
            expected: cfg.model_dim,
            found: h.cols(),
        });
    }
    if h.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidValue("non-finite token embeddings".into()));
    }
    attention_sublayer(h, times, padding, block, cfg).map(|(y, _)| y)
}
