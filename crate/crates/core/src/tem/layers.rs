//! Dense and layer-norm kernels over `n × width` token matrices.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{axpy, gemm_nn, gemm_nt, gemm_tn, Matrix};
use crate::math::sqrt;

/// `x·W + b`.
pub(super) fn linear(x: &Matrix, w: &Matrix, b: &[f64]) -> Matrix {
    let mut y = Matrix::from_fn(x.rows(), w.cols(), |_, j| b[j]);
    gemm_nn(x.rows(), x.cols(), w.cols(), x.as_slice(), w.as_slice(), y.as_mut_slice());
    y
}

/// Accumulates `dW += xᵀ·dy`, `db += Σ dy` and returns `dx = dy·Wᵀ`.
pub(super) fn linear_backward(
    x: &Matrix,
    w: &Matrix,
    dy: &Matrix,
    dw: &mut Matrix,
    db: &mut [f64],
) -> Matrix {
    let (n, din, dout) = (x.rows(), w.rows(), w.cols());
    gemm_tn(n, din, dout, x.as_slice(), dy.as_slice(), dw.as_mut_slice());
    for i in 0..n {
        axpy(1.0, dy.row(i), db);
    }
    let mut dx = Matrix::zeros(n, din);
    gemm_nt(n, dout, din, dy.as_slice(), w.as_slice(), dx.as_mut_slice());
    dx
}

#[derive(Debug, Clone)]
pub(super) struct NormCache {
    pub xhat: Matrix,
    pub inv_std: Vec<f64>,
}

pub(super) fn layer_norm(x: &Matrix, gain: &[f64], bias: &[f64], eps: f64) -> (Matrix, NormCache) {
    let (n, d) = (x.rows(), x.cols());
    let mut xhat = Matrix::zeros(n, d);
    let mut inv_std = vec![0.0; n];
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / sqrt(var + eps);
        inv_std[i] = is;
        for (o, v) in xhat.row_mut(i).iter_mut().zip(row) {
            *o = (v - mean) * is;
        }
    }
    let y = Matrix::from_fn(n, d, |i, j| xhat[(i, j)] * gain[j] + bias[j]);
    (y, NormCache { xhat, inv_std })
}

pub(super) fn layer_norm_backward(
    cache: &NormCache,
    gain: &[f64],
    dy: &Matrix,
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Matrix {
    let (n, d) = (dy.rows(), dy.cols());
    let mut dx = Matrix::zeros(n, d);
    for i in 0..n {
        let xh = cache.xhat.row(i);
        let g = dy.row(i);
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for j in 0..d {
            dgain[j] += g[j] * xh[j];
            dbias[j] += g[j];
            let dxh = g[j] * gain[j];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh[j];
        }
        let scale = cache.inv_std[i] / d as f64;
        for (j, out) in dx.row_mut(i).iter_mut().enumerate() {
            let dxh = g[j] * gain[j];
            *out = scale * (d as f64 * dxh - sum_dxhat - xh[j] * sum_dxhat_xhat);
        }
    }
    dx
}

/// Columns `[start, start + width)` of `x`.
pub(super) fn columns(x: &Matrix, start: usize, width: usize) -> Matrix {
    Matrix::from_fn(x.rows(), width, |i, j| x[(i, start + j)])
}

pub(super) fn add_columns(dst: &mut Matrix, start: usize, src: &Matrix) {
    for i in 0..src.rows() {
        for j in 0..src.cols() {
            dst[(i, start + j)] += src[(i, j)];
        }
    }
}
