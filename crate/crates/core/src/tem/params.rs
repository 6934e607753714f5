use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::math::{softplus, softplus_inv, sqrt};

/// Time unit of the stored `b` parameter. Keeping the raw value near 1
/// gives it gradients comparable to the other weights.
pub const TEM_B_UNIT_DAYS: f64 = 365.0;
use crate::param::ParamSet;
use crate::rng::Rng;

use super::EncoderConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    /// `model_dim × heads·head_dim`.
    pub wq: Matrix,
    pub bq: Vec<f64>,
    pub wk: Matrix,
    pub bk: Vec<f64>,
    pub wv: Matrix,
    pub bv: Vec<f64>,
    /// `heads·head_dim × model_dim`.
    pub wo: Matrix,
    pub bo: Vec<f64>,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    /// Unconstrained; `b = softplus(raw) / TEM_B_UNIT_DAYS`, so the raw value
    /// lives on a per-year scale.
    pub tem_b_raw: Vec<f64>,
    /// Unconstrained; `c = softplus(raw)`.
    pub tem_c_raw: Vec<f64>,
}

impl BlockParams {
    pub fn tem_b(&self, head: usize) -> f64 {
        softplus(self.tem_b_raw[head]) / TEM_B_UNIT_DAYS
    }

    pub fn tem_c(&self, head: usize) -> f64 {
        softplus(self.tem_c_raw[head])
    }

    fn init(cfg: &EncoderConfig, rng: &mut Rng) -> Self {
        let d = cfg.model_dim;
        let a = cfg.attention_width();
        let m = cfg.mlp_dim;
        Self {
            ln1_gain: vec![1.0; d],
            ln1_bias: vec![0.0; d],
            wq: dense(d, a, rng),
            bq: vec![0.0; a],
            wk: dense(d, a, rng),
            bk: vec![0.0; a],
            wv: dense(d, a, rng),
            bv: vec![0.0; a],
            wo: dense(a, d, rng),
            bo: vec![0.0; d],
            ln2_gain: vec![1.0; d],
            ln2_bias: vec![0.0; d],
            w1: dense(d, m, rng),
            b1: vec![0.0; m],
            w2: dense(m, d, rng),
            b2: vec![0.0; d],
            tem_b_raw: vec![softplus_inv(cfg.tem_init_b * TEM_B_UNIT_DAYS); cfg.heads],
            tem_c_raw: vec![softplus_inv(cfg.tem_init_c); cfg.heads],
        }
    }
}

/// Every trainable tensor of the encoder. The positional table and the
/// padding embedding are fixed and live outside this struct.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub context_proj: Matrix,
    pub context_bias: Vec<f64>,
    pub image_proj: Matrix,
    pub image_bias: Vec<f64>,
    /// Rows: signature, image, cls.
    pub segment: Matrix,
    pub blocks: Vec<BlockParams>,
    pub final_gain: Vec<f64>,
    pub final_bias: Vec<f64>,
    pub head_weight: Vec<f64>,
    pub head_bias: Vec<f64>,
}

/// Gaussian init with standard deviation `1/√fan_in`.
fn dense(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Matrix {
    let s = 1.0 / sqrt(fan_in as f64);
    Matrix::from_fn(fan_in, fan_out, |_, _| s * rng.normal())
}

impl EncoderParams {
    pub fn init(cfg: &EncoderConfig) -> Self {
        let mut rng = Rng::new(cfg.init_seed);
        let d = cfg.model_dim;
        let context_proj = dense(cfg.context_dim, d, &mut rng);
        let image_proj = dense(cfg.image_dim, d, &mut rng);
        let segment = Matrix::from_fn(3, d, |_, _| 0.02 * rng.normal());
        let blocks = (0..cfg.blocks).map(|_| BlockParams::init(cfg, &mut rng)).collect();
        let head_weight = rng.normal_vec(d, 1.0 / sqrt(d as f64));
        Self {
            context_proj,
            context_bias: vec![0.0; d],
            image_proj,
            image_bias: vec![0.0; d],
            segment,
            blocks,
            final_gain: vec![1.0; d],
            final_bias: vec![0.0; d],
            head_weight,
            head_bias: vec![0.0],
        }
    }
}

impl ParamSet for EncoderParams {
    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("context_proj".into(), self.context_proj.as_slice()),
            ("context_bias".into(), &self.context_bias),
            ("image_proj".into(), self.image_proj.as_slice()),
            ("image_bias".into(), &self.image_bias),
            ("segment".into(), self.segment.as_slice()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            let named: [(&str, &[f64]); 18] = [
                ("ln1_gain", &b.ln1_gain),
                ("ln1_bias", &b.ln1_bias),
                ("wq", b.wq.as_slice()),
                ("bq", &b.bq),
                ("wk", b.wk.as_slice()),
                ("bk", &b.bk),
                ("wv", b.wv.as_slice()),
                ("bv", &b.bv),
                ("wo", b.wo.as_slice()),
                ("bo", &b.bo),
                ("ln2_gain", &b.ln2_gain),
                ("ln2_bias", &b.ln2_bias),
                ("w1", b.w1.as_slice()),
                ("b1", &b.b1),
                ("w2", b.w2.as_slice()),
                ("b2", &b.b2),
                ("tem_b_raw", &b.tem_b_raw),
                ("tem_c_raw", &b.tem_c_raw),
            ];
            out.extend(named.into_iter().map(|(n, t)| (format!("block{i}.{n}"), t)));
        }
        out.push(("final_gain".into(), &self.final_gain));
        out.push(("final_bias".into(), &self.final_bias));
        out.push(("head_weight".into(), &self.head_weight));
        out.push(("head_bias".into(), &self.head_bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.context_proj.as_mut_slice(),
            &mut self.context_bias,
            self.image_proj.as_mut_slice(),
            &mut self.image_bias,
            self.segment.as_mut_slice(),
        ];
        for b in self.blocks.iter_mut() {
            out.extend([
                &mut b.ln1_gain[..],
                &mut b.ln1_bias,
                b.wq.as_mut_slice(),
                &mut b.bq,
                b.wk.as_mut_slice(),
                &mut b.bk,
                b.wv.as_mut_slice(),
                &mut b.bv,
                b.wo.as_mut_slice(),
                &mut b.bo,
                &mut b.ln2_gain,
                &mut b.ln2_bias,
                b.w1.as_mut_slice(),
                &mut b.b1,
                b.w2.as_mut_slice(),
                &mut b.b2,
                &mut b.tem_b_raw,
                &mut b.tem_c_raw,
            ]);
        }
        out.push(&mut self.final_gain);
        out.push(&mut self.final_bias);
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }
}
