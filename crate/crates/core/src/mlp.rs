//! One-hidden-layer perceptron on a single feature vector.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{axpy, dot, Matrix};
use crate::math::{gelu, gelu_grad, sqrt};
use crate::param::ParamSet;
use crate::rng::Rng;
use crate::tem::bce_from_logit;
use crate::train::Classifier;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    /// `input × hidden`.
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ParamSet for MlpParams {
    fn zeros_like(&self) -> Self {
        MlpParams {
            w1: Matrix::zeros(self.w1.rows(), self.w1.cols()),
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; 1],
        }
    }

    fn tensors(&self) -> Vec<(String, &[f64])> {
        vec![
            ("w1".into(), self.w1.as_slice()),
            ("b1".into(), &self.b1),
            ("w2".into(), &self.w2),
            ("b2".into(), &self.b2),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w1.as_mut_slice(), &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpClassifier {
    params: MlpParams,
}

impl MlpClassifier {
    pub fn new(input: usize, hidden: usize, seed: u64) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(Error::InvalidConfig("MLP dimensions must be positive".into()));
        }
        let mut rng = Rng::derive(seed, 0x6d6c70);
        let s1 = 1.0 / sqrt(input as f64);
        let s2 = 1.0 / sqrt(hidden as f64);
        Ok(MlpClassifier {
            params: MlpParams {
                w1: Matrix::from_fn(input, hidden, |_, _| s1 * rng.normal()),
                b1: vec![0.0; hidden],
                w2: rng.normal_vec(hidden, s2),
                b2: vec![0.0],
            },
        })
    }

    pub fn from_params(params: MlpParams) -> Result<Self> {
        let (i, h) = (params.w1.rows(), params.w1.cols());
        if params.b1.len() != h || params.w2.len() != h || params.b2.len() != 1 || i == 0 {
            return Err(Error::InvalidConfig("inconsistent MLP parameter shapes".into()));
        }
        Ok(MlpClassifier { params })
    }

    pub fn input_dim(&self) -> usize {
        self.params.w1.rows()
    }

    fn hidden(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "MLP input",
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        let mut h = self.params.b1.clone();
        for (r, &v) in x.iter().enumerate() {
            axpy(v, self.params.w1.row(r), &mut h);
        }
        Ok(h)
    }
}

impl Classifier for MlpClassifier {
    type Input = Vec<f64>;
    type Params = MlpParams;

    fn params(&self) -> &MlpParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut MlpParams {
        &mut self.params
    }

    fn logit(&self, x: &Vec<f64>) -> Result<f64> {
        let h = self.hidden(x)?;
        let a: Vec<f64> = h.iter().map(|&v| gelu(v)).collect();
        Ok(dot(&a, &self.params.w2) + self.params.b2[0])
    }

    fn accumulate(&self, x: &Vec<f64>, label: bool, grad: &mut MlpParams) -> Result<f64> {
        let h = self.hidden(x)?;
        let a: Vec<f64> = h.iter().map(|&v| gelu(v)).collect();
        let z = dot(&a, &self.params.w2) + self.params.b2[0];
        let dz = crate::math::sigmoid(z) - if label { 1.0 } else { 0.0 };
        axpy(dz, &a, &mut grad.w2);
        grad.b2[0] += dz;
        let dh: Vec<f64> = h
            .iter()
            .zip(&self.params.w2)
            .map(|(&hv, &w)| dz * w * gelu_grad(hv))
            .collect();
        axpy(1.0, &dh, &mut grad.b1);
        for (r, &v) in x.iter().enumerate() {
            axpy(v, &dh, grad.w1.row_mut(r));
        }
        Ok(bce_from_logit(z, label))
    }
}
