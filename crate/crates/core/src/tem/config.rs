use crate::error::{Error, Result};

use super::RelativeTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemMode {
    /// Learnable per-head `(b, c)`.
    Learned,
    /// `R̂ ≡ 1`: attention without temporal scaling (ablation).
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    /// Classifier reads the cls token.
    Cls,
    /// Classifier reads the mean over real, non-cls tokens.
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    /// Width of non-imaging payloads (signature count, or code vocabulary).
    pub context_dim: usize,
    pub image_dim: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub mlp_dim: usize,
    pub blocks: usize,
    /// `T`; sequences hold `2T + 1` tokens.
    pub max_scans: usize,
    /// Initial `b` in 1/days.
    pub tem_init_b: f64,
    pub tem_init_c: f64,
    pub tem_mode: TemMode,
    pub relative_time: RelativeTime,
    pub pooling: Pooling,
    pub layer_norm_eps: f64,
    pub init_seed: u64,
}

impl EncoderConfig {
    /// 4 heads × 64, 4 blocks, token width 320, MLP width 124, `T = 3`.
    pub fn new(context_dim: usize, image_dim: usize) -> Self {
        Self {
            context_dim,
            image_dim,
            model_dim: 320,
            heads: 4,
            head_dim: 64,
            mlp_dim: 124,
            blocks: 4,
            max_scans: 3,
            tem_init_b: 1.0 / 365.0,
            tem_init_c: 1.0,
            tem_mode: TemMode::Learned,
            relative_time: RelativeTime::LastObservation,
            pooling: Pooling::Cls,
            layer_norm_eps: 1e-5,
            init_seed: 0,
        }
    }

    pub fn sequence_len(&self) -> usize {
        2 * self.max_scans + 1
    }

    pub fn attention_width(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("context_dim", self.context_dim),
            ("image_dim", self.image_dim),
            ("model_dim", self.model_dim),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("mlp_dim", self.mlp_dim),
            ("max_scans", self.max_scans),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(alloc::format!("{name} must be positive")));
        }
        if !(self.tem_init_b > 0.0 && self.tem_init_c > 0.0) {
            return Err(Error::InvalidConfig("TEM initial b and c must be positive".into()));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::InvalidConfig("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }
}
