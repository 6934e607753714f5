//! Longitudinal multimodal encoder with time-distance scaled self-attention.
//!
//! Per head `p`, attention weights are
//! `softmax(ReLU(Q_p K_pᵀ) ∘ R̂_p / √d)` with `R̂_p = TEM_p(R)` and
//! `TEM(r) = 1 / (1 + exp(b·r − c))`. Each head in each block owns its own
//! non-negative `(b, c)`, stored through a softplus reparameterization.
//! Padded keys are set to `−∞` after gating and scaling, right before the
//! softmax, so they receive exactly zero weight.

mod attention;
mod config;
mod encoder;
mod layers;
pub mod gradcheck;
mod params;
mod sequence;

pub use attention::{attention_block, time_scaled_attention, AttentionOutput};
pub use config::{EncoderConfig, Pooling, TemMode};
pub use encoder::{bce_from_logit, EncoderGradients, EncoderState};
pub use params::{BlockParams, EncoderParams, TEM_B_UNIT_DAYS};
pub use sequence::{
    build_relative_times, Modality, RelativeTime, RelativeTimeMatrix, Token, TokenSequence,
};

use crate::math::exp;

/// Exponent clamp guarding `exp` overflow.
pub const TEM_EXPONENT_LIMIT: f64 = 500.0;

/// Temporal emphasis: a flipped sigmoid, decreasing in `r` for `b > 0`.
#[inline]
pub fn tem(r: f64, b: f64, c: f64) -> f64 {
    let z = (b * r - c).clamp(-TEM_EXPONENT_LIMIT, TEM_EXPONENT_LIMIT);
    1.0 / (1.0 + exp(z))
}

/// `(∂TEM/∂b, ∂TEM/∂c)`; zero where the exponent is clamped.
#[inline]
pub(crate) fn tem_partials(r: f64, b: f64, c: f64) -> (f64, f64) {
    let z = b * r - c;
    if !(-TEM_EXPONENT_LIMIT..=TEM_EXPONENT_LIMIT).contains(&z) {
        return (0.0, 0.0);
    }
    let t = tem(r, b, c);
    let s = t * (1.0 - t);
    (-s * r, s)
}
