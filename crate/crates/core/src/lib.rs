//! Numerical core for longitudinal multimodal nodule classification.
//!
//! Everything in this crate is `no_std` + `alloc`: event streams become daily
//! curves ([`curve`]), curves are decomposed into independent signatures
//! ([`ica`]), and signature/image token sequences are classified by an
//! encoder whose attention logits are scaled by a learnable temporal emphasis
//! model ([`tem`]). [`synth`] plants ground truth for verification and
//! [`eval`] / [`train`] / [`ablation`] hold the training and evaluation
//! protocol. File formats, configuration and the CLI live in the `longsig`
//! companion crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod ablation;
pub mod curve;
pub mod error;
pub mod eval;
pub mod ica;
pub mod linalg;
pub mod math;
pub mod mlp;
pub mod param;
pub mod rng;
pub mod synth;
pub mod tem;
pub mod tfidf;
pub mod train;

pub use error::{Error, Result};
