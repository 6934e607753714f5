//! Central finite-difference verification of analytic gradients.
//!
//! Small tensors are checked entry by entry. Large tensors are checked on a
//! seeded sample of entries (always including the entry with the largest
//! analytic gradient) plus one random-sign directional derivative that
//! touches every entry at once.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::Result;
use crate::math::fabs;
use crate::param::ParamSet;
use crate::rng::Rng;

use super::{EncoderConfig, EncoderState, TokenSequence};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Tensors up to this size are checked exhaustively.
    pub exhaustive_up_to: usize,
    /// Sampled entries for larger tensors.
    pub samples_per_tensor: usize,
    /// Denominator floor of the relative error, absorbing finite-difference
    /// round-off for near-zero gradients.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            exhaustive_up_to: 8,
            samples_per_tensor: 12,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub size: usize,
    pub entries_checked: usize,
    pub max_entry_error: f64,
    pub directional_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_entry_error.max(t.directional_error))
            .fold(0.0, f64::max)
    }

    pub fn entries_checked(&self) -> usize {
        self.tensors.iter().map(|t| t.entries_checked).sum()
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    fabs(analytic - numeric) / fabs(analytic).max(fabs(numeric)).max(floor)
}

/// Compares `analytic` against central differences of `loss` around `params`.
pub fn check_gradients<P, F>(
    params: &P,
    analytic: &P,
    mut loss: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    P: ParamSet,
    F: FnMut(&P) -> Result<f64>,
{
    let mut rng = Rng::new(cfg.seed);
    let grads: Vec<Vec<f64>> = analytic.tensors().into_iter().map(|(_, t)| t.to_vec()).collect();
    let names: Vec<(String, usize)> = params
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.len()))
        .collect();
    let mut work = params.clone();
    let mut tensors = Vec::with_capacity(names.len());
    for (ti, (name, size)) in names.into_iter().enumerate() {
        let g = &grads[ti];
        let entries = pick_entries(g, cfg, &mut rng);
        let mut max_entry_error: f64 = 0.0;
        for &idx in &entries {
            let numeric = central_difference(&mut work, &mut loss, cfg.step, |t, s| {
                t[ti][idx] += s;
            })?;
            max_entry_error = max_entry_error.max(relative_error(g[idx], numeric, cfg.floor));
        }
        let direction: Vec<f64> = (0..size)
            .map(|_| if rng.below(2) == 0 { -1.0 } else { 1.0 })
            .collect();
        let along: f64 = g.iter().zip(&direction).map(|(a, b)| a * b).sum();
        let numeric = central_difference(&mut work, &mut loss, cfg.step, |t, s| {
            t[ti].iter_mut().zip(&direction).for_each(|(v, d)| *v += s * d);
        })?;
        tensors.push(TensorCheck {
            name,
            size,
            entries_checked: entries.len(),
            max_entry_error,
            directional_error: relative_error(along, numeric, cfg.floor),
        });
    }
    Ok(GradCheckReport { tensors })
}

/// Checks every parameter gradient of `state` on one labelled sequence.
pub fn check_encoder(
    state: &EncoderState,
    seq: &TokenSequence,
    label: bool,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let analytic = state.backward(seq, label)?.params;
    let mut work = state.clone();
    check_gradients(
        state.params(),
        &analytic,
        |p| {
            work.params_mut().clone_from(p);
            work.loss(seq, label)
        },
        cfg,
    )
}

/// A full `2T + 1` sequence with Gaussian payloads and scans spread over
/// several years, for gradient checks.
pub fn probe_sequence(config: &EncoderConfig, seed: u64) -> Result<TokenSequence> {
    let mut rng = Rng::new(seed);
    let mut day = 0;
    let mut context = Vec::with_capacity(config.max_scans);
    let mut images = Vec::with_capacity(config.max_scans);
    for _ in 0..config.max_scans {
        day += rng.int_inclusive(90, 720);
        context.push((day, rng.normal_vec(config.context_dim, 1.0)));
        images.push((day, rng.normal_vec(config.image_dim, 1.0)));
    }
    TokenSequence::from_observations("probe", config.max_scans, context, images, Some(true))
}

fn pick_entries(g: &[f64], cfg: &GradCheckConfig, rng: &mut Rng) -> Vec<usize> {
    if g.len() <= cfg.exhaustive_up_to {
        return (0..g.len()).collect();
    }
    let largest = (0..g.len())
        .max_by(|&a, &b| fabs(g[a]).total_cmp(&fabs(g[b])))
        .unwrap_or(0);
    let mut picked = alloc::vec![largest];
    while picked.len() < cfg.samples_per_tensor.min(g.len()) {
        let idx = rng.below(g.len() as u64) as usize;
        if !picked.contains(&idx) {
            picked.push(idx);
        }
    }
    picked
}

/// Perturbs the working copy in place by `+step` and `−step` and restores it
/// bit-exactly from the original values.
fn central_difference<P, F>(
    work: &mut P,
    loss: &mut F,
    step: f64,
    perturb: impl Fn(&mut [&mut [f64]], f64),
) -> Result<f64>
where
    P: ParamSet,
    F: FnMut(&P) -> Result<f64>,
{
    let saved: Vec<Vec<f64>> = work.tensors().into_iter().map(|(_, t)| t.to_vec()).collect();
    let restore = |work: &mut P| {
        for (dst, src) in work.tensors_mut().into_iter().zip(&saved) {
            dst.copy_from_slice(src);
        }
    };
    perturb(&mut work.tensors_mut(), step);
    let plus = loss(work);
    restore(work);
    perturb(&mut work.tensors_mut(), -step);
    let minus = loss(work);
    restore(work);
    Ok((plus? - minus?) / (2.0 * step))
}
