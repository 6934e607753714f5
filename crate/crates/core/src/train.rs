//! Minibatch SGD with momentum, validation-loss early stopping and
//! cross-validation splits.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::sigmoid;
use crate::param::ParamSet;
use crate::rng::Rng;
use crate::tem::bce_from_logit;
use crate::tem::{EncoderParams, EncoderState, TokenSequence};
use crate::{Error, Result};

/// A binary classifier trained from its logit with cross-entropy.
pub trait Classifier {
    type Input;
    type Params: ParamSet;

    fn params(&self) -> &Self::Params;
    fn params_mut(&mut self) -> &mut Self::Params;
    fn logit(&self, x: &Self::Input) -> Result<f64>;
    /// Adds the loss gradient for one example into `grad`; returns the loss.
    fn accumulate(&self, x: &Self::Input, label: bool, grad: &mut Self::Params) -> Result<f64>;

    fn probability(&self, x: &Self::Input) -> Result<f64> {
        self.logit(x).map(sigmoid)
    }

    fn loss(&self, x: &Self::Input, label: bool) -> Result<f64> {
        self.logit(x).map(|z| bce_from_logit(z, label))
    }
}

impl Classifier for EncoderState {
    type Input = TokenSequence;
    type Params = EncoderParams;

    fn params(&self) -> &EncoderParams {
        EncoderState::params(self)
    }

    fn params_mut(&mut self) -> &mut EncoderParams {
        EncoderState::params_mut(self)
    }

    fn logit(&self, x: &TokenSequence) -> Result<f64> {
        EncoderState::logit(self, x)
    }

    fn accumulate(&self, x: &TokenSequence, label: bool, grad: &mut EncoderParams) -> Result<f64> {
        self.accumulate_gradient(x, label, grad)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_epochs: usize,
    /// Number of validation evaluations averaged by the stopping rule.
    pub early_stop_window: usize,
    pub early_stop_delta: f64,
    /// Optimizer steps between validation evaluations.
    pub val_interval: usize,
    pub seed: u64,
    pub folds: usize,
    /// Share of each training fold held out for validation.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 1e-3,
            momentum: 0.9,
            max_epochs: 100,
            early_stop_window: 100,
            early_stop_delta: 0.2,
            val_interval: 1,
            seed: 0,
            folds: 5,
            validation_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.early_stop_window == 0 {
            return bad("early_stop_window must be at least 1");
        }
        if !(self.early_stop_delta > 0.0) {
            return bad("early_stop_delta must be positive");
        }
        if self.val_interval == 0 {
            return bad("val_interval must be positive");
        }
        if self.folds < 2 {
            return bad("folds must be at least 2");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Watches the validation trace and fires once the mean of the latest
/// `window` values exceeds the smallest earlier window mean by more than
/// `delta`.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    window: usize,
    delta: f64,
    trace: Vec<f64>,
    best_mean: f64,
}

impl EarlyStopper {
    pub fn new(window: usize, delta: f64) -> Self {
        EarlyStopper {
            window,
            delta,
            trace: Vec::new(),
            best_mean: f64::INFINITY,
        }
    }

    /// Records one value; true when training should stop at this index.
    pub fn push(&mut self, value: f64) -> bool {
        self.trace.push(value);
        if self.trace.len() < self.window {
            return false;
        }
        let tail = &self.trace[self.trace.len() - self.window..];
        let mean = tail.iter().sum::<f64>() / self.window as f64;
        let fire = mean - self.best_mean > self.delta;
        if mean < self.best_mean {
            self.best_mean = mean;
        }
        fire
    }

    pub fn trace(&self) -> &[f64] {
        &self.trace
    }
}

/// Index of the first trace entry at which [`EarlyStopper`] fires.
pub fn early_stop_step(trace: &[f64], window: usize, delta: f64) -> Option<usize> {
    let mut stopper = EarlyStopper::new(window, delta);
    trace.iter().position(|&v| stopper.push(v))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<P> {
    /// Parameters at the lowest validation loss seen.
    pub best: P,
    pub best_val_loss: f64,
    /// Optimizer step at which `best` was recorded (0 = initial weights).
    pub best_step: usize,
    pub steps: usize,
    pub epochs: usize,
    pub stopped_early: bool,
    /// Mean minibatch loss per step.
    pub train_trace: Vec<f64>,
    /// Mean validation loss per evaluation.
    pub val_trace: Vec<f64>,
}

pub fn mean_loss<M: Classifier>(model: &M, data: &[(M::Input, bool)]) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in data {
        total += model.loss(x, *y)?;
    }
    Ok(total / data.len() as f64)
}

/// Trains `model` in place and leaves it holding the best-validation
/// parameters.
pub fn train<M: Classifier>(
    model: &mut M,
    train_set: &[(M::Input, bool)],
    val_set: &[(M::Input, bool)],
    config: &TrainConfig,
) -> Result<TrainOutcome<M::Params>> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptySplit("training"));
    }
    if val_set.is_empty() {
        return Err(Error::EmptySplit("validation"));
    }
    let mut rng = Rng::derive(config.seed, 0x7472_6169_6e);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut velocity = model.params().zeros_like();
    let mut grad = model.params().zeros_like();
    let mut stopper = EarlyStopper::new(config.early_stop_window, config.early_stop_delta);
    let mut best = model.params().clone();
    let mut best_val_loss = mean_loss(model, val_set)?;
    let mut best_step = 0;
    let mut train_trace = Vec::new();
    let mut steps = 0;
    let mut epochs = 0;
    let mut stopped_early = false;

    'epochs: for _ in 0..config.max_epochs {
        epochs += 1;
        rng.shuffle(&mut order);
        for batch in order.chunks(config.batch_size) {
            grad.scale(0.0);
            let mut batch_loss = 0.0;
            for &i in batch {
                let (x, y) = &train_set[i];
                batch_loss += model.accumulate(x, *y, &mut grad)?;
            }
            let inv = 1.0 / batch.len() as f64;
            velocity.scale(config.momentum);
            velocity.add_scaled(inv, &grad);
            model.params_mut().add_scaled(-config.learning_rate, &velocity);
            if !model.params().all_finite() {
                return Err(Error::Numerical("parameters became non-finite".into()));
            }
            steps += 1;
            train_trace.push(batch_loss * inv);

            if steps % config.val_interval == 0 {
                let val = mean_loss(model, val_set)?;
                if val < best_val_loss {
                    best_val_loss = val;
                    best = model.params().clone();
                    best_step = steps;
                }
                if stopper.push(val) {
                    stopped_early = true;
                    break 'epochs;
                }
            }
        }
    }

    *model.params_mut() = best.clone();
    Ok(TrainOutcome {
        best,
        best_val_loss,
        best_step,
        steps,
        epochs,
        stopped_early,
        train_trace,
        val_trace: stopper.trace().to_vec(),
    })
}

/// Fold index per subject. Cases and controls are dealt round-robin after
/// separate shuffles so every fold gets a similar class balance.
pub fn stratified_folds(labels: &[bool], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds == 0 || labels.len() < folds {
        return Err(Error::InvalidConfig(alloc::format!(
            "cannot split {} subjects into {folds} folds",
            labels.len()
        )));
    }
    let mut rng = Rng::derive(seed, 0x666f_6c64);
    let mut assignment = vec![0; labels.len()];
    let mut next = 0;
    for class in [true, false] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        rng.shuffle(&mut members);
        for i in members {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    Ok(assignment)
}

/// Splits `indices` into (train, validation), holding out
/// `max(1, round(fraction · n))` entries chosen by `seed`.
pub fn split_validation(indices: &[usize], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if indices.len() < 2 {
        return Err(Error::EmptySplit("training"));
    }
    let mut shuffled = indices.to_vec();
    Rng::derive(seed, 0x76616c).shuffle(&mut shuffled);
    let held = (libm::round(fraction * indices.len() as f64) as usize).clamp(1, indices.len() - 1);
    let val = shuffled.split_off(indices.len() - held);
    shuffled.sort_unstable();
    let mut val = val;
    val.sort_unstable();
    Ok((shuffled, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::String;
    use proptest::prelude::*;
    use crate::rng::Rng;

    fn scan(trace: &[f64], window: usize, delta: f64) -> Option<usize> {
        let mut means: Vec<f64> = Vec::new();
        for t in 0..trace.len() {
            if t + 1 < window {
                continue;
            }
            let mut sum = 0.0;
            for v in &trace[t + 1 - window..=t] {
                sum += v;
            }
            let mean = sum / window as f64;
            if means.iter().any(|&m| mean - m > delta) {
                return Some(t);
            }
            means.push(mean);
        }
        None
    }

    #[test]
    fn crafted_trace_stops_when_mean_passes_point_seven() {
        let mut trace = vec![0.5; 200];
        trace.extend(vec![0.9; 200]);
        let step = early_stop_step(&trace, 100, 0.2).unwrap();
        assert_eq!(Some(step), scan(&trace, 100, 0.2));
        let mean: f64 = trace[step - 99..=step].iter().sum::<f64>() / 100.0;
        assert!(mean > 0.7);
        let prev: f64 = trace[step - 100..step].iter().sum::<f64>() / 100.0;
        assert!(prev - 0.5 <= 0.2);
    }

    #[test]
    fn flat_or_short_traces_never_stop() {
        assert_eq!(early_stop_step(&[0.3; 500], 100, 0.2), None);
        assert_eq!(early_stop_step(&[0.1, 5.0, 9.0], 100, 0.2), None);
    }

    /// Logistic regression on a fixed feature vector.
    #[derive(Clone, Debug, PartialEq)]
    struct Weights(Vec<f64>);

    impl ParamSet for Weights {
        fn zeros_like(&self) -> Self {
            Weights(vec![0.0; self.0.len()])
        }
        fn tensors(&self) -> Vec<(String, &[f64])> {
            vec![(String::from("w"), &self.0)]
        }
        fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    struct Logistic(Weights);

    impl Classifier for Logistic {
        type Input = Vec<f64>;
        type Params = Weights;
        fn params(&self) -> &Weights {
            &self.0
        }
        fn params_mut(&mut self) -> &mut Weights {
            &mut self.0
        }
        fn logit(&self, x: &Vec<f64>) -> Result<f64> {
            Ok(crate::linalg::dot(&self.0 .0, x))
        }
        fn accumulate(&self, x: &Vec<f64>, label: bool, grad: &mut Weights) -> Result<f64> {
            let z = self.logit(x)?;
            let y = if label { 1.0 } else { 0.0 };
            crate::linalg::axpy(sigmoid(z) - y, x, &mut grad.0);
            Ok(bce_from_logit(z, label))
        }
    }

    fn toy(n: usize, seed: u64) -> Vec<(Vec<f64>, bool)> {
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|_| {
                let x = rng.normal();
                let y = rng.uniform() < sigmoid(3.0 * x);
                (vec![1.0, x], y)
            })
            .collect()
    }

    #[test]
    fn training_reduces_validation_loss() {
        let (tr, va) = (toy(200, 1), toy(60, 2));
        let mut model = Logistic(Weights(vec![0.0, 0.0]));
        let start = mean_loss(&model, &va).unwrap();
        let cfg = TrainConfig { learning_rate: 0.05, max_epochs: 20, ..TrainConfig::default() };
        let out = train(&mut model, &tr, &va, &cfg).unwrap();
        assert!(out.best_val_loss < start - 0.1);
        assert_eq!(model.params(), &out.best);
        assert_eq!(out.val_trace.len(), out.steps);
        assert!(model.params().0[1] > 1.0);
        let again = {
            let mut m = Logistic(Weights(vec![0.0, 0.0]));
            train(&mut m, &tr, &va, &cfg).unwrap()
        };
        assert_eq!(again.best, out.best);
    }

    #[test]
    fn empty_splits_are_rejected() {
        let mut model = Logistic(Weights(vec![0.0, 0.0]));
        let data = toy(4, 0);
        let cfg = TrainConfig::default();
        assert_eq!(train(&mut model, &[], &data, &cfg).unwrap_err(), Error::EmptySplit("training"));
        assert_eq!(train(&mut model, &data, &[], &cfg).unwrap_err(), Error::EmptySplit("validation"));
    }

    #[test]
    fn validation_split_is_disjoint() {
        let idx: Vec<usize> = (10..60).collect();
        let (tr, va) = split_validation(&idx, 0.2, 4).unwrap();
        assert_eq!(va.len(), 10);
        assert_eq!(tr.len(), 40);
        assert!(va.iter().all(|v| !tr.contains(v)));
    }

    proptest! {
        #[test]
        fn stopping_matches_trace_scan(
            seed in 0u64..10_000,
            len in 1usize..400,
            window in 1usize..60,
            delta in 0.01f64..0.5,
        ) {
            let mut rng = Rng::new(seed);
            let mut level = 0.5;
            let trace: Vec<f64> = (0..len)
                .map(|_| {
                    level += 0.02 * rng.normal();
                    level + 0.1 * rng.uniform()
                })
                .collect();
            prop_assert_eq!(early_stop_step(&trace, window, delta), scan(&trace, window, delta));
        }

        #[test]
        fn folds_partition_subjects(labels in prop::collection::vec(any::<bool>(), 5..200), k in 2usize..6, seed in 0u64..1000) {
            let folds = stratified_folds(&labels, k, seed).unwrap();
            prop_assert_eq!(folds.len(), labels.len());
            prop_assert!(folds.iter().all(|&f| f < k));
            prop_assert_eq!(&folds, &stratified_folds(&labels, k, seed).unwrap());
            for f in 0..k {
                let n = folds.iter().filter(|&&x| x == f).count();
                prop_assert!(n >= labels.len() / k && n <= labels.len() / k + 1);
            }
        }
    }
}
