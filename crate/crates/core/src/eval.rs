//! Classification metrics: rank AUC, bootstrap intervals, the paired
//! Wilcoxon signed-rank test and risk-tier reclassification.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::{normal_sf, percentile_sorted, sqrt};
use crate::rng::Rng;
use crate::{Error, Result};

pub const LOW_RISK_BELOW: f64 = 0.05;
pub const HIGH_RISK_FROM: f64 = 0.65;
pub const BOOTSTRAP_SAMPLES: usize = 1000;
/// Largest sample size for which the Wilcoxon p-value is computed exactly.
pub const WILCOXON_EXACT_MAX: usize = 20;
pub const WILCOXON_MIN_PAIRS: usize = 5;

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l).count();
    (pos, labels.len() - pos)
}

/// Ranks starting at 1, tied values sharing their mean rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

/// Area under the ROC curve as the normalized Mann-Whitney statistic.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Misaligned(alloc::format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapCi {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    /// AUC of every resample, in draw order.
    pub samples: Vec<f64>,
}

/// Resample index sets for the bootstrap. Draws lacking either class are
/// redrawn, so the sets depend only on the labels and the seed: two models
/// scored on the same subjects get paired resamples.
pub fn bootstrap_indices(labels: &[bool], n: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let m = labels.len();
    let mut rng = Rng::new(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let idx: Vec<usize> = (0..m).map(|_| rng.below(m as u64) as usize).collect();
        let first = labels[idx[0]];
        if idx.iter().any(|&i| labels[i] != first) {
            out.push(idx);
        }
    }
    Ok(out)
}

pub fn bootstrap_over(scores: &[f64], labels: &[bool], indices: &[Vec<usize>]) -> Result<BootstrapCi> {
    let mut samples = Vec::with_capacity(indices.len());
    let mut s = Vec::with_capacity(labels.len());
    let mut l = Vec::with_capacity(labels.len());
    for idx in indices {
        s.clear();
        l.clear();
        s.extend(idx.iter().map(|&i| scores[i]));
        l.extend(idx.iter().map(|&i| labels[i]));
        samples.push(auc(&s, &l)?);
    }
    if samples.is_empty() {
        return Err(Error::InvalidConfig("bootstrap needs at least one resample".into()));
    }
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(BootstrapCi {
        mean: samples.iter().sum::<f64>() / samples.len() as f64,
        lo: percentile_sorted(&sorted, 0.025),
        hi: percentile_sorted(&sorted, 0.975),
        samples,
    })
}

/// Mean AUC and 95% percentile interval over `n` bootstrap resamples.
pub fn bootstrap_ci(scores: &[f64], labels: &[bool], n: usize, seed: u64) -> Result<BootstrapCi> {
    auc(scores, labels)?;
    bootstrap_over(scores, labels, &bootstrap_indices(labels, n, seed)?)
}

/// Two-sided Wilcoxon signed-rank p-value for paired samples. Zero
/// differences are dropped; ties share midranks.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Misaligned(alloc::format!("{} vs {} paired values", a.len(), b.len())));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Ok(1.0);
    }
    let n = diffs.len();
    if n < WILCOXON_MIN_PAIRS {
        return Err(Error::TooFewPairs { needed: WILCOXON_MIN_PAIRS, found: n });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = midranks(&abs);
    let w_plus: f64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();

    if n <= WILCOXON_EXACT_MAX {
        // Midranks are multiples of 1/2, so doubled ranks are integers and
        // the null distribution of the doubled statistic fits a count table.
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r) as usize).collect();
        let total: usize = doubled.iter().sum();
        let mut counts = vec![0.0f64; total + 1];
        counts[0] = 1.0;
        for &r in &doubled {
            for s in (r..=total).rev() {
                counts[s] += counts[s - r];
            }
        }
        let w = (2.0 * w_plus) as usize;
        let all = libm::pow(2.0, n as f64);
        let lower: f64 = counts[..=w].iter().sum::<f64>() / all;
        let upper: f64 = counts[w..].iter().sum::<f64>() / all;
        return Ok((2.0 * lower.min(upper)).min(1.0));
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0;
    let mut sorted = abs;
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        var -= (t * t * t - t) / 48.0;
        i = j;
    }
    if var <= 0.0 {
        return Ok(1.0);
    }
    let z = (w_plus - mean) / sqrt(var);
    Ok((2.0 * normal_sf(z.abs())).min(1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RiskTier {
    Low,
    Medium,
    High,
}

impl RiskTier {
    pub fn of(probability: f64) -> Self {
        if probability < LOW_RISK_BELOW {
            RiskTier::Low
        } else if probability < HIGH_RISK_FROM {
            RiskTier::Medium
        } else {
            RiskTier::High
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RiskTier::Low => "low",
            RiskTier::Medium => "medium",
            RiskTier::High => "high",
        }
    }
}

/// Tier transitions from a baseline model to a candidate, split by class.
/// Rows index the baseline tier, columns the candidate tier.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Reclassification {
    pub cases: [[u64; 3]; 3],
    pub controls: [[u64; 3]; 3],
    pub cases_correct: u64,
    pub cases_incorrect: u64,
    pub controls_correct: u64,
    pub controls_incorrect: u64,
}

impl Reclassification {
    pub fn total(&self) -> u64 {
        self.cases.iter().chain(&self.controls).flatten().sum()
    }
}

pub fn reclassify(model: &[f64], baseline: &[f64], labels: &[bool]) -> Result<Reclassification> {
    if model.len() != labels.len() || baseline.len() != labels.len() {
        return Err(Error::Misaligned(alloc::format!(
            "{} model, {} baseline predictions for {} labels",
            model.len(),
            baseline.len(),
            labels.len()
        )));
    }
    let mut out = Reclassification::default();
    for ((&m, &b), &case) in model.iter().zip(baseline).zip(labels) {
        let (from, to) = (RiskTier::of(b), RiskTier::of(m));
        if case {
            out.cases[from.index()][to.index()] += 1;
            if to > from {
                out.cases_correct += 1;
            } else if to < from {
                out.cases_incorrect += 1;
            }
        } else {
            out.controls[from.index()][to.index()] += 1;
            if to < from {
                out.controls_correct += 1;
            } else if to > from {
                out.controls_incorrect += 1;
            }
        }
    }
    Ok(out)
}

/// One held-out prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub subject_id: String,
    pub fold: usize,
    pub probability: f64,
    pub label: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelReport {
    pub name: String,
    /// Pooled out-of-fold predictions, ordered by subject.
    pub predictions: Vec<Prediction>,
    pub auc: f64,
    pub ci: BootstrapCi,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReclassificationEntry {
    pub model: String,
    pub baseline: String,
    pub table: Reclassification,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub models: Vec<ModelReport>,
    pub comparisons: Vec<Comparison>,
    pub reclassification: Vec<ReclassificationEntry>,
}

impl EvalReport {
    pub fn model(&self, name: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.name == name)
    }
}

/// Builds the report from pooled predictions of several models scored on
/// the same subjects. Every pair of models is compared with a Wilcoxon test
/// on their paired bootstrap AUCs, and every model is reclassified against
/// the first one.
pub fn evaluate_models(mut runs: Vec<(String, Vec<Prediction>)>, bootstrap: usize, seed: u64) -> Result<EvalReport> {
    for (_, preds) in runs.iter_mut() {
        preds.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    }
    let Some((_, reference)) = runs.first() else {
        return Ok(EvalReport::default());
    };
    let labels: Vec<bool> = reference.iter().map(|p| p.label).collect();
    let ids: Vec<&str> = reference.iter().map(|p| p.subject_id.as_str()).collect();
    for (name, preds) in &runs {
        let same = preds.len() == ids.len()
            && preds.iter().zip(&ids).all(|(p, id)| p.subject_id == *id);
        if !same {
            return Err(Error::Misaligned(alloc::format!("{name} was scored on different subjects")));
        }
    }
    let indices = bootstrap_indices(&labels, bootstrap, seed)?;
    let mut models = Vec::with_capacity(runs.len());
    for (name, predictions) in &runs {
        let scores: Vec<f64> = predictions.iter().map(|p| p.probability).collect();
        models.push(ModelReport {
            name: name.clone(),
            auc: auc(&scores, &labels)?,
            ci: bootstrap_over(&scores, &labels, &indices)?,
            predictions: predictions.clone(),
        });
    }
    let mut comparisons = Vec::new();
    for i in 0..models.len() {
        for j in i + 1..models.len() {
            comparisons.push(Comparison {
                a: models[i].name.clone(),
                b: models[j].name.clone(),
                p_value: wilcoxon_signed_rank(&models[i].ci.samples, &models[j].ci.samples)?,
            });
        }
    }
    let base: Vec<f64> = models[0].predictions.iter().map(|p| p.probability).collect();
    let mut reclassification = Vec::new();
    for m in &models[1..] {
        let probs: Vec<f64> = m.predictions.iter().map(|p| p.probability).collect();
        reclassification.push(ReclassificationEntry {
            model: m.name.clone(),
            baseline: models[0].name.clone(),
            table: reclassify(&probs, &base, &labels)?,
        });
    }
    Ok(EvalReport { models, comparisons, reclassification })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::rng::Rng;

    fn pairwise_auc(s: &[f64], l: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if l[i] && !l[j] {
                    pairs += 1.0;
                    if s[i] > s[j] {
                        wins += 1.0;
                    } else if s[i] == s[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    /// Two-sided p-value by listing every sign assignment.
    fn enumerate_wilcoxon(a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
        let ranks = midranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
        let observed: f64 = ranks.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
        let n = d.len();
        let (mut le, mut ge) = (0u64, 0u64);
        for mask in 0u64..(1 << n) {
            let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if w <= observed + 1e-9 {
                le += 1;
            }
            if w >= observed - 1e-9 {
                ge += 1;
            }
        }
        let total = (1u64 << n) as f64;
        (2.0 * (le.min(ge) as f64) / total).min(1.0)
    }

    #[test]
    fn auc_edge_cases() {
        assert_eq!(auc(&[0.1, 0.9], &[false, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert_eq!(auc(&[0.1, 0.2], &[true, true]), Err(Error::SingleClass));
        assert!(matches!(auc(&[0.1], &[true, false]), Err(Error::Misaligned(_))));
    }

    #[test]
    fn auc_matches_pair_count_on_fifty() {
        let mut rng = Rng::new(17);
        let s: Vec<f64> = (0..50).map(|_| rng.uniform()).collect();
        let l: Vec<bool> = (0..50).map(|i| i % 3 == 0).collect();
        assert!((auc(&s, &l).unwrap() - pairwise_auc(&s, &l)).abs() <= 1e-12);
    }

    #[test]
    fn separated_bootstrap_is_degenerate() {
        let s = [0.1, 0.2, 0.3, 0.7, 0.8, 0.9];
        let l = [false, false, false, true, true, true];
        let ci = bootstrap_ci(&s, &l, 200, 3).unwrap();
        assert_eq!((ci.mean, ci.lo, ci.hi), (1.0, 1.0, 1.0));
        assert_eq!(ci, bootstrap_ci(&s, &l, 200, 3).unwrap());
    }

    #[test]
    fn bootstrap_interval_brackets_point_estimate() {
        for seed in 0..20 {
            let mut rng = Rng::new(seed);
            let l: Vec<bool> = (0..80).map(|_| rng.uniform() < 0.4).collect();
            let s: Vec<f64> = l.iter().map(|&y| rng.normal() + if y { 0.8 } else { 0.0 }).collect();
            let point = auc(&s, &l).unwrap();
            let ci = bootstrap_ci(&s, &l, BOOTSTRAP_SAMPLES, seed).unwrap();
            assert!(ci.lo <= point && point <= ci.hi, "seed {seed}");
            assert!(ci.lo <= ci.mean && ci.mean <= ci.hi);
        }
    }

    #[test]
    fn wilcoxon_reference_values() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(wilcoxon_signed_rank(&a, &a).unwrap(), 1.0);
        let b = [0.5, 1.2, 2.1, 3.7, 4.0, 5.5];
        assert_eq!(wilcoxon_signed_rank(&a, &b).unwrap(), 2.0 / 64.0);
        assert_eq!(
            wilcoxon_signed_rank(&a[..4], &b[..4]),
            Err(Error::TooFewPairs { needed: 5, found: 4 })
        );
        let a8 = [1.3, -0.2, 0.7, 2.2, -1.1, 0.4, 0.9, -0.6];
        let b8 = [0.0; 8];
        let p = wilcoxon_signed_rank(&a8, &b8).unwrap();
        assert!((p - enumerate_wilcoxon(&a8, &b8)).abs() <= 1e-12);
    }

    #[test]
    fn wilcoxon_normal_branch_is_close_to_exact() {
        // n = 21 uses the normal approximation; compare against a direct
        // enumeration of 2^21 sign patterns.
        let mut rng = Rng::new(5);
        let a: Vec<f64> = (0..21).map(|_| rng.normal() + 0.3).collect();
        let b = vec![0.0; 21];
        let p = wilcoxon_signed_rank(&a, &b).unwrap();
        assert!((p - enumerate_wilcoxon(&a, &b)).abs() < 0.01);
    }

    #[test]
    fn tier_boundaries() {
        assert_eq!(RiskTier::of(0.049_999_999), RiskTier::Low);
        assert_eq!(RiskTier::of(0.05), RiskTier::Medium);
        assert_eq!(RiskTier::of(0.649_999_999), RiskTier::Medium);
        assert_eq!(RiskTier::of(0.65), RiskTier::High);
    }

    #[test]
    fn reclassification_examples() {
        let r = reclassify(&[0.70], &[0.04], &[true]).unwrap();
        assert_eq!(r.cases[0][2], 1);
        assert_eq!(r.cases_correct, 1);
        let r = reclassify(&[0.04], &[0.70], &[false]).unwrap();
        assert_eq!(r.controls[2][0], 1);
        assert_eq!(r.controls_correct, 1);
        let r = reclassify(&[0.3], &[0.2], &[true]).unwrap();
        assert_eq!(r.cases[1][1], 1);
        assert_eq!((r.cases_correct, r.cases_incorrect), (0, 0));
        assert!(reclassify(&[0.3], &[0.2, 0.1], &[true]).is_err());
    }

    #[test]
    fn report_pairs_models() {
        let labels = [true, false, true, false, true, false, false, true];
        let mk = |name: &str, shift: f64| {
            let preds = labels
                .iter()
                .enumerate()
                .map(|(i, &l)| Prediction {
                    subject_id: alloc::format!("s{i}"),
                    fold: i % 2,
                    probability: (0.3 + if l { shift } else { 0.0 } + 0.01 * i as f64).min(0.99),
                    label: l,
                })
                .collect();
            (String::from(name), preds)
        };
        let report = evaluate_models(vec![mk("base", 0.0), mk("good", 0.5)], 100, 1).unwrap();
        assert_eq!(report.model("good").unwrap().auc, 1.0);
        assert_eq!(report.comparisons.len(), 1);
        assert_eq!(report.reclassification[0].table.total(), 8);
    }

    proptest! {
        #[test]
        fn auc_equals_pair_count(values in prop::collection::vec((0u8..20, any::<bool>()), 2..200)) {
            let s: Vec<f64> = values.iter().map(|(v, _)| *v as f64 / 19.0).collect();
            let l: Vec<bool> = values.iter().map(|(_, y)| *y).collect();
            let (p, n) = class_counts(&l);
            prop_assume!(p > 0 && n > 0);
            prop_assert_eq!(auc(&s, &l).unwrap(), pairwise_auc(&s, &l));
        }

        #[test]
        fn wilcoxon_matches_enumeration(d in prop::collection::vec(-6i32..=6, 5..=12)) {
            let a: Vec<f64> = d.iter().map(|&v| v as f64 * 0.5).collect();
            let b = vec![0.0; a.len()];
            let nonzero = d.iter().filter(|&&v| v != 0).count();
            prop_assume!(nonzero >= 5);
            let p = wilcoxon_signed_rank(&a, &b).unwrap();
            prop_assert!((p - enumerate_wilcoxon(&a, &b)).abs() <= 1e-12);
        }

        #[test]
        fn reclassification_conserves_counts(rows in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, any::<bool>()), 1..100)) {
            let m: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let b: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let l: Vec<bool> = rows.iter().map(|r| r.2).collect();
            let r = reclassify(&m, &b, &l).unwrap();
            prop_assert_eq!(r.total(), rows.len() as u64);
            for tier in 0..3 {
                let base_cases = rows.iter().filter(|x| x.2 && RiskTier::of(x.1).index() == tier).count() as u64;
                let base_controls = rows.iter().filter(|x| !x.2 && RiskTier::of(x.1).index() == tier).count() as u64;
                prop_assert_eq!(r.cases[tier].iter().sum::<u64>(), base_cases);
                prop_assert_eq!(r.controls[tier].iter().sum::<u64>(), base_controls);
            }
        }
    }
}
