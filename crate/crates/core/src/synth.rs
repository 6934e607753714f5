//! Synthetic cohorts with planted latent sources, scans and labels.
//!
//! Each subject carries a `c`-dimensional latent expression that is
//! piecewise constant in time. Categorical codes fire as Poisson events with
//! daily rate `base · exp(gain · (S e)_v)`; labs read `(S e)_v` plus noise.
//! The latent state is held fixed over the trailing year before every scan,
//! so the smoothed curves at a scan day reflect exactly that scan's state.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::curve::{Event, EventKind, EventStream, TRAILING_WINDOW_DAYS};
use crate::linalg::Matrix;
use crate::math::{exp, sqrt};
use crate::rng::Rng;
use crate::tem::TokenSequence;
use crate::{Error, Result};

/// How a subject's label is derived from the malignant source.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelRule {
    /// Expression at the final scan only; earlier scans are decoys.
    LastScan,
    /// Mean expression over all scans.
    MeanOverScans,
}

impl LabelRule {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelRule::LastScan => "last_scan",
            LabelRule::MeanOverScans => "mean_over_scans",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "last_scan" => Some(LabelRule::LastScan),
            "mean_over_scans" => Some(LabelRule::MeanOverScans),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_subjects: usize,
    pub p_variables: usize,
    pub c_true: usize,
    /// Share of variables that are labs; the rest are codes.
    pub lab_fraction: f64,
    /// Days of record before the earliest possible first scan.
    pub record_span_days: i64,
    /// Relative weight of having 1, 2, …, T scans.
    pub scan_count_weights: Vec<f64>,
    pub scan_gap_days: (i64, i64),
    /// Length range of the extra latent segments between scans.
    pub segment_days: (i64, i64),
    pub recency_signal: bool,
    pub label_noise: f64,
    pub label_threshold: f64,
    /// Permute labels across subjects after generation, removing all signal.
    pub shuffle_labels: bool,
    pub malignant_source: usize,
    pub event_base_rate: f64,
    pub event_gain: f64,
    /// Expected lab draws per day.
    pub lab_rate: f64,
    pub lab_noise: f64,
    pub image_dim: usize,
    /// Readout weight of the malignant source in image features.
    pub image_malignant_weight: f64,
    /// Readout weight of the other sources.
    pub image_other_weight: f64,
    pub image_noise: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 0,
            n_subjects: 600,
            p_variables: 40,
            c_true: 6,
            lab_fraction: 0.3,
            record_span_days: 730,
            scan_count_weights: vec![0.2, 0.4, 0.4],
            scan_gap_days: (400, 700),
            segment_days: (60, 240),
            recency_signal: true,
            label_noise: 0.0,
            label_threshold: 0.0,
            shuffle_labels: false,
            malignant_source: 0,
            event_base_rate: 0.5,
            event_gain: 0.3,
            lab_rate: 1.0 / 30.0,
            lab_noise: 0.1,
            image_dim: 8,
            image_malignant_weight: 0.3,
            image_other_weight: 1.0,
            image_noise: 1.0,
        }
    }
}

impl GeneratorConfig {
    pub fn max_scans(&self) -> usize {
        self.scan_count_weights.len()
    }

    pub fn lab_count(&self) -> usize {
        libm::round(self.lab_fraction * self.p_variables as f64) as usize
    }

    pub fn label_rule(&self) -> LabelRule {
        if self.recency_signal {
            LabelRule::LastScan
        } else {
            LabelRule::MeanOverScans
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(String::from(m)));
        if self.n_subjects == 0 || self.p_variables == 0 || self.c_true == 0 || self.image_dim == 0 {
            return bad("subject, variable, source and image counts must be positive");
        }
        if self.c_true > self.p_variables {
            return bad("c_true cannot exceed p_variables");
        }
        if self.malignant_source >= self.c_true {
            return bad("malignant_source must index a latent source");
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return bad("label_noise must lie in [0, 0.5)");
        }
        if !(0.0..=1.0).contains(&self.lab_fraction) {
            return bad("lab_fraction must lie in [0, 1]");
        }
        if self.scan_count_weights.is_empty()
            || self.scan_count_weights.iter().any(|w| !(*w >= 0.0))
            || self.scan_count_weights.iter().sum::<f64>() <= 0.0
        {
            return bad("scan_count_weights must be non-negative with a positive sum");
        }
        let hold = TRAILING_WINDOW_DAYS as i64;
        if self.scan_gap_days.0 <= hold || self.scan_gap_days.1 < self.scan_gap_days.0 {
            return bad("scan gaps must exceed one year and form a range");
        }
        if self.segment_days.0 < 1 || self.segment_days.1 < self.segment_days.0 {
            return bad("segment_days must be a positive range");
        }
        if self.record_span_days < hold {
            return bad("record_span_days must cover at least one year");
        }
        let positive = [self.event_base_rate, self.lab_rate];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("event_base_rate and lab_rate must be positive");
        }
        let finite = [
            self.event_gain,
            self.lab_noise,
            self.image_noise,
            self.image_malignant_weight,
            self.image_other_weight,
            self.label_threshold,
        ];
        if finite.iter().any(|v| !v.is_finite()) || self.lab_noise < 0.0 || self.image_noise < 0.0 {
            return bad("generator scales must be finite and noise non-negative");
        }
        Ok(())
    }

    /// Variable ids in mixing-row order. Codes come first; zero padding
    /// keeps sorted order equal to row order.
    pub fn variable_ids(&self) -> Vec<(String, EventKind)> {
        let labs = self.lab_count();
        let codes = self.p_variables - labs;
        (0..self.p_variables)
            .map(|i| {
                if i < codes {
                    (format!("code{i:04}"), EventKind::CategoricalEvent)
                } else {
                    (format!("lab{:04}", i - codes), EventKind::ContinuousLab)
                }
            })
            .collect()
    }
}

/// One imaging time point.
#[derive(Clone, Debug, PartialEq)]
pub struct Scan {
    pub day: i64,
    pub image: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub streams: Vec<EventStream>,
    /// Ascending by day.
    pub scans: Vec<Scan>,
    pub label: bool,
}

impl SubjectRecord {
    pub fn first_day(&self) -> i64 {
        0
    }

    pub fn last_day(&self) -> i64 {
        self.scans.last().map_or(0, |s| s.day)
    }

    /// Sequence over the `max_scans` most recent scans, with one signature
    /// payload per scan (aligned with `scans`) or image tokens only.
    pub fn sequence(&self, max_scans: usize, signatures: Option<&[Vec<f64>]>, with_images: bool) -> Result<TokenSequence> {
        let sig = match signatures {
            Some(s) if s.len() != self.scans.len() => {
                return Err(Error::Misaligned(format!(
                    "{} signature payloads for {} scans of `{}`",
                    s.len(),
                    self.scans.len(),
                    self.subject_id
                )))
            }
            Some(s) => self.scans.iter().zip(s).map(|(sc, e)| (sc.day, e.clone())).collect(),
            None => Vec::new(),
        };
        let img = if with_images {
            self.scans.iter().map(|s| (s.day, s.image.clone())).collect()
        } else {
            Vec::new()
        };
        TokenSequence::from_observations(self.subject_id.clone(), max_scans, sig, img, Some(self.label))
    }
}

/// A latent segment starting on `start` and lasting until the next one.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub start: i64,
    pub expression: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectTruth {
    pub subject_id: String,
    pub segments: Vec<Segment>,
    pub scan_days: Vec<i64>,
    /// Malignant-source score the label rule thresholds.
    pub score: f64,
    /// Label before noise and shuffling.
    pub clean_label: bool,
    pub label: bool,
}

impl SubjectTruth {
    pub fn expression_at(&self, day: i64) -> &[f64] {
        let i = self.segments.partition_point(|s| s.start <= day).max(1) - 1;
        &self.segments[i].expression
    }
}

/// Everything needed to check recovery and labels, kept out of the
/// training inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub variables: Vec<String>,
    /// `p × c_true`.
    pub s_true: Matrix,
    /// Per-variable slope of the observation link at zero latent input.
    pub link_slope: Vec<f64>,
    /// `image_dim × c_true`.
    pub image_readout: Matrix,
    pub malignant_source: usize,
    pub rule: LabelRule,
    pub threshold: f64,
    pub subjects: Vec<SubjectTruth>,
}

impl GroundTruth {
    /// Mixing matrix seen by a linear model of the curves: `S_true` with
    /// each row scaled by its link slope.
    pub fn effective_mixing(&self) -> Matrix {
        Matrix::from_fn(self.s_true.rows(), self.s_true.cols(), |i, j| {
            self.s_true[(i, j)] * self.link_slope[i]
        })
    }

    /// Applies the generative rule to a subject's latent record.
    pub fn rule_score(&self, subject: &SubjectTruth) -> f64 {
        let k = self.malignant_source;
        match self.rule {
            LabelRule::LastScan => subject.expression_at(*subject.scan_days.last().unwrap_or(&0))[k],
            LabelRule::MeanOverScans => {
                let n = subject.scan_days.len() as f64;
                subject.scan_days.iter().map(|&d| subject.expression_at(d)[k]).sum::<f64>() / n
            }
        }
    }

    pub fn recompute_label(&self, subject: &SubjectTruth) -> bool {
        self.rule_score(subject) > self.threshold
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub config: GeneratorConfig,
    pub subjects: Vec<SubjectRecord>,
    pub truth: GroundTruth,
}

/// Linear readout of a latent state plus seeded Gaussian noise.
pub fn make_image_features(latent: &[f64], readout: &Matrix, noise: f64, rng: &mut Rng) -> Vec<f64> {
    let mut f = readout.mul_vec(latent);
    if noise > 0.0 {
        f.iter_mut().for_each(|v| *v += noise * rng.normal());
    }
    f
}

fn uniform_day(rng: &mut Rng, range: (i64, i64)) -> i64 {
    rng.int_inclusive(range.0, range.1)
}

/// Scan days and segment boundaries for one subject.
fn timeline(cfg: &GeneratorConfig, rng: &mut Rng) -> (Vec<i64>, Vec<i64>) {
    let hold = TRAILING_WINDOW_DAYS as i64;
    let n_scans = rng.weighted_index(&cfg.scan_count_weights) + 1;
    let mut scans = Vec::with_capacity(n_scans);
    let mut day = cfg.record_span_days + rng.int_inclusive(0, hold);
    for _ in 0..n_scans {
        scans.push(day);
        day += uniform_day(rng, cfg.scan_gap_days);
    }
    let mut boundaries = vec![0];
    let mut region_start = 0;
    for (k, &scan) in scans.iter().enumerate() {
        // Last day a new segment may begin while the scan's trailing year
        // stays inside one segment.
        let latest_start = scan - hold + 1;
        let mut b = region_start + uniform_day(rng, cfg.segment_days);
        while b <= latest_start {
            boundaries.push(b);
            b += uniform_day(rng, cfg.segment_days);
        }
        if k + 1 < scans.len() {
            boundaries.push(scan + 1);
            region_start = scan + 1;
        }
    }
    (scans, boundaries)
}

fn latent_draw(rng: &mut Rng, c: usize) -> Vec<f64> {
    (0..c).map(|_| rng.laplace()).collect()
}

struct Shared {
    variables: Vec<(String, EventKind)>,
    s_true: Matrix,
    readout: Matrix,
}

fn shared_parts(cfg: &GeneratorConfig) -> Shared {
    let mut rng = Rng::derive(cfg.seed, 0);
    let scale = 1.0 / sqrt(cfg.c_true as f64);
    let s_true = Matrix::from_fn(cfg.p_variables, cfg.c_true, |_, _| scale * rng.normal());
    let readout = Matrix::from_fn(cfg.image_dim, cfg.c_true, |_, j| {
        let w = if j == cfg.malignant_source {
            cfg.image_malignant_weight
        } else {
            cfg.image_other_weight
        };
        w * scale * rng.normal()
    });
    Shared {
        variables: cfg.variable_ids(),
        s_true,
        readout,
    }
}

fn generate_subject(cfg: &GeneratorConfig, shared: &Shared, index: usize) -> Result<(SubjectRecord, SubjectTruth)> {
    let subject_id = format!("subj{index:05}");
    let mut rng = Rng::derive(cfg.seed, index as u64 + 1);
    let (scan_days, boundaries) = timeline(cfg, &mut rng);
    let end = *scan_days.last().unwrap_or(&0);
    let segments: Vec<Segment> = boundaries
        .iter()
        .map(|&start| Segment {
            start,
            expression: latent_draw(&mut rng, cfg.c_true),
        })
        .collect();
    let mixed: Vec<Vec<f64>> = segments.iter().map(|s| shared.s_true.mul_vec(&s.expression)).collect();

    let mut streams = Vec::new();
    for (v, (id, kind)) in shared.variables.iter().enumerate() {
        let mut events = Vec::new();
        for (k, seg) in segments.iter().enumerate() {
            let stop = segments.get(k + 1).map_or(end + 1, |s| s.start);
            let len = stop - seg.start;
            if len <= 0 {
                continue;
            }
            match kind {
                EventKind::CategoricalEvent => {
                    let rate = cfg.event_base_rate * exp(cfg.event_gain * mixed[k][v]);
                    let n = rng.poisson(rate * len as f64);
                    for _ in 0..n {
                        events.push(Event::code(seg.start + rng.below(len as u64) as i64));
                    }
                }
                EventKind::ContinuousLab => {
                    let n = rng.poisson(cfg.lab_rate * len as f64);
                    for _ in 0..n {
                        let day = seg.start + rng.below(len as u64) as i64;
                        events.push(Event::lab(day, mixed[k][v] + cfg.lab_noise * rng.normal()));
                    }
                }
            }
        }
        if !events.is_empty() {
            streams.push(EventStream::new(subject_id.clone(), id.clone(), *kind, events)?);
        }
    }

    let mut truth = SubjectTruth {
        subject_id: subject_id.clone(),
        segments,
        scan_days: scan_days.clone(),
        score: 0.0,
        clean_label: false,
        label: false,
    };
    let scans = scan_days
        .iter()
        .map(|&day| Scan {
            day,
            image: make_image_features(truth.expression_at(day), &shared.readout, cfg.image_noise, &mut rng),
        })
        .collect();
    let k = cfg.malignant_source;
    truth.score = match cfg.label_rule() {
        LabelRule::LastScan => truth.expression_at(end)[k],
        LabelRule::MeanOverScans => {
            scan_days.iter().map(|&d| truth.expression_at(d)[k]).sum::<f64>() / scan_days.len() as f64
        }
    };
    truth.clean_label = truth.score > cfg.label_threshold;
    let flip = cfg.label_noise > 0.0 && rng.uniform() < cfg.label_noise;
    truth.label = truth.clean_label != flip;
    let record = SubjectRecord {
        subject_id,
        streams,
        scans,
        label: truth.label,
    };
    Ok((record, truth))
}

/// Generates a full cohort. Subjects draw from independent derived seeds,
/// so the result does not depend on generation order.
pub fn generate_cohort(config: &GeneratorConfig) -> Result<Cohort> {
    config.validate()?;
    let shared = shared_parts(config);
    let mut subjects = Vec::with_capacity(config.n_subjects);
    let mut truths = Vec::with_capacity(config.n_subjects);
    for i in 0..config.n_subjects {
        let (r, t) = generate_subject(config, &shared, i)?;
        subjects.push(r);
        truths.push(t);
    }
    if config.shuffle_labels {
        let mut labels: Vec<bool> = subjects.iter().map(|s| s.label).collect();
        Rng::derive(config.seed, u64::MAX).shuffle(&mut labels);
        for ((s, t), l) in subjects.iter_mut().zip(truths.iter_mut()).zip(labels) {
            s.label = l;
            t.label = l;
        }
    }
    let link_slope = shared
        .variables
        .iter()
        .map(|(_, kind)| match kind {
            EventKind::CategoricalEvent => config.event_base_rate * config.event_gain,
            EventKind::ContinuousLab => 1.0,
        })
        .collect();
    Ok(Cohort {
        config: config.clone(),
        subjects,
        truth: GroundTruth {
            variables: shared.variables.into_iter().map(|(id, _)| id).collect(),
            s_true: shared.s_true,
            link_slope,
            image_readout: shared.readout,
            malignant_source: config.malignant_source,
            rule: config.label_rule(),
            threshold: config.label_threshold,
            subjects: truths,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            n_subjects: 30,
            p_variables: 12,
            c_true: 3,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn same_seed_same_cohort() {
        assert_eq!(generate_cohort(&small()).unwrap(), generate_cohort(&small()).unwrap());
        let other = GeneratorConfig { seed: 1, ..small() };
        assert_ne!(generate_cohort(&small()).unwrap().subjects, generate_cohort(&other).unwrap().subjects);
    }

    #[test]
    fn labels_follow_the_rule() {
        for recency in [true, false] {
            let cfg = GeneratorConfig { recency_signal: recency, ..small() };
            let c = generate_cohort(&cfg).unwrap();
            for (s, t) in c.subjects.iter().zip(&c.truth.subjects) {
                assert_eq!(c.truth.recompute_label(t), s.label);
                assert_eq!(c.truth.rule_score(t), t.score);
            }
        }
    }

    #[test]
    fn trailing_year_before_each_scan_is_one_segment() {
        let c = generate_cohort(&small()).unwrap();
        for t in &c.truth.subjects {
            for &d in &t.scan_days {
                let window_start = d - TRAILING_WINDOW_DAYS as i64 + 1;
                assert_eq!(t.expression_at(window_start), t.expression_at(d));
                assert!(!t.segments.iter().any(|s| s.start > window_start && s.start <= d));
            }
            for w in t.scan_days.windows(2) {
                assert!(w[1] - w[0] >= 400 && w[1] - w[0] <= 700);
            }
        }
    }

    #[test]
    fn noiseless_images_depend_only_on_latent_state() {
        let readout = Matrix::from_fn(4, 2, |i, j| (i + 2 * j) as f64);
        let mut a = Rng::new(1);
        let mut b = Rng::new(99);
        let x = [0.5, -1.0];
        assert_eq!(
            make_image_features(&x, &readout, 0.0, &mut a),
            make_image_features(&x, &readout, 0.0, &mut b)
        );
        let mut a = Rng::new(3);
        let mut b = Rng::new(3);
        assert_eq!(
            make_image_features(&x, &readout, 0.7, &mut a),
            make_image_features(&x, &readout, 0.7, &mut b)
        );
    }

    #[test]
    fn label_noise_flips_some_labels() {
        let cfg = GeneratorConfig { n_subjects: 300, label_noise: 0.2, ..small() };
        let c = generate_cohort(&cfg).unwrap();
        let flips = c.truth.subjects.iter().filter(|t| t.label != t.clean_label).count();
        assert!(flips > 30 && flips < 90, "{flips}");
    }

    #[test]
    fn degenerate_configs_are_rejected() {
        for cfg in [
            GeneratorConfig { n_subjects: 0, ..small() },
            GeneratorConfig { label_noise: 0.5, ..small() },
            GeneratorConfig { c_true: 20, ..small() },
            GeneratorConfig { scan_gap_days: (300, 500), ..small() },
            GeneratorConfig { scan_count_weights: vec![], ..small() },
        ] {
            assert!(generate_cohort(&cfg).is_err());
        }
    }
}
