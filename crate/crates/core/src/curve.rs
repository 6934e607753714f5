//! Event streams to daily longitudinal curves.
//!
//! Continuous labs are interpolated with a shape-preserving monotone cubic,
//! categorical events become raw daily counts, and both then pass through a
//! single trailing 365-day uniform mean that gives each curve a limited
//! memory. Days are integers relative to the subject's epoch.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Trailing window of the smoothing stage, in days.
pub const TRAILING_WINDOW_DAYS: usize = 365;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    CategoricalEvent,
    ContinuousLab,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::CategoricalEvent => "categorical_event",
            EventKind::ContinuousLab => "continuous_lab",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "categorical_event" => Some(EventKind::CategoricalEvent),
            "continuous_lab" => Some(EventKind::ContinuousLab),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub day: i64,
    pub value: Option<f64>,
}

impl Event {
    pub fn code(day: i64) -> Self {
        Self { day, value: None }
    }

    pub fn lab(day: i64, value: f64) -> Self {
        Self {
            day,
            value: Some(value),
        }
    }
}

/// One subject's record for one variable.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    subject_id: String,
    variable_id: String,
    kind: EventKind,
    events: Vec<Event>,
}

impl EventStream {
    /// Sorts events by day. Lab values observed on the same day are
    /// collapsed to their mean.
    pub fn new(
        subject_id: impl Into<String>,
        variable_id: impl Into<String>,
        kind: EventKind,
        mut events: Vec<Event>,
    ) -> Result<Self> {
        let variable_id = variable_id.into();
        for e in &events {
            match (kind, e.value) {
                (EventKind::CategoricalEvent, Some(_)) => {
                    return Err(Error::InvalidValue(format!(
                        "categorical event for `{variable_id}` carries a value"
                    )))
                }
                (EventKind::ContinuousLab, None) => {
                    return Err(Error::InvalidValue(format!(
                        "lab event for `{variable_id}` has no value"
                    )))
                }
                (EventKind::ContinuousLab, Some(v)) if !v.is_finite() => {
                    return Err(Error::InvalidValue(format!(
                        "non-finite lab value for `{variable_id}` on day {}",
                        e.day
                    )))
                }
                _ => {}
            }
        }
        events.sort_by_key(|e| e.day);
        if kind == EventKind::ContinuousLab {
            events = collapse_same_day(&events);
        }
        Ok(Self {
            subject_id: subject_id.into(),
            variable_id,
            kind,
            events,
        })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn variable_id(&self) -> &str {
        &self.variable_id
    }

    pub fn kind(&self) -> EventKind {
        self.kind
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn first_day(&self) -> Option<i64> {
        self.events.first().map(|e| e.day)
    }

    pub fn last_day(&self) -> Option<i64> {
        self.events.last().map(|e| e.day)
    }
}

fn collapse_same_day(sorted: &[Event]) -> Vec<Event> {
    let mut out: Vec<Event> = Vec::with_capacity(sorted.len());
    let mut i = 0;
    while i < sorted.len() {
        let day = sorted[i].day;
        let mut j = i;
        let mut sum = 0.0;
        while j < sorted.len() && sorted[j].day == day {
            sum += sorted[j].value.unwrap_or(0.0);
            j += 1;
        }
        out.push(Event::lab(day, sum / (j - i) as f64));
        i = j;
    }
    out
}

/// Contiguous range of days `[start, start + len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DayGrid {
    start: i64,
    len: usize,
}

impl DayGrid {
    pub fn new(start: i64, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidConfig("day grid must hold at least one day".into()));
        }
        Ok(Self { start, len })
    }

    /// Grid spanning `first..=last`.
    pub fn spanning(first: i64, last: i64) -> Result<Self> {
        if last < first {
            return Err(Error::InvalidConfig(format!("empty day range {first}..={last}")));
        }
        Self::new(first, (last - first + 1) as usize)
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn last(&self) -> i64 {
        self.start + self.len as i64 - 1
    }

    pub fn index_of(&self, day: i64) -> Option<usize> {
        if day >= self.start && day <= self.last() {
            Some((day - self.start) as usize)
        } else {
            None
        }
    }

    fn require(&self, day: i64) -> Result<usize> {
        self.index_of(day).ok_or(Error::GridMismatch { day })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalCurve {
    variable_id: String,
    start_day: i64,
    values: Vec<f64>,
    smoothed: bool,
}

impl LongitudinalCurve {
    pub fn new(
        variable_id: impl Into<String>,
        start_day: i64,
        values: Vec<f64>,
        smoothed: bool,
    ) -> Result<Self> {
        let variable_id = variable_id.into();
        if values.is_empty() {
            return Err(Error::InvalidValue(format!("curve `{variable_id}` is empty")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "curve `{variable_id}` has non-finite values"
            )));
        }
        Ok(Self {
            variable_id,
            start_day,
            values,
            smoothed,
        })
    }

    pub fn variable_id(&self) -> &str {
        &self.variable_id
    }

    pub fn start_day(&self) -> i64 {
        self.start_day
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_smoothed(&self) -> bool {
        self.smoothed
    }

    pub fn value_at(&self, day: i64) -> Option<f64> {
        let idx = usize::try_from(day - self.start_day).ok()?;
        self.values.get(idx).copied()
    }
}

/// Monotone piecewise-cubic Hermite interpolant (weighted harmonic mean
/// tangents, one-sided three-point endpoints clipped for shape preservation).
#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    /// `xs` strictly increasing, same length as `ys`, at least one knot.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::NoObservations);
        }
        if xs.len() != ys.len() {
            return Err(Error::DimensionMismatch {
                what: "interpolation knots",
                expected: xs.len(),
                found: ys.len(),
            });
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidValue("knots must be strictly increasing".into()));
        }
        let slopes = monotone_slopes(&xs, &ys);
        Ok(Self { xs, ys, slopes })
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    /// Constant hold outside the knot range.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        // first knot strictly greater than x, minus one
        let k = self.xs.partition_point(|&k| k <= x) - 1;
        let h = self.xs[k + 1] - self.xs[k];
        let t = (x - self.xs[k]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        // h00 = 1 - h01, so flat segments stay exactly flat
        self.ys[k]
            + h01 * (self.ys[k + 1] - self.ys[k])
            + h * (h10 * self.slopes[k] + h11 * self.slopes[k + 1])
    }
}

fn monotone_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    if n == 1 {
        return vec![0.0];
    }
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (ys[k + 1] - ys[k]) / h[k]).collect();
    if n == 2 {
        return vec![delta[0], delta[0]];
    }
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        let (a, b) = (delta[k - 1], delta[k]);
        if a * b > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / a + w2 / b);
        }
    }
    d[0] = endpoint_slope(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = endpoint_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

fn endpoint_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if sign(d) != sign(d0) {
        0.0
    } else if sign(d0) != sign(d1) && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Daily lab curve through every observation, constant beyond the first and
/// last observed days.
pub fn interpolate_continuous(stream: &EventStream, grid: DayGrid) -> Result<LongitudinalCurve> {
    if stream.kind != EventKind::ContinuousLab {
        return Err(Error::KindMismatch(stream.variable_id.clone()));
    }
    if stream.events.is_empty() {
        return Err(Error::NoObservations);
    }
    let mut xs = Vec::with_capacity(stream.events.len());
    let mut ys = Vec::with_capacity(stream.events.len());
    for e in &stream.events {
        grid.require(e.day)?;
        let v = e.value.ok_or_else(|| Error::InvalidValue("missing lab value".into()))?;
        if !v.is_finite() {
            return Err(Error::InvalidValue(format!("non-finite value on day {}", e.day)));
        }
        xs.push(e.day as f64);
        ys.push(v);
    }
    let knot_days: Vec<i64> = stream.events.iter().map(|e| e.day).collect();
    let spline = MonotoneCubic::new(xs, ys)?;
    let values = (0..grid.len)
        .map(|i| {
            let day = grid.start + i as i64;
            // knots are reproduced exactly, not through the cubic basis
            match knot_days.binary_search(&day) {
                Ok(k) => spline.ys[k],
                Err(_) => spline.eval(day as f64),
            }
        })
        .collect();
    LongitudinalCurve::new(stream.variable_id.clone(), grid.start, values, false)
}

/// Raw events-per-day counts; smoothing is left to [`rolling_mean_365`].
pub fn event_density(stream: &EventStream, grid: DayGrid) -> Result<LongitudinalCurve> {
    if stream.kind != EventKind::CategoricalEvent {
        return Err(Error::KindMismatch(stream.variable_id.clone()));
    }
    let mut values = vec![0.0; grid.len];
    for e in &stream.events {
        values[grid.require(e.day)?] += 1.0;
    }
    LongitudinalCurve::new(stream.variable_id.clone(), grid.start, values, false)
}

/// Trailing 365-day uniform mean, truncated at the start of the series.
pub fn rolling_mean_365(curve: &LongitudinalCurve) -> Result<LongitudinalCurve> {
    rolling_mean(curve, TRAILING_WINDOW_DAYS)
}

pub fn rolling_mean(curve: &LongitudinalCurve, window: usize) -> Result<LongitudinalCurve> {
    if curve.smoothed {
        return Err(Error::AlreadySmoothed(curve.variable_id.clone()));
    }
    if window == 0 {
        return Err(Error::InvalidConfig("rolling window must be positive".into()));
    }
    let values = trailing_means(&curve.values, window);
    LongitudinalCurve::new(curve.variable_id.clone(), curve.start_day, values, true)
}

fn add(sum: &mut f64, comp: &mut f64, v: f64) {
    let t = *sum + v;
    if sum.abs() >= v.abs() {
        *comp += (*sum - t) + v;
    } else {
        *comp += (v - t) + *sum;
    }
    *sum = t;
}

/// Sliding sum with Neumaier compensation on both the entering and the
/// leaving element.
fn trailing_means(x: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for (d, &v) in x.iter().enumerate() {
        add(&mut sum, &mut comp, v);
        if d >= window {
            add(&mut sum, &mut comp, -x[d - window]);
        }
        let count = (d + 1).min(window);
        out.push((sum + comp) / count as f64);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariableSpec {
    pub id: String,
    pub kind: EventKind,
    /// Constant used for labs a subject never had measured.
    pub fill: f64,
}

/// The ordered set of variables every curve set is built over.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vocabulary {
    entries: Vec<VariableSpec>,
}

impl Vocabulary {
    pub fn new(mut entries: Vec<VariableSpec>) -> Result<Self> {
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = entries.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::VocabularyMismatch(format!("duplicate variable `{}`", w[0].id)));
        }
        Ok(Self { entries })
    }

    /// Variables with at least `min_events` events across `streams`; lab
    /// fill values are the pooled mean of observed values.
    pub fn from_streams<'a>(
        streams: impl IntoIterator<Item = &'a EventStream>,
        min_events: usize,
    ) -> Result<Self> {
        struct Acc {
            kind: EventKind,
            count: usize,
            sum: f64,
        }
        let mut acc: BTreeMap<&str, Acc> = BTreeMap::new();
        for s in streams {
            let entry = acc.entry(s.variable_id()).or_insert(Acc {
                kind: s.kind,
                count: 0,
                sum: 0.0,
            });
            if entry.kind != s.kind {
                return Err(Error::KindMismatch(s.variable_id.clone()));
            }
            entry.count += s.events.len();
            entry.sum += s.events.iter().filter_map(|e| e.value).sum::<f64>();
        }
        let entries = acc
            .into_iter()
            .filter(|(_, a)| a.count >= min_events.max(1))
            .map(|(id, a)| VariableSpec {
                id: id.to_string(),
                kind: a.kind,
                fill: match a.kind {
                    EventKind::ContinuousLab => a.sum / a.count as f64,
                    EventKind::CategoricalEvent => 0.0,
                },
            })
            .collect();
        Self::new(entries)
    }

    pub fn entries(&self) -> &[VariableSpec] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn get(&self, id: &str) -> Option<&VariableSpec> {
        self.entries
            .binary_search_by(|e| e.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.entries[i])
    }
}

/// All of one subject's smoothed curves on a shared day grid, keyed and
/// ordered by variable id.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSet {
    subject_id: String,
    grid: DayGrid,
    curves: BTreeMap<String, LongitudinalCurve>,
}

impl CurveSet {
    pub fn new(
        subject_id: impl Into<String>,
        curves: impl IntoIterator<Item = LongitudinalCurve>,
    ) -> Result<Self> {
        let subject_id = subject_id.into();
        let mut map = BTreeMap::new();
        let mut grid: Option<DayGrid> = None;
        for c in curves {
            let g = DayGrid::new(c.start_day, c.len())?;
            match grid {
                None => grid = Some(g),
                Some(existing) if existing != g => {
                    return Err(Error::InvalidValue(format!(
                        "curve `{}` is not aligned with the subject grid",
                        c.variable_id
                    )))
                }
                _ => {}
            }
            if map.insert(c.variable_id.clone(), c).is_some() {
                return Err(Error::VocabularyMismatch("duplicate curve".into()));
            }
        }
        let grid = grid.ok_or_else(|| Error::InvalidValue(format!("no curves for `{subject_id}`")))?;
        Ok(Self {
            subject_id,
            grid,
            curves: map,
        })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn grid(&self) -> DayGrid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.curves.keys().map(String::as_str)
    }

    pub fn curves(&self) -> impl Iterator<Item = &LongitudinalCurve> {
        self.curves.values()
    }

    pub fn get(&self, variable_id: &str) -> Option<&LongitudinalCurve> {
        self.curves.get(variable_id)
    }

    /// Values of every curve on `day`, in variable order.
    pub fn cross_section(&self, day: i64) -> Result<Vec<f64>> {
        let idx = self.grid.index_of(day).ok_or(Error::DayOutOfRange { day })?;
        Ok(self.curves.values().map(|c| c.values[idx]).collect())
    }
}

/// Builds and smooths a curve for every vocabulary variable. Variables
/// without a stream get an all-zero density or a constant lab fill. Streams
/// outside the vocabulary are ignored.
pub fn build_curveset(
    subject_id: &str,
    streams: &[EventStream],
    grid: DayGrid,
    vocabulary: &Vocabulary,
) -> Result<CurveSet> {
    let mut by_var: BTreeMap<&str, &EventStream> = BTreeMap::new();
    for s in streams {
        if s.subject_id != subject_id {
            return Err(Error::MixedSubjects {
                expected: subject_id.to_string(),
                found: s.subject_id.clone(),
            });
        }
        if by_var.insert(s.variable_id(), s).is_some() {
            return Err(Error::InvalidValue(format!(
                "duplicate stream for `{}` in subject `{subject_id}`",
                s.variable_id
            )));
        }
    }
    let mut curves = Vec::with_capacity(vocabulary.len());
    for spec in vocabulary.entries() {
        let raw = match by_var.get(spec.id.as_str()) {
            Some(s) if s.kind != spec.kind => return Err(Error::KindMismatch(spec.id.clone())),
            Some(s) => match s.kind {
                EventKind::CategoricalEvent => event_density(s, grid)?,
                EventKind::ContinuousLab if s.events.is_empty() => {
                    LongitudinalCurve::new(spec.id.clone(), grid.start, vec![spec.fill; grid.len], false)?
                }
                EventKind::ContinuousLab => interpolate_continuous(s, grid)?,
            },
            None => {
                let fill = match spec.kind {
                    EventKind::CategoricalEvent => 0.0,
                    EventKind::ContinuousLab => spec.fill,
                };
                LongitudinalCurve::new(spec.id.clone(), grid.start, vec![fill; grid.len], false)?
            }
        };
        curves.push(rolling_mean_365(&raw)?);
    }
    if curves.is_empty() {
        return Err(Error::VocabularyMismatch("vocabulary is empty".into()));
    }
    CurveSet::new(subject_id, curves)
}
