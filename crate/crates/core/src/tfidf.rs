//! TF-IDF vectors over billing codes seen in the year before a scan.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::curve::{EventKind, EventStream, TRAILING_WINDOW_DAYS};
use crate::math::{log, sqrt};
use crate::{Error, Result};

/// Occurrences of each code in `(scan_day − window, scan_day]`. Streams for
/// codes outside `codes` are ignored.
pub fn window_counts(streams: &[EventStream], codes: &[String], scan_day: i64, window: i64) -> Result<Vec<f64>> {
    let mut counts = vec![0.0; codes.len()];
    for s in streams {
        if s.kind() != EventKind::CategoricalEvent {
            continue;
        }
        let Ok(j) = codes.binary_search_by(|c| c.as_str().cmp(s.variable_id())) else {
            continue;
        };
        counts[j] += s
            .events()
            .iter()
            .filter(|e| e.day > scan_day - window && e.day <= scan_day)
            .count() as f64;
    }
    Ok(counts)
}

/// Smoothed inverse document frequencies fitted on a training corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct TfidfModel {
    codes: Vec<String>,
    idf: Vec<f64>,
    window: i64,
}

impl TfidfModel {
    /// `codes` must be sorted and unique; each document is a count vector
    /// aligned with them.
    pub fn fit(codes: Vec<String>, docs: &[Vec<f64>]) -> Result<Self> {
        if codes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::VocabularyMismatch("codes must be sorted and unique".into()));
        }
        let mut df = vec![0.0; codes.len()];
        for d in docs {
            if d.len() != codes.len() {
                return Err(Error::DimensionMismatch {
                    what: "document",
                    expected: codes.len(),
                    found: d.len(),
                });
            }
            for (f, &c) in df.iter_mut().zip(d) {
                if c > 0.0 {
                    *f += 1.0;
                }
            }
        }
        let n = docs.len() as f64;
        let idf = df.iter().map(|&f| log((1.0 + n) / (1.0 + f)) + 1.0).collect();
        Ok(TfidfModel {
            codes,
            idf,
            window: TRAILING_WINDOW_DAYS as i64,
        })
    }

    pub fn from_parts(codes: Vec<String>, idf: Vec<f64>, window: i64) -> Result<Self> {
        if codes.len() != idf.len() {
            return Err(Error::DimensionMismatch {
                what: "idf",
                expected: codes.len(),
                found: idf.len(),
            });
        }
        Ok(TfidfModel { codes, idf, window })
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn window(&self) -> i64 {
        self.window
    }

    /// L2-normalized `tf · idf`; an all-zero count vector stays zero.
    pub fn transform(&self, counts: &[f64]) -> Result<Vec<f64>> {
        if counts.len() != self.idf.len() {
            return Err(Error::DimensionMismatch {
                what: "counts",
                expected: self.idf.len(),
                found: counts.len(),
            });
        }
        let mut v: Vec<f64> = counts.iter().zip(&self.idf).map(|(c, w)| c * w).collect();
        let norm = sqrt(v.iter().map(|x| x * x).sum());
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }

    /// Weighted vector for one subject at one scan.
    pub fn binned_codes(&self, streams: &[EventStream], scan_day: i64) -> Result<Vec<f64>> {
        self.transform(&window_counts(streams, &self.codes, scan_day, self.window)?)
    }
}
