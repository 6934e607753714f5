use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Segment of a token. Non-imaging slots carry signature expressions (or,
/// for the binned-code baseline, a code vector) and share one segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Cls,
    Signature,
    Image,
}

impl Modality {
    /// Row of the segment table.
    pub fn segment(self) -> usize {
        match self {
            Modality::Signature => 0,
            Modality::Image => 1,
            Modality::Cls => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Cls => "cls",
            Modality::Signature => "signature",
            Modality::Image => "image",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cls" => Some(Modality::Cls),
            "signature" => Some(Modality::Signature),
            "image" => Some(Modality::Image),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub payload: Vec<f64>,
    pub modality: Modality,
    pub day: i64,
    pub padding: bool,
}

/// `[cls, signature_1..=T, image_1..=T]`. Real tokens of each modality are
/// left-aligned in day order; the remaining slots are padding stamped with
/// the most recent day.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub subject_id: String,
    pub items: Vec<Token>,
    pub label: Option<bool>,
}

impl TokenSequence {
    /// Keeps the `max_scans` most recent observations of each modality.
    pub fn from_observations(
        subject_id: impl Into<String>,
        max_scans: usize,
        mut signatures: Vec<(i64, Vec<f64>)>,
        mut images: Vec<(i64, Vec<f64>)>,
        label: Option<bool>,
    ) -> Result<Self> {
        let subject_id = subject_id.into();
        signatures.sort_by_key(|(d, _)| *d);
        images.sort_by_key(|(d, _)| *d);
        let keep = |v: &mut Vec<(i64, Vec<f64>)>| {
            if v.len() > max_scans {
                v.drain(..v.len() - max_scans);
            }
        };
        keep(&mut signatures);
        keep(&mut images);
        let latest = signatures
            .iter()
            .chain(&images)
            .map(|(d, _)| *d)
            .max()
            .ok_or_else(|| Error::InvalidSequence(format!("`{subject_id}` has no observations")))?;

        let mut items = Vec::with_capacity(2 * max_scans + 1);
        items.push(Token {
            payload: Vec::new(),
            modality: Modality::Cls,
            day: latest,
            padding: false,
        });
        for (modality, obs) in [(Modality::Signature, signatures), (Modality::Image, images)] {
            let real = obs.len();
            for (day, payload) in obs {
                items.push(Token {
                    payload,
                    modality,
                    day,
                    padding: false,
                });
            }
            for _ in real..max_scans {
                items.push(Token {
                    payload: Vec::new(),
                    modality,
                    day: latest,
                    padding: true,
                });
            }
        }
        Ok(Self {
            subject_id,
            items,
            label,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn padding_mask(&self) -> Vec<bool> {
        self.items.iter().map(|t| t.padding).collect()
    }

    /// Most recent day over real, non-cls tokens.
    pub fn latest_day(&self) -> Option<i64> {
        self.items
            .iter()
            .filter(|t| !t.padding && t.modality != Modality::Cls)
            .map(|t| t.day)
            .max()
    }

    /// Checks slot layout, payload widths and day ordering.
    pub fn validate(&self, max_scans: usize, context_dim: usize, image_dim: usize) -> Result<()> {
        let expected = 2 * max_scans + 1;
        if self.items.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "sequence length",
                expected,
                found: self.items.len(),
            });
        }
        for (i, tok) in self.items.iter().enumerate() {
            let (modality, width) = if i == 0 {
                (Modality::Cls, 0)
            } else if i <= max_scans {
                (Modality::Signature, context_dim)
            } else {
                (Modality::Image, image_dim)
            };
            if tok.modality != modality {
                return Err(Error::InvalidSequence(format!(
                    "slot {i} holds a {} token, expected {}",
                    tok.modality.as_str(),
                    modality.as_str()
                )));
            }
            if i == 0 && tok.padding {
                return Err(Error::InvalidSequence("cls token cannot be padding".into()));
            }
            if i > 0 && !tok.padding {
                if tok.payload.len() != width {
                    return Err(Error::DimensionMismatch {
                        what: if modality == Modality::Image {
                            "image payload"
                        } else {
                            "signature payload"
                        },
                        expected: width,
                        found: tok.payload.len(),
                    });
                }
                if tok.payload.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidValue(format!("non-finite payload in slot {i}")));
                }
            }
        }
        for block in [&self.items[1..=max_scans], &self.items[max_scans + 1..]] {
            let days: Vec<i64> = block.iter().filter(|t| !t.padding).map(|t| t.day).collect();
            if days.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::InvalidSequence("days must be nondecreasing".into()));
            }
        }
        if self.latest_day().is_none() {
            return Err(Error::InvalidSequence("sequence has no real tokens".into()));
        }
        Ok(())
    }
}

/// How the relative-time matrix is filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelativeTime {
    /// `R[i][j] = |t_last − t_i|`; zero for cls and padded rows.
    LastObservation,
    /// `R[i][j] = |t_i − t_j|` over real tokens (cls sits at the latest day).
    /// Experimental: lets the scaling depend on the key's age as well.
    Pairwise,
}

/// Token ages in days, `n × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeTimeMatrix {
    pub r: Matrix,
}

impl RelativeTimeMatrix {
    /// `R̂ = TEM(R)` for one head.
    pub fn scaled(&self, b: f64, c: f64) -> Matrix {
        let mut out = self.r.clone();
        out.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = super::tem(*v, b, c));
        out
    }
}

pub fn build_relative_times(seq: &TokenSequence, mode: RelativeTime) -> RelativeTimeMatrix {
    let n = seq.items.len();
    let latest = seq.latest_day().unwrap_or(0);
    let age = |t: &Token| -> Option<f64> {
        if t.padding || t.modality == Modality::Cls {
            None
        } else {
            Some((latest - t.day).unsigned_abs() as f64)
        }
    };
    let r = match mode {
        RelativeTime::LastObservation => Matrix::from_fn(n, n, |i, _| age(&seq.items[i]).unwrap_or(0.0)),
        RelativeTime::Pairwise => Matrix::from_fn(n, n, |i, j| {
            let (a, b) = (&seq.items[i], &seq.items[j]);
            if a.padding || b.padding {
                0.0
            } else {
                (a.day - b.day).unsigned_abs() as f64
            }
        }),
    };
    RelativeTimeMatrix { r }
}
