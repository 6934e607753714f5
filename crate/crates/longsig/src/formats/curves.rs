//! Curve matrices, the sampled cross-section matrix, the vocabulary and
//! per-day vector records.

use std::fmt::Write as _;
use std::path::Path;

use longsig_core::curve::{CurveSet, EventKind, VariableSpec, Vocabulary};
use longsig_core::linalg::Matrix;

use super::binary::{Decoder, Encoder};
use super::{join_reals, rows};
use crate::error::Result;

/// Dense curves of one subject.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveMatrix {
    pub start_day: i64,
    /// `variable_count × day_count`.
    pub values: Matrix,
}

impl From<&CurveSet> for CurveMatrix {
    fn from(set: &CurveSet) -> Self {
        let grid = set.grid();
        let data: Vec<f64> = set.curves().flat_map(|c| c.values().iter().copied()).collect();
        CurveMatrix {
            start_day: grid.start(),
            values: Matrix::from_vec(set.len(), grid.len(), data),
        }
    }
}

/// Header `variable_count: u64, day_count: u64, start_day: i64`, then
/// row-major doubles, all little-endian.
pub fn encode_curve_matrix(m: &CurveMatrix) -> Vec<u8> {
    let mut e = Encoder::default();
    e.usize(m.values.rows());
    e.usize(m.values.cols());
    e.i64(m.start_day);
    e.f64s(m.values.as_slice());
    e.finish()
}

pub fn decode_curve_matrix(path: &Path, bytes: &[u8]) -> Result<CurveMatrix> {
    let mut d = Decoder::new(bytes, path);
    let rows = d.u64()? as usize;
    let cols = d.u64()? as usize;
    let start_day = d.i64()?;
    let n = rows.checked_mul(cols).ok_or_else(|| d.error("size overflow"))?;
    let data = d.f64s(n)?;
    d.finish()?;
    Ok(CurveMatrix {
        start_day,
        values: Matrix::from_vec(rows, cols, data),
    })
}

const MATRIX_MAGIC: &[u8; 12] = b"LONGSIG-MAT\0";

pub fn encode_matrix(m: &Matrix) -> Vec<u8> {
    let mut e = Encoder::with_header(MATRIX_MAGIC, 1);
    e.usize(m.rows());
    e.usize(m.cols());
    e.f64s(m.as_slice());
    e.finish()
}

pub fn decode_matrix(path: &Path, bytes: &[u8]) -> Result<Matrix> {
    let mut d = Decoder::new(bytes, path);
    let version = d.header(MATRIX_MAGIC)?;
    if version != 1 {
        return Err(d.error(format!("unsupported version {version}")));
    }
    let m = read_matrix(&mut d)?;
    d.finish()?;
    Ok(m)
}

pub(crate) fn read_matrix(d: &mut Decoder) -> Result<Matrix> {
    let rows = d.count(0)?;
    let cols = d.count(0)?;
    let n = rows.checked_mul(cols).ok_or_else(|| d.error("size overflow"))?;
    Ok(Matrix::from_vec(rows, cols, d.f64s(n)?))
}

pub(crate) fn write_matrix(e: &mut Encoder, m: &Matrix) {
    e.usize(m.rows());
    e.usize(m.cols());
    e.f64s(m.as_slice());
}

/// `variable_id<TAB>kind<TAB>fill`.
pub fn write_vocabulary(v: &Vocabulary) -> String {
    let mut out = String::from("# variable_id\tkind\tfill\n");
    for e in v.entries() {
        let _ = writeln!(out, "{}\t{}\t{}", e.id, e.kind.as_str(), e.fill);
    }
    out
}

pub fn read_vocabulary(path: &Path, text: &str) -> Result<Vocabulary> {
    let entries = rows(path, text, 3)
        .map(|row| {
            let row = row?;
            Ok(VariableSpec {
                id: row.str(0).to_string(),
                kind: EventKind::parse(row.str(1)).ok_or_else(|| row.error(format!("unknown kind `{}`", row.str(1))))?,
                fill: row.real(2, "fill")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Vocabulary::new(entries)?)
}

/// Vectors keyed by subject and day, one per line:
/// `subject_id<TAB>day<TAB>v_1,...,v_k`. Used for scan-day cross-sections
/// and signature expressions.
pub fn write_day_vectors<'a>(header: &str, records: impl IntoIterator<Item = (&'a str, i64, &'a [f64])>) -> String {
    let mut out = format!("# subject_id\tday\t{header}\n");
    for (subject, day, v) in records {
        let _ = writeln!(out, "{subject}\t{day}\t{}", join_reals(v));
    }
    out
}

/// Records grouped by subject in file order.
pub fn read_day_vectors(path: &Path, text: &str) -> Result<Vec<(String, Vec<(i64, Vec<f64>)>)>> {
    let mut out: Vec<(String, Vec<(i64, Vec<f64>)>)> = Vec::new();
    for row in rows(path, text, 3) {
        let row = row?;
        let entry = (row.get(1, "day")?, row.reals(2, "vector")?);
        match out.last_mut() {
            Some((s, v)) if s == row.str(0) => v.push(entry),
            _ => {
                if out.iter().any(|(s, _)| s == row.str(0)) {
                    return Err(row.error(format!("records of `{}` are not contiguous", row.str(0))));
                }
                out.push((row.str(0).to_string(), vec![entry]));
            }
        }
    }
    Ok(out)
}
