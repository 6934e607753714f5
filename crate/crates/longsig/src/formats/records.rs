//! Scans, labels and the generator's ground truth, plus reassembly of
//! subject records from the files a generated cohort is written to.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use longsig_core::curve::EventStream;
use longsig_core::linalg::Matrix;
use longsig_core::synth::{GroundTruth, Scan, SubjectRecord};

use super::{join_reals, rows};
use crate::error::{Error, Result};

/// `subject_id<TAB>day<TAB>image features`.
pub fn write_scans(subjects: &[SubjectRecord]) -> String {
    let mut out = String::from("# subject_id\tday\timage\n");
    for s in subjects {
        for scan in &s.scans {
            let _ = writeln!(out, "{}\t{}\t{}", s.subject_id, scan.day, join_reals(&scan.image));
        }
    }
    out
}

pub fn read_scans(path: &Path, text: &str) -> Result<Vec<(String, Vec<Scan>)>> {
    let mut out: Vec<(String, Vec<Scan>)> = Vec::new();
    for row in rows(path, text, 3) {
        let row = row?;
        let scan = Scan {
            day: row.get(1, "day")?,
            image: row.reals(2, "image")?,
        };
        match out.last_mut() {
            Some((s, scans)) if s == row.str(0) => {
                if scans.last().is_some_and(|p| p.day >= scan.day) {
                    return Err(row.error("scan days must increase within a subject"));
                }
                scans.push(scan);
            }
            _ => out.push((row.str(0).to_string(), vec![scan])),
        }
    }
    Ok(out)
}

/// `subject_id<TAB>label` with labels as 0/1.
pub fn write_labels<'a>(labels: impl IntoIterator<Item = (&'a str, bool)>) -> String {
    let mut out = String::from("# subject_id\tlabel\n");
    for (s, y) in labels {
        let _ = writeln!(out, "{s}\t{}", u8::from(y));
    }
    out
}

pub fn read_labels(path: &Path, text: &str) -> Result<Vec<(String, bool)>> {
    rows(path, text, 2)
        .map(|row| {
            let row = row?;
            Ok((row.str(0).to_string(), row.flag(1, "label")?))
        })
        .collect()
}

/// Joins events, scans and labels. Subjects follow the label file; a
/// subject may have no events but must have scans.
pub fn assemble_subjects(
    labels: Vec<(String, bool)>,
    scans: Vec<(String, Vec<Scan>)>,
    events: Vec<(String, Vec<EventStream>)>,
    scans_path: &Path,
) -> Result<Vec<SubjectRecord>> {
    let mut scans: HashMap<String, Vec<Scan>> = scans.into_iter().collect();
    let mut events: HashMap<String, Vec<EventStream>> = events.into_iter().collect();
    let out = labels
        .into_iter()
        .map(|(subject_id, label)| {
            let scans = scans.remove(&subject_id).ok_or_else(|| Error::Format {
                path: scans_path.to_path_buf(),
                message: format!("no scans for `{subject_id}`"),
            })?;
            Ok(SubjectRecord {
                streams: events.remove(&subject_id).unwrap_or_default(),
                subject_id,
                scans,
                label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(extra) = scans.keys().chain(events.keys()).next() {
        return Err(Error::Format {
            path: scans_path.to_path_buf(),
            message: format!("`{extra}` has records but no label"),
        });
    }
    Ok(out)
}

fn write_matrix_rows(out: &mut String, name: &str, m: &Matrix) {
    let _ = writeln!(out, "{name}\t{}\t{}", m.rows(), m.cols());
    for i in 0..m.rows() {
        let _ = writeln!(out, "\t{}", join_reals(m.row(i)));
    }
}

/// Human-readable dump of the planted structure. Only checks read it.
pub fn write_truth(truth: &GroundTruth) -> String {
    let mut out = String::from("# planted ground truth; not an input to any stage\n");
    let _ = writeln!(out, "variables\t{}", truth.variables.join(","));
    write_matrix_rows(&mut out, "s_true", &truth.s_true);
    let _ = writeln!(out, "link_slope\t{}", join_reals(&truth.link_slope));
    write_matrix_rows(&mut out, "image_readout", &truth.image_readout);
    let _ = writeln!(out, "malignant_source\t{}", truth.malignant_source);
    let _ = writeln!(out, "label_rule\t{}", truth.rule.as_str());
    let _ = writeln!(out, "threshold\t{}", truth.threshold);
    for s in &truth.subjects {
        let _ = writeln!(
            out,
            "subject\t{}\tscore={}\tclean_label={}\tlabel={}\tscan_days={}",
            s.subject_id,
            s.score,
            u8::from(s.clean_label),
            u8::from(s.label),
            s.scan_days.iter().map(i64::to_string).collect::<Vec<_>>().join(",")
        );
        for seg in &s.segments {
            let _ = writeln!(out, "\t{}\t{}", seg.start, join_reals(&seg.expression));
        }
    }
    out
}
