//! Predictions, training traces and the evaluation report.

use std::fmt::Write as _;
use std::path::Path;

use longsig_core::ablation::FoldOutcome;
use longsig_core::eval::{EvalReport, Reclassification, RiskTier};

use super::rows;
use crate::error::Result;

pub use longsig_core::eval::Prediction;

/// `model<TAB>subject_id<TAB>fold<TAB>probability<TAB>label`.
pub fn write_predictions<'a>(runs: impl IntoIterator<Item = (&'a str, &'a [Prediction])>) -> String {
    let mut out = String::from("# model\tsubject_id\tfold\tprobability\tlabel\n");
    for (model, preds) in runs {
        for p in preds {
            let _ = writeln!(
                out,
                "{model}\t{}\t{}\t{}\t{}",
                p.subject_id,
                p.fold,
                p.probability,
                u8::from(p.label)
            );
        }
    }
    out
}

/// Predictions grouped by model in order of first appearance.
pub fn read_predictions(path: &Path, text: &str) -> Result<Vec<(String, Vec<Prediction>)>> {
    let mut out: Vec<(String, Vec<Prediction>)> = Vec::new();
    for row in rows(path, text, 5) {
        let row = row?;
        let probability = row.real(3, "probability")?;
        if !(0.0..=1.0).contains(&probability) {
            return Err(row.error(format!("probability {probability} outside [0, 1]")));
        }
        let p = Prediction {
            subject_id: row.str(1).to_string(),
            fold: row.get(2, "fold")?,
            probability,
            label: row.flag(4, "label")?,
        };
        match out.iter_mut().find(|(m, _)| m == row.str(0)) {
            Some((_, preds)) => preds.push(p),
            None => out.push((row.str(0).to_string(), vec![p])),
        }
    }
    Ok(out)
}

/// `model<TAB>fold<TAB>trace<TAB>index<TAB>loss`, where `trace` is
/// `train` (one value per optimizer step) or `validation`.
pub fn write_traces(outcomes: &[FoldOutcome]) -> String {
    let mut out = String::from("# model\tfold\ttrace\tindex\tloss\n");
    for o in outcomes {
        for (name, trace) in [("train", &o.train_trace), ("validation", &o.val_trace)] {
            for (i, v) in trace.iter().enumerate() {
                let _ = writeln!(out, "{}\t{}\t{name}\t{i}\t{v}", o.kind.name(), o.fold);
            }
        }
    }
    out
}

/// One line per trained fold.
pub fn write_fold_summary(outcomes: &[FoldOutcome]) -> String {
    let mut out = String::from("# model\tfold\tbest_step\tsteps\tstopped_early\n");
    for o in outcomes {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            o.kind.name(),
            o.fold,
            o.best_step,
            o.steps,
            u8::from(o.stopped_early)
        );
    }
    out
}

fn p_value_between(report: &EvalReport, a: &str, b: &str) -> Option<f64> {
    report
        .comparisons
        .iter()
        .find(|c| (c.a == a && c.b == b) || (c.a == b && c.b == a))
        .map(|c| c.p_value)
}

/// One row per model: AUC, bootstrap mean and interval, then the p-value
/// against every model (`-` on the diagonal).
pub fn write_metrics(report: &EvalReport) -> String {
    let mut out = String::from("model\tauc\tboot_mean\tci_lo\tci_hi");
    for m in &report.models {
        let _ = write!(out, "\tp_vs_{}", m.name);
    }
    out.push('\n');
    for m in &report.models {
        let _ = write!(out, "{}\t{}\t{}\t{}\t{}", m.name, m.auc, m.ci.mean, m.ci.lo, m.ci.hi);
        for other in &report.models {
            match p_value_between(report, &m.name, &other.name) {
                Some(p) if other.name != m.name => {
                    let _ = write!(out, "\t{p}");
                }
                _ => out.push_str("\t-"),
            }
        }
        out.push('\n');
    }
    out
}

fn write_grid(out: &mut String, title: &str, grid: &[[u64; 3]; 3]) {
    const TIERS: [RiskTier; 3] = [RiskTier::Low, RiskTier::Medium, RiskTier::High];
    let _ = writeln!(out, "  {title} (rows: baseline tier, columns: model tier)");
    let _ = write!(out, "    {:>8}", "");
    for t in TIERS {
        let _ = write!(out, " {:>8}", t.as_str());
    }
    out.push('\n');
    for (t, row) in TIERS.iter().zip(grid) {
        let _ = write!(out, "    {:>8}", t.as_str());
        for v in row {
            let _ = write!(out, " {v:>8}");
        }
        out.push('\n');
    }
}

pub fn write_reclassification_table(out: &mut String, model: &str, baseline: &str, t: &Reclassification) {
    let _ = writeln!(out, "{model} vs {baseline}");
    write_grid(out, "cases", &t.cases);
    let _ = writeln!(
        out,
        "  cases moved up {}, moved down {}",
        t.cases_correct, t.cases_incorrect
    );
    write_grid(out, "controls", &t.controls);
    let _ = writeln!(
        out,
        "  controls moved down {}, moved up {}",
        t.controls_correct, t.controls_incorrect
    );
}

pub fn write_reclassification(report: &EvalReport) -> String {
    let mut out = String::new();
    for e in &report.reclassification {
        write_reclassification_table(&mut out, &e.model, &e.baseline, &e.table);
        out.push('\n');
    }
    out
}

/// Readable summary: AUCs with intervals, pairwise p-values and the
/// reclassification grids.
pub fn write_report(report: &EvalReport, bootstrap: usize) -> String {
    let mut out = String::from("Held-out discrimination\n");
    let width = report.models.iter().map(|m| m.name.len()).max().unwrap_or(5).max(5);
    for m in &report.models {
        let _ = writeln!(
            out,
            "  {:<width$}  AUC {:.4}  95% CI [{:.4}, {:.4}]  n={}",
            m.name,
            m.auc,
            m.ci.lo,
            m.ci.hi,
            m.predictions.len()
        );
    }
    if !report.comparisons.is_empty() {
        let _ = writeln!(out, "\nWilcoxon signed-rank over {bootstrap} paired bootstrap AUCs");
        for c in &report.comparisons {
            let _ = writeln!(out, "  {:<width$} vs {:<width$}  p = {:.3e}", c.a, c.b, c.p_value);
        }
    }
    if !report.reclassification.is_empty() {
        out.push_str("\nRisk-tier reclassification (low < 0.05 <= medium < 0.65 <= high)\n");
        out.push_str(&write_reclassification(report));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use longsig_core::eval::evaluate_models;

    fn preds(scores: &[f64]) -> Vec<Prediction> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &p)| Prediction {
                subject_id: format!("s{i:02}"),
                fold: i % 2,
                probability: p,
                label: i % 2 == 0,
            })
            .collect()
    }

    #[test]
    fn predictions_round_trip() {
        let a = preds(&[0.9, 0.1, 0.8, 0.3]);
        let b = preds(&[0.5, 0.5, 0.2, 0.7]);
        let text = write_predictions([("A", &a[..]), ("B", &b[..])]);
        let back = read_predictions(Path::new("p"), &text).unwrap();
        assert_eq!(back, vec![("A".to_string(), a), ("B".to_string(), b)]);
        assert!(read_predictions(Path::new("p"), "A\ts\t0\t1.5\t1\n").is_err());
    }

    #[test]
    fn perfect_predictions_report_unit_auc() {
        let scores: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 0.9 } else { 0.01 }).collect();
        let noisy: Vec<f64> = (0..20).map(|i| (i * 7 % 11) as f64 / 11.0).collect();
        let report = evaluate_models(vec![("perfect".into(), preds(&scores)), ("noisy".into(), preds(&noisy))], 50, 3)
            .unwrap();
        let text = write_report(&report, 50);
        assert!(text.contains("perfect  AUC 1.0000"), "{text}");
        let metrics = write_metrics(&report);
        let lines: Vec<&str> = metrics.lines().collect();
        assert_eq!(lines[0], "model\tauc\tboot_mean\tci_lo\tci_hi\tp_vs_perfect\tp_vs_noisy");
        assert!(lines[1].starts_with("perfect\t1\t1\t1\t1\t-\t"));
        assert!(lines[2].ends_with("\t-"));
        let recl = write_reclassification(&report);
        assert!(recl.starts_with("noisy vs perfect\n"), "{recl}");
    }
}
