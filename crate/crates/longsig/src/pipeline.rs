//! Pipeline stages over an output tree.
//!
//! Every stage owns `<out>/<stage>/`, reads its inputs from upstream
//! directories and writes the resolved configuration, a log and a stamp
//! next to its outputs. The stamp hashes the stage's configuration keys and
//! the bytes of every input, so an unchanged stage is skipped on rerun.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use longsig_core::ablation::{assemble_features, cross_validate, summarize_curves, FoldOutcome, ModelKind};
use longsig_core::curve::{build_curveset, DayGrid};
use longsig_core::eval::evaluate_models;
use longsig_core::ica::{fit_ica, SampleMatrix};
use longsig_core::synth::{generate_cohort, SubjectRecord};
use longsig_core::tem::gradcheck::{check_encoder, probe_sequence, GradCheckReport};
use longsig_core::tem::EncoderState;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::formats::checkpoint::encode_checkpoint;
use crate::formats::curves::{
    decode_matrix, encode_curve_matrix, encode_matrix, read_day_vectors, read_vocabulary, write_day_vectors,
    write_vocabulary, CurveMatrix,
};
use crate::formats::events::{read_events, write_events};
use crate::formats::records::{assemble_subjects, read_labels, read_scans, write_labels, write_scans, write_truth};
use crate::formats::results::{
    read_predictions, write_fold_summary, write_metrics, write_predictions, write_reclassification, write_report,
    write_traces,
};
use crate::formats::sequences::write_sequences;
use crate::formats::signatures::{decode_signature_model, encode_signature_model};
use crate::formats::{join_reals, read_input, write_file};
use crate::runner::RayonRunner;

pub const CONFIG_FILE: &str = "config.txt";
pub const LOG_FILE: &str = "log.txt";
pub const STAMP_FILE: &str = "stamp";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Curves,
    Ica,
    Train,
    Eval,
    Gradcheck,
}

impl Stage {
    /// The data stages, in dependency order.
    pub const PIPELINE: [Stage; 5] = [Stage::Synth, Stage::Curves, Stage::Ica, Stage::Train, Stage::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Curves => "curves",
            Stage::Ica => "ica",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Gradcheck => "gradcheck",
        }
    }

    /// Configuration keys the stage depends on.
    fn prefixes(self) -> &'static [&'static str] {
        match self {
            Stage::Synth => &["synth."],
            Stage::Curves => &["curves."],
            Stage::Ica => &["ica."],
            Stage::Train => &["model.", "train."],
            Stage::Eval => &["eval."],
            Stage::Gradcheck => &["gradcheck.", "model.", "ica.components", "synth.image_dim"],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    Cached,
}

/// Bookkeeping for one stage execution.
struct StageRun<'a> {
    stage: Stage,
    dir: PathBuf,
    out: &'a Path,
    inputs: Sha256,
    outputs: Vec<String>,
    log: String,
    started: Instant,
    stamp: Option<String>,
}

impl<'a> StageRun<'a> {
    fn new(stage: Stage, out: &'a Path) -> Self {
        Self {
            stage,
            dir: out.join(stage.name()),
            out,
            inputs: Sha256::new(),
            outputs: Vec::new(),
            log: String::new(),
            started: Instant::now(),
            stamp: None,
        }
    }

    /// Reads `<out>/<from>/<file>` and folds it into the stamp.
    fn input(&mut self, from: Stage, file: &str) -> Result<Vec<u8>> {
        let bytes = read_input(&self.out.join(from.name()).join(file), from.name())?;
        self.inputs.update(format!("{}/{file} {}\n", from.name(), bytes.len()));
        self.inputs.update(&bytes);
        Ok(bytes)
    }

    fn input_text(&mut self, from: Stage, file: &str) -> Result<(PathBuf, String)> {
        let path = self.out.join(from.name()).join(file);
        let bytes = self.input(from, file)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Format {
            path: path.clone(),
            message: "not UTF-8 text".into(),
        })?;
        Ok((path, text))
    }

    /// Computes the stamp; true when a previous run with the same stamp left
    /// all its outputs in place.
    fn is_current(&mut self, config: &RunConfig) -> bool {
        let inputs = format!("{:x}", self.inputs.clone().finalize());
        let stamp = config.stage_hash(self.stage.name(), self.stage.prefixes(), &[&inputs]);
        let current = fs::read_to_string(self.dir.join(STAMP_FILE)).is_ok_and(|text| {
            let mut lines = text.lines();
            lines.next() == Some(stamp.as_str()) && lines.all(|f| self.dir.join(f).is_file())
        });
        self.stamp = Some(stamp);
        current
    }

    fn write(&mut self, file: &str, bytes: &[u8]) -> Result<()> {
        write_file(&self.dir.join(file), bytes)?;
        self.outputs.push(file.to_string());
        Ok(())
    }

    /// Logs and echoes to stderr.
    fn note(&mut self, line: impl AsRef<str>) {
        eprintln!("[{}] {}", self.stage.name(), line.as_ref());
        self.detail(line);
    }

    /// Logs only.
    fn detail(&mut self, line: impl AsRef<str>) {
        self.log.push_str(line.as_ref());
        self.log.push('\n');
    }

    fn finish(mut self, config: &RunConfig) -> Result<()> {
        if self.stamp.is_none() {
            self.is_current(config);
        }
        let elapsed = self.started.elapsed();
        self.note(format!("finished in {:.1}s", elapsed.as_secs_f64()));
        write_file(&self.dir.join(CONFIG_FILE), config.render().as_bytes())?;
        let log = format!(
            "stage {}\nconfig {}\nstamp {}\n{}",
            self.stage.name(),
            config.hash(),
            self.stamp.as_deref().unwrap_or_default(),
            self.log
        );
        write_file(&self.dir.join(LOG_FILE), log.as_bytes())?;
        let mut stamp = self.stamp.clone().unwrap_or_default();
        for f in &self.outputs {
            stamp.push('\n');
            stamp.push_str(f);
        }
        stamp.push('\n');
        write_file(&self.dir.join(STAMP_FILE), stamp.as_bytes())
    }
}

pub struct Pipeline {
    out: PathBuf,
    config: RunConfig,
    runner: RayonRunner,
    force: bool,
}

impl Pipeline {
    /// `threads == 0` uses every core. `force` reruns stages whose stamp is
    /// current.
    pub fn new(out: impl Into<PathBuf>, config: RunConfig, threads: usize, force: bool) -> Result<Self> {
        Ok(Self {
            out: out.into(),
            config,
            runner: RayonRunner::new(threads)?,
            force,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    pub fn dir(&self, stage: Stage) -> PathBuf {
        self.out.join(stage.name())
    }

    pub fn run_stage(&self, stage: Stage) -> Result<Outcome> {
        write_file(&self.out.join(CONFIG_FILE), self.config.render().as_bytes())?;
        let mut run = StageRun::new(stage, &self.out);
        run.note(format!("config {}", self.config.hash()));
        match stage {
            Stage::Synth => self.synth(run),
            Stage::Curves => self.curves(run),
            Stage::Ica => self.ica(run),
            Stage::Train => self.train(run),
            Stage::Eval => self.eval(run),
            Stage::Gradcheck => self.gradcheck(run),
        }
    }

    /// Runs the data stages in order.
    pub fn run_all(&self) -> Result<Vec<(Stage, Outcome)>> {
        Stage::PIPELINE
            .iter()
            .map(|&s| Ok((s, self.run_stage(s)?)))
            .collect()
    }

    fn skip(&self, run: &mut StageRun) -> bool {
        let current = run.is_current(&self.config);
        if current && !self.force {
            run.note("inputs and settings unchanged; skipped");
        }
        current && !self.force
    }

    fn synth(&self, mut run: StageRun) -> Result<Outcome> {
        if self.skip(&mut run) {
            return Ok(Outcome::Cached);
        }
        let cfg = &self.config.synth;
        let cohort = generate_cohort(cfg)?;
        let subjects = &cohort.subjects;
        let cases = subjects.iter().filter(|s| s.label).count();
        let events: usize = subjects.iter().flat_map(|s| &s.streams).map(|e| e.events().len()).sum();
        run.note(format!(
            "{} subjects ({cases} cases), {} variables, {events} events",
            subjects.len(),
            cfg.p_variables
        ));
        run.write("events.tsv", write_events(subjects.iter().flat_map(|s| &s.streams)).as_bytes())?;
        run.write("scans.tsv", write_scans(subjects).as_bytes())?;
        run.write(
            "labels.tsv",
            write_labels(subjects.iter().map(|s| (s.subject_id.as_str(), s.label))).as_bytes(),
        )?;
        let sequences = subjects
            .iter()
            .map(|s| s.sequence(cfg.max_scans(), None, true))
            .collect::<longsig_core::Result<Vec<_>>>()?;
        run.write("sequences.tsv", write_sequences(&sequences).as_bytes())?;
        run.write("truth.txt", write_truth(&cohort.truth).as_bytes())?;
        run.finish(&self.config)?;
        Ok(Outcome::Ran)
    }

    fn load_subjects(run: &mut StageRun) -> Result<Vec<SubjectRecord>> {
        let (labels_path, labels) = run.input_text(Stage::Synth, "labels.tsv")?;
        let (scans_path, scans) = run.input_text(Stage::Synth, "scans.tsv")?;
        let (events_path, events) = run.input_text(Stage::Synth, "events.tsv")?;
        assemble_subjects(
            read_labels(&labels_path, &labels)?,
            read_scans(&scans_path, &scans)?,
            read_events(&events_path, &events)?,
            &scans_path,
        )
    }

    fn curves(&self, mut run: StageRun) -> Result<Outcome> {
        let subjects = Self::load_subjects(&mut run)?;
        if self.skip(&mut run) {
            return Ok(Outcome::Cached);
        }
        let cfg = &self.config;
        let summary = summarize_curves(&subjects, cfg.ablation.stride_days, cfg.curves.seed, cfg.curves.min_events)?;
        run.note(format!(
            "{} variables, {} sampled cross-sections",
            summary.vocabulary.len(),
            summary.samples.sample_count()
        ));
        run.write("vocabulary.tsv", write_vocabulary(&summary.vocabulary).as_bytes())?;
        run.write("samples.bin", &encode_matrix(summary.samples.data()))?;
        let sections = subjects.iter().zip(&summary.sections).flat_map(|(s, xs)| {
            s.scans
                .iter()
                .zip(xs)
                .map(|(scan, x)| (s.subject_id.as_str(), scan.day, x.as_slice()))
        });
        run.write("sections.tsv", write_day_vectors("cross-section", sections).as_bytes())?;
        for s in subjects.iter().take(cfg.curves.export_subjects) {
            let grid = DayGrid::spanning(s.first_day(), s.last_day())?;
            let set = build_curveset(&s.subject_id, &s.streams, grid, &summary.vocabulary)?;
            run.write(
                &format!("curves-{}.bin", s.subject_id),
                &encode_curve_matrix(&CurveMatrix::from(&set)),
            )?;
        }
        run.finish(cfg)?;
        Ok(Outcome::Ran)
    }

    fn ica(&self, mut run: StageRun) -> Result<Outcome> {
        let (vocab_path, vocab) = run.input_text(Stage::Curves, "vocabulary.tsv")?;
        let samples_path = self.dir(Stage::Curves).join("samples.bin");
        let samples = run.input(Stage::Curves, "samples.bin")?;
        let (sections_path, sections) = run.input_text(Stage::Curves, "sections.tsv")?;
        if self.skip(&mut run) {
            return Ok(Outcome::Cached);
        }
        let vocabulary = read_vocabulary(&vocab_path, &vocab)?;
        let data = decode_matrix(&samples_path, &samples)?;
        let meta = vec![(String::new(), 0); data.cols()];
        let samples = SampleMatrix::new(data, vocabulary.ids().map(String::from).collect(), meta)?;
        let model = fit_ica(&samples, &self.config.ica_config())?;
        let conv = model.convergence();
        run.note(format!(
            "{} signatures over {} variables; {} iterations, final change {:.2e}, converged {}",
            model.components(),
            model.variable_count(),
            conv.iterations,
            conv.final_delta,
            conv.converged
        ));
        let sections = read_day_vectors(&sections_path, &sections)?;
        let mut expressions = Vec::new();
        for (subject, days) in &sections {
            for (day, x) in days {
                expressions.push((subject.as_str(), *day, model.project(x)?));
            }
        }
        run.write("model.bin", &encode_signature_model(&model))?;
        run.write(
            "expressions.tsv",
            write_day_vectors(
                "expression",
                expressions.iter().map(|(s, d, e)| (*s, *d, e.as_slice())),
            )
            .as_bytes(),
        )?;
        let mut table = String::from("# variable_id\tsignature loadings\n");
        for (i, v) in model.variables().iter().enumerate() {
            let _ = writeln!(table, "{v}\t{}", join_reals(model.signatures().row(i)));
        }
        run.write("signatures.tsv", table.as_bytes())?;
        run.finish(&self.config)?;
        Ok(Outcome::Ran)
    }

    fn train(&self, mut run: StageRun) -> Result<Outcome> {
        let subjects = Self::load_subjects(&mut run)?;
        let (vocab_path, vocab) = run.input_text(Stage::Curves, "vocabulary.tsv")?;
        let model_path = self.dir(Stage::Ica).join("model.bin");
        let model = run.input(Stage::Ica, "model.bin")?;
        let (expr_path, expr) = run.input_text(Stage::Ica, "expressions.tsv")?;
        if self.skip(&mut run) {
            return Ok(Outcome::Cached);
        }
        let cfg = &self.config.ablation;
        let vocabulary = read_vocabulary(&vocab_path, &vocab)?;
        let signatures = decode_signature_model(&model_path, &model)?;
        let expressions = align_expressions(&subjects, read_day_vectors(&expr_path, &expr)?, &expr_path)?;
        let features = assemble_features(&subjects, vocabulary, signatures, expressions)?;
        run.note(format!(
            "{} models x {} folds on {} subjects, {} worker threads",
            cfg.models.len(),
            cfg.train.folds,
            features.subjects.len(),
            self.runner.threads()
        ));
        let outcomes = cross_validate(&features, cfg, &self.runner)?;
        for o in &outcomes {
            run.detail(format!(
                "{} fold {}: best step {} of {}{}",
                o.kind.name(),
                o.fold,
                o.best_step,
                o.steps,
                if o.stopped_early { ", stopped early" } else { "" }
            ));
        }
        let runs = pooled_predictions(&outcomes, &cfg.models);
        run.write(
            "predictions.tsv",
            write_predictions(runs.iter().map(|(k, p)| (k.name(), p.as_slice()))).as_bytes(),
        )?;
        run.write("traces.tsv", write_traces(&outcomes).as_bytes())?;
        run.write("folds.tsv", write_fold_summary(&outcomes).as_bytes())?;
        for o in &outcomes {
            run.write(
                &format!("checkpoints/{}-fold{}.ckpt", o.kind.name(), o.fold),
                &encode_checkpoint(&o.model),
            )?;
        }
        let sequences = features
            .subjects
            .iter()
            .map(|s| longsig_core::ablation::model_sequence(ModelKind::TdSig, s, cfg.max_scans, None))
            .collect::<longsig_core::Result<Vec<_>>>()?;
        run.write("sequences.tsv", write_sequences(&sequences).as_bytes())?;
        run.finish(&self.config)?;
        Ok(Outcome::Ran)
    }

    fn eval(&self, mut run: StageRun) -> Result<Outcome> {
        let (path, text) = run.input_text(Stage::Train, "predictions.tsv")?;
        if self.skip(&mut run) {
            return Ok(Outcome::Cached);
        }
        let cfg = &self.config.ablation;
        let report = evaluate_models(read_predictions(&path, &text)?, cfg.bootstrap, cfg.bootstrap_seed)?;
        for m in &report.models {
            run.note(format!("{}: AUC {:.4} [{:.4}, {:.4}]", m.name, m.auc, m.ci.lo, m.ci.hi));
        }
        run.write("report.txt", write_report(&report, cfg.bootstrap).as_bytes())?;
        run.write("metrics.tsv", write_metrics(&report).as_bytes())?;
        run.write("reclassification.txt", write_reclassification(&report).as_bytes())?;
        run.finish(&self.config)?;
        Ok(Outcome::Ran)
    }

    /// Never cached: the exit status reports the check itself.
    fn gradcheck(&self, mut run: StageRun) -> Result<Outcome> {
        let report = gradient_check(&self.config)?;
        let worst = report.max_relative_error();
        let tol = self.config.gradcheck.tolerance;
        run.note(format!(
            "{} tensors, {} entries checked, max relative error {worst:.3e}",
            report.tensors.len(),
            report.entries_checked()
        ));
        let mut table = String::from("tensor\tsize\tentries_checked\tmax_entry_error\tdirectional_error\n");
        for t in &report.tensors {
            let _ = writeln!(
                table,
                "{}\t{}\t{}\t{:e}\t{:e}",
                t.name, t.size, t.entries_checked, t.max_entry_error, t.directional_error
            );
        }
        run.write("report.tsv", table.as_bytes())?;
        run.finish(&self.config)?;
        if worst >= tol {
            return Err(Error::CheckFailed(format!(
                "max relative gradient error {worst:.3e} is not below {tol:e}"
            )));
        }
        Ok(Outcome::Ran)
    }
}

/// Finite-difference check of the full-size encoder on a probe sequence.
pub fn gradient_check(config: &RunConfig) -> Result<GradCheckReport> {
    let enc = config.gradcheck_encoder();
    let state = EncoderState::new(enc.clone())?;
    let seq = probe_sequence(&enc, config.gradcheck.check.seed)?;
    Ok(check_encoder(&state, &seq, true, &config.gradcheck.check)?)
}

/// Pooled predictions per model, in configured model order.
pub fn pooled_predictions(outcomes: &[FoldOutcome], models: &[ModelKind]) -> Vec<(ModelKind, Vec<longsig_core::eval::Prediction>)> {
    models
        .iter()
        .map(|&k| {
            let preds = outcomes
                .iter()
                .filter(|o| o.kind == k)
                .flat_map(|o| o.predictions.iter().cloned())
                .collect();
            (k, preds)
        })
        .collect()
}

/// Orders expression records like the subjects' scans, checking days.
fn align_expressions(
    subjects: &[SubjectRecord],
    records: Vec<(String, Vec<(i64, Vec<f64>)>)>,
    path: &Path,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut by_subject: std::collections::HashMap<String, Vec<(i64, Vec<f64>)>> = records.into_iter().collect();
    subjects
        .iter()
        .map(|s| {
            let mismatch = |what: String| Error::Format {
                path: path.to_path_buf(),
                message: what,
            };
            let recs = by_subject
                .remove(&s.subject_id)
                .ok_or_else(|| mismatch(format!("no expressions for `{}`", s.subject_id)))?;
            if recs.len() != s.scans.len() || recs.iter().zip(&s.scans).any(|((d, _), sc)| *d != sc.day) {
                return Err(mismatch(format!("expression days of `{}` do not match its scans", s.subject_id)));
            }
            Ok(recs.into_iter().map(|(_, e)| e).collect())
        })
        .collect()
}
