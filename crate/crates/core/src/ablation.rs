//! End-to-end cross-validated comparison of cross-sectional and
//! longitudinal model shapes on a generated cohort.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::curve::{build_curveset, DayGrid, EventKind, Vocabulary, TRAILING_WINDOW_DAYS};
use crate::eval::{evaluate_models, EvalReport, Prediction};
use crate::ica::{fit_ica, CurveSampler, IcaConfig, SampleMatrix, SignatureModel};
use crate::mlp::MlpClassifier;
use crate::rng::mix_seed;
use crate::synth::{Cohort, SubjectRecord};
use crate::tem::{EncoderConfig, EncoderState, Pooling, RelativeTime, TemMode, TokenSequence};
use crate::tfidf::{window_counts, TfidfModel};
use crate::train::{split_validation, stratified_folds, train, Classifier, TrainConfig};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    /// MLP on the most recent scan's image features.
    CsImage,
    /// Encoder over the most recent scan: binned codes and image.
    CsCode,
    /// Encoder over the most recent scan: signature expressions and image.
    CsSig,
    /// Encoder over up to `T` scans, images only.
    TdImage,
    TdCode,
    TdSig,
    /// [`ModelKind::TdSig`] with attention scaling fixed at 1.
    TdSigUnit,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::CsImage,
        ModelKind::CsCode,
        ModelKind::CsSig,
        ModelKind::TdImage,
        ModelKind::TdCode,
        ModelKind::TdSig,
        ModelKind::TdSigUnit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::CsImage => "CSImage",
            ModelKind::CsCode => "CSCode",
            ModelKind::CsSig => "CSSig",
            ModelKind::TdImage => "TDImage",
            ModelKind::TdCode => "TDCode",
            ModelKind::TdSig => "TDSig",
            ModelKind::TdSigUnit => "TDSig-unit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s))
    }

    pub fn longitudinal(self) -> bool {
        matches!(
            self,
            ModelKind::TdImage | ModelKind::TdCode | ModelKind::TdSig | ModelKind::TdSigUnit
        )
    }

    fn context(self) -> Context {
        match self {
            ModelKind::CsImage | ModelKind::TdImage => Context::None,
            ModelKind::CsCode | ModelKind::TdCode => Context::Codes,
            ModelKind::CsSig | ModelKind::TdSig | ModelKind::TdSigUnit => Context::Signatures,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Context {
    None,
    Codes,
    Signatures,
}

/// Encoder shape and training settings shared by every model.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationConfig {
    pub stride_days: usize,
    pub components: usize,
    pub ica_seed: u64,
    pub max_scans: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub mlp_dim: usize,
    pub blocks: usize,
    pub tem_init_b: f64,
    pub tem_init_c: f64,
    pub relative_time: RelativeTime,
    pub pooling: Pooling,
    /// Hidden width of the image-only MLP.
    pub image_hidden: usize,
    pub train: TrainConfig,
    pub bootstrap: usize,
    pub bootstrap_seed: u64,
    pub models: Vec<ModelKind>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            stride_days: 30,
            components: 6,
            ica_seed: 0,
            max_scans: 3,
            model_dim: 32,
            heads: 4,
            head_dim: 8,
            mlp_dim: 32,
            blocks: 2,
            // A sharp initial decay: with a flat start the decay parameters
            // barely move during the short training runs used here.
            tem_init_b: 0.02,
            tem_init_c: 6.0,
            relative_time: RelativeTime::LastObservation,
            pooling: Pooling::Mean,
            image_hidden: 32,
            train: TrainConfig {
                learning_rate: 0.01,
                max_epochs: 30,
                ..TrainConfig::default()
            },
            bootstrap: crate::eval::BOOTSTRAP_SAMPLES,
            bootstrap_seed: 0,
            models: ModelKind::ALL.to_vec(),
        }
    }
}

impl AblationConfig {
    pub fn encoder(&self, kind: ModelKind, context_dim: usize, image_dim: usize, seed: u64) -> EncoderConfig {
        EncoderConfig {
            context_dim: context_dim.max(1),
            image_dim,
            model_dim: self.model_dim,
            heads: self.heads,
            head_dim: self.head_dim,
            mlp_dim: self.mlp_dim,
            blocks: self.blocks,
            max_scans: if kind.longitudinal() { self.max_scans } else { 1 },
            tem_init_b: self.tem_init_b,
            tem_init_c: self.tem_init_c,
            tem_mode: if kind == ModelKind::TdSigUnit {
                TemMode::Unit
            } else {
                TemMode::Learned
            },
            relative_time: self.relative_time,
            pooling: self.pooling,
            init_seed: seed,
            ..EncoderConfig::new(context_dim.max(1), image_dim)
        }
    }
}

/// Runs independent jobs and returns their results in job order.
pub trait JobRunner {
    fn run<T, F>(&self, jobs: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs jobs one after another on the calling thread.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl JobRunner for Sequential {
    fn run<T, F>(&self, jobs: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..jobs).map(f).collect()
    }
}

/// Per-scan inputs derived from one subject's record.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanFeatures {
    pub day: i64,
    pub image: Vec<f64>,
    pub expression: Vec<f64>,
    /// Code counts over the trailing year, aligned with
    /// [`FeatureSet::codes`].
    pub code_counts: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectFeatures {
    pub subject_id: String,
    pub label: bool,
    pub scans: Vec<ScanFeatures>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub vocabulary: Vocabulary,
    pub codes: Vec<String>,
    pub signatures: SignatureModel,
    pub subjects: Vec<SubjectFeatures>,
}

impl FeatureSet {
    pub fn labels(&self) -> Vec<bool> {
        self.subjects.iter().map(|s| s.label).collect()
    }

    pub fn image_dim(&self) -> usize {
        self.subjects
            .first()
            .and_then(|s| s.scans.first())
            .map_or(0, |s| s.image.len())
    }
}

/// Inputs to signature learning gathered in one pass over the cohort's
/// curves: the strided sample matrix and each subject's cross-sections at
/// its scan days (aligned with the subject's scans).
#[derive(Clone, Debug, PartialEq)]
pub struct CurveSummary {
    pub vocabulary: Vocabulary,
    pub samples: SampleMatrix,
    pub sections: Vec<Vec<Vec<f64>>>,
}

pub fn summarize_curves(subjects: &[SubjectRecord], stride_days: usize, seed: u64, min_events: usize) -> Result<CurveSummary> {
    if subjects.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let vocabulary = Vocabulary::from_streams(subjects.iter().flat_map(|s| s.streams.iter()), min_events)?;
    let mut sampler = CurveSampler::new(stride_days, seed)?;
    let mut sections = Vec::with_capacity(subjects.len());
    for s in subjects {
        let grid = DayGrid::spanning(s.first_day(), s.last_day())?;
        let curves = build_curveset(&s.subject_id, &s.streams, grid, &vocabulary)?;
        sampler.push(&curves)?;
        sections.push(s.scans.iter().map(|sc| curves.cross_section(sc.day)).collect::<Result<Vec<_>>>()?);
    }
    Ok(CurveSummary {
        vocabulary,
        samples: sampler.finish()?,
        sections,
    })
}

/// Signature expressions at every scan of every subject.
pub fn project_sections(signatures: &SignatureModel, sections: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<Vec<f64>>>> {
    sections
        .iter()
        .map(|subject| subject.iter().map(|x| signatures.project(x)).collect())
        .collect()
}

/// Joins records with their scan-day expressions and trailing-year code
/// counts.
pub fn assemble_features(
    subjects: &[SubjectRecord],
    vocabulary: Vocabulary,
    signatures: SignatureModel,
    expressions: Vec<Vec<Vec<f64>>>,
) -> Result<FeatureSet> {
    if expressions.len() != subjects.len() {
        return Err(Error::Misaligned(format!(
            "{} expression series for {} subjects",
            expressions.len(),
            subjects.len()
        )));
    }
    let codes: Vec<String> = vocabulary
        .entries()
        .iter()
        .filter(|e| e.kind == EventKind::CategoricalEvent)
        .map(|e| e.id.clone())
        .collect();
    let window = TRAILING_WINDOW_DAYS as i64;
    let mut out = Vec::with_capacity(subjects.len());
    for (s, expr) in subjects.iter().zip(expressions) {
        if expr.len() != s.scans.len() {
            return Err(Error::Misaligned(format!(
                "{} expressions for {} scans of `{}`",
                expr.len(),
                s.scans.len(),
                s.subject_id
            )));
        }
        let scans = s
            .scans
            .iter()
            .zip(expr)
            .map(|(sc, expression)| {
                Ok(ScanFeatures {
                    day: sc.day,
                    image: sc.image.clone(),
                    expression,
                    code_counts: window_counts(&s.streams, &codes, sc.day, window)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(SubjectFeatures {
            subject_id: s.subject_id.clone(),
            label: s.label,
            scans,
        });
    }
    Ok(FeatureSet {
        vocabulary,
        codes,
        signatures,
        subjects: out,
    })
}

/// Curves, signature learning and projection in one call. Labels are not
/// used.
pub fn extract_features(cohort: &Cohort, cfg: &AblationConfig) -> Result<FeatureSet> {
    let summary = summarize_curves(&cohort.subjects, cfg.stride_days, cfg.ica_seed, 1)?;
    let signatures = fit_ica(&summary.samples, &IcaConfig::new(cfg.components, cfg.ica_seed))?;
    let expressions = project_sections(&signatures, &summary.sections)?;
    assemble_features(&cohort.subjects, summary.vocabulary, signatures, expressions)
}

/// Token sequence for one subject under a model shape. Cross-sectional
/// shapes keep only the most recent scan.
pub fn model_sequence(
    kind: ModelKind,
    subject: &SubjectFeatures,
    max_scans: usize,
    tfidf: Option<&TfidfModel>,
) -> Result<TokenSequence> {
    let t = if kind.longitudinal() { max_scans } else { 1 };
    let images = subject.scans.iter().map(|s| (s.day, s.image.clone())).collect();
    let context = match kind.context() {
        Context::None => Vec::new(),
        Context::Signatures => subject.scans.iter().map(|s| (s.day, s.expression.clone())).collect(),
        Context::Codes => {
            let model = tfidf.ok_or_else(|| Error::InvalidConfig("code models need a fitted TF-IDF".into()))?;
            subject
                .scans
                .iter()
                .map(|s| Ok((s.day, model.transform(&s.code_counts)?)))
                .collect::<Result<Vec<_>>>()?
        }
    };
    TokenSequence::from_observations(subject.subject_id.clone(), t, context, images, Some(subject.label))
}

/// Train, validation and test subject indices for one fold.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn fold_splits(labels: &[bool], cfg: &TrainConfig) -> Result<Vec<FoldSplit>> {
    let assignment = stratified_folds(labels, cfg.folds, cfg.seed)?;
    (0..cfg.folds)
        .map(|fold| {
            let test: Vec<usize> = (0..labels.len()).filter(|&i| assignment[i] == fold).collect();
            let rest: Vec<usize> = (0..labels.len()).filter(|&i| assignment[i] != fold).collect();
            let (train, validation) =
                split_validation(&rest, cfg.validation_fraction, mix_seed(cfg.seed, fold as u64))?;
            Ok(FoldSplit {
                fold,
                train,
                validation,
                test,
            })
        })
        .collect()
}

/// Parameters of a trained model, ready to be saved.
#[derive(Clone, Debug, PartialEq)]
pub enum TrainedModel {
    Encoder(EncoderState),
    Mlp(MlpClassifier),
}

/// Result of training one model shape on one fold.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldOutcome {
    pub kind: ModelKind,
    pub fold: usize,
    pub predictions: Vec<Prediction>,
    pub model: TrainedModel,
    pub best_step: usize,
    pub steps: usize,
    pub stopped_early: bool,
    pub train_trace: Vec<f64>,
    pub val_trace: Vec<f64>,
}

struct FitStats {
    probabilities: Vec<f64>,
    best_step: usize,
    steps: usize,
    stopped_early: bool,
    train_trace: Vec<f64>,
    val_trace: Vec<f64>,
}

fn fit_predict<M: Classifier>(model: &mut M, inputs: &[(M::Input, bool)], split: &FoldSplit, cfg: &TrainConfig) -> Result<FitStats>
where
    M::Input: Clone,
{
    let pick = |idx: &[usize]| idx.iter().map(|&i| inputs[i].clone()).collect::<Vec<_>>();
    let outcome = train(model, &pick(&split.train), &pick(&split.validation), cfg)?;
    let probabilities = split
        .test
        .iter()
        .map(|&i| model.probability(&inputs[i].0))
        .collect::<Result<Vec<_>>>()?;
    Ok(FitStats {
        probabilities,
        best_step: outcome.best_step,
        steps: outcome.steps,
        stopped_early: outcome.stopped_early,
        train_trace: outcome.train_trace,
        val_trace: outcome.val_trace,
    })
}

/// Trains one model shape on one fold and scores its test subjects.
pub fn run_fold(kind: ModelKind, features: &FeatureSet, split: &FoldSplit, cfg: &AblationConfig) -> Result<FoldOutcome> {
    let seed = mix_seed(cfg.train.seed, (kind as u64) << 8 | split.fold as u64);
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let image_dim = features.image_dim();
    let (model, stats) = if kind == ModelKind::CsImage {
        let inputs: Vec<(Vec<f64>, bool)> = features
            .subjects
            .iter()
            .map(|s| {
                let last = s
                    .scans
                    .last()
                    .ok_or_else(|| Error::InvalidSequence(format!("`{}` has no scans", s.subject_id)))?;
                Ok((last.image.clone(), s.label))
            })
            .collect::<Result<_>>()?;
        let mut mlp = MlpClassifier::new(image_dim, cfg.image_hidden, seed)?;
        let stats = fit_predict(&mut mlp, &inputs, split, &train_cfg)?;
        (TrainedModel::Mlp(mlp), stats)
    } else {
        let tfidf = match kind.context() {
            Context::Codes => {
                let docs: Vec<Vec<f64>> = split
                    .train
                    .iter()
                    .flat_map(|&i| features.subjects[i].scans.iter().map(|s| s.code_counts.clone()))
                    .collect();
                Some(TfidfModel::fit(features.codes.clone(), &docs)?)
            }
            _ => None,
        };
        let context_dim = match kind.context() {
            Context::None => 1,
            Context::Codes => features.codes.len(),
            Context::Signatures => features.signatures.components(),
        };
        let inputs: Vec<(TokenSequence, bool)> = features
            .subjects
            .iter()
            .map(|s| Ok((model_sequence(kind, s, cfg.max_scans, tfidf.as_ref())?, s.label)))
            .collect::<Result<_>>()?;
        let mut encoder = EncoderState::new(cfg.encoder(kind, context_dim, image_dim, seed))?;
        let stats = fit_predict(&mut encoder, &inputs, split, &train_cfg)?;
        (TrainedModel::Encoder(encoder), stats)
    };
    let predictions = split
        .test
        .iter()
        .zip(stats.probabilities)
        .map(|(&i, probability)| Prediction {
            subject_id: features.subjects[i].subject_id.clone(),
            fold: split.fold,
            probability,
            label: features.subjects[i].label,
        })
        .collect();
    Ok(FoldOutcome {
        kind,
        fold: split.fold,
        predictions,
        model,
        best_step: stats.best_step,
        steps: stats.steps,
        stopped_early: stats.stopped_early,
        train_trace: stats.train_trace,
        val_trace: stats.val_trace,
    })
}

/// Trains every configured model shape on every fold. Outcomes come back
/// ordered by model, then fold.
pub fn cross_validate<R: JobRunner>(features: &FeatureSet, cfg: &AblationConfig, runner: &R) -> Result<Vec<FoldOutcome>> {
    let splits = fold_splits(&features.labels(), &cfg.train)?;
    let jobs: Vec<(ModelKind, usize)> = cfg
        .models
        .iter()
        .flat_map(|&k| (0..splits.len()).map(move |f| (k, f)))
        .collect();
    runner
        .run(jobs.len(), |j| {
            let (kind, fold) = jobs[j];
            run_fold(kind, features, &splits[fold], cfg)
        })
        .into_iter()
        .collect()
}

/// Pools fold predictions per model and builds the report.
pub fn summarize_outcomes(outcomes: &[FoldOutcome], models: &[ModelKind], bootstrap: usize, seed: u64) -> Result<EvalReport> {
    let runs = models
        .iter()
        .map(|&k| {
            let preds = outcomes
                .iter()
                .filter(|o| o.kind == k)
                .flat_map(|o| o.predictions.iter().cloned())
                .collect();
            (String::from(k.name()), preds)
        })
        .collect();
    evaluate_models(runs, bootstrap, seed)
}

/// Cross-validates every configured model shape and assembles the report.
pub fn run_ablation<R: JobRunner>(features: &FeatureSet, cfg: &AblationConfig, runner: &R) -> Result<EvalReport> {
    let outcomes = cross_validate(features, cfg, runner)?;
    summarize_outcomes(&outcomes, &cfg.models, cfg.bootstrap, cfg.bootstrap_seed)
}
