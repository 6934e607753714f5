//! `key = value` run configuration covering every stage's tunables.
//!
//! Lines starting with `#` and blank lines are ignored. Unknown or repeated
//! keys are rejected. Stage seeds that are not given are derived from the
//! master `seed`, so the resolved form always lists every seed explicitly.

use std::fmt::Write as _;

use longsig_core::ablation::{AblationConfig, ModelKind};
use longsig_core::ica::IcaConfig;
use longsig_core::rng::mix_seed;
use longsig_core::synth::GeneratorConfig;
use longsig_core::tem::gradcheck::GradCheckConfig;
use longsig_core::tem::{EncoderConfig, Pooling, RelativeTime, TemMode};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CurveSettings {
    /// Seed of the strided day sampling feeding signature learning.
    pub seed: u64,
    /// Variables with fewer events across the cohort are dropped.
    pub min_events: usize,
    /// Subjects whose full curve matrices are written out.
    pub export_subjects: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcaSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub standardize: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckSettings {
    pub check: GradCheckConfig,
    /// Largest accepted relative error.
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: GeneratorConfig,
    pub curves: CurveSettings,
    pub ica: IcaSettings,
    /// Model shapes, training and evaluation settings.
    pub ablation: AblationConfig,
    pub gradcheck: GradcheckSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = RunConfig {
            seed: 0,
            synth: GeneratorConfig::default(),
            curves: CurveSettings {
                seed: 0,
                min_events: 1,
                export_subjects: 3,
            },
            ica: IcaSettings {
                tol: 1e-4,
                max_iter: 200,
                standardize: false,
            },
            ablation: AblationConfig::default(),
            gradcheck: GradcheckSettings {
                check: GradCheckConfig::default(),
                tolerance: 1e-4,
            },
        };
        cfg.derive_seeds(&[]);
        cfg
    }
}

trait Value: Sized {
    fn parse(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! value_via_from_str {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse(s: &str) -> Result<Self, String> {
                s.parse().map_err(|e| format!("`{s}`: {e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

value_via_from_str!(u64, usize, i64, bool);

impl Value for f64 {
    fn parse(s: &str) -> Result<Self, String> {
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(_) => Err(format!("`{s}` is not finite")),
            Err(e) => Err(format!("`{s}`: {e}")),
        }
    }
    fn render(&self) -> String {
        format!("{self:?}")
    }
}

impl Value for (i64, i64) {
    fn parse(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once(',').ok_or_else(|| format!("`{s}`: expected `lo,hi`"))?;
        Ok((i64::parse(a.trim())?, i64::parse(b.trim())?))
    }
    fn render(&self) -> String {
        format!("{},{}", self.0, self.1)
    }
}

impl Value for Vec<f64> {
    fn parse(s: &str) -> Result<Self, String> {
        s.split(',').map(|v| f64::parse(v.trim())).collect()
    }
    fn render(&self) -> String {
        self.iter().map(Value::render).collect::<Vec<_>>().join(",")
    }
}

impl Value for Vec<ModelKind> {
    fn parse(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|v| ModelKind::parse(v.trim()).ok_or_else(|| format!("unknown model `{}`", v.trim())))
            .collect()
    }
    fn render(&self) -> String {
        self.iter().map(|k| k.name()).collect::<Vec<_>>().join(",")
    }
}

impl Value for RelativeTime {
    fn parse(s: &str) -> Result<Self, String> {
        match s {
            "last_observation" => Ok(RelativeTime::LastObservation),
            "pairwise" => Ok(RelativeTime::Pairwise),
            _ => Err(format!("`{s}`: expected last_observation or pairwise")),
        }
    }
    fn render(&self) -> String {
        match self {
            RelativeTime::LastObservation => "last_observation".into(),
            RelativeTime::Pairwise => "pairwise".into(),
        }
    }
}

impl Value for Pooling {
    fn parse(s: &str) -> Result<Self, String> {
        match s {
            "cls" => Ok(Pooling::Cls),
            "mean" => Ok(Pooling::Mean),
            _ => Err(format!("`{s}`: expected cls or mean")),
        }
    }
    fn render(&self) -> String {
        match self {
            Pooling::Cls => "cls".into(),
            Pooling::Mean => "mean".into(),
        }
    }
}

struct Entry {
    key: &'static str,
    get: fn(&RunConfig) -> String,
    set: fn(&mut RunConfig, &str) -> Result<(), String>,
}

macro_rules! entries {
    ($($key:literal => $($field:ident).+;)*) => {
        const ENTRIES: &[Entry] = &[$(Entry {
            key: $key,
            get: |c| Value::render(&c.$($field).+),
            set: |c, s| {
                c.$($field).+ = Value::parse(s)?;
                Ok(())
            },
        }),*];
    };
}

entries! {
    "seed" => seed;
    "synth.seed" => synth.seed;
    "synth.subjects" => synth.n_subjects;
    "synth.variables" => synth.p_variables;
    "synth.signatures" => synth.c_true;
    "synth.lab_fraction" => synth.lab_fraction;
    "synth.record_span_days" => synth.record_span_days;
    "synth.scan_count_weights" => synth.scan_count_weights;
    "synth.scan_gap_days" => synth.scan_gap_days;
    "synth.segment_days" => synth.segment_days;
    "synth.recency_signal" => synth.recency_signal;
    "synth.label_noise" => synth.label_noise;
    "synth.label_threshold" => synth.label_threshold;
    "synth.shuffle_labels" => synth.shuffle_labels;
    "synth.malignant_source" => synth.malignant_source;
    "synth.event_base_rate" => synth.event_base_rate;
    "synth.event_gain" => synth.event_gain;
    "synth.lab_rate" => synth.lab_rate;
    "synth.lab_noise" => synth.lab_noise;
    "synth.image_dim" => synth.image_dim;
    "synth.image_malignant_weight" => synth.image_malignant_weight;
    "synth.image_other_weight" => synth.image_other_weight;
    "synth.image_noise" => synth.image_noise;
    "curves.seed" => curves.seed;
    "curves.stride_days" => ablation.stride_days;
    "curves.min_events" => curves.min_events;
    "curves.export_subjects" => curves.export_subjects;
    "ica.seed" => ablation.ica_seed;
    "ica.components" => ablation.components;
    "ica.tol" => ica.tol;
    "ica.max_iter" => ica.max_iter;
    "ica.standardize" => ica.standardize;
    "model.names" => ablation.models;
    "model.max_scans" => ablation.max_scans;
    "model.dim" => ablation.model_dim;
    "model.heads" => ablation.heads;
    "model.head_dim" => ablation.head_dim;
    "model.mlp_dim" => ablation.mlp_dim;
    "model.blocks" => ablation.blocks;
    "model.tem_init_b" => ablation.tem_init_b;
    "model.tem_init_c" => ablation.tem_init_c;
    "model.relative_time" => ablation.relative_time;
    "model.pooling" => ablation.pooling;
    "model.image_hidden" => ablation.image_hidden;
    "train.seed" => ablation.train.seed;
    "train.batch_size" => ablation.train.batch_size;
    "train.learning_rate" => ablation.train.learning_rate;
    "train.momentum" => ablation.train.momentum;
    "train.max_epochs" => ablation.train.max_epochs;
    "train.early_stop_window" => ablation.train.early_stop_window;
    "train.early_stop_delta" => ablation.train.early_stop_delta;
    "train.val_interval" => ablation.train.val_interval;
    "train.folds" => ablation.train.folds;
    "train.validation_fraction" => ablation.train.validation_fraction;
    "eval.seed" => ablation.bootstrap_seed;
    "eval.bootstrap" => ablation.bootstrap;
    "gradcheck.seed" => gradcheck.check.seed;
    "gradcheck.step" => gradcheck.check.step;
    "gradcheck.exhaustive_up_to" => gradcheck.check.exhaustive_up_to;
    "gradcheck.samples_per_tensor" => gradcheck.check.samples_per_tensor;
    "gradcheck.floor" => gradcheck.check.floor;
    "gradcheck.tolerance" => gradcheck.tolerance;
}

/// Stage seeds derived from the master seed when not set explicitly; the
/// position is the derivation stream.
const STAGE_SEEDS: [&str; 6] = [
    "synth.seed",
    "curves.seed",
    "ica.seed",
    "train.seed",
    "eval.seed",
    "gradcheck.seed",
];

fn entry(key: &str) -> Option<&'static Entry> {
    ENTRIES.iter().find(|e| e.key == key)
}

impl RunConfig {
    /// Parses configuration text over the defaults. `seed_override`
    /// replaces the master seed before stage seeds are derived.
    pub fn parse(text: &str, seed_override: Option<u64>) -> Result<Self> {
        let mut assignments: Vec<(usize, &'static Entry, &str)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = n + 1;
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("config line {lineno}: expected `key = value`")))?;
            let key = key.trim();
            let e = entry(key).ok_or_else(|| Error::Usage(format!("config line {lineno}: unknown key `{key}`")))?;
            if assignments.iter().any(|(_, prev, _)| prev.key == key) {
                return Err(Error::Usage(format!("config line {lineno}: `{key}` set twice")));
            }
            assignments.push((lineno, e, value.trim()));
        }

        let mut cfg = RunConfig::default();
        let apply = |cfg: &mut RunConfig, (lineno, e, value): &(usize, &Entry, &str)| {
            (e.set)(cfg, value).map_err(|m| Error::Usage(format!("config line {lineno}: `{}`: {m}", e.key)))
        };
        if let Some(a) = assignments.iter().find(|(_, e, _)| e.key == "seed") {
            apply(&mut cfg, a)?;
        }
        if let Some(seed) = seed_override {
            cfg.seed = seed;
        }
        let explicit: Vec<&str> = assignments.iter().map(|(_, e, _)| e.key).collect();
        cfg.derive_seeds(&explicit);
        for a in assignments.iter().filter(|(_, e, _)| e.key != "seed") {
            apply(&mut cfg, a)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn derive_seeds(&mut self, explicit: &[&str]) {
        for (stream, key) in STAGE_SEEDS.iter().enumerate() {
            if !explicit.contains(key) {
                let seed = mix_seed(self.seed, stream as u64 + 1);
                (entry(key).expect("stage seed key").set)(self, &seed.to_string()).expect("seed renders as u64");
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |e: longsig_core::Error| Error::Usage(e.to_string());
        self.synth.validate().map_err(usage)?;
        self.ablation.train.validate().map_err(usage)?;
        let a = &self.ablation;
        if a.models.is_empty() {
            return Err(Error::Usage("model.names lists no models".into()));
        }
        if a.components == 0 || a.stride_days == 0 || a.image_hidden == 0 || a.bootstrap == 0 {
            return Err(Error::Usage(
                "ica.components, curves.stride_days, model.image_hidden and eval.bootstrap must be positive".into(),
            ));
        }
        a.encoder(ModelKind::TdSig, a.components, self.synth.image_dim, 0)
            .validate()
            .map_err(usage)?;
        if self.ica.max_iter == 0 || !(self.ica.tol > 0.0) {
            return Err(Error::Usage("ica.max_iter and ica.tol must be positive".into()));
        }
        let g = &self.gradcheck;
        if !(g.check.step > 0.0 && g.check.floor > 0.0 && g.tolerance > 0.0) {
            return Err(Error::Usage(
                "gradcheck.step, gradcheck.floor and gradcheck.tolerance must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn ica_config(&self) -> IcaConfig {
        IcaConfig {
            tol: self.ica.tol,
            max_iter: self.ica.max_iter,
            standardize: self.ica.standardize,
            ..IcaConfig::new(self.ablation.components, self.ablation.ica_seed)
        }
    }

    /// Full-size encoder (`2T + 1` tokens) used by the gradient check.
    pub fn gradcheck_encoder(&self) -> EncoderConfig {
        let a = &self.ablation;
        EncoderConfig {
            max_scans: a.max_scans,
            tem_init_b: a.tem_init_b,
            tem_init_c: a.tem_init_c,
            tem_mode: TemMode::Learned,
            relative_time: a.relative_time,
            pooling: a.pooling,
            init_seed: self.gradcheck.check.seed,
            ..EncoderConfig::new(a.components, self.synth.image_dim)
        }
    }

    /// Every key with its resolved value, one `key = value` per line.
    pub fn render(&self) -> String {
        self.render_keys(|_| true)
    }

    fn render_keys(&self, keep: impl Fn(&str) -> bool) -> String {
        let mut out = String::new();
        for e in ENTRIES.iter().filter(|e| keep(e.key)) {
            let _ = writeln!(out, "{} = {}", e.key, (e.get)(self));
        }
        out
    }

    /// SHA-256 of the resolved configuration, hex encoded.
    pub fn hash(&self) -> String {
        sha256_hex(self.render().as_bytes())
    }

    /// Hash of the keys under `prefixes` combined with upstream stamps.
    pub fn stage_hash(&self, stage: &str, prefixes: &[&str], upstream: &[&str]) -> String {
        let mut text = format!("stage {stage}\n");
        for u in upstream {
            let _ = writeln!(text, "after {u}");
        }
        text.push_str(&self.render_keys(|k| prefixes.iter().any(|p| k.starts_with(p))));
        sha256_hex(text.as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendered_config_parses_back_to_itself() {
        let cfg = RunConfig::parse("seed = 7\nmodel.pooling = cls\nsynth.scan_gap_days = 380, 500\n", None).unwrap();
        let again = RunConfig::parse(&cfg.render(), None).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
    }

    #[test]
    fn unknown_and_repeated_keys_are_rejected() {
        let err = RunConfig::parse("synth.subject = 10\n", None).unwrap_err();
        assert!(err.to_string().contains("unknown key `synth.subject`"), "{err}");
        assert_eq!(err.exit_code(), 1);
        assert!(RunConfig::parse("seed = 1\nseed = 2\n", None).is_err());
        assert!(RunConfig::parse("just words\n", None).is_err());
        assert!(RunConfig::parse("model.names = TDSig,Nope\n", None).is_err());
        assert!(RunConfig::parse("train.learning_rate = nan\n", None).is_err());
    }

    #[test]
    fn stage_seeds_follow_master_unless_pinned() {
        let a = RunConfig::parse("seed = 1\n", None).unwrap();
        let b = RunConfig::parse("seed = 2\n", None).unwrap();
        assert_ne!(a.synth.seed, b.synth.seed);
        assert_ne!(a.synth.seed, a.ablation.train.seed);
        let pinned = RunConfig::parse("seed = 2\ntrain.seed = 99\n", None).unwrap();
        assert_eq!(pinned.ablation.train.seed, 99);
        assert_eq!(pinned.synth.seed, b.synth.seed);
        let overridden = RunConfig::parse("seed = 1\n", Some(2)).unwrap();
        assert_eq!(overridden, b);
        assert!(a.render().contains(&format!("synth.seed = {}\n", a.synth.seed)));
    }

    #[test]
    fn stage_hash_ignores_unrelated_keys() {
        let a = RunConfig::parse("eval.bootstrap = 100\n", None).unwrap();
        let b = RunConfig::parse("eval.bootstrap = 200\n", None).unwrap();
        let synth = ["synth."];
        assert_eq!(a.stage_hash("synth", &synth, &[]), b.stage_hash("synth", &synth, &[]));
        assert_ne!(a.stage_hash("eval", &["eval."], &[]), b.stage_hash("eval", &["eval."], &[]));
        assert_ne!(a.stage_hash("eval", &["eval."], &["x"]), a.stage_hash("eval", &["eval."], &["y"]));
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        let err = RunConfig::parse("train.folds = 1\n", None).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(RunConfig::parse("model.heads = 0\n", None).is_err());
    }
}
