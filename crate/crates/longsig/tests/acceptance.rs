//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass substrings as arguments to run a subset.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use longsig::pipeline::gradient_check;
use longsig::runner::RayonRunner;
use longsig::RunConfig;
use longsig_core::ablation::{extract_features, run_ablation, AblationConfig, ModelKind};
use longsig_core::curve::{
    event_density, interpolate_continuous, rolling_mean, rolling_mean_365, DayGrid, Event, EventKind, EventStream,
    LongitudinalCurve, MonotoneCubic,
};
use longsig_core::eval::{auc, reclassify, wilcoxon_signed_rank, RiskTier, HIGH_RISK_FROM, LOW_RISK_BELOW};
use longsig_core::ica::{fit_ica, match_components, IcaConfig, SampleMatrix};
use longsig_core::linalg::Matrix;
use longsig_core::param::ParamSet;
use longsig_core::rng::Rng;
use longsig_core::synth::{generate_cohort, GeneratorConfig};
use longsig_core::tem::{
    attention_block, build_relative_times, tem, EncoderConfig, EncoderState, Pooling, RelativeTime,
    RelativeTimeMatrix, TokenSequence,
};
use longsig_core::train::{early_stop_step, TrainConfig};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:.1?}, limit {limit:?}"))
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Outcome); 9] = [
        ("gradient fidelity", gradient_fidelity),
        ("two-token attention oracle", two_token_attention),
        ("TEM properties", tem_properties),
        ("padding invariance", padding_invariance),
        ("ICA recovery", ica_recovery),
        ("curve oracles", curve_oracles),
        ("metric oracles", metric_oracles),
        ("directional ablation", directional_ablation),
        ("determinism", determinism),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in checks {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------------------
// Encoder

fn gradient_fidelity() -> Outcome {
    let mut flat_start = RunConfig::default();
    flat_start.ablation.pooling = Pooling::Cls;
    flat_start.ablation.tem_init_b = 1.0 / 365.0;
    flat_start.ablation.tem_init_c = 1.0;
    let mut details = Vec::new();
    for (label, cfg) in [("mean pooling", RunConfig::default()), ("cls pooling", flat_start)] {
        let enc = cfg.gradcheck_encoder();
        ensure(enc.sequence_len() == 7 && enc.model_dim == 320 && enc.blocks == 4, || {
            format!("{label}: not the default shape: {enc:?}")
        })?;
        let start = Instant::now();
        let report = gradient_check(&cfg).map_err(|e| e.to_string())?;
        within(start.elapsed(), Duration::from_secs(120))?;
        for tem_tensor in ["tem_b_raw", "tem_c_raw"] {
            ensure(report.tensors.iter().any(|t| t.name.ends_with(tem_tensor)), || {
                format!("{label}: {tem_tensor} not checked")
            })?;
        }
        let worst = report.max_relative_error();
        ensure(worst < 1e-4, || format!("{label}: max relative error {worst:.3e}"))?;
        details.push(format!(
            "{label} {} tensors / {} entries, max rel err {worst:.2e}",
            report.tensors.len(),
            report.entries_checked()
        ));
    }
    Ok(details.join("; "))
}

fn softplus(x: f64) -> f64 {
    x.exp().ln_1p()
}

/// Attention sublayer for two tokens written out with scalar loops.
#[allow(clippy::needless_range_loop)]
fn attention_by_hand(
    h: &[[f64; 3]; 2],
    ages: [f64; 2],
    block: &longsig_core::tem::BlockParams,
    heads: usize,
    dh: usize,
    eps: f64,
) -> [[f64; 3]; 2] {
    let d = 3;
    let width = heads * dh;
    let mut normed = [[0.0; 3]; 2];
    for i in 0..2 {
        let mean = (h[i][0] + h[i][1] + h[i][2]) / 3.0;
        let var = h[i].iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        for t in 0..d {
            normed[i][t] = (h[i][t] - mean) / (var + eps).sqrt() * block.ln1_gain[t] + block.ln1_bias[t];
        }
    }
    let project = |w: &Matrix, b: &[f64]| -> Vec<Vec<f64>> {
        (0..2)
            .map(|i| (0..width).map(|a| b[a] + (0..d).map(|t| normed[i][t] * w[(t, a)]).sum::<f64>()).collect())
            .collect()
    };
    let (q, k, v) = (project(&block.wq, &block.bq), project(&block.wk, &block.bk), project(&block.wv, &block.bv));
    let mut concat = vec![vec![0.0; width]; 2];
    for head in 0..heads {
        let b = softplus(block.tem_b_raw[head]) / 365.0;
        let c = softplus(block.tem_c_raw[head]);
        let cols = head * dh..(head + 1) * dh;
        for i in 0..2 {
            let rhat = 1.0 / (1.0 + (b * ages[i] - c).exp());
            let scores: Vec<f64> = (0..2)
                .map(|j| {
                    let dot: f64 = cols.clone().map(|a| q[i][a] * k[j][a]).sum();
                    dot.max(0.0) * rhat / (dh as f64).sqrt()
                })
                .collect();
            let top = scores[0].max(scores[1]);
            let e: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
            for a in cols.clone() {
                concat[i][a] = (e[0] * v[0][a] + e[1] * v[1][a]) / (e[0] + e[1]);
            }
        }
    }
    let mut out = [[0.0; 3]; 2];
    for i in 0..2 {
        for col in 0..d {
            out[i][col] =
                h[i][col] + block.bo[col] + (0..width).map(|a| concat[i][a] * block.wo[(a, col)]).sum::<f64>();
        }
    }
    out
}

fn two_token_attention() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let cfg = EncoderConfig {
            model_dim: 3,
            heads: 2,
            head_dim: 2,
            mlp_dim: 2,
            blocks: 1,
            ..EncoderConfig::new(1, 1)
        };
        let mut state = EncoderState::new(cfg.clone()).map_err(|e| e.to_string())?;
        let mut rng = Rng::new(seed);
        for t in state.params_mut().tensors_mut() {
            t.iter_mut().for_each(|v| *v = rng.normal());
        }
        let block = state.params().blocks[0].clone();
        let h = [[rng.normal(), rng.normal(), rng.normal()], [rng.normal(), rng.normal(), rng.normal()]];
        // token 0 observed 400 days before token 1
        let ages = [400.0, 0.0];
        let times = RelativeTimeMatrix {
            r: Matrix::from_fn(2, 2, |i, _| ages[i]),
        };
        let hm = Matrix::from_fn(2, 3, |i, j| h[i][j]);
        let got = attention_block(&hm, &times, &[false, false], &block, &cfg).map_err(|e| e.to_string())?;
        let want = attention_by_hand(&h, ages, &block, 2, 2, cfg.layer_norm_eps);
        for i in 0..2 {
            for j in 0..3 {
                worst = worst.max((got[(i, j)] - want[i][j]).abs());
            }
        }
    }
    ensure(worst <= 1e-10, || format!("max deviation {worst:.3e}"))?;
    Ok(format!("20 random blocks, max deviation {worst:.1e}"))
}

fn small_encoder(heads: usize) -> EncoderConfig {
    EncoderConfig {
        model_dim: 8,
        heads,
        head_dim: 3,
        mlp_dim: 6,
        blocks: 2,
        ..EncoderConfig::new(4, 3)
    }
}

fn random_sequence(cfg: &EncoderConfig, rng: &mut Rng, scans: usize, label: bool) -> TokenSequence {
    let mut day = 0;
    let mut sig = Vec::new();
    let mut img = Vec::new();
    for _ in 0..scans {
        day += rng.int_inclusive(30, 700);
        sig.push((day, rng.normal_vec(cfg.context_dim, 1.0)));
        img.push((day, rng.normal_vec(cfg.image_dim, 1.0)));
    }
    TokenSequence::from_observations("s", cfg.max_scans, sig, img, Some(label)).unwrap()
}

fn tem_properties() -> Outcome {
    let mut rng = Rng::new(11);
    for _ in 0..100_000 {
        let b = rng.uniform_range(1e-6, 1.0);
        let c = rng.uniform_range(0.0, 10.0);
        let r = rng.uniform_range(0.0, 5000.0);
        let dr = rng.uniform_range(1e-3, 100.0);
        let (now, later) = (tem(r, b, c), tem(r + dr, b, c));
        ensure(later <= now, || format!("increase at b={b} c={c} r={r} dr={dr}"))?;
        let z = b * r - c;
        if (-20.0..20.0).contains(&z) && b * dr >= 1e-3 {
            ensure(later < now, || format!("flat at b={b} c={c} r={r} dr={dr}"))?;
        }
        let at_zero = 1.0 / (1.0 + (-c).exp());
        ensure((tem(0.0, b, c) - at_zero).abs() <= 1e-15, || format!("TEM(0) at c={c}"))?;
    }

    // Changing one head's decay changes only that head's scaling.
    let cfg = small_encoder(4);
    let mut state = EncoderState::new(cfg.clone()).map_err(|e| e.to_string())?;
    let seq = random_sequence(&cfg, &mut rng, 3, true);
    let times = build_relative_times(&seq, RelativeTime::LastObservation);
    let scaled = |s: &EncoderState| -> Vec<Matrix> {
        let blk = &s.params().blocks[1];
        (0..4).map(|h| times.scaled(blk.tem_b(h), blk.tem_c(h))).collect()
    };
    let before = scaled(&state);
    state.params_mut().blocks[1].tem_b_raw[2] += 1.5;
    state.params_mut().blocks[1].tem_c_raw[2] -= 0.7;
    let after = scaled(&state);
    for h in 0..4 {
        ensure((before[h] == after[h]) == (h != 2), || format!("head {h} scaling moved with head 2"))?;
    }

    // Plain SGD with a large step never leaves the constraint set.
    let cfg = EncoderConfig {
        tem_init_b: 1e-4,
        tem_init_c: 0.05,
        ..small_encoder(2)
    };
    let mut state = EncoderState::new(cfg.clone()).map_err(|e| e.to_string())?;
    let data: Vec<TokenSequence> = (0..16).map(|i| random_sequence(&cfg, &mut rng, 1 + i % 3, i % 2 == 0)).collect();
    let (mut min_b, mut min_c) = (f64::INFINITY, f64::INFINITY);
    for step in 0..1000 {
        let seq = &data[step % data.len()];
        let g = state.backward(seq, seq.label.unwrap()).map_err(|e| e.to_string())?;
        state.params_mut().add_scaled(-0.5, &g.params);
        ensure(state.params().all_finite(), || format!("non-finite parameters at step {step}"))?;
        for (b, c) in state.tem_parameters().into_iter().flatten() {
            min_b = min_b.min(b);
            min_c = min_c.min(c);
        }
    }
    ensure(min_b >= 0.0 && min_c >= 0.0, || format!("min b {min_b:e}, min c {min_c:e}"))?;
    Ok(format!(
        "100000 monotonicity/TEM(0) draws; head independence; 1000 SGD steps, min b {min_b:.2e}, min c {min_c:.2e}"
    ))
}

fn padding_invariance() -> Outcome {
    let mut rng = Rng::new(5);
    let mut cases = 0;
    for pooling in [Pooling::Cls, Pooling::Mean] {
        for relative_time in [RelativeTime::LastObservation, RelativeTime::Pairwise] {
            let cfg = EncoderConfig {
                pooling,
                relative_time,
                ..EncoderConfig::new(6, 8)
            };
            let state = EncoderState::new(cfg.clone()).map_err(|e| e.to_string())?;
            for scans in 1..cfg.max_scans {
                let seq = random_sequence(&cfg, &mut rng, scans, true);
                let mut noisy = seq.clone();
                let mut padded = Vec::new();
                for (slot, token) in noisy.items.iter_mut().enumerate() {
                    if token.padding {
                        let width = if slot <= cfg.max_scans { cfg.context_dim } else { cfg.image_dim };
                        token.payload = rng.normal_vec(width, 1e3);
                        padded.push(slot);
                    }
                }
                ensure(!padded.is_empty(), || "no padded slots".into())?;
                let (p, q) = (state.forward(&seq), state.forward(&noisy));
                let (p, q) = (p.map_err(|e| e.to_string())?, q.map_err(|e| e.to_string())?);
                ensure(p.to_bits() == q.to_bits(), || format!("probability {p} vs {q}"))?;
                let a = state.backward(&seq, true).map_err(|e| e.to_string())?;
                let b = state.backward(&noisy, true).map_err(|e| e.to_string())?;
                let bits = |g: &longsig_core::tem::EncoderParams| -> Vec<u64> {
                    g.tensors().iter().flat_map(|(_, t)| t.iter().map(|v| v.to_bits())).collect()
                };
                ensure(bits(&a.params) == bits(&b.params), || {
                    format!("{pooling:?}/{relative_time:?}: parameter gradients differ")
                })?;
                for slot in padded {
                    ensure(b.payloads[slot].iter().all(|&g| g == 0.0), || {
                        format!("padded slot {slot} receives gradient")
                    })?;
                }
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} sequences at default dims, cls/mean pooling, both relative-time modes"))
}

// ---------------------------------------------------------------------------
// Signatures

fn ica_recovery() -> Outcome {
    let (p, c, m) = (200, 20, 5000);
    let start = Instant::now();
    let mut scores = Vec::new();
    let mut worst_round_trip = 0.0f64;
    for seed in 0..5u64 {
        let mut rng = Rng::new(1000 + seed);
        let s = Matrix::from_fn(p, c, |_, _| rng.normal());
        // Alternate super-Gaussian (Laplace) and sub-Gaussian (uniform) sources.
        let e = Matrix::from_fn(c, m, |k, _| {
            if k % 2 == 0 {
                rng.laplace()
            } else {
                rng.uniform_range(-1.0, 1.0)
            }
        });
        let x = s.matmul(&e);
        let samples = SampleMatrix::from_matrix(x.clone()).map_err(|e| e.to_string())?;
        let model = fit_ica(&samples, &IcaConfig::new(c, seed)).map_err(|e| e.to_string())?;
        let recovered = model.unmix(&x).map_err(|e| e.to_string())?;
        scores.push(match_components(&e, &recovered).mean_abs_corr());

        for _ in 0..100 {
            let expr = rng.normal_vec(c, 1.0);
            let back = model.project(&model.reconstruct(&expr)).map_err(|e| e.to_string())?;
            let err = expr.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst_round_trip = worst_round_trip.max(err);
        }
    }
    let elapsed = start.elapsed();
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let per_seed: Vec<String> = scores.iter().map(|s| format!("{s:.4}")).collect();
    ensure(mean >= 0.95, || format!("mean matched |corr| {mean:.4} ({})", per_seed.join(", ")))?;
    ensure(worst_round_trip <= 1e-8, || format!("round-trip error {worst_round_trip:.3e}"))?;
    within(elapsed, Duration::from_secs(300))?;
    Ok(format!(
        "mean matched |corr| {mean:.4} over seeds ({}), round-trip {worst_round_trip:.1e}",
        per_seed.join(", ")
    ))
}

// ---------------------------------------------------------------------------
// Curves

fn brute_trailing_mean(x: &[f64], window: usize) -> Vec<f64> {
    (0..x.len())
        .map(|d| {
            let from = (d + 1).saturating_sub(window);
            x[from..=d].iter().sum::<f64>() / (d + 1 - from) as f64
        })
        .collect()
}

fn sign(v: f64) -> i8 {
    (v > 0.0) as i8 - (v < 0.0) as i8
}

fn edge_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if sign(d) != sign(d0) {
        0.0
    } else if sign(d0) != sign(d1) && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

/// Shape-preserving cubic Hermite interpolation, evaluated from scratch.
fn pchip_oracle(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if n == 1 || x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let h: Vec<f64> = (0..n - 1).map(|k| xs[k + 1] - xs[k]).collect();
    let del: Vec<f64> = (0..n - 1).map(|k| (ys[k + 1] - ys[k]) / h[k]).collect();
    let mut m = vec![del[0]; n];
    if n > 2 {
        for k in 1..n - 1 {
            m[k] = if sign(del[k - 1]) * sign(del[k]) > 0 {
                let w1 = 2.0 * h[k] + h[k - 1];
                let w2 = h[k] + 2.0 * h[k - 1];
                (w1 + w2) / (w1 / del[k - 1] + w2 / del[k])
            } else {
                0.0
            };
        }
        m[0] = edge_slope(h[0], h[1], del[0], del[1]);
        m[n - 1] = edge_slope(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
    }
    let k = (0..n - 1).find(|&k| x < xs[k + 1]).unwrap();
    let t = (x - xs[k]) / h[k];
    let h00 = (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t);
    let h10 = t * (1.0 - t) * (1.0 - t);
    let h01 = t * t * (3.0 - 2.0 * t);
    let h11 = t * t * (t - 1.0);
    h00 * ys[k] + h10 * h[k] * m[k] + h01 * ys[k + 1] + h11 * h[k] * m[k + 1]
}

fn curve_oracles() -> Outcome {
    let mut rng = Rng::new(21);
    let mut worst_mean = 0.0f64;
    let mut worst_interp = 0.0f64;
    let mut knots = 0;
    for instance in 0..1000 {
        // Rolling mean over an arbitrary series and window.
        let len = 1 + rng.below(1500) as usize;
        let window = if instance % 4 == 0 { 365 } else { 1 + rng.below(800) as usize };
        let offset = rng.normal() * 100.0;
        let x: Vec<f64> = (0..len).map(|_| offset + rng.normal() * 10.0).collect();
        let curve = LongitudinalCurve::new("v", 0, x.clone(), false).map_err(|e| e.to_string())?;
        let smoothed = rolling_mean(&curve, window).map_err(|e| e.to_string())?;
        let scale = x.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        for (got, want) in smoothed.values().iter().zip(brute_trailing_mean(&x, window)) {
            worst_mean = worst_mean.max((got - want).abs() / scale);
        }

        // Event density smoothed over the trailing year, counted directly.
        let first = rng.int_inclusive(-500, 500);
        let span = rng.int_inclusive(0, 1200);
        let days: Vec<i64> = (0..rng.below(60)).map(|_| first + rng.int_inclusive(0, span)).collect();
        let grid = DayGrid::spanning(first, first + span).map_err(|e| e.to_string())?;
        let stream = EventStream::new("s", "code", EventKind::CategoricalEvent, days.iter().map(|&d| Event::code(d)).collect())
            .map_err(|e| e.to_string())?;
        let density = rolling_mean_365(&event_density(&stream, grid).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        for (i, got) in density.values().iter().enumerate() {
            let day = first + i as i64;
            let count = days.iter().filter(|&&d| d <= day && d > day - 365).count() as f64;
            let want = count / (i + 1).min(365) as f64;
            worst_mean = worst_mean.max((got - want).abs());
        }

        // Lab interpolation on the daily grid and at arbitrary points.
        let n = 1 + rng.below(25) as usize;
        let mut day = rng.int_inclusive(-300, 300);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut level = rng.normal();
        for _ in 0..n {
            xs.push(day as f64);
            // mix flat stretches, monotone runs and reversals
            match rng.below(4) {
                0 => {}
                1 => level += rng.uniform() * 3.0,
                _ => level = rng.normal() * 5.0,
            }
            ys.push(level);
            day += rng.int_inclusive(1, 150);
        }
        let events = xs.iter().zip(&ys).map(|(&d, &v)| Event::lab(d as i64, v)).collect();
        let stream = EventStream::new("s", "lab", EventKind::ContinuousLab, events).map_err(|e| e.to_string())?;
        let lo = xs[0] as i64 - 5;
        let grid = DayGrid::spanning(lo, xs[n - 1] as i64 + 5).map_err(|e| e.to_string())?;
        let interp = interpolate_continuous(&stream, grid).map_err(|e| e.to_string())?;
        for (i, got) in interp.values().iter().enumerate() {
            let d = (lo + i as i64) as f64;
            if let Some(k) = xs.iter().position(|&x| x == d) {
                ensure(got.to_bits() == ys[k].to_bits(), || format!("knot {d}: {got} vs {}", ys[k]))?;
                knots += 1;
            }
            worst_interp = worst_interp.max((got - pchip_oracle(&xs, &ys, d)).abs());
        }
        let spline = MonotoneCubic::new(xs.clone(), ys.clone()).map_err(|e| e.to_string())?;
        for _ in 0..20 {
            let x = rng.uniform_range(xs[0] - 3.0, xs[n - 1] + 3.0);
            worst_interp = worst_interp.max((spline.eval(x) - pchip_oracle(&xs, &ys, x)).abs());
        }
    }
    ensure(worst_mean <= 1e-12, || format!("rolling mean deviation {worst_mean:.3e}"))?;
    ensure(worst_interp <= 1e-12, || format!("interpolation deviation {worst_interp:.3e}"))?;
    Ok(format!(
        "1000 instances: rolling mean {worst_mean:.1e}, interpolation {worst_interp:.1e}, {knots} knots exact"
    ))
}

// ---------------------------------------------------------------------------
// Metrics

fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &a) in scores.iter().enumerate() {
        for (j, &b) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if a > b {
                    wins += 1.0;
                } else if a == b {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Two-sided signed-rank p-value by enumerating every sign assignment.
fn enumerated_wilcoxon(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    if d.is_empty() {
        return 1.0;
    }
    let ranks: Vec<f64> = d
        .iter()
        .map(|v| {
            let below = d.iter().filter(|w| w.abs() < v.abs()).count() as f64;
            let tied = d.iter().filter(|w| w.abs() == v.abs()).count() as f64;
            below + (tied + 1.0) / 2.0
        })
        .collect();
    let observed: f64 = ranks.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
    let n = d.len();
    let (mut low, mut high) = (0u64, 0u64);
    for mask in 0u32..1 << n {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        low += u64::from(w <= observed);
        high += u64::from(w >= observed);
    }
    (2.0 * low.min(high) as f64 / f64::from(1u32 << n)).min(1.0)
}

/// First index where the trailing window mean exceeds the best earlier
/// window mean by more than `delta`, recomputing every mean.
fn scanned_stop(trace: &[f64], window: usize, delta: f64) -> Option<usize> {
    let mean_at = |t: usize| trace[t + 1 - window..=t].iter().sum::<f64>() / window as f64;
    (window.saturating_sub(1)..trace.len()).find(|&t| {
        let best = (window - 1..t).map(mean_at).fold(f64::INFINITY, f64::min);
        mean_at(t) - best > delta
    })
}

fn random_labels(rng: &mut Rng, n: usize) -> Vec<bool> {
    let mut labels: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.4).collect();
    labels[0] = true;
    labels[n - 1] = false;
    labels
}

fn metric_oracles() -> Outcome {
    let mut rng = Rng::new(31);
    let mut worst_auc = 0.0f64;
    for _ in 0..500 {
        let n = rng.int_inclusive(2, 200) as usize;
        let labels = random_labels(&mut rng, n);
        // coarse grids produce ties
        let levels = [3.0, 10.0, 1e6][rng.below(3) as usize];
        let scores: Vec<f64> = (0..n).map(|_| (rng.uniform() * levels).floor() / levels).collect();
        let got = auc(&scores, &labels).map_err(|e| e.to_string())?;
        worst_auc = worst_auc.max((got - pairwise_auc(&scores, &labels)).abs());
    }
    ensure(worst_auc <= 1e-12, || format!("AUC deviation {worst_auc:.3e}"))?;

    let mut worst_w = 0.0f64;
    let mut tested = 0;
    for _ in 0..500 {
        let n = rng.int_inclusive(5, 12) as usize;
        let a: Vec<f64> = (0..n).map(|_| (rng.uniform() * 6.0).floor()).collect();
        let b: Vec<f64> = (0..n).map(|_| (rng.uniform() * 6.0).floor()).collect();
        let nonzero = a.iter().zip(&b).filter(|(x, y)| x != y).count();
        match wilcoxon_signed_rank(&a, &b) {
            Ok(p) => {
                worst_w = worst_w.max((p - enumerated_wilcoxon(&a, &b)).abs());
                tested += 1;
            }
            Err(e) => ensure(nonzero < 5, || format!("unexpected error {e}"))?,
        }
    }
    ensure(worst_w <= 1e-12, || format!("Wilcoxon deviation {worst_w:.3e}"))?;

    let mut crafted = vec![0.5; 200];
    crafted.extend(vec![0.9; 200]);
    let step = early_stop_step(&crafted, 100, 0.2);
    ensure(step.is_some() && step == scanned_stop(&crafted, 100, 0.2), || format!("crafted trace: {step:?}"))?;
    for _ in 0..300 {
        let len = rng.below(400) as usize;
        let window = 1 + rng.below(60) as usize;
        let delta = rng.uniform_range(0.01, 0.5);
        let drift = rng.uniform_range(-0.003, 0.006);
        let trace: Vec<f64> = (0..len).map(|t| 1.0 + drift * t as f64 + 0.2 * rng.normal()).collect();
        let got = early_stop_step(&trace, window, delta);
        let want = scanned_stop(&trace, window, delta);
        ensure(got == want, || format!("window {window} delta {delta}: {got:?} vs {want:?}"))?;
    }

    for _ in 0..200 {
        let n = rng.int_inclusive(1, 300) as usize;
        let labels: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.3).collect();
        let model: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let base: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let t = reclassify(&model, &base, &labels).map_err(|e| e.to_string())?;
        ensure(t.total() == n as u64, || "total not conserved".into())?;
        for (grid, class) in [(&t.cases, true), (&t.controls, false)] {
            for tier in 0..3 {
                let from = (0..n).filter(|&i| labels[i] == class && RiskTier::of(base[i]).index() == tier).count();
                let to = (0..n).filter(|&i| labels[i] == class && RiskTier::of(model[i]).index() == tier).count();
                ensure(grid[tier].iter().sum::<u64>() == from as u64, || "row sum mismatch".into())?;
                ensure((0..3).map(|r| grid[r][tier]).sum::<u64>() == to as u64, || "column sum mismatch".into())?;
            }
        }
        let upper = |g: &[[u64; 3]; 3]| g[0][1] + g[0][2] + g[1][2];
        let lower = |g: &[[u64; 3]; 3]| g[1][0] + g[2][0] + g[2][1];
        ensure(
            t.cases_correct == upper(&t.cases)
                && t.cases_incorrect == lower(&t.cases)
                && t.controls_correct == lower(&t.controls)
                && t.controls_incorrect == upper(&t.controls),
            || "movement counts disagree with the grids".into(),
        )?;
    }

    let below = |x: f64| f64::from_bits(x.to_bits() - 1);
    ensure(LOW_RISK_BELOW == 0.05 && HIGH_RISK_FROM == 0.65, || "tier thresholds moved".into())?;
    ensure(
        RiskTier::of(0.0) == RiskTier::Low
            && RiskTier::of(below(0.05)) == RiskTier::Low
            && RiskTier::of(0.05) == RiskTier::Medium
            && RiskTier::of(below(0.65)) == RiskTier::Medium
            && RiskTier::of(0.65) == RiskTier::High
            && RiskTier::of(1.0) == RiskTier::High,
        || "tier boundaries".into(),
    )?;
    Ok(format!(
        "AUC {worst_auc:.1e} over 500, Wilcoxon {worst_w:.1e} over {tested}, early stop at {} (300 random traces agree), reclassification conserved, tiers 0.05/0.65",
        step.unwrap()
    ))
}

// ---------------------------------------------------------------------------
// Experiments

const ABLATION_SEEDS: u64 = 5;

fn replicate(seed: u64, recency: bool, models: &[ModelKind], runner: &RayonRunner) -> Result<Vec<f64>, String> {
    let cohort = generate_cohort(&GeneratorConfig {
        seed,
        recency_signal: recency,
        ..GeneratorConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let defaults = AblationConfig::default();
    let cfg = AblationConfig {
        models: models.to_vec(),
        ica_seed: seed,
        bootstrap_seed: seed,
        train: TrainConfig { seed, ..defaults.train },
        ..defaults
    };
    let features = extract_features(&cohort, &cfg).map_err(|e| e.to_string())?;
    let report = run_ablation(&features, &cfg, runner).map_err(|e| e.to_string())?;
    Ok(models.iter().map(|k| report.model(k.name()).unwrap().auc).collect())
}

fn mean_over_seeds(per_seed: &[Vec<f64>], column: usize) -> f64 {
    per_seed.iter().map(|r| r[column]).sum::<f64>() / per_seed.len() as f64
}

fn directional_ablation() -> Outcome {
    let cohort = GeneratorConfig::default();
    let train = AblationConfig::default().train;
    ensure(cohort.n_subjects == 600 && train.folds == 5, || "not the 600-subject, 5-fold setting".into())?;
    let runner = RayonRunner::new(0).map_err(|e| e.to_string())?;
    let start = Instant::now();

    let recency_models = [ModelKind::TdSig, ModelKind::TdSigUnit];
    let recency: Vec<Vec<f64>> = (0..ABLATION_SEEDS)
        .map(|s| replicate(s, true, &recency_models, &runner))
        .collect::<Result<_, _>>()?;
    let gain = mean_over_seeds(&recency, 0) - mean_over_seeds(&recency, 1);

    use ModelKind::{CsImage, CsSig, TdImage, TdSig};
    let signature_models = [CsImage, CsSig, TdImage, TdSig];
    let signature: Vec<Vec<f64>> = (0..ABLATION_SEEDS)
        .map(|s| replicate(s, false, &signature_models, &runner))
        .collect::<Result<_, _>>()?;
    let means: Vec<f64> = (0..4).map(|i| mean_over_seeds(&signature, i)).collect();
    let summary = signature_models
        .iter()
        .zip(&means)
        .map(|(k, m)| format!("{} {m:.3}", k.name()))
        .collect::<Vec<_>>()
        .join(", ");

    ensure(gain >= 0.05, || format!("recency: TDSig minus unit scaling {gain:.4}"))?;
    let [cs_image, cs_sig, td_image, td_sig] = [means[0], means[1], means[2], means[3]];
    ensure(cs_sig > cs_image && td_sig > td_image, || format!("Sig does not beat Image: {summary}"))?;
    ensure(td_sig > cs_sig && td_image > cs_image, || format!("TD does not beat CS: {summary}"))?;
    within(start.elapsed(), Duration::from_secs(30 * 60))?;
    Ok(format!(
        "recency TDSig {:.3} vs unit {:.3} (gain {gain:.3}); signature cohort {summary}",
        mean_over_seeds(&recency, 0),
        mean_over_seeds(&recency, 1)
    ))
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tmp.path().join("run.conf");
    fs::write(&config, "synth.subjects = 200\n").map_err(|e| e.to_string())?;
    let mut tables = Vec::new();
    for run in ["first", "second"] {
        let out = tmp.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_longsig"))
            .args(["--threads", "1", "--seed", "7", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .arg("run")
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || String::from_utf8_lossy(&status.stderr).into_owned())?;
        let metrics = fs::read(out.join("eval/metrics.tsv")).map_err(|e| e.to_string())?;
        let report = fs::read(out.join("eval/report.txt")).map_err(|e| e.to_string())?;
        tables.push((metrics, report));
    }
    ensure(tables[0] == tables[1], || "metric tables differ between runs".into())?;
    let rows = String::from_utf8_lossy(&tables[0].0).lines().count() - 1;
    Ok(format!("two single-threaded runs, {rows} model rows, metrics.tsv and report.txt identical"))
}
