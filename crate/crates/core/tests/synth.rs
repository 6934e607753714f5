use longsig_core::ablation::{project_sections, summarize_curves};
use longsig_core::ica::{fit_ica, match_components, IcaConfig};
use longsig_core::synth::{generate_cohort, Cohort, GeneratorConfig};

fn cohort(cfg: GeneratorConfig) -> Cohort {
    generate_cohort(&cfg).unwrap()
}

/// Mann-Whitney AUC by direct pair counting.
fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

/// Plain logistic regression by full-batch gradient descent.
fn logistic_probe(x: &[Vec<f64>], y: &[bool]) -> Vec<f64> {
    let d = x[0].len();
    let mut w = vec![0.0; d + 1];
    for _ in 0..2000 {
        let mut grad = vec![0.0; d + 1];
        for (xi, &yi) in x.iter().zip(y) {
            let z = w[d] + xi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let err = 1.0 / (1.0 + (-z).exp()) - f64::from(u8::from(yi));
            for (g, v) in grad.iter_mut().zip(xi) {
                *g += err * v;
            }
            grad[d] += err;
        }
        for (wi, g) in w.iter_mut().zip(&grad) {
            *wi -= 0.5 * g / x.len() as f64;
        }
    }
    w
}

#[test]
fn ica_on_generated_curves_recovers_the_planted_signatures() {
    for seed in 0..3 {
        let c = cohort(GeneratorConfig {
            seed,
            n_subjects: 200,
            p_variables: 20,
            c_true: 4,
            ..GeneratorConfig::default()
        });
        let summary = summarize_curves(&c.subjects, 30, seed, 1).unwrap();
        let model = fit_ica(&summary.samples, &IcaConfig::new(4, seed)).unwrap();
        // Rows of the transposes are the signatures as patterns over variables.
        let matched = match_components(
            &c.truth.effective_mixing().transpose(),
            &model.signatures().transpose(),
        );
        assert!(matched.min_abs_corr() >= 0.9, "seed {seed}: {:?}", matched.pairs);
    }
}

#[test]
fn default_cohort_round_trips_through_curves_and_ica() {
    let c = cohort(GeneratorConfig {
        n_subjects: 60,
        ..GeneratorConfig::default()
    });
    let summary = summarize_curves(&c.subjects, 30, 1, 1).unwrap();
    assert_eq!(summary.vocabulary.len(), c.config.p_variables);
    let model = fit_ica(&summary.samples, &IcaConfig::new(c.config.c_true, 2)).unwrap();
    let expressions = project_sections(&model, &summary.sections).unwrap();
    for (record, series) in c.subjects.iter().zip(&expressions) {
        assert_eq!(series.len(), record.scans.len());
        assert!(series.iter().flatten().all(|v| v.is_finite()));
    }
}

#[test]
fn last_scan_latent_state_predicts_recency_labels() {
    let c = cohort(GeneratorConfig {
        label_noise: 0.02,
        ..GeneratorConfig::default()
    });
    let k = c.truth.malignant_source;
    let labels: Vec<bool> = c.subjects.iter().map(|s| s.label).collect();
    let last: Vec<f64> = c
        .truth
        .subjects
        .iter()
        .map(|t| t.expression_at(*t.scan_days.last().unwrap())[k])
        .collect();
    assert!(pairwise_auc(&last, &labels) >= 0.95);

    // Earlier scans are decoys: their latent state carries no label signal.
    let (first, first_labels): (Vec<f64>, Vec<bool>) = c
        .truth
        .subjects
        .iter()
        .zip(&labels)
        .filter(|(t, _)| t.scan_days.len() > 1)
        .map(|(t, &l)| (t.expression_at(t.scan_days[0])[k], l))
        .unzip();
    assert!((pairwise_auc(&first, &first_labels) - 0.5).abs() < 0.1);
}

#[test]
fn image_features_carry_label_information() {
    // The default readout keeps images a weak modality; a lower noise level
    // gives the probe a clear margin at this cohort size.
    let c = cohort(GeneratorConfig {
        n_subjects: 1000,
        image_noise: 0.5,
        ..GeneratorConfig::default()
    });
    let x: Vec<Vec<f64>> = c.subjects.iter().map(|s| s.scans.last().unwrap().image.clone()).collect();
    let y: Vec<bool> = c.subjects.iter().map(|s| s.label).collect();
    let half = x.len() / 2;
    let w = logistic_probe(&x[..half], &y[..half]);
    let d = w.len() - 1;
    let held_out: Vec<f64> = x[half..]
        .iter()
        .map(|xi| w[d] + xi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let auc = pairwise_auc(&held_out, &y[half..]);
    assert!(auc > 0.6, "probe AUC {auc}");
}
