//! Simulation experiments: calibration, power, evaluation harness.

use chrono::{Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use logtrack_core::baselines::{
    met_test, mmlu_test, AccuracyMatrix, TokenSequence,
};
use logtrack_core::eval::{
    bootstrap_ci, prompt_ablation, roc_auc, run_benchmark, AblationPlan, AucCell, Cells,
    ExperimentPlan, Method, MetSettings, MmluSettings, PromptProfile, Resampled,
};
use logtrack_core::rng::derive_seed;
use logtrack_core::simulator::{
    apply_variant, mmlu_gold, sample_mmlu_answer, sample_set, synthetic_series, SequenceSampler,
    SyntheticModel, VariantKind, VariantSpec,
};
use logtrack_core::{detect_changes, lt_statistic_sets, DetectorParams};

fn ecdf_excess(mut p: Vec<f64>) -> (f64, f64) {
    p.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = p.len() as f64;
    let (mut above, mut below) = (0.0f64, 0.0f64);
    for (i, &x) in p.iter().enumerate() {
        above = above.max((i as f64 + 1.0) / n - x);
        below = below.max(x - i as f64 / n);
    }
    (above, below)
}

fn model(seed: u64) -> SyntheticModel {
    SyntheticModel::random(64, 2.0, 0.05, 20, seed).unwrap()
}

fn sequences(g: &SequenceSampler, stream: u64) -> Vec<TokenSequence> {
    (0..10u64)
        .map(|j| g.sample((j % 5) as usize, 20, 1.0, derive_seed(stream, &[j])))
        .collect()
}

#[test]
fn met_null_calibrated_and_powerful() {
    let m = model(7);
    let shifted = apply_variant(&m, &VariantSpec::new(VariantKind::LogitShift, 2.0).unwrap()).unwrap();
    let (g, gv) = (SequenceSampler::new(&m), SequenceSampler::new(&shifted));
    let mut null = Vec::new();
    let mut power = 0;
    for t in 0..200u64 {
        let r = met_test::<f64>(&sequences(&g, 4 * t), &sequences(&g, 4 * t + 1), 20, 500, t).unwrap();
        null.push(r.p_value);
        if t < 100 {
            let r = met_test::<f64>(&sequences(&g, 4 * t + 2), &sequences(&gv, 4 * t + 3), 20, 500, t)
                .unwrap();
            power += usize::from(r.p_value < 0.05);
        }
    }
    let (above, below) = ecdf_excess(null);
    assert!(above.max(below) < 0.1, "KS {above} {below}");
    assert!(power >= 95, "power {power}/100");
    let same = sequences(&g, 999);
    assert_eq!(met_test::<f64>(&same, &same, 20, 100, 0).unwrap().p_value, 1.0);
}

fn accuracy(m: &SyntheticModel, temperature: f64, stream: u64) -> AccuracyMatrix {
    let rows = (0..10u64)
        .map(|j| {
            (0..100)
                .map(|q| {
                    let a = sample_mmlu_answer(m, q, temperature, derive_seed(stream, &[j]));
                    u8::from(a == mmlu_gold(m.seed, q))
                })
                .collect()
        })
        .collect();
    AccuracyMatrix::from_rows(rows).unwrap()
}

#[test]
fn mmlu_null_is_valid() {
    // the accuracy statistic is discrete, so null p-values are conservative
    // rather than exactly uniform: check the ECDF never exceeds the diagonal
    let m = model(8);
    let p: Vec<f64> = (0..200u64)
        .map(|t| {
            mmlu_test::<f64>(&accuracy(&m, 0.1, 2 * t), &accuracy(&m, 0.1, 2 * t + 1), 500, t)
                .unwrap()
                .p_value
        })
        .collect();
    let fpr = p.iter().filter(|&&x| x < 0.05).count();
    let (above, _) = ecdf_excess(p);
    assert!(above < 0.08, "ECDF excess {above}");
    assert!(fpr <= 20, "false positives {fpr}/200");
}

#[test]
fn mmlu_detects_accuracy_gap() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut hits = 0;
    for t in 0..100u64 {
        let mut rows = |acc: f64| -> AccuracyMatrix {
            AccuracyMatrix::from_rows(
                (0..10)
                    .map(|_| (0..20).map(|_| u8::from(rng.random::<f64>() < acc)).collect())
                    .collect(),
            )
            .unwrap()
        };
        let (a, b) = (rows(0.4), rows(0.7));
        hits += usize::from(mmlu_test::<f64>(&a, &b, 500, t).unwrap().p_value < 0.05);
    }
    assert!(hits >= 90, "{hits}/100");
    let a = accuracy(&model(1), 0.1, 0);
    assert_eq!(mmlu_test::<f64>(&a, &a, 100, 0).unwrap().p_value, 1.0);
}

#[test]
fn median_lt_statistic_grows_with_magnitude() {
    let m = model(21);
    let ladder: Vec<f64> = std::iter::once(0.0).chain((-8..=0).map(|e| 2f64.powi(e))).collect();
    let mut last = f64::NEG_INFINITY;
    for mag in ladder {
        let v = apply_variant(&m, &VariantSpec::new(VariantKind::LogitShift, mag).unwrap()).unwrap();
        let mut stats: Vec<f64> = (0..200u64)
            .map(|t| lt_statistic_sets(&sample_set(&m, 10, 2 * t), &sample_set(&v, 10, 2 * t + 1)).unwrap())
            .collect();
        stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = (stats[99] + stats[100]) / 2.0;
        assert!(median >= last, "magnitude {mag}: {median} < {last}");
        last = median;
    }
}

#[test]
fn benchmark_endpoints_and_reproducibility() {
    let plan = ExperimentPlan {
        ladder: vec![0.0, 1.0],
        trials: 100,
        bootstrap_resamples: 200,
        met: MetSettings {
            prompts: 5,
            seq_len: 20,
            ..MetSettings::default()
        },
        mmlu: MmluSettings {
            questions: 40,
            ..MmluSettings::default()
        },
        ..ExperimentPlan::default()
    };
    let table = run_benchmark(&plan).unwrap();
    assert_eq!(table, run_benchmark(&plan).unwrap());
    for method in [Method::Lt, Method::Met, Method::Mmlu] {
        let zero = table.get(method, 0.0).unwrap();
        assert!(zero.ci_lo <= 0.5 && 0.5 <= zero.ci_hi, "{zero:?}");
    }
    assert!(table.get(Method::Lt, 1.0).unwrap().auc > 0.99);
}

#[test]
fn bootstrap_interval_coverage() {
    let m = model(30);
    let v = apply_variant(&m, &VariantSpec::new(VariantKind::LogitShift, 2f64.powi(-7)).unwrap()).unwrap();
    let stats = |model: &SyntheticModel, base: u64, n: u64| -> Vec<f64> {
        (0..n)
            .map(|t| {
                let s = derive_seed(base, &[t]);
                lt_statistic_sets(&sample_set(&m, 10, derive_seed(s, &[0])), &sample_set(model, 10, derive_seed(s, &[1])))
                    .unwrap()
            })
            .collect()
    };
    let truth = roc_auc(&stats(&m, 1, 6000), &stats(&v, 2, 6000)).unwrap().auc;
    assert!(truth > 0.55 && truth < 0.95, "ladder rung too easy or hard: {truth}");
    let mut covered = 0;
    for rep in 0..100u64 {
        let cell = AucCell {
            null: stats(&m, derive_seed(100, &[rep]), 150),
            alt: stats(&v, derive_seed(200, &[rep]), 150),
        };
        let data = Resampled(vec![cell]);
        let ci = bootstrap_ci(&data, |d: &Resampled<AucCell<f64>>| d.mean_auc(), 1000, 0.95, rep).unwrap();
        covered += usize::from(ci.contains(truth));
    }
    assert!(covered >= 90, "coverage {covered}/100 of {truth}");
}

fn profile(name: &str, sigma: f64, seed: u64) -> PromptProfile {
    PromptProfile {
        name: name.into(),
        noise_sigma: sigma,
        logit_seed: seed,
    }
}

#[test]
fn ablation_identities() {
    let base = AblationPlan {
        trials: 60,
        models: 2,
        ..AblationPlan::default()
    };
    let same = prompt_ablation(&AblationPlan {
        prompts: vec![profile("a", 0.05, 1), profile("b", 0.05, 1)],
        ..base.clone()
    })
    .unwrap();
    assert!(same.iter().all(|r| r.relative == 0.0), "{same:?}");

    let rows = prompt_ablation(&AblationPlan {
        prompts: vec![profile("clean", 0.05, 1), profile("noisy", 0.1, 1), profile("other", 0.05, 2)],
        ..base
    })
    .unwrap();
    let noisy = rows.iter().find(|r| r.prompt == "noisy").unwrap();
    assert!(noisy.relative < 0.0, "{rows:?}");
    let total: f64 = rows.iter().map(|r| r.relative).sum();
    assert!(total.abs() < 1e-12);
}

#[test]
fn two_changes_give_two_ordered_events() {
    let m = model(40);
    let shift = VariantSpec::new(VariantKind::LogitShift, 4.0).unwrap();
    let series = synthetic_series(
        &m,
        2000,
        &[(700, shift), (1200, shift)],
        Utc.timestamp_opt(0, 0).unwrap(),
        Duration::hours(1),
        "e",
        5,
    )
    .unwrap();
    let events = detect_changes(&series, &DetectorParams::default()).unwrap();
    let idx: Vec<usize> = events.iter().map(|e| e.index).collect();
    assert_eq!(idx.len(), 2, "{idx:?}");
    assert!(idx[0].abs_diff(700) <= 1 && idx[1].abs_diff(1200) <= 1, "{idx:?}");
    assert!(events.iter().all(|e| e.trigger_holds()));
}

#[test]
fn stationary_series_is_quiet() {
    let series = synthetic_series(
        &model(41),
        5000,
        &[],
        Utc.timestamp_opt(0, 0).unwrap(),
        Duration::hours(1),
        "e",
        6,
    )
    .unwrap();
    assert!(detect_changes(&series, &DetectorParams::default()).unwrap().is_empty());
}
