//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use rand::Rng;
use rayon::prelude::*;

use logtrack_core::baselines::{mmd_statistic, mmlu_statistic, AccuracyMatrix, TokenSequence};
use logtrack_core::eval::{roc_auc, run_benchmark, ExperimentPlan, Method};
use logtrack_core::rng::{derive_seed, rng_for};
use logtrack_core::simulator::{sample_set, synthetic_series, SyntheticModel, VariantKind, VariantSpec};
use logtrack_core::{
    detect_changes, exact_permutation_test, permutation_test, DetectorParams, LogprobVector, SampleSet,
};
use logtrack_net::sim::SimServerConfig;
use logtrack_net::{run_remote_lt_test, serve, survey, Behavior, EndpointConfig, Prober};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ladder() -> Vec<f64> {
    std::iter::once(0.0).chain((-10..=0).map(|e| 2f64.powi(e))).collect()
}

fn random_sets(seed: u64, n: usize) -> (SampleSet<f64>, SampleSet<f64>) {
    let mut rng = rng_for(seed, &[]);
    let shift = rng.random::<f64>();
    let mut set = |offset: f64| {
        let samples = (0..n)
            .map(|_| {
                let k = rng.random_range(1..5);
                let pairs: Vec<(String, f64)> = (0..k)
                    .map(|_| (format!("t{}", rng.random_range(0..6)), -rng.random::<f64>() * 3.0 - offset))
                    .collect();
                let mut seen = std::collections::HashSet::new();
                let pairs: Vec<_> = pairs.into_iter().filter(|(t, _)| seen.insert(t.clone())).collect();
                LogprobVector::from_pairs(&pairs, 4).unwrap()
            })
            .collect();
        SampleSet::from_samples(samples).unwrap()
    };
    (set(0.0), set(shift))
}

fn ac1() -> Outcome {
    let t = Instant::now();
    let worst = (0..50u64)
        .into_par_iter()
        .map(|i| {
            let (a, b) = random_sets(derive_seed(1, &[i]), 2 + (i as usize % 4));
            let exact = exact_permutation_test(&a, &b).unwrap().p_value;
            let mc = permutation_test(&a, &b, 50_000, i).unwrap().p_value;
            (mc - exact).abs()
        })
        .reduce(|| 0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    check(worst < 0.01 && secs < 60.0, format!("max |p_mc - p_exact| = {worst:.4}, {secs:.1} s"))
}

fn ks_uniform(mut p: Vec<f64>) -> f64 {
    p.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = p.len() as f64;
    p.iter()
        .enumerate()
        .map(|(i, &x)| ((i as f64 + 1.0) / n - x).max(x - i as f64 / n))
        .fold(0.0, f64::max)
}

fn ac2() -> Outcome {
    let t = Instant::now();
    let m = SyntheticModel::random(64, 2.0, 0.05, 20, 2).unwrap();
    let p: Vec<f64> = (0..1000u64)
        .into_par_iter()
        .map(|i| {
            let a = sample_set(&m, 10, derive_seed(2, &[i, 0]));
            let b = sample_set(&m, 10, derive_seed(2, &[i, 1]));
            permutation_test(&a, &b, 1000, i).unwrap().p_value
        })
        .collect();
    let fpr = p.iter().filter(|&&x| x < 0.05).count() as f64 / p.len() as f64;
    let ks = ks_uniform(p);
    let secs = t.elapsed().as_secs_f64();
    check(
        (0.03..=0.07).contains(&fpr) && ks < 0.06 && secs < 300.0,
        format!("FPR {fpr:.3}, KS {ks:.4}, {secs:.1} s"),
    )
}

fn plan(methods: Vec<Method>, seed: u64) -> ExperimentPlan {
    ExperimentPlan {
        methods,
        ladder: ladder(),
        trials: 200,
        seed,
        bootstrap_resamples: 200,
        ..ExperimentPlan::default()
    }
}

fn ac3() -> Outcome {
    let tables: Vec<_> = (0..5).map(|s| run_benchmark(&plan(vec![Method::Lt], s)).unwrap()).collect();
    let medians: Vec<f64> = ladder()
        .iter()
        .map(|&mag| {
            let mut v: Vec<f64> = tables.iter().map(|t| t.get(Method::Lt, mag).unwrap().auc).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[2]
        })
        .collect();
    let monotone = medians.windows(2).all(|w| w[1] >= w[0]);
    let (zero, top) = (medians[0], *medians.last().unwrap());
    let shown: Vec<String> = medians.iter().map(|a| format!("{a:.3}")).collect();
    check(
        monotone && top >= 0.99 && (zero - 0.5).abs() <= 0.05,
        format!("median AUC over ladder [{}]", shown.join(", ")),
    )
}

fn ac4() -> Outcome {
    let table = run_benchmark(&plan(vec![Method::Lt, Method::Met], 0)).unwrap();
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for mag in ladder() {
        let lt = table.get(Method::Lt, mag).unwrap().auc;
        let met = table.get(Method::Met, mag).unwrap().auc;
        if lt > 0.6 || met > 0.6 {
            worst = worst.max(met - lt);
        }
        rows.push(format!("{mag}: {lt:.3}/{met:.3}"));
    }
    check(worst <= 0.02, format!("largest MET-over-LT gap {worst:.3}; LT/MET {}", rows.join(", ")))
}

fn ac5() -> Outcome {
    let t = Instant::now();
    let params = DetectorParams::default();
    let start = Utc.timestamp_opt(1_700_000_000, 0).unwrap();
    let shift = VariantSpec::new(VariantKind::LogitShift, 4.0).unwrap();
    let run = |i: u64, change: bool| {
        let m = SyntheticModel::random(64, 2.0, 0.05, 20, derive_seed(5, &[i])).unwrap();
        let at = rng_for(5, &[i, 1]).random_range(500..=4500);
        let changes: Vec<(usize, VariantSpec)> = if change { vec![(at, shift)] } else { vec![] };
        let series =
            synthetic_series(&m, 5000, &changes, start, chrono::Duration::hours(1), "e", derive_seed(5, &[i, 2, change as u64]))
                .unwrap();
        let events = detect_changes(&series, &params).unwrap();
        (events.iter().any(|e| e.index.abs_diff(at) <= 1), events.len())
    };
    let hits: Vec<(bool, usize)> = (0..100u64).into_par_iter().map(|i| run(i, true)).collect();
    let controls: usize = (100..200u64).into_par_iter().map(|i| run(i, false).1).sum();
    let found = hits.iter().filter(|h| h.0).count();
    let extra: usize = hits.iter().map(|&(hit, n)| n - usize::from(hit)).sum();
    let secs = t.elapsed().as_secs_f64();
    check(
        found >= 95 && controls == 0 && secs < 600.0,
        format!("{found}/100 localized within 1, {extra} spurious on changed series, {controls} events on controls, {secs:.1} s"),
    )
}

fn auc_pair_count(null: &[f64], alt: &[f64]) -> f64 {
    let mut twice = 0u64;
    for &a in alt {
        for &n in null {
            twice += if a > n { 2 } else if a == n { 1 } else { 0 };
        }
    }
    twice as f64 / (2 * null.len() * alt.len()) as f64
}

fn ac6() -> Outcome {
    let mut rng = rng_for(6, &[]);
    let mut bad = 0;
    for _ in 0..1000 {
        let (n, m) = (rng.random_range(1..=300), rng.random_range(1..=300));
        let levels = rng.random_range(2..200);
        let shift = rng.random_range(0..20);
        let null: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / 8.0).collect();
        let alt: Vec<f64> = (0..m).map(|_| (rng.random_range(0..levels) + shift) as f64 / 8.0).collect();
        bad += usize::from(roc_auc(&null, &alt).unwrap().auc != auc_pair_count(&null, &alt));
    }
    check(bad == 0, format!("{bad}/1000 instances differ from the pair count"))
}

fn ac7(rt: &tokio::runtime::Runtime) -> Outcome {
    rt.block_on(async {
        let mut cfg = SimServerConfig::new(SyntheticModel::random(64, 2.0, 0.05, 20, 7).unwrap());
        cfg.prompt_token_pattern = vec![1, 2, 1, 2, 1];
        let s = serve(cfg, "127.0.0.1:0".parse().unwrap()).await.map_err(|e| e.to_string())?;
        let e = EndpointConfig::new("a", s.base_url(), "sim");
        let r = run_remote_lt_test(&Prober::new(), &e, &e, 10, 1000, 7).await.map_err(|e| e.to_string())?;
        let single = s.requests().iter().all(|b| b["max_tokens"] == 1);
        check(
            r.requests == 20 && s.request_count() == 20 && single && (r.usage.prompt_tokens, r.usage.completion_tokens) == (28, 20),
            format!(
                "{} requests, max_tokens=1 on all: {single}, usage ({}, {})",
                s.request_count(),
                r.usage.prompt_tokens,
                r.usage.completion_tokens
            ),
        )
    })
}

fn ac8(rt: &tokio::runtime::Runtime) -> Outcome {
    rt.block_on(async {
        let ks = [5, 8, 20];
        let mut servers = Vec::new();
        let mut expected = Vec::new();
        for i in 0..100usize {
            // every fourth endpoint up to 23 supports logprobs
            let supported = i % 4 == 0 && i / 4 < 23;
            let k = ks[(i / 4) % 3];
            let mut cfg = SimServerConfig::new(SyntheticModel::random(64, 2.0, 0.05, k, i as u64).unwrap());
            if !supported {
                cfg.behavior = Behavior::NoLogprobs;
            }
            servers.push(serve(cfg, "127.0.0.1:0".parse().unwrap()).await.map_err(|e| e.to_string())?);
            expected.push(supported.then_some(k));
        }
        let fleet: Vec<EndpointConfig> = servers
            .iter()
            .enumerate()
            .map(|(i, s)| EndpointConfig::new(format!("ep{i}"), s.base_url(), "sim"))
            .collect();
        let report = survey(&Prober::new(), &fleet, 16).await;
        let got: Vec<Option<usize>> = report.entries.iter().map(|e| e.k).collect();
        check(
            report.fraction == Some(0.23) && report.reachable == 100 && got == expected,
            format!(
                "reachable {}, supported {}, fraction {:?}, k per endpoint correct: {}",
                report.reachable,
                report.supported,
                report.fraction,
                got == expected
            ),
        )
    })
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

#[derive(Clone, Copy)]
struct Frac(i128, i128);

impl Frac {
    fn new(p: i128, q: i128) -> Self {
        let g = gcd(p, q).max(1);
        Frac(p / g, q / g)
    }
    fn add(self, o: Frac) -> Frac {
        Frac::new(self.0 * o.1 + o.0 * self.1, self.1 * o.1)
    }
    fn to_f64(self) -> f64 {
        self.0 as f64 / self.1 as f64
    }
}

fn mmd_oracle(a: &[Vec<usize>], b: &[Vec<usize>], len: usize) -> f64 {
    let l = len as i128;
    let k = |x: &[usize], y: &[usize]| Frac::new((0..len).filter(|&i| x.get(i) == y.get(i)).count() as i128, l);
    let within = |g: &[Vec<usize>]| {
        let mut t = Frac(0, 1);
        for i in 0..g.len() {
            for j in 0..g.len() {
                if i != j {
                    t = t.add(k(&g[i], &g[j]));
                }
            }
        }
        let n = g.len() as i128;
        Frac::new(t.0, t.1 * n * (n - 1))
    };
    let mut cross = Frac(0, 1);
    for x in a {
        for y in b {
            cross = cross.add(k(x, y));
        }
    }
    let cross = Frac::new(-2 * cross.0, cross.1 * (a.len() * b.len()) as i128);
    within(a).add(within(b)).add(cross).to_f64()
}

fn mmlu_oracle(a: &[Vec<u8>], b: &[Vec<u8>]) -> f64 {
    let (na, nb) = (a.len() as i128, b.len() as i128);
    let mut t = Frac(0, 1);
    for q in 0..a[0].len() {
        let ca: i128 = a.iter().map(|r| r[q] as i128).sum();
        let cb: i128 = b.iter().map(|r| r[q] as i128).sum();
        t = t.add(Frac::new((ca * nb - cb * na).abs(), na * nb));
    }
    Frac::new(t.0, t.1 * a[0].len() as i128).to_f64()
}

fn ac9() -> Outcome {
    let mut rng = rng_for(9, &[]);
    let seqs = |g: &[Vec<usize>]| -> Vec<TokenSequence> {
        g.iter().map(|v| v.iter().map(|i| format!("w{i}")).collect()).collect()
    };
    let mut bad = 0;
    let mut fixtures = 0;
    for _ in 0..500 {
        let len = rng.random_range(1..12);
        let mut group = || -> Vec<Vec<usize>> {
            (0..rng.random_range(2..8))
                .map(|_| (0..rng.random_range(0..=len)).map(|_| rng.random_range(0..3)).collect())
                .collect()
        };
        let (a, b) = (group(), group());
        let got: f64 = mmd_statistic(&seqs(&a), &seqs(&b), len).unwrap();
        bad += usize::from(got != mmd_oracle(&a, &b, len));
        fixtures += 1;
    }
    for _ in 0..500 {
        let p = rng.random_range(1..20);
        let mut rows = || -> Vec<Vec<u8>> {
            (0..rng.random_range(1..12)).map(|_| (0..p).map(|_| rng.random_range(0..2)).collect()).collect()
        };
        let (a, b) = (rows(), rows());
        let got: f64 = mmlu_statistic(
            &AccuracyMatrix::from_rows(a.clone()).unwrap(),
            &AccuracyMatrix::from_rows(b.clone()).unwrap(),
        )
        .unwrap();
        bad += usize::from(got != mmlu_oracle(&a, &b));
        fixtures += 1;
    }
    // hand-computed: every cross pair shares half its positions
    let s = vec![vec![0, 1, 2, 3]; 3];
    let t = vec![vec![0, 1, 7, 7]; 3];
    bad += usize::from(mmd_statistic::<f64>(&seqs(&s), &seqs(&t), 4).unwrap() != 1.0);
    let a: Vec<Vec<u8>> = (0..10).map(|j| (0..4).map(|q| u8::from(j <= q)).collect()).collect();
    let z = vec![vec![0u8; 4]; 10];
    bad += usize::from(
        mmlu_statistic::<f64>(&AccuracyMatrix::from_rows(a).unwrap(), &AccuracyMatrix::from_rows(z).unwrap()).unwrap() != 0.25,
    );
    check(bad == 0, format!("{bad} of {} fixtures differ", fixtures + 2))
}

fn main() {
    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("1 permutation oracle", Box::new(ac1)),
        ("2 null calibration", Box::new(ac2)),
        ("3 ladder power", Box::new(ac3)),
        ("4 method ordering", Box::new(ac4)),
        ("5 detector precision/recall", Box::new(ac5)),
        ("6 ROC oracle", Box::new(ac6)),
        ("7 cost accounting", Box::new(|| ac7(&rt))),
        ("8 survey fidelity", Box::new(|| ac8(&rt))),
        ("9 baseline statistics", Box::new(ac9)),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in &criteria {
        if !only.is_empty() && !only.iter().any(|o| name.starts_with(o.as_str())) {
            continue;
        }
        let t = Instant::now();
        let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or(e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let took = Duration::from_secs_f64(t.elapsed().as_secs_f64());
        match r {
            Ok(d) => println!("criterion {name}: PASS ({d}) [{took:.1?}]"),
            Err(d) => {
                failed += 1;
                println!("criterion {name}: FAIL ({d}) [{took:.1?}]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
