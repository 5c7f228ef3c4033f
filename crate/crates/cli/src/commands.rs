use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::Serialize;
use tokio::sync::watch;

use logtrack_core::eval::{prompt_ablation, run_benchmark, AblationPlan, BenchRow, ExperimentPlan};
use logtrack_core::simulator::{synthetic_series, SimConfig, SyntheticModel, VariantSpec};
use logtrack_core::store::{read_archive, RequestParams, SeriesRecord, Store, TimeRange};
use logtrack_core::{detect_changes, exact_permutation_test, permutation_test, DetectorParams, SampleSet, SeriesPoint};
use logtrack_net::{
    poll_loop, run_remote_lt_test, serve, survey, Behavior, EndpointConfig, Fleet, PollConfig, ProbeOutcome, Prober,
    RetryPolicy, SimServerConfig, SurveyReport,
};

use crate::args::*;
use crate::error::{CliError, Result};
use crate::Status;

pub fn run(cmd: Command) -> Result<Status> {
    match cmd {
        Command::Probe(a) => block_on(probe(a)),
        Command::Survey(a) => block_on(survey_cmd(a)),
        Command::Poll(a) => block_on(poll(a)),
        Command::Test(a) => test(a),
        Command::Scan(a) => scan(a),
        Command::Simulate(SimulateCommand::Serve {
            sim,
            bind,
            behavior,
            retry_after,
            min_max_tokens,
            usage_pattern,
        }) => {
            let behavior = match behavior {
                BehaviorArg::Normal => Behavior::Normal,
                BehaviorArg::NoLogprobs => Behavior::NoLogprobs,
                BehaviorArg::RateLimit => Behavior::RateLimit { retry_after_secs: retry_after },
                BehaviorArg::MinMaxTokens => Behavior::MinMaxTokens { min: min_max_tokens },
                BehaviorArg::ServerError => Behavior::ServerError,
            };
            let mut cfg = SimServerConfig::new(sim_model(&sim)?);
            cfg.behavior = behavior;
            cfg.prompt_token_pattern = usage_pattern;
            block_on(simulate_serve(cfg, bind))
        }
        Command::Simulate(SimulateCommand::Series {
            sim,
            len,
            changes,
            start,
            step,
            endpoint_id,
            stream,
            out,
        }) => simulate_series(&sim, len, &changes, start, step, &endpoint_id, stream, out),
        Command::Bench(a) => bench(a),
        Command::Ablate(a) => ablate(a),
        Command::Report(a) => report(a),
        Command::Export(a) => export(a),
    }
}

fn block_on<F: std::future::Future<Output = Result<Status>>>(f: F) -> Result<Status> {
    tokio::runtime::Runtime::new()
        .map_err(|e| CliError::io("<runtime>", e))?
        .block_on(f)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| CliError::io(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_all(out: &mut dyn Write, text: &str, path: Option<&PathBuf>) -> Result<()> {
    let name = || path.cloned().unwrap_or_else(|| "<stdout>".into());
    out.write_all(text.as_bytes()).map_err(|e| CliError::io(name(), e))?;
    out.flush().map_err(|e| CliError::io(name(), e))
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string(v).expect("output serializes"));
}

fn seed_or_default(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        log::warn!("no --seed given, using 0");
        0
    })
}

fn load_fleet(path: &Path) -> Result<Fleet> {
    Ok(Fleet::from_toml(&read_text(path)?)?)
}

fn fleet_endpoint(fleet: &Fleet, id: &str) -> Result<EndpointConfig> {
    fleet
        .endpoints
        .iter()
        .find(|e| e.id == id)
        .cloned()
        .ok_or_else(|| CliError::Input(format!("no endpoint {id:?} in fleet")))
}

fn endpoint_config(a: &EndpointArgs) -> Result<EndpointConfig> {
    let cfg = if let Some(path) = &a.fleet {
        fleet_endpoint(&load_fleet(path)?, a.endpoint.as_deref().unwrap_or_default())?
    } else {
        let (Some(url), Some(model)) = (&a.base_url, &a.model) else {
            return Err(CliError::Input("give --fleet and --endpoint, or --base-url and --model".into()));
        };
        EndpointConfig {
            id: a.id.clone(),
            base_url: url.clone(),
            model: model.clone(),
            auth_token_env: a.auth_env.clone(),
            prompt: a.prompt.clone(),
            top_logprobs: a.top_logprobs,
            max_tokens: a.max_tokens,
            temperature: a.temperature,
            timeout_secs: a.timeout,
            retry: RetryPolicy {
                max_attempts: a.max_attempts,
                backoff_secs: a.backoff.clone(),
                ..RetryPolicy::default()
            },
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct ProbeReport {
    outcome: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    record: Option<SeriesRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    detail: Option<String>,
}

async fn probe(a: ProbeArgs) -> Result<Status> {
    let cfg = endpoint_config(&a.endpoint)?;
    let outcome = Prober::new().probe(&cfg).await?;
    let report = ProbeReport {
        outcome: outcome.kind(),
        record: match &outcome {
            ProbeOutcome::Ok(s) => Some(s.record()),
            _ => None,
        },
        detail: match &outcome {
            ProbeOutcome::Ok(_) => None,
            o => Some(logtrack_net::client::describe(o)),
        },
    };
    print_json(&report);
    match (report.record, &a.store) {
        (Some(r), Some(dir)) => {
            Store::open(dir)?.append(&r)?;
            Ok(Status::Ok)
        }
        (Some(_), None) => Ok(Status::Ok),
        (None, _) => Err(CliError::Net(logtrack_net::NetError::Probe(report.detail.unwrap_or_default()))),
    }
}

async fn survey_cmd(a: SurveyArgs) -> Result<Status> {
    let fleet = load_fleet(&a.fleet)?;
    let report = survey(&Prober::new(), &fleet.endpoints, a.parallelism).await;
    print_json(&report);
    Ok(Status::Ok)
}

fn detector_params(d: &DetectorArgs) -> Result<DetectorParams<f64>> {
    let p = DetectorParams {
        window: d.window,
        stats_window: d.stats_window,
        k_sigma: d.k_sigma,
        abs_floor: d.floor,
        cooldown: d.cooldown,
        baseline_gap: d.baseline_gap,
    };
    p.validate()?;
    Ok(p)
}

async fn poll(a: PollArgs) -> Result<Status> {
    let fleet = load_fleet(&a.fleet)?;
    if !(a.interval > 0.0 && a.interval.is_finite()) {
        return Err(CliError::Input("--interval must be positive".into()));
    }
    let cfg = PollConfig {
        interval: Duration::from_secs_f64(a.interval),
        max_ticks: a.ticks,
        parallelism: a.parallelism,
        jitter: a.jitter,
        seed: seed_or_default(a.seed),
        detector: if a.detect { Some(detector_params(&a.detector)?) } else { None },
        webhook: a.webhook.clone(),
    };
    let mut store = Store::open(&a.store)?;
    let (tx, rx) = watch::channel(false);
    tokio::spawn(async move {
        if tokio::signal::ctrl_c().await.is_ok() {
            log::warn!("interrupt: finishing the current tick");
            let _ = tx.send(true);
        }
    });
    let stats = poll_loop(&Prober::new(), &fleet.endpoints, &cfg, &mut store, rx).await?;
    print_json(&stats);
    Ok(Status::Ok)
}

fn read_points(path: &Path, text_only: bool) -> Result<Vec<SeriesPoint<f64>>> {
    fs::metadata(path).map_err(|e| CliError::io(path, e))?;
    let records = read_archive(path)?;
    if records.is_empty() {
        return Err(CliError::Input(format!("{}: no records", path.display())));
    }
    records
        .iter()
        .map(|r| {
            let mut p = r.to_point()?;
            if text_only {
                p.vector = p.vector.text_only()?;
            }
            Ok(p)
        })
        .collect()
}

fn read_set(path: &Path, text_only: bool) -> Result<SampleSet<f64>> {
    let points = read_points(path, text_only)?;
    Ok(SampleSet::from_samples(points.into_iter().map(|p| p.vector).collect())?)
}

#[derive(Serialize)]
struct TestReport<'a> {
    #[serde(flatten)]
    result: &'a logtrack_core::TestResult<f64>,
    alpha: f64,
    significant: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    requests: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    usage: Option<logtrack_core::store::Usage>,
}

fn test(a: TestArgs) -> Result<Status> {
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(CliError::Input("--alpha must lie in (0, 1)".into()));
    }
    let seed = if a.exact { 0 } else { seed_or_default(a.seed) };
    let (result, requests, usage) = if let Some(path) = &a.fleet {
        let fleet = load_fleet(path)?;
        let ea = fleet_endpoint(&fleet, a.endpoint_a.as_deref().unwrap_or_default())?;
        let eb = fleet_endpoint(&fleet, a.endpoint_b.as_deref().unwrap_or_default())?;
        let r = tokio::runtime::Runtime::new()
            .map_err(|e| CliError::io("<runtime>", e))?
            .block_on(run_remote_lt_test(&Prober::new(), &ea, &eb, a.samples, a.permutations, seed))?;
        (r.result, Some(r.requests), Some(r.usage))
    } else {
        let (Some(pa), Some(pb)) = (&a.a, &a.b) else {
            return Err(CliError::Input("give --a and --b, or --fleet with --endpoint-a and --endpoint-b".into()));
        };
        let (sa, sb) = (read_set(pa, a.text_only)?, read_set(pb, a.text_only)?);
        let r = if a.exact {
            exact_permutation_test(&sa, &sb)?
        } else {
            permutation_test(&sa, &sb, a.permutations, seed)?
        };
        (r, None, None)
    };
    let significant = result.p_value < a.alpha;
    print_json(&TestReport {
        result: &result,
        alpha: a.alpha,
        significant,
        requests,
        usage,
    });
    Ok(if significant { Status::Significant } else { Status::Ok })
}

fn scan(a: ScanArgs) -> Result<Status> {
    let params = detector_params(&a.detector)?;
    let mut series = match (&a.input, &a.store) {
        (Some(path), _) => read_points(path, false)?,
        (None, Some(dir)) => {
            let endpoint = a.endpoint.as_deref().unwrap_or_default();
            Store::open(dir)?.read_series(endpoint, &a.prompt, TimeRange::all())?
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    if a.text_only {
        for p in &mut series {
            p.vector = p.vector.text_only()?;
        }
    }
    let events = detect_changes(&series, &params)?;
    log::info!("{} points, {} events", series.len(), events.len());
    for e in &events {
        print_json(e);
    }
    Ok(if events.is_empty() { Status::Ok } else { Status::Significant })
}

fn sim_config(a: &SimArgs) -> Result<SimConfig> {
    let mut c = match &a.config {
        Some(p) => SimConfig::from_toml(&read_text(p)?)?,
        None => SimConfig::default(),
    };
    if let Some(v) = a.vocab {
        c.vocab_size = v;
    }
    if let Some(s) = a.sigma {
        c.noise_sigma = s;
    }
    if let Some(k) = a.top_k {
        c.top_k = k;
    }
    if let Some(s) = a.seed {
        c.seed = s;
    }
    if a.variant.is_some() {
        c.variant = a.variant;
    }
    Ok(c)
}

fn sim_model(a: &SimArgs) -> Result<SyntheticModel> {
    Ok(sim_config(a)?.build()?)
}

async fn simulate_serve(cfg: SimServerConfig, bind: std::net::SocketAddr) -> Result<Status> {
    let server = serve(cfg, bind).await?;
    println!("{}", server.base_url());
    io::stdout().flush().map_err(|e| CliError::io("<stdout>", e))?;
    tokio::signal::ctrl_c().await.map_err(|e| CliError::io("<signal>", e))?;
    log::info!("served {} requests", server.request_count());
    server.shutdown().await;
    Ok(Status::Ok)
}

fn parse_change(s: &str) -> Result<(usize, VariantSpec)> {
    let bad = || CliError::Input(format!("change {s:?} is not index:kind:magnitude"));
    let (at, spec) = s.split_once(':').ok_or_else(bad)?;
    let at = at.parse().map_err(|_| bad())?;
    Ok((at, spec.parse()?))
}

#[allow(clippy::too_many_arguments)]
fn simulate_series(
    sim: &SimArgs,
    len: usize,
    changes: &[String],
    start: DateTime<Utc>,
    step: i64,
    endpoint_id: &str,
    stream: u64,
    out: Option<PathBuf>,
) -> Result<Status> {
    let model = sim_model(sim)?;
    let changes = changes.iter().map(|c| parse_change(c)).collect::<Result<Vec<_>>>()?;
    if step <= 0 {
        return Err(CliError::Input("--step must be positive".into()));
    }
    let series = synthetic_series(&model, len, &changes, start, chrono::Duration::seconds(step), endpoint_id, stream)?;
    let params = RequestParams {
        top_logprobs: model.top_k,
        ..RequestParams::default()
    };
    let text: String = series
        .iter()
        .map(|p| serde_json::to_string(&SeriesRecord::from_point(p, params, None)).expect("records serialize") + "\n")
        .collect();
    write_all(&mut *output(out.as_ref())?, &text, out.as_ref())?;
    Ok(Status::Ok)
}

fn bench(a: BenchArgs) -> Result<Status> {
    let mut plan = match &a.plan {
        Some(p) => ExperimentPlan::from_toml(&read_text(p)?)?,
        None => ExperimentPlan::default(),
    };
    plan.seed = match a.seed {
        Some(s) => s,
        None => {
            log::warn!("no --seed given, using the plan seed {}", plan.seed);
            plan.seed
        }
    };
    if let Some(t) = a.trials {
        plan.trials = t;
    }
    if let Some(m) = &a.methods {
        plan.methods = m.clone();
    }
    if let Some(l) = &a.ladder {
        plan.ladder = l.clone();
    }
    log::info!("plan: {plan:?}");
    let table = run_benchmark(&plan)?;
    let text = match a.format {
        Format::Jsonl => table.to_jsonl(),
        Format::Csv => table.to_csv(),
    };
    write_all(&mut *output(a.out.as_ref())?, &text, a.out.as_ref())?;
    Ok(Status::Ok)
}

fn ablate(a: AblateArgs) -> Result<Status> {
    let mut plan = AblationPlan::from_toml(&read_text(&a.plan)?)?;
    if let Some(s) = a.seed {
        plan.seed = s;
    } else {
        log::warn!("no --seed given, using the plan seed {}", plan.seed);
    }
    let rows = prompt_ablation(&plan)?;
    let text: String = rows
        .iter()
        .map(|r| serde_json::to_string(r).expect("rows serialize") + "\n")
        .collect();
    write_all(&mut *output(a.out.as_ref())?, &text, a.out.as_ref())?;
    Ok(Status::Ok)
}

fn report(a: ReportArgs) -> Result<Status> {
    let mut out = String::new();
    if let Some(p) = &a.bench {
        let rows = read_text(p)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str::<BenchRow>(l).map_err(|e| CliError::Input(format!("{}: {e}", p.display()))))
            .collect::<Result<Vec<_>>>()?;
        out.push_str(&format!("{:<6} {:<22} {:>12} {:>7} {:>17}  good\n", "method", "variant", "magnitude", "auc", "95% ci"));
        for r in rows {
            out.push_str(&format!(
                "{:<6} {:<22} {:>12} {:>7.4} [{:.4}, {:.4}]  {}\n",
                r.method.to_string(),
                r.variant.to_string(),
                r.magnitude,
                r.auc,
                r.ci_lo,
                r.ci_hi,
                if r.good_detection { "yes" } else { "no" }
            ));
        }
    } else if let Some(p) = &a.survey {
        let s: SurveyReport = serde_json::from_str(&read_text(p)?).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
        let fraction = s.fraction.map_or("undefined".to_string(), |f| format!("{:.1}%", 100.0 * f));
        out.push_str(&format!(
            "{} endpoints, {} reachable, {} with logprobs ({fraction} of reachable)\n",
            s.total, s.reachable, s.supported
        ));
        for e in &s.entries {
            let k = e.k.map_or("-".to_string(), |k| k.to_string());
            out.push_str(&format!(
                "{:<24} reachable={:<5} logprobs={:<5} k={k:<3} {}\n",
                e.id,
                e.reachable,
                e.supports_logprobs,
                e.error.as_deref().unwrap_or("")
            ));
        }
    } else if let Some(dir) = &a.store {
        let store = Store::open(dir)?;
        for key in store.list_series()? {
            let read = store.read_records(&key.endpoint_id, &key.prompt, TimeRange::all())?;
            let span = match (read.records.first(), read.records.last()) {
                (Some(f), Some(l)) => format!("{} .. {}", f.timestamp.to_rfc3339(), l.timestamp.to_rfc3339()),
                _ => "empty".into(),
            };
            out.push_str(&format!("{} {:?}: {} records, {span}\n", key.endpoint_id, key.prompt, read.records.len()));
        }
    }
    write_all(&mut io::stdout().lock(), &out, None)?;
    Ok(Status::Ok)
}

fn export(a: ExportArgs) -> Result<Status> {
    let store = Store::open(&a.store)?;
    let range = TimeRange { start: a.from, end: a.to };
    let n = store.export(output(a.out.as_ref())?, range)?;
    log::info!("exported {n} records");
    Ok(Status::Ok)
}
