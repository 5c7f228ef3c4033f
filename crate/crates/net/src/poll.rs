//! Scheduled polling of a fleet into the store.

use std::collections::{HashMap, HashSet, VecDeque};
use std::time::Duration;

use futures::stream::{self, StreamExt};
use rand::Rng;
use serde::Serialize;
use tokio::sync::watch;
use tokio::time::{sleep_until, Instant};

use logtrack_core::rng::rng_for;
use logtrack_core::store::{SeriesRecord, Store, TimeRange};
use logtrack_core::{ChangeEvent, DetectorParams, Error as CoreError, OnlineMonitor};

use crate::client::{describe, ProbeOutcome, Prober};
use crate::config::EndpointConfig;
use crate::error::Result;
use crate::survey::DEFAULT_PARALLELISM;
use crate::webhook::post_event;

#[derive(Debug, Clone)]
pub struct PollConfig {
    pub interval: Duration,
    /// Stop after this many ticks; `None` runs until the stop signal.
    pub max_ticks: Option<u64>,
    pub parallelism: usize,
    /// Each tick starts up to `jitter * interval` late.
    pub jitter: f64,
    pub seed: u64,
    /// Run the online detector on every stored series.
    pub detector: Option<DetectorParams<f64>>,
    pub webhook: Option<String>,
}

impl Default for PollConfig {
    fn default() -> Self {
        PollConfig {
            interval: Duration::from_secs(3600),
            max_ticks: None,
            parallelism: DEFAULT_PARALLELISM,
            jitter: 0.05,
            seed: 0,
            detector: None,
            webhook: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PollStats {
    pub ticks: u64,
    pub ok: u64,
    pub stored: u64,
    pub transport_errors: u64,
    pub rate_limited: u64,
    pub protocol_errors: u64,
    pub unsupported: u64,
    /// Failed appends; the record stays queued for the next tick.
    pub store_errors: u64,
    /// Records dropped because they were not newer than the stored tail.
    pub dropped: u64,
    pub config_errors: u64,
    pub events: Vec<ChangeEvent<f64>>,
}

type Key = (String, String);

struct Poller<'a> {
    prober: &'a Prober,
    fleet: &'a [EndpointConfig],
    cfg: &'a PollConfig,
    store: &'a mut Store,
    pending: VecDeque<SeriesRecord>,
    monitors: HashMap<Key, OnlineMonitor<f64>>,
    stats: PollStats,
}

impl Poller<'_> {
    fn warm_up(&mut self) -> Result<()> {
        let Some(params) = self.cfg.detector else {
            return Ok(());
        };
        for e in self.fleet {
            let mut m = OnlineMonitor::new(params)?;
            for p in self.store.read_series(&e.id, &e.prompt, TimeRange::all())? {
                m.push(&p)?;
            }
            self.monitors.insert((e.id.clone(), e.prompt.clone()), m);
        }
        Ok(())
    }

    async fn tick(&mut self) {
        let prober = self.prober;
        let outcomes: Vec<_> = stream::iter(self.fleet)
            .map(|c| async move { (c, prober.probe(c).await) })
            .buffered(self.cfg.parallelism.max(1))
            .collect()
            .await;
        for (c, outcome) in outcomes {
            let s = &mut self.stats;
            match outcome {
                Ok(ProbeOutcome::Ok(ok)) => {
                    s.ok += 1;
                    self.pending.push_back(ok.record());
                    continue;
                }
                Ok(ProbeOutcome::TransportError(_)) => s.transport_errors += 1,
                Ok(ProbeOutcome::RateLimited { .. }) => s.rate_limited += 1,
                Ok(ProbeOutcome::ProtocolError(_)) => s.protocol_errors += 1,
                Ok(ProbeOutcome::LogprobsUnsupported) => s.unsupported += 1,
                Err(ref e) => {
                    s.config_errors += 1;
                    log::warn!("{}: {e}", c.id);
                    continue;
                }
            }
            if let Ok(o) = &outcome {
                log::warn!("{}: {}", c.id, describe(o));
            }
        }
        self.flush().await;
        self.stats.ticks += 1;
    }

    /// Appends queued records in order. A failed series stays blocked for
    /// the rest of the tick so its records keep their order.
    async fn flush(&mut self) {
        let mut blocked: HashSet<Key> = HashSet::new();
        let mut keep = VecDeque::new();
        let mut stored = Vec::new();
        while let Some(r) = self.pending.pop_front() {
            let key = (r.endpoint_id.clone(), r.prompt.clone());
            if blocked.contains(&key) {
                keep.push_back(r);
                continue;
            }
            match self.store.append(&r) {
                Ok(_) => {
                    self.stats.stored += 1;
                    stored.push(r);
                }
                Err(e @ CoreError::Ordering { .. }) => {
                    self.stats.dropped += 1;
                    log::warn!("dropping record: {e}");
                }
                Err(e) => {
                    self.stats.store_errors += 1;
                    log::error!("store write failed, will retry: {e}");
                    blocked.insert(key);
                    keep.push_back(r);
                }
            }
        }
        self.pending = keep;
        for r in stored {
            self.detect(&r).await;
        }
    }

    async fn detect(&mut self, r: &SeriesRecord) {
        let Some(params) = self.cfg.detector else {
            return;
        };
        let key = (r.endpoint_id.clone(), r.prompt.clone());
        let monitor = match self.monitors.get_mut(&key) {
            Some(m) => m,
            None => self.monitors.entry(key).or_insert(OnlineMonitor::new(params).expect("validated")),
        };
        let events = match r.to_point().and_then(|p| monitor.push(&p)) {
            Ok(ev) => ev,
            Err(e) => {
                log::error!("detector: {e}");
                return;
            }
        };
        for ev in events {
            log::warn!(
                "change on {} at {}: statistic {:.4} (mean {:.4}, std {:.4})",
                ev.endpoint_id, ev.timestamp, ev.statistic, ev.running_mean, ev.running_std
            );
            if let Some(url) = &self.cfg.webhook {
                if let Err(e) = post_event(self.prober.client(), url, &ev).await {
                    log::error!("{e}");
                }
            }
            self.stats.events.push(ev);
        }
    }
}

/// Probes the fleet every `interval` until `max_ticks` or the stop signal.
/// A tick in progress when the signal arrives finishes first; its probes
/// are bounded by their timeouts and retry budgets.
pub async fn poll_loop(
    prober: &Prober,
    fleet: &[EndpointConfig],
    cfg: &PollConfig,
    store: &mut Store,
    mut stop: watch::Receiver<bool>,
) -> Result<PollStats> {
    if let Some(d) = &cfg.detector {
        d.validate()?;
    }
    let mut poller = Poller {
        prober,
        fleet,
        cfg,
        store,
        pending: VecDeque::new(),
        monitors: HashMap::new(),
        stats: PollStats::default(),
    };
    poller.warm_up()?;
    let mut rng = rng_for(cfg.seed, &[0x9011]);
    let start = Instant::now();
    let jitter = cfg.jitter.clamp(0.0, 0.05);
    let mut k: u64 = 0;
    loop {
        if cfg.max_ticks.is_some_and(|m| k >= m) || *stop.borrow() {
            break;
        }
        let offset = cfg.interval.mul_f64(k as f64 + jitter * rng.random::<f64>());
        tokio::select! {
            _ = sleep_until(start + offset) => {}
            r = stop.wait_for(|s| *s) => {
                if r.is_ok() {
                    break;
                }
                // sender gone: no stop signal can arrive any more
                sleep_until(start + offset).await;
            }
        }
        poller.tick().await;
        k += 1;
    }
    if !poller.pending.is_empty() {
        log::error!("{} records were never stored", poller.pending.len());
    }
    Ok(poller.stats)
}
