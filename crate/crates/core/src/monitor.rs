//! Change detection over logprob time series.
//!
//! For each candidate boundary `t` the detector compares the windows
//! `[t - w, t)` and `[t, t + w)` with the logprob-tracking statistic. A
//! position triggers when its statistic exceeds the trailing mean by
//! `k_sigma` trailing standard deviations and also exceeds an absolute
//! floor. The trailing window ends `baseline_gap` statistics before the
//! current one, so statistics whose windows overlap the current comparison
//! never enter the baseline.
//!
//! A step change makes the statistic ramp up over `w` positions and peak at
//! the true boundary. Once a position triggers, the detector keeps looking
//! `w` positions ahead and reports the triggered position with the largest
//! statistic, then suppresses new events for `cooldown` positions.

use std::collections::HashMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lt::{lt_statistic, to_matrix, token_union};
use crate::scalar::{mean_and_sample_std, FixedSum, Scalar};
use crate::token::{LogprobVector, SampleSet, TokenKey};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SeriesPoint<T> {
    pub timestamp: DateTime<Utc>,
    pub vector: LogprobVector<T>,
    pub endpoint_id: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ChangeEvent<T> {
    pub timestamp: DateTime<Utc>,
    /// Index of the boundary point in the series.
    pub index: usize,
    pub statistic: T,
    pub running_mean: T,
    pub running_std: T,
    pub window: usize,
    pub k_sigma: T,
    pub abs_floor: T,
    pub endpoint_id: String,
    pub prompt: String,
}

impl<T: Scalar> ChangeEvent<T> {
    /// Re-evaluates the trigger from the stored fields.
    pub fn trigger_holds(&self) -> bool {
        triggers(
            self.statistic,
            self.running_mean,
            self.running_std,
            self.k_sigma,
            self.abs_floor,
        )
    }
}

fn triggers<T: Scalar>(stat: T, mean: T, std: T, k_sigma: T, floor: T) -> bool {
    stat > mean + k_sigma * std && stat > floor
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DetectorParams<T> {
    /// Samples per comparison window.
    pub window: usize,
    /// Number of past statistics in the running mean and std.
    pub stats_window: usize,
    pub k_sigma: T,
    pub abs_floor: T,
    /// Positions suppressed after an event; `None` means `2 * window`.
    pub cooldown: Option<usize>,
    /// Statistics skipped between the running window and the current one;
    /// `None` means `window`.
    pub baseline_gap: Option<usize>,
}

impl<T: Scalar> Default for DetectorParams<T> {
    fn default() -> Self {
        DetectorParams {
            window: 24,
            stats_window: 100,
            k_sigma: T::of(12.0),
            abs_floor: T::one(),
            cooldown: None,
            baseline_gap: None,
        }
    }
}

impl<T: Scalar> DetectorParams<T> {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::invalid("comparison window must be positive"));
        }
        if self.stats_window < 2 {
            return Err(Error::invalid("running statistics window must be >= 2"));
        }
        if !(self.k_sigma >= T::zero()) {
            return Err(Error::invalid("k_sigma must be >= 0"));
        }
        Ok(())
    }

    pub fn cooldown(&self) -> usize {
        self.cooldown.unwrap_or(2 * self.window)
    }

    pub fn baseline_gap(&self) -> usize {
        self.baseline_gap.unwrap_or(self.window)
    }
}

/// Logprob-tracking statistic between `[t - w, t)` and `[t, t + w)`;
/// `None` when the series is too short on either side.
pub fn adjacent_window_statistic<T: Scalar>(
    series: &[SeriesPoint<T>],
    t: usize,
    w: usize,
) -> Result<Option<T>> {
    if w == 0 || t < w || t + w > series.len() {
        return Ok(None);
    }
    let window = |r: std::ops::Range<usize>| {
        SampleSet::from_samples(series[r].iter().map(|p| p.vector.clone()).collect())
    };
    let a = window(t - w..t)?;
    let b = window(t..t + w)?;
    let tokens = token_union(&a, &b)?;
    lt_statistic(&to_matrix(&a, &tokens)?, &to_matrix(&b, &tokens)?).map(Some)
}

/// Trailing mean and sample std over the `window` values strictly before
/// each index; `None` where fewer than `window` values precede it.
pub fn running_stats<T: Scalar>(stats: &[T], window: usize) -> Result<Vec<Option<(T, T)>>> {
    if window < 2 {
        return Err(Error::invalid("running statistics window must be >= 2"));
    }
    Ok((0..stats.len())
        .map(|i| {
            (i >= window)
                .then(|| mean_and_sample_std(&stats[i - window..i]))
                .flatten()
        })
        .collect())
}

/// Interned, densified view of a growing series for fast window scans.
///
/// Produces exactly the same floating point result as
/// [`adjacent_window_statistic`]: union tokens are visited in canonical key
/// order and columns are accumulated with the same order-free sum.
#[derive(Debug, Clone, Default)]
struct SeriesBuffer<T> {
    ids: HashMap<TokenKey, u32>,
    keys: Vec<TokenKey>,
    rows: Vec<DenseRow<T>>,
}

#[derive(Debug, Clone)]
struct DenseRow<T> {
    values: Vec<Option<T>>,
    min: T,
}

impl<T: Scalar> DenseRow<T> {
    fn get(&self, id: u32) -> T {
        self.values
            .get(id as usize)
            .copied()
            .flatten()
            .unwrap_or(self.min)
    }

    fn has(&self, id: u32) -> bool {
        matches!(self.values.get(id as usize), Some(Some(_)))
    }
}

impl<T: Scalar> SeriesBuffer<T> {
    fn push(&mut self, v: &LogprobVector<T>) {
        let mut values: Vec<Option<T>> = Vec::new();
        for e in v.entries() {
            let next = self.keys.len() as u32;
            let id = *self.ids.entry(e.token.clone()).or_insert_with(|| {
                self.keys.push(e.token.clone());
                next
            });
            if values.len() <= id as usize {
                values.resize(id as usize + 1, None);
            }
            values[id as usize] = Some(e.logprob);
        }
        self.rows.push(DenseRow {
            values,
            min: v.min_logprob(),
        });
    }

    fn len(&self) -> usize {
        self.rows.len()
    }

    fn window_statistic(&self, t: usize, w: usize, union: &mut Vec<u32>) -> Option<T> {
        if w == 0 || t < w || t + w > self.rows.len() {
            return None;
        }
        let rows = &self.rows[t - w..t + w];
        union.clear();
        union.extend(
            (0..self.keys.len() as u32).filter(|&id| rows.iter().any(|r| r.has(id))),
        );
        union.sort_by(|&x, &y| self.keys[x as usize].cmp(&self.keys[y as usize]));
        let mut total = T::zero();
        for &id in union.iter() {
            let mut sa = FixedSum::default();
            for r in &rows[..w] {
                sa.add(r.get(id));
            }
            let mut sb = FixedSum::default();
            for r in &rows[w..] {
                sb.add(r.get(id));
            }
            total += (sa.mean::<T>(w) - sb.mean::<T>(w)).abs();
        }
        Some(total / T::of_usize(union.len()))
    }
}

#[derive(Debug, Clone, Copy)]
struct Peak<T> {
    stat_index: usize,
    statistic: T,
    mean: T,
    std: T,
}

/// Causal trigger state machine over a stream of window statistics.
#[derive(Debug, Clone)]
struct Detector<T> {
    params: DetectorParams<T>,
    stats: Vec<T>,
    candidate: Option<(usize, Peak<T>)>,
    suppress_until: usize,
}

impl<T: Scalar> Detector<T> {
    fn new(params: DetectorParams<T>) -> Self {
        Detector {
            params,
            stats: Vec::new(),
            candidate: None,
            suppress_until: 0,
        }
    }

    fn baseline(&self, i: usize) -> Option<(T, T)> {
        let gap = self.params.baseline_gap();
        let end = i.checked_sub(gap)?;
        let start = end.checked_sub(self.params.stats_window)?;
        mean_and_sample_std(&self.stats[start..end])
    }

    /// Feeds the next statistic; returns a closed peak, if any.
    fn push(&mut self, stat: T) -> Option<Peak<T>> {
        let i = self.stats.len();
        self.stats.push(stat);
        let p = &self.params;
        let hit = self.baseline(i).and_then(|(mean, std)| {
            triggers(stat, mean, std, p.k_sigma, p.abs_floor).then_some(Peak {
                stat_index: i,
                statistic: stat,
                mean,
                std,
            })
        });
        match (&mut self.candidate, hit) {
            (Some((_, best)), Some(h)) if h.statistic > best.statistic => *best = h,
            (None, Some(h)) if i >= self.suppress_until => self.candidate = Some((i, h)),
            _ => {}
        }
        match self.candidate {
            Some((first, best)) if i >= first + self.params.window => {
                self.candidate = None;
                self.suppress_until = best.stat_index + self.params.cooldown();
                Some(best)
            }
            _ => None,
        }
    }
}

/// Incremental detector for one (endpoint, prompt) series.
///
/// Feeding points one at a time yields exactly the events that
/// [`detect_changes`] finds on the same prefix.
#[derive(Debug, Clone)]
pub struct OnlineMonitor<T> {
    buffer: SeriesBuffer<T>,
    meta: Vec<(DateTime<Utc>, String, String)>,
    detector: Detector<T>,
    union: Vec<u32>,
}

impl<T: Scalar> OnlineMonitor<T> {
    pub fn new(params: DetectorParams<T>) -> Result<Self> {
        params.validate()?;
        Ok(OnlineMonitor {
            buffer: SeriesBuffer {
                ids: HashMap::new(),
                keys: Vec::new(),
                rows: Vec::new(),
            },
            meta: Vec::new(),
            detector: Detector::new(params),
            union: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.len() == 0
    }

    /// Statistics computed so far; entry `i` belongs to boundary `i + w`.
    pub fn statistics(&self) -> &[T] {
        &self.detector.stats
    }

    pub fn push(&mut self, point: &SeriesPoint<T>) -> Result<Vec<ChangeEvent<T>>> {
        if let Some((last, ..)) = self.meta.last() {
            if point.timestamp <= *last {
                return Err(Error::Ordering {
                    series: point.endpoint_id.clone(),
                    timestamp: point.timestamp.to_rfc3339(),
                    last: last.to_rfc3339(),
                });
            }
        }
        self.buffer.push(&point.vector);
        self.meta.push((
            point.timestamp,
            point.endpoint_id.clone(),
            point.prompt.clone(),
        ));
        let w = self.detector.params.window;
        let mut events = Vec::new();
        // boundary t becomes computable once t + w points exist
        while let Some(stat) = {
            let t = w + self.detector.stats.len();
            self.buffer.window_statistic(t, w, &mut self.union)
        } {
            if let Some(peak) = self.detector.push(stat) {
                events.push(self.event(peak));
            }
        }
        Ok(events)
    }

    fn event(&self, peak: Peak<T>) -> ChangeEvent<T> {
        let p = &self.detector.params;
        let index = peak.stat_index + p.window;
        let (timestamp, endpoint_id, prompt) = self.meta[index].clone();
        ChangeEvent {
            timestamp,
            index,
            statistic: peak.statistic,
            running_mean: peak.mean,
            running_std: peak.std,
            window: p.window,
            k_sigma: p.k_sigma,
            abs_floor: p.abs_floor,
            endpoint_id,
            prompt,
        }
    }
}

/// Offline scan of a whole series.
pub fn detect_changes<T: Scalar>(
    series: &[SeriesPoint<T>],
    params: &DetectorParams<T>,
) -> Result<Vec<ChangeEvent<T>>> {
    let mut m = OnlineMonitor::new(*params)?;
    let mut events = Vec::new();
    for p in series {
        events.extend(m.push(p)?);
    }
    Ok(events)
}

/// All adjacent-window statistics of a series, indexed from boundary `w`.
pub fn scan_statistics<T: Scalar>(series: &[SeriesPoint<T>], w: usize) -> Vec<T> {
    let mut buf = SeriesBuffer {
        ids: HashMap::new(),
        keys: Vec::new(),
        rows: Vec::new(),
    };
    for p in series {
        buf.push(&p.vector);
    }
    let mut union = Vec::new();
    (w..)
        .map_while(|t| buf.window_statistic(t, w, &mut union))
        .collect()
}
