//! Two-phase logprob-support survey over a fleet.

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use crate::client::{describe, ProbeOutcome, Prober};
use crate::config::EndpointConfig;

pub const DEFAULT_PARALLELISM: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyEntry {
    pub id: String,
    pub reachable: bool,
    pub supports_logprobs: bool,
    /// Number of logprobs returned for the first token.
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyReport {
    pub entries: Vec<SurveyEntry>,
    pub total: usize,
    pub reachable: usize,
    pub supported: usize,
    /// `supported / reachable`; `None` when nothing was reachable.
    pub fraction: Option<f64>,
}

impl SurveyReport {
    fn from_entries(entries: Vec<SurveyEntry>) -> Self {
        let reachable = entries.iter().filter(|e| e.reachable).count();
        let supported = entries.iter().filter(|e| e.supports_logprobs).count();
        SurveyReport {
            total: entries.len(),
            reachable,
            supported,
            fraction: (reachable > 0).then(|| supported as f64 / reachable as f64),
            entries,
        }
    }
}

async fn survey_one(prober: &Prober, cfg: &EndpointConfig) -> SurveyEntry {
    let mut entry = SurveyEntry {
        id: cfg.id.clone(),
        reachable: false,
        supports_logprobs: false,
        k: None,
        error: None,
    };
    match prober.reachability(cfg).await {
        Err(e) => {
            entry.error = Some(e.to_string());
            return entry;
        }
        Ok(Err(o)) => {
            entry.error = Some(describe(&o));
            return entry;
        }
        Ok(Ok(())) => entry.reachable = true,
    }
    match prober.probe(cfg).await {
        Ok(ProbeOutcome::Ok(s)) => {
            entry.supports_logprobs = true;
            entry.k = Some(s.point.vector.len());
        }
        Ok(o) => entry.error = Some(describe(&o)),
        Err(e) => entry.error = Some(e.to_string()),
    }
    entry
}

/// Probes every endpoint once without logprobs, then reachable ones once
/// with them. Failures are recorded per endpoint.
pub async fn survey(prober: &Prober, endpoints: &[EndpointConfig], parallelism: usize) -> SurveyReport {
    let entries = stream::iter(endpoints)
        .map(|cfg| survey_one(prober, cfg))
        .buffered(parallelism.max(1))
        .collect()
        .await;
    SurveyReport::from_entries(entries)
}
