//! Probing a chat-completions endpoint.

use std::time::Duration;

use chrono::Utc;
use reqwest::header::RETRY_AFTER;
use reqwest::StatusCode;
use serde_json::Value;

use logtrack_core::store::{RequestParams, SeriesRecord, Usage};
use logtrack_core::SeriesPoint;

use crate::config::EndpointConfig;
use crate::error::{NetError, Result};
use crate::wire::{self, WireError};

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSuccess {
    pub point: SeriesPoint<f64>,
    pub usage: Option<Usage>,
    pub request: RequestParams,
    /// HTTP requests spent, retries included.
    pub attempts: u32,
}

impl ProbeSuccess {
    pub fn record(&self) -> SeriesRecord {
        SeriesRecord::from_point(&self.point, self.request, self.usage)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProbeOutcome {
    Ok(ProbeSuccess),
    TransportError(String),
    RateLimited { retry_after: Option<Duration> },
    ProtocolError(String),
    LogprobsUnsupported,
}

impl ProbeOutcome {
    pub fn kind(&self) -> &'static str {
        match self {
            ProbeOutcome::Ok(_) => "ok",
            ProbeOutcome::TransportError(_) => "transport_error",
            ProbeOutcome::RateLimited { .. } => "rate_limited",
            ProbeOutcome::ProtocolError(_) => "protocol_error",
            ProbeOutcome::LogprobsUnsupported => "logprobs_unsupported",
        }
    }
}

/// Result of one request, before any logprob parsing.
#[derive(Debug)]
enum Attempt {
    Body(Value),
    Transport(String),
    RateLimited(Option<Duration>),
    /// 5xx: worth retrying.
    Server(String),
    Protocol(String),
}

impl Attempt {
    fn retryable(&self) -> bool {
        matches!(self, Attempt::Transport(_) | Attempt::RateLimited(_) | Attempt::Server(_))
    }
}

/// Seconds form of Retry-After; HTTP dates are ignored.
fn retry_after(headers: &reqwest::header::HeaderMap) -> Option<Duration> {
    let s = headers.get(RETRY_AFTER)?.to_str().ok()?;
    let secs: f64 = s.trim().parse().ok()?;
    (secs.is_finite() && secs >= 0.0).then(|| Duration::from_secs_f64(secs))
}

#[derive(Debug, Clone, Default)]
pub struct Prober {
    client: reqwest::Client,
}

impl Prober {
    pub fn new() -> Self {
        Prober::default()
    }

    pub fn with_client(client: reqwest::Client) -> Self {
        Prober { client }
    }

    pub fn client(&self) -> &reqwest::Client {
        &self.client
    }

    async fn attempt(&self, cfg: &EndpointConfig, token: Option<&str>, body: &Value) -> Attempt {
        let mut req = self.client.post(cfg.url()).timeout(cfg.timeout()).json(body);
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        let resp = match req.send().await {
            Ok(r) => r,
            Err(e) => return Attempt::Transport(e.to_string()),
        };
        let status = resp.status();
        let after = retry_after(resp.headers());
        let text = match resp.text().await {
            Ok(t) => t,
            Err(e) => return Attempt::Transport(e.to_string()),
        };
        let parsed: Option<Value> = serde_json::from_str(&text).ok();
        let detail = || {
            let msg = parsed
                .as_ref()
                .and_then(wire::error_message)
                .unwrap_or_else(|| text.chars().take(200).collect());
            format!("HTTP {}: {msg}", status.as_u16())
        };
        if status == StatusCode::TOO_MANY_REQUESTS {
            return Attempt::RateLimited(after);
        }
        if status.is_server_error() {
            return Attempt::Server(detail());
        }
        if !status.is_success() {
            return Attempt::Protocol(detail());
        }
        match parsed {
            Some(v) => Attempt::Body(v),
            None => Attempt::Protocol("response body is not JSON".into()),
        }
    }

    /// Sends with retries. Returns the final attempt and the number of
    /// requests made.
    async fn send(&self, cfg: &EndpointConfig, logprobs: bool) -> Result<(Attempt, u32)> {
        let token = cfg.auth_token()?;
        let body = wire::request_body(cfg, logprobs);
        let mut n = 0;
        loop {
            n += 1;
            let a = self.attempt(cfg, token.as_deref(), &body).await;
            if !a.retryable() || n >= cfg.retry.max_attempts {
                return Ok((a, n));
            }
            let hint = match &a {
                Attempt::RateLimited(d) => *d,
                _ => None,
            };
            let wait = cfg.retry.backoff(n, hint);
            log::debug!("{}: attempt {n} failed ({a:?}), retrying in {wait:?}", cfg.id);
            tokio::time::sleep(wait).await;
        }
    }

    /// One logprob probe. Only a missing auth token is an `Err`; every
    /// endpoint failure is a [`ProbeOutcome`].
    pub async fn probe(&self, cfg: &EndpointConfig) -> Result<ProbeOutcome> {
        let (attempt, attempts) = self.send(cfg, true).await?;
        let body = match attempt {
            Attempt::Body(b) => b,
            other => return Ok(failure(other)),
        };
        let vector = match wire::parse_completion(&body, cfg.top_logprobs) {
            Ok(v) => v,
            Err(WireError::Unsupported) => return Ok(ProbeOutcome::LogprobsUnsupported),
            Err(WireError::Protocol(m)) => return Ok(ProbeOutcome::ProtocolError(m)),
        };
        Ok(ProbeOutcome::Ok(ProbeSuccess {
            point: SeriesPoint {
                timestamp: Utc::now(),
                vector,
                endpoint_id: cfg.id.clone(),
                prompt: cfg.prompt.clone(),
            },
            usage: wire::parse_usage(&body),
            request: RequestParams {
                top_logprobs: cfg.top_logprobs,
                max_tokens: cfg.max_tokens,
                temperature: cfg.temperature,
            },
            attempts,
        }))
    }

    /// Plain completion without logprobs: `Ok(Ok(()))` when the endpoint
    /// answers with a valid completion.
    pub async fn reachability(&self, cfg: &EndpointConfig) -> Result<Result<(), ProbeOutcome>> {
        let (attempt, _) = self.send(cfg, false).await?;
        Ok(match attempt {
            Attempt::Body(b) => wire::check_completion(&b).map_err(|e| ProbeOutcome::ProtocolError(e.to_string())),
            other => Err(failure(other)),
        })
    }
}

fn failure(a: Attempt) -> ProbeOutcome {
    match a {
        Attempt::Transport(m) => ProbeOutcome::TransportError(m),
        Attempt::RateLimited(retry_after) => ProbeOutcome::RateLimited { retry_after },
        Attempt::Server(m) | Attempt::Protocol(m) => ProbeOutcome::ProtocolError(m),
        Attempt::Body(_) => unreachable!("a body is not a failure"),
    }
}

/// Turns an outcome into an error for callers that need a point.
pub fn require_ok(cfg: &EndpointConfig, outcome: ProbeOutcome) -> Result<ProbeSuccess> {
    match outcome {
        ProbeOutcome::Ok(s) => Ok(s),
        other => Err(NetError::Probe(format!("{}: {}", cfg.id, describe(&other)))),
    }
}

pub fn describe(o: &ProbeOutcome) -> String {
    match o {
        ProbeOutcome::Ok(s) => format!("ok, {} entries", s.point.vector.len()),
        ProbeOutcome::TransportError(m) => format!("transport error: {m}"),
        ProbeOutcome::RateLimited { retry_after: Some(d) } => format!("rate limited, retry after {d:?}"),
        ProbeOutcome::RateLimited { retry_after: None } => "rate limited".into(),
        ProbeOutcome::ProtocolError(m) => format!("protocol error: {m}"),
        ProbeOutcome::LogprobsUnsupported => "logprobs unsupported".into(),
    }
}
