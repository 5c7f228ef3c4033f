//! Endpoint and fleet configuration.

use std::collections::HashSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    /// Total attempts per probe, including the first.
    pub max_attempts: u32,
    /// Waits before the second, third, ... attempt; the last entry repeats.
    pub backoff_secs: Vec<f64>,
    /// Upper bound on a server-requested retry delay.
    pub max_retry_after_secs: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_secs: vec![1.0, 4.0, 16.0],
            max_retry_after_secs: 60.0,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            max_attempts: 1,
            ..RetryPolicy::default()
        }
    }

    /// Wait before attempt `attempt + 1` (`attempt` counts from 1).
    pub fn backoff(&self, attempt: u32, retry_after: Option<Duration>) -> Duration {
        let cap = Duration::from_secs_f64(self.max_retry_after_secs.max(0.0));
        if let Some(ra) = retry_after {
            return ra.min(cap);
        }
        let i = (attempt as usize).saturating_sub(1);
        let secs = self
            .backoff_secs
            .get(i)
            .or(self.backoff_secs.last())
            .copied()
            .unwrap_or(0.0);
        Duration::from_secs_f64(secs.max(0.0))
    }
}

fn default_prompt() -> String {
    "x".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    /// Stable identifier; names the store partition.
    pub id: String,
    /// API root; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    #[serde(default)]
    pub auth_token_env: Option<String>,
    #[serde(default = "default_prompt")]
    pub prompt: String,
    #[serde(default = "EndpointConfig::default_top_logprobs")]
    pub top_logprobs: usize,
    #[serde(default = "EndpointConfig::default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "EndpointConfig::default_temperature")]
    pub temperature: f64,
    #[serde(default = "EndpointConfig::default_timeout")]
    pub timeout_secs: f64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl EndpointConfig {
    fn default_top_logprobs() -> usize {
        20
    }
    fn default_max_tokens() -> u32 {
        1
    }
    fn default_temperature() -> f64 {
        1.0
    }
    fn default_timeout() -> f64 {
        30.0
    }

    pub fn new(id: impl Into<String>, base_url: impl Into<String>, model: impl Into<String>) -> Self {
        EndpointConfig {
            id: id.into(),
            base_url: base_url.into(),
            model: model.into(),
            auth_token_env: None,
            prompt: default_prompt(),
            top_logprobs: Self::default_top_logprobs(),
            max_tokens: Self::default_max_tokens(),
            temperature: Self::default_temperature(),
            timeout_secs: Self::default_timeout(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(NetError::Config("endpoint id is empty".into()));
        }
        if self.max_tokens < 1 || self.top_logprobs < 1 {
            return Err(NetError::Config(format!(
                "endpoint {}: max_tokens and top_logprobs must be >= 1",
                self.id
            )));
        }
        if !(self.timeout_secs > 0.0) || !self.temperature.is_finite() {
            return Err(NetError::Config(format!(
                "endpoint {}: bad timeout or temperature",
                self.id
            )));
        }
        if self.retry.max_attempts < 1 {
            return Err(NetError::Config(format!(
                "endpoint {}: retry.max_attempts must be >= 1",
                self.id
            )));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }

    /// Bearer token from the configured environment variable.
    pub fn auth_token(&self) -> Result<Option<String>> {
        match &self.auth_token_env {
            None => Ok(None),
            Some(var) => std::env::var(var).map(Some).map_err(|_| {
                NetError::Config(format!(
                    "endpoint {}: environment variable {var} is not set",
                    self.id
                ))
            }),
        }
    }
}

/// A fleet file: `[[endpoint]]` tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fleet {
    #[serde(default, rename = "endpoint")]
    pub endpoints: Vec<EndpointConfig>,
}

impl Fleet {
    pub fn from_toml(text: &str) -> Result<Self> {
        let fleet: Fleet = toml::from_str(text).map_err(|e| NetError::Config(e.to_string()))?;
        fleet.validate()?;
        Ok(fleet)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("fleet serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for e in &self.endpoints {
            e.validate()?;
            if !ids.insert(&e.id) {
                return Err(NetError::Config(format!("duplicate endpoint id {}", e.id)));
            }
        }
        Ok(())
    }
}
