//! In-process chat-completions server backed by a synthetic model.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use logtrack_core::rng::derive_seed;
use logtrack_core::simulator::{sample_logprob_vector, SyntheticModel};
use logtrack_core::store::Usage;
use logtrack_core::LogprobVector;

use crate::error::{NetError, Result};
use crate::wire;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    Normal,
    /// Every request gets 429 with this Retry-After.
    RateLimit { retry_after_secs: u64 },
    /// Completions come back with a null logprobs block.
    NoLogprobs,
    /// Requests with `max_tokens` below the minimum are rejected, as some
    /// reasoning-model routes do.
    MinMaxTokens { min: u32 },
    /// Every request gets 500.
    ServerError,
}

#[derive(Debug, Clone)]
pub struct SimServerConfig {
    pub model: SyntheticModel,
    pub behavior: Behavior,
    /// `prompt_tokens` reported for request `n` is `pattern[n % len]`.
    pub prompt_token_pattern: Vec<u64>,
    /// Added before every response.
    pub latency: Duration,
}

impl SimServerConfig {
    pub fn new(model: SyntheticModel) -> Self {
        SimServerConfig {
            model,
            behavior: Behavior::Normal,
            prompt_token_pattern: vec![1],
            latency: Duration::ZERO,
        }
    }
}

struct Shared {
    model: RwLock<SyntheticModel>,
    behavior: Behavior,
    pattern: Vec<u64>,
    latency: Duration,
    counter: AtomicU64,
    log: Mutex<Vec<Value>>,
}

/// A running server; dropping it stops it.
pub struct SimServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    stop: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<()>>,
}

/// Draw seed for request number `n`.
pub fn draw_seed(model: &SyntheticModel, n: u64) -> u64 {
    derive_seed(model.seed, &[0x5e7e, n])
}

/// Vector the server returns for request `n` with `top_logprobs = k`.
pub fn served_vector(model: &SyntheticModel, n: u64, k: usize) -> Option<LogprobVector<f64>> {
    let full = sample_logprob_vector(model, draw_seed(model, n));
    let k = k.min(full.len());
    if k == 0 {
        return None;
    }
    Some(LogprobVector::new(full.entries()[..k].to_vec(), k).expect("prefix of a valid vector"))
}

pub async fn serve(config: SimServerConfig, bind: SocketAddr) -> Result<SimServer> {
    if config.prompt_token_pattern.is_empty() {
        return Err(NetError::Config("prompt_token_pattern is empty".into()));
    }
    let listener = TcpListener::bind(bind)
        .await
        .map_err(|source| NetError::Bind { addr: bind, source })?;
    let addr = listener
        .local_addr()
        .map_err(|source| NetError::Bind { addr: bind, source })?;
    let shared = Arc::new(Shared {
        model: RwLock::new(config.model),
        behavior: config.behavior,
        pattern: config.prompt_token_pattern,
        latency: config.latency,
        counter: AtomicU64::new(0),
        log: Mutex::new(Vec::new()),
    });
    let app = Router::new()
        .route("/v1/chat/completions", post(completions))
        .with_state(shared.clone());
    let (tx, rx) = oneshot::channel();
    let task = tokio::spawn(async move {
        let res = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
        if let Err(e) = res {
            log::error!("simulator server stopped: {e}");
        }
    });
    Ok(SimServer {
        addr,
        shared,
        stop: Some(tx),
        task: Some(task),
    })
}

impl SimServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn request_count(&self) -> u64 {
        self.shared.counter.load(Ordering::SeqCst)
    }

    /// Request bodies received so far, in arrival order.
    pub fn requests(&self) -> Vec<Value> {
        self.shared.log.lock().expect("request log").clone()
    }

    /// Swaps the served model, e.g. to inject a change into a live series.
    pub fn set_model(&self, model: SyntheticModel) {
        *self.shared.model.write().expect("model lock") = model;
    }

    pub fn model(&self) -> SyntheticModel {
        self.shared.model.read().expect("model lock").clone()
    }

    pub async fn shutdown(mut self) {
        self.stop_now();
        if let Some(t) = self.task.take() {
            let _ = t.await;
        }
    }

    fn stop_now(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
    }
}

impl Drop for SimServer {
    fn drop(&mut self) {
        self.stop_now();
    }
}

fn error(status: StatusCode, message: &str, kind: &str, code: &str) -> Response {
    (status, Json(wire::render_error(message, kind, code))).into_response()
}

async fn completions(State(s): State<Arc<Shared>>, body: Option<Json<Value>>) -> Response {
    let n = s.counter.fetch_add(1, Ordering::SeqCst);
    let Some(Json(body)) = body else {
        return error(StatusCode::BAD_REQUEST, "request body is not JSON", "invalid_request_error", "invalid_json");
    };
    s.log.lock().expect("request log").push(body.clone());
    if !s.latency.is_zero() {
        tokio::time::sleep(s.latency).await;
    }
    match s.behavior {
        Behavior::RateLimit { retry_after_secs } => {
            let mut r = error(StatusCode::TOO_MANY_REQUESTS, "Rate limit reached", "rate_limit_error", "rate_limit_exceeded");
            r.headers_mut()
                .insert(header::RETRY_AFTER, retry_after_secs.to_string().parse().expect("digits"));
            return r;
        }
        Behavior::ServerError => {
            return error(StatusCode::INTERNAL_SERVER_ERROR, "internal error", "server_error", "internal");
        }
        _ => {}
    }
    if body.get("messages").and_then(Value::as_array).is_none_or(|m| m.is_empty()) {
        return error(StatusCode::BAD_REQUEST, "messages must be a non-empty array", "invalid_request_error", "invalid_messages");
    }
    let max_tokens = body.get("max_tokens").and_then(Value::as_u64).unwrap_or(1);
    if let Behavior::MinMaxTokens { min } = s.behavior {
        if max_tokens < min as u64 {
            let msg = format!(
                "Invalid 'max_output_tokens': integer below minimum value. Expected a value >= {min}, but got {max_tokens} instead."
            );
            return error(StatusCode::BAD_REQUEST, &msg, "invalid_request_error", "integer_below_min_value");
        }
    }
    let logprobs = body.get("logprobs").and_then(Value::as_bool).unwrap_or(false);
    let k = body.get("top_logprobs").and_then(Value::as_u64).unwrap_or(0) as usize;
    let model = s.model.read().expect("model lock").clone();
    // the reported token is the most likely one; samplers at T > 0 would
    // vary it, but only the logprobs matter here
    let full = sample_logprob_vector(&model, draw_seed(&model, n));
    let content = full.entries()[0].token.text.clone();
    let vector = match s.behavior {
        Behavior::NoLogprobs => None,
        _ if logprobs => served_vector(&model, n, k),
        _ => None,
    };
    let usage = Usage {
        prompt_tokens: s.pattern[(n % s.pattern.len() as u64) as usize],
        completion_tokens: 1,
    };
    let name = body.get("model").and_then(Value::as_str).unwrap_or("sim");
    let mut doc = wire::render_completion(name, vector.as_ref(), &content, usage);
    if logprobs && vector.is_none() && s.behavior != Behavior::NoLogprobs {
        // logprobs requested with k = 0: chosen token only
        doc["choices"][0]["logprobs"] = serde_json::json!({"content": [{"token": content, "logprob": full.entries()[0].logprob, "top_logprobs": []}]});
    }
    Json(doc).into_response()
}
