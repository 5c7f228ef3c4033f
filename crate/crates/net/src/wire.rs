//! Chat-completions wire shape: request bodies and response parsing.

use serde_json::{json, Map, Value};
use thiserror::Error;

use logtrack_core::store::Usage;
use logtrack_core::{LogprobEntry, LogprobVector, TokenKey};

use crate::config::EndpointConfig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WireError {
    /// The response is valid but carries no logprobs block.
    #[error("logprobs not returned")]
    Unsupported,
    #[error("{0}")]
    Protocol(String),
}

fn protocol(msg: impl Into<String>) -> WireError {
    WireError::Protocol(msg.into())
}

pub fn request_body(cfg: &EndpointConfig, logprobs: bool) -> Value {
    let mut body = json!({
        "model": cfg.model,
        "messages": [{"role": "user", "content": cfg.prompt}],
        "max_tokens": cfg.max_tokens,
        "temperature": cfg.temperature,
    });
    if logprobs {
        body["logprobs"] = json!(true);
        body["top_logprobs"] = json!(cfg.top_logprobs);
    }
    body
}

/// First choice of a completion document, checked for the fields every
/// valid response has.
fn first_choice(body: &Value) -> Result<&Map<String, Value>, WireError> {
    let choices = body
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| protocol("response has no choices array"))?;
    let choice = choices
        .first()
        .and_then(Value::as_object)
        .ok_or_else(|| protocol("choices array is empty"))?;
    if !choice.contains_key("message") {
        return Err(protocol("choice has no message"));
    }
    Ok(choice)
}

/// Checks that `body` is a completion at all, ignoring logprobs.
pub fn check_completion(body: &Value) -> Result<(), WireError> {
    first_choice(body).map(|_| ())
}

/// Top logprobs of the first output token.
///
/// Ties keep the order in which the server sent them.
pub fn parse_completion(body: &Value, requested_k: usize) -> Result<LogprobVector<f64>, WireError> {
    let choice = first_choice(body)?;
    let content = match choice.get("logprobs") {
        None | Some(Value::Null) => return Err(WireError::Unsupported),
        Some(lp) => match lp.get("content") {
            None | Some(Value::Null) => return Err(WireError::Unsupported),
            Some(c) => c
                .as_array()
                .ok_or_else(|| protocol("logprobs.content is not an array"))?,
        },
    };
    let first = content
        .first()
        .ok_or_else(|| protocol("logprobs.content is empty"))?;
    let top = first
        .get("top_logprobs")
        .and_then(Value::as_array)
        .ok_or_else(|| protocol("first token has no top_logprobs array"))?;
    let entries = top
        .iter()
        .enumerate()
        .map(|(i, e)| parse_entry(e).map_err(|m| protocol(format!("top_logprobs[{i}]: {m}"))))
        .collect::<Result<Vec<_>, _>>()?;
    LogprobVector::new(entries, requested_k).map_err(|e| protocol(e.to_string()))
}

fn parse_entry(e: &Value) -> Result<LogprobEntry<f64>, String> {
    let token = e
        .get("token")
        .and_then(Value::as_str)
        .ok_or("missing token")?;
    let logprob = e
        .get("logprob")
        .and_then(Value::as_f64)
        .ok_or("missing logprob")?;
    let token = match e.get("bytes") {
        None | Some(Value::Null) => TokenKey::text(token),
        Some(Value::Array(bs)) => {
            let bytes = bs
                .iter()
                .map(|b| b.as_u64().and_then(|b| u8::try_from(b).ok()))
                .collect::<Option<Vec<u8>>>()
                .ok_or("bytes are not octets")?;
            TokenKey::with_bytes(token, bytes)
        }
        Some(_) => return Err("bytes is not an array".into()),
    };
    Ok(LogprobEntry { token, logprob })
}

pub fn parse_usage(body: &Value) -> Option<Usage> {
    let u = body.get("usage")?;
    Some(Usage {
        prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
        completion_tokens: u.get("completion_tokens")?.as_u64()?,
    })
}

/// Error message from an OpenAI-style error document, if any.
pub fn error_message(body: &Value) -> Option<String> {
    let e = body.get("error")?;
    e.get("message")
        .and_then(Value::as_str)
        .or_else(|| e.as_str())
        .map(str::to_string)
}

fn render_entry(e: &LogprobEntry<f64>) -> Value {
    let mut v = json!({"token": e.token.text, "logprob": e.logprob});
    if let Some(b) = &e.token.bytes {
        v["bytes"] = json!(b);
    }
    v
}

/// Response document for a one-token completion. `vector = None` leaves the
/// logprobs block null, as servers without logprob support do.
pub fn render_completion(model: &str, vector: Option<&LogprobVector<f64>>, content: &str, usage: Usage) -> Value {
    let logprobs = match vector {
        None => Value::Null,
        Some(v) => {
            let mut first = render_entry(&v.entries()[0]);
            first["top_logprobs"] = v.entries().iter().map(render_entry).collect();
            json!({ "content": [first] })
        }
    };
    json!({
        "id": "chatcmpl-sim",
        "object": "chat.completion",
        "model": model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "logprobs": logprobs,
            "finish_reason": "length",
        }],
        "usage": {
            "prompt_tokens": usage.prompt_tokens,
            "completion_tokens": usage.completion_tokens,
            "total_tokens": usage.prompt_tokens + usage.completion_tokens,
        },
    })
}

pub fn render_error(message: &str, kind: &str, code: &str) -> Value {
    json!({"error": {"message": message, "type": kind, "param": Value::Null, "code": code}})
}
