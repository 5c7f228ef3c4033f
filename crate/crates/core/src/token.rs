//! Token identity and the per-response logprob vectors built on it.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A token as returned by an API.
///
/// Identity is the canonical key: the raw byte sequence when the API
/// provides one, otherwise the UTF-8 bytes of the text. Two keys with the
/// same bytes but different display text are the same token.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenKey {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bytes: Option<Vec<u8>>,
}

impl TokenKey {
    pub fn text(text: impl Into<String>) -> Self {
        TokenKey {
            text: text.into(),
            bytes: None,
        }
    }

    pub fn with_bytes(text: impl Into<String>, bytes: Vec<u8>) -> Self {
        TokenKey {
            text: text.into(),
            bytes: Some(bytes),
        }
    }

    pub fn canonical(&self) -> &[u8] {
        self.bytes.as_deref().unwrap_or(self.text.as_bytes())
    }

    /// Drops the byte sequence so identity falls back to the decoded text.
    pub fn text_only(&self) -> TokenKey {
        TokenKey::text(self.text.clone())
    }
}

impl PartialEq for TokenKey {
    fn eq(&self, other: &Self) -> bool {
        self.canonical() == other.canonical()
    }
}

impl Eq for TokenKey {}

impl Hash for TokenKey {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.canonical().hash(state)
    }
}

impl PartialOrd for TokenKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TokenKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.canonical().cmp(other.canonical())
    }
}

impl From<&str> for TokenKey {
    fn from(s: &str) -> Self {
        TokenKey::text(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LogprobEntry<T> {
    pub token: TokenKey,
    pub logprob: T,
}

/// Top-k (token, logprob) pairs for the first output token of one response.
///
/// Entries are sorted by logprob descending, ties keeping the order in which
/// they were supplied. Logprobs are finite and `<= 0`, tokens are distinct,
/// and `1 <= len <= requested_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "RawLogprobVector<T>",
    bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>"
)]
pub struct LogprobVector<T> {
    entries: Vec<LogprobEntry<T>>,
    requested_k: usize,
}

#[derive(Deserialize)]
#[serde(bound = "T: Scalar")]
struct RawLogprobVector<T> {
    entries: Vec<LogprobEntry<T>>,
    requested_k: usize,
}

impl<T: Scalar> TryFrom<RawLogprobVector<T>> for LogprobVector<T> {
    type Error = Error;

    fn try_from(raw: RawLogprobVector<T>) -> Result<Self> {
        LogprobVector::new(raw.entries, raw.requested_k)
    }
}

impl<T: Scalar> LogprobVector<T> {
    pub fn new(mut entries: Vec<LogprobEntry<T>>, requested_k: usize) -> Result<Self> {
        if requested_k == 0 {
            return Err(Error::invalid("requested_k must be at least 1"));
        }
        if entries.is_empty() {
            return Err(Error::invalid("logprob vector has no entries"));
        }
        if entries.len() > requested_k {
            return Err(Error::invalid(format!(
                "{} entries exceed requested_k = {requested_k}",
                entries.len()
            )));
        }
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !e.logprob.is_finite() || e.logprob > T::zero() {
                return Err(Error::invalid(format!(
                    "logprob {} for token {:?} is not a finite value <= 0",
                    e.logprob, e.token.text
                )));
            }
            if !seen.insert(e.token.canonical()) {
                return Err(Error::invalid(format!(
                    "duplicate token {:?} in logprob vector",
                    e.token.text
                )));
            }
        }
        // stable: ties keep API order
        entries.sort_by(|a, b| b.logprob.partial_cmp(&a.logprob).unwrap_or(Ordering::Equal));
        Ok(LogprobVector {
            entries,
            requested_k,
        })
    }

    /// Convenience constructor from `(text, logprob)` pairs.
    pub fn from_pairs<S: AsRef<str>>(pairs: &[(S, T)], requested_k: usize) -> Result<Self> {
        let entries = pairs
            .iter()
            .map(|(t, lp)| LogprobEntry {
                token: TokenKey::text(t.as_ref()),
                logprob: *lp,
            })
            .collect();
        Self::new(entries, requested_k)
    }

    pub fn entries(&self) -> &[LogprobEntry<T>] {
        &self.entries
    }

    pub fn requested_k(&self) -> usize {
        self.requested_k
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Smallest observed logprob (the last entry).
    pub fn min_logprob(&self) -> T {
        self.entries
            .last()
            .map(|e| e.logprob)
            .unwrap_or_else(T::neg_infinity)
    }

    pub fn get(&self, token: &TokenKey) -> Option<T> {
        self.entries
            .iter()
            .find(|e| &e.token == token)
            .map(|e| e.logprob)
    }

    pub fn text_only(&self) -> Result<Self> {
        let entries = self
            .entries
            .iter()
            .map(|e| LogprobEntry {
                token: e.token.text_only(),
                logprob: e.logprob,
            })
            .collect();
        Self::new(entries, self.requested_k)
    }

    pub fn cast<U: Scalar>(&self) -> Result<LogprobVector<U>> {
        let entries = self
            .entries
            .iter()
            .map(|e| LogprobEntry {
                token: e.token.clone(),
                logprob: U::of(e.logprob.as_f64()),
            })
            .collect();
        LogprobVector::new(entries, self.requested_k)
    }
}

/// `N` responses drawn from one (endpoint, prompt) under identical request
/// parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SampleSet<T> {
    pub samples: Vec<LogprobVector<T>>,
    pub prompt: String,
    pub source_label: String,
}

impl<T: Scalar> SampleSet<T> {
    pub fn new(
        samples: Vec<LogprobVector<T>>,
        prompt: impl Into<String>,
        source_label: impl Into<String>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("sample set is empty"));
        }
        Ok(SampleSet {
            samples,
            prompt: prompt.into(),
            source_label: source_label.into(),
        })
    }

    /// Unlabelled set, mostly for tests and internal windows.
    pub fn from_samples(samples: Vec<LogprobVector<T>>) -> Result<Self> {
        Self::new(samples, "", "")
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Same samples with token identity relaxed to decoded text.
    pub fn text_only(&self) -> Result<Self> {
        let samples = self
            .samples
            .iter()
            .map(LogprobVector::text_only)
            .collect::<Result<_>>()?;
        Ok(SampleSet {
            samples,
            prompt: self.prompt.clone(),
            source_label: self.source_label.clone(),
        })
    }

    pub fn cast<U: Scalar>(&self) -> Result<SampleSet<U>> {
        Ok(SampleSet {
            samples: self
                .samples
                .iter()
                .map(LogprobVector::cast)
                .collect::<Result<_>>()?,
            prompt: self.prompt.clone(),
            source_label: self.source_label.clone(),
        })
    }
}
