//! Synthetic LLM endpoints with known ground truth.
//!
//! A model is a base logit vector over a small synthetic vocabulary
//! (`t0 .. t{V-1}`). Each request perturbs the logits with i.i.d. Gaussian
//! noise before the log-softmax, standing in for batch and hardware
//! non-determinism. Variants modify the base logits by a controllable
//! magnitude.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, Utc};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::baselines::TokenSequence;
use crate::error::{Error, Result};
use crate::monitor::SeriesPoint;
use crate::rng::{derive_seed, rng_for};
use crate::token::{LogprobEntry, LogprobVector, SampleSet, TokenKey};

const STREAM_BASE: u64 = 1;
const STREAM_DRAW: u64 = 2;
const STREAM_VARIANT: u64 = 3;
const STREAM_TRANSITION: u64 = 4;
const STREAM_SEQUENCE: u64 = 5;
const STREAM_MMLU_BIAS: u64 = 6;
const STREAM_MMLU_GOLD: u64 = 7;
const STREAM_MMLU_DRAW: u64 = 8;

pub const DEFAULT_VOCAB: usize = 64;
pub const DEFAULT_TOP_K: usize = 20;
pub const DEFAULT_NOISE_SIGMA: f64 = 0.05;
pub const DEFAULT_LOGIT_SCALE: f64 = 2.0;

pub fn token_name(i: usize) -> String {
    format!("t{i}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModel {
    pub vocab_size: usize,
    pub base_logits: Vec<f64>,
    pub noise_sigma: f64,
    pub top_k: usize,
    pub seed: u64,
}

/// Simulator configuration, as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub vocab_size: usize,
    pub noise_sigma: f64,
    pub top_k: usize,
    pub seed: u64,
    /// Standard deviation of the random base logits.
    pub logit_scale: f64,
    pub ladder: LadderConfig,
    pub variant: Option<VariantSpec>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            vocab_size: DEFAULT_VOCAB,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            top_k: DEFAULT_TOP_K,
            seed: 0,
            logit_scale: DEFAULT_LOGIT_SCALE,
            ladder: LadderConfig::default(),
            variant: None,
        }
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// The configured model, with the configured variant applied if any.
    pub fn build(&self) -> Result<SyntheticModel> {
        let m = SyntheticModel::random(
            self.vocab_size,
            self.logit_scale,
            self.noise_sigma,
            self.top_k,
            self.seed,
        )?;
        match &self.variant {
            Some(v) => apply_variant(&m, v),
            None => Ok(m),
        }
    }
}

/// Power-of-two difficulty ladder `2^min_exp ..= 2^max_exp`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderConfig {
    pub min_exp: i32,
    pub max_exp: i32,
    pub include_zero: bool,
}

impl Default for LadderConfig {
    fn default() -> Self {
        LadderConfig {
            min_exp: -15,
            max_exp: 0,
            include_zero: true,
        }
    }
}

impl LadderConfig {
    pub fn magnitudes(&self) -> Vec<f64> {
        let zero = self.include_zero.then_some(0.0);
        zero.into_iter()
            .chain((self.min_exp..=self.max_exp).map(|e| 2f64.powi(e)))
            .collect()
    }
}

impl SyntheticModel {
    pub fn new(base_logits: Vec<f64>, noise_sigma: f64, top_k: usize, seed: u64) -> Result<Self> {
        let vocab_size = base_logits.len();
        if vocab_size == 0 {
            return Err(Error::invalid("vocabulary must be non-empty"));
        }
        if top_k == 0 || top_k > vocab_size {
            return Err(Error::invalid(format!(
                "top_k = {top_k} must be in 1..={vocab_size}"
            )));
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma must be finite and >= 0"));
        }
        if base_logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("base logits must be finite"));
        }
        Ok(SyntheticModel {
            vocab_size,
            base_logits,
            noise_sigma,
            top_k,
            seed,
        })
    }

    /// Model with `N(0, logit_scale^2)` base logits drawn from `seed`.
    pub fn random(
        vocab_size: usize,
        logit_scale: f64,
        noise_sigma: f64,
        top_k: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = rng_for(seed, &[STREAM_BASE]);
        let base = (0..vocab_size)
            .map(|_| logit_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self::new(base, noise_sigma, top_k, seed)
    }

    pub fn with_noise(&self, noise_sigma: f64) -> Result<Self> {
        Self::new(self.base_logits.clone(), noise_sigma, self.top_k, self.seed)
    }

    pub fn with_top_k(&self, top_k: usize) -> Result<Self> {
        Self::new(self.base_logits.clone(), self.noise_sigma, top_k, self.seed)
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// Untruncated logprobs of one noisy request.
pub fn full_logprobs(m: &SyntheticModel, draw_seed: u64) -> Vec<f64> {
    if m.noise_sigma == 0.0 {
        return log_softmax(&m.base_logits);
    }
    let mut rng = rng_for(m.seed, &[STREAM_DRAW, draw_seed]);
    let noisy: Vec<f64> = m
        .base_logits
        .iter()
        .map(|&z| z + m.noise_sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    log_softmax(&noisy)
}

/// One response: the `top_k` highest logprobs of a noisy request.
pub fn sample_logprob_vector(m: &SyntheticModel, draw_seed: u64) -> LogprobVector<f64> {
    top_k_vector(&full_logprobs(m, draw_seed), m.top_k)
}

fn top_k_vector(lp: &[f64], k: usize) -> LogprobVector<f64> {
    let mut idx: Vec<usize> = (0..lp.len()).collect();
    idx.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
    let entries = idx[..k]
        .iter()
        .map(|&i| LogprobEntry {
            token: TokenKey::text(token_name(i)),
            // log-softmax output is <= 0 up to rounding
            logprob: lp[i].min(0.0),
        })
        .collect();
    LogprobVector::new(entries, k).expect("simulated vectors satisfy the invariants")
}

/// `n` responses with draw seeds derived from `stream`.
pub fn sample_set(m: &SyntheticModel, n: usize, stream: u64) -> SampleSet<f64> {
    let samples = (0..n as u64)
        .map(|j| sample_logprob_vector(m, crate::rng::derive_seed(stream, &[j])))
        .collect();
    SampleSet::new(samples, "x", format!("sim:{}", m.seed)).expect("n >= 1")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantKind {
    LogitShift,
    LogitNoiseInjection,
    Sparsify,
}

impl VariantKind {
    fn tag(self) -> u64 {
        match self {
            VariantKind::LogitShift => 1,
            VariantKind::LogitNoiseInjection => 2,
            VariantKind::Sparsify => 3,
        }
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logit-shift" => Ok(VariantKind::LogitShift),
            "logit-noise-injection" => Ok(VariantKind::LogitNoiseInjection),
            "sparsify" => Ok(VariantKind::Sparsify),
            other => Err(Error::invalid(format!("unknown variant kind {other:?}"))),
        }
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VariantKind::LogitShift => "logit-shift",
            VariantKind::LogitNoiseInjection => "logit-noise-injection",
            VariantKind::Sparsify => "sparsify",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub kind: VariantKind,
    pub magnitude: f64,
}

impl VariantSpec {
    pub fn new(kind: VariantKind, magnitude: f64) -> Result<Self> {
        if !(magnitude >= 0.0 && magnitude.is_finite()) {
            return Err(Error::invalid("variant magnitude must be finite and >= 0"));
        }
        if kind == VariantKind::Sparsify && magnitude > 1.0 {
            return Err(Error::invalid("sparsify magnitude is a fraction in [0, 1]"));
        }
        Ok(VariantSpec { kind, magnitude })
    }
}

impl FromStr for VariantSpec {
    type Err = Error;

    /// `kind:magnitude`, e.g. `logit-shift:0.125`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, mag) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("variant {s:?} is not kind:magnitude")))?;
        let mag: f64 = mag
            .parse()
            .map_err(|_| Error::invalid(format!("bad variant magnitude {mag:?}")))?;
        VariantSpec::new(kind.parse()?, mag)
    }
}

/// Frozen direction used by additive variants, fixed per (model seed, kind).
pub fn variant_direction(m: &SyntheticModel, kind: VariantKind) -> Vec<f64> {
    let mut rng = rng_for(m.seed, &[STREAM_VARIANT, kind.tag()]);
    (0..m.vocab_size)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

pub fn apply_variant(m: &SyntheticModel, v: &VariantSpec) -> Result<SyntheticModel> {
    let v = VariantSpec::new(v.kind, v.magnitude)?;
    if v.magnitude == 0.0 {
        return Ok(m.clone());
    }
    let mut out = m.clone();
    match v.kind {
        VariantKind::LogitShift | VariantKind::LogitNoiseInjection => {
            let d = variant_direction(m, v.kind);
            for (z, di) in out.base_logits.iter_mut().zip(d) {
                *z += v.magnitude * di;
            }
        }
        VariantKind::Sparsify => {
            let count = (v.magnitude * m.vocab_size as f64).round() as usize;
            let mut idx: Vec<usize> = (0..m.vocab_size).collect();
            idx.sort_by(|&a, &b| {
                m.base_logits[a]
                    .abs()
                    .total_cmp(&m.base_logits[b].abs())
                    .then(a.cmp(&b))
            });
            for &i in &idx[..count.min(m.vocab_size)] {
                out.base_logits[i] = 0.0;
            }
        }
    }
    Ok(out)
}

fn sample_categorical(logits: &[f64], temperature: f64, u: f64) -> usize {
    let scaled: Vec<f64> = logits.iter().map(|&z| z / temperature).collect();
    let lp = log_softmax(&scaled);
    let mut acc = 0.0;
    for (i, &l) in lp.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            return i;
        }
    }
    lp.len() - 1
}

/// Free-running sequence generation for the sampled-text baseline.
///
/// Each step samples from `softmax((base + transition[prev]) / T)`, where
/// the transition offsets are frozen per model seed (and so shared by a
/// model and its variants). The prompt selects the initial context token.
pub struct SequenceSampler<'m> {
    model: &'m SyntheticModel,
    transition: Vec<f64>,
}

impl<'m> SequenceSampler<'m> {
    pub fn new(model: &'m SyntheticModel) -> Self {
        let v = model.vocab_size;
        let mut rng = rng_for(model.seed, &[STREAM_TRANSITION]);
        let transition = (0..v * v)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        SequenceSampler { model, transition }
    }

    pub fn sample(
        &self,
        prompt: usize,
        len: usize,
        temperature: f64,
        draw_seed: u64,
    ) -> TokenSequence {
        let v = self.model.vocab_size;
        let mut rng = rng_for(self.model.seed, &[STREAM_SEQUENCE, prompt as u64, draw_seed]);
        let mut prev = prompt % v;
        let mut logits = vec![0.0; v];
        let mut tokens = Vec::with_capacity(len);
        for _ in 0..len {
            let row = &self.transition[prev * v..(prev + 1) * v];
            for ((l, &b), &t) in logits.iter_mut().zip(&self.model.base_logits).zip(row) {
                *l = b + t;
            }
            let next = sample_categorical(&logits, temperature, rng.random::<f64>());
            tokens.push(TokenKey::text(token_name(next)));
            prev = next;
        }
        TokenSequence::new(tokens)
    }
}

/// Gold letter of synthetic multiple-choice question `q`, fixed per seed.
pub fn mmlu_gold(model_seed: u64, question: usize) -> char {
    let mut rng = rng_for(model_seed, &[STREAM_MMLU_GOLD, question as u64]);
    ['A', 'B', 'C', 'D'][rng.random_range(0..4)]
}

/// Sampled answer letter for question `q`: the four choice logits are
/// base logits at question-specific positions plus a frozen bias.
pub fn sample_mmlu_answer(
    m: &SyntheticModel,
    question: usize,
    temperature: f64,
    draw_seed: u64,
) -> char {
    let mut bias_rng = rng_for(m.seed, &[STREAM_MMLU_BIAS, question as u64]);
    let logits: Vec<f64> = (0..4)
        .map(|c| {
            let b: f64 = StandardNormal.sample(&mut bias_rng);
            m.base_logits[(4 * question + c) % m.vocab_size] + b
        })
        .collect();
    let mut rng = rng_for(m.seed, &[STREAM_MMLU_DRAW, question as u64, draw_seed]);
    ['A', 'B', 'C', 'D'][sample_categorical(&logits, temperature, rng.random::<f64>())]
}

/// An hourly-style series of responses with changes applied at given
/// indices. Each change is applied on top of the model in force before it.
pub fn synthetic_series(
    model: &SyntheticModel,
    len: usize,
    changes: &[(usize, VariantSpec)],
    start: DateTime<Utc>,
    step: Duration,
    endpoint_id: &str,
    stream: u64,
) -> Result<Vec<SeriesPoint<f64>>> {
    let mut changes = changes.to_vec();
    changes.sort_by_key(|c| c.0);
    let mut current = model.clone();
    let mut next = changes.iter().peekable();
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        while let Some((at, spec)) = next.peek() {
            if *at > i {
                break;
            }
            // distinct change directions for repeated changes
            let reseeded = SyntheticModel {
                seed: derive_seed(model.seed, &[0xc4a9, *at as u64]),
                ..current.clone()
            };
            current = SyntheticModel {
                seed: model.seed,
                ..apply_variant(&reseeded, spec)?
            };
            next.next();
        }
        out.push(SeriesPoint {
            timestamp: start + step * i as i32,
            vector: sample_logprob_vector(&current, derive_seed(stream, &[i as u64])),
            endpoint_id: endpoint_id.to_string(),
            prompt: "x".to_string(),
        });
    }
    Ok(out)
}
