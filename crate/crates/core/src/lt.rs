//! Logprob tracking: a permutation test on the mean absolute distance
//! between per-token average logprobs of two groups of single-token
//! responses.
//!
//! Tokens missing from a response (top-k truncation) are imputed with that
//! response's smallest observed logprob, which upper-bounds the hidden
//! value. The token union is fixed once from the pooled data, so every
//! permuted split is scored over the same columns.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::permutation::{
    self, column_means, mean_abs_diff, Design, TestResult, DEFAULT_EXACT_CAP,
};
use crate::scalar::Scalar;
use crate::token::{SampleSet, TokenKey};

/// All distinct tokens seen in either set, sorted by canonical key.
pub fn token_union<T: Scalar>(a: &SampleSet<T>, b: &SampleSet<T>) -> Result<Vec<TokenKey>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("token union needs two non-empty sample sets"));
    }
    let set: BTreeSet<&TokenKey> = a
        .samples
        .iter()
        .chain(&b.samples)
        .flat_map(|v| v.entries().iter().map(|e| &e.token))
        .collect();
    Ok(set.into_iter().cloned().collect())
}

/// `N x n_tok` logprob matrix with the imputation mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LogprobMatrix<T> {
    tokens: Vec<TokenKey>,
    n_rows: usize,
    values: Vec<T>,
    imputed: Vec<bool>,
}

impl<T: Scalar> LogprobMatrix<T> {
    pub fn tokens(&self) -> &[TokenKey] {
        &self.tokens
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn row(&self, j: usize) -> &[T] {
        let n = self.tokens.len();
        &self.values[j * n..(j + 1) * n]
    }

    pub fn imputed_row(&self, j: usize) -> &[bool] {
        let n = self.tokens.len();
        &self.imputed[j * n..(j + 1) * n]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn column_means(&self) -> Vec<T> {
        let rows: Vec<usize> = (0..self.n_rows).collect();
        column_means(&self.values, self.tokens.len(), &rows)
    }
}

/// Builds the logprob matrix of `s` over `tokens`, imputing absent tokens
/// with the row minimum.
pub fn to_matrix<T: Scalar>(s: &SampleSet<T>, tokens: &[TokenKey]) -> Result<LogprobMatrix<T>> {
    let n_tok = tokens.len();
    let mut values = Vec::with_capacity(s.len() * n_tok);
    let mut imputed = Vec::with_capacity(s.len() * n_tok);
    for (j, sample) in s.samples.iter().enumerate() {
        if sample.is_empty() {
            return Err(Error::invalid(format!("sample {j} has no logprob entries")));
        }
        let min = sample.min_logprob();
        let start = values.len();
        values.resize(start + n_tok, min);
        imputed.resize(start + n_tok, true);
        for e in sample.entries() {
            let i = tokens.binary_search(&e.token).map_err(|_| {
                Error::invalid(format!(
                    "token {:?} of sample {j} is not in the token list",
                    e.token.text
                ))
            })?;
            values[start + i] = e.logprob;
            imputed[start + i] = false;
        }
    }
    Ok(LogprobMatrix {
        tokens: tokens.to_vec(),
        n_rows: s.len(),
        values,
        imputed,
    })
}

/// Mean over tokens of the absolute difference between column means.
pub fn lt_statistic<T: Scalar>(ma: &LogprobMatrix<T>, mb: &LogprobMatrix<T>) -> Result<T> {
    if ma.tokens != mb.tokens {
        return Err(Error::TokenMismatch);
    }
    if ma.n_rows == 0 || mb.n_rows == 0 {
        return Err(Error::invalid("logprob matrices need at least one row"));
    }
    if ma.tokens.is_empty() {
        return Err(Error::invalid("logprob matrices have no tokens"));
    }
    Ok(mean_abs_diff(&ma.column_means(), &mb.column_means()))
}

/// Observed statistic of two sample sets over their token union.
pub fn lt_statistic_sets<T: Scalar>(a: &SampleSet<T>, b: &SampleSet<T>) -> Result<T> {
    let tokens = token_union(a, b)?;
    lt_statistic(&to_matrix(a, &tokens)?, &to_matrix(b, &tokens)?)
}

/// Pooled rows of two matrices that share a token list.
struct Pooled<T> {
    values: Vec<T>,
    n_tok: usize,
}

impl<T: Scalar> Pooled<T> {
    fn new(ma: &LogprobMatrix<T>, mb: &LogprobMatrix<T>) -> Self {
        let mut values = ma.values.clone();
        values.extend_from_slice(&mb.values);
        Pooled {
            values,
            n_tok: ma.tokens.len(),
        }
    }

    fn statistic(&self, a: &[usize], b: &[usize]) -> T {
        mean_abs_diff(
            &column_means(&self.values, self.n_tok, a),
            &column_means(&self.values, self.n_tok, b),
        )
    }
}

fn prepare<T: Scalar>(
    a: &SampleSet<T>,
    b: &SampleSet<T>,
) -> Result<(LogprobMatrix<T>, LogprobMatrix<T>)> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "group sizes differ ({} vs {}); the test needs equal N",
            a.len(),
            b.len()
        )));
    }
    let tokens = token_union(a, b)?;
    Ok((to_matrix(a, &tokens)?, to_matrix(b, &tokens)?))
}

/// Monte-Carlo permutation test with `permutations` random equal-size splits.
pub fn permutation_test<T: Scalar>(
    a: &SampleSet<T>,
    b: &SampleSet<T>,
    permutations: usize,
    seed: u64,
) -> Result<TestResult<T>> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("permutation test needs N >= 2 per group"));
    }
    let (ma, mb) = prepare(a, b)?;
    let pooled = Pooled::new(&ma, &mb);
    let stat = |x: &[usize], y: &[usize]| pooled.statistic(x, y);
    let outcome = permutation::monte_carlo(&stat, &Design::pooled(a.len()), permutations, seed)?;
    Ok(TestResult::from_outcome(
        outcome,
        ma.column_means(),
        mb.column_means(),
        Some(seed),
    ))
}

/// Exact test over all `C(2N, N)` splits, refusing above the default cap.
pub fn exact_permutation_test<T: Scalar>(
    a: &SampleSet<T>,
    b: &SampleSet<T>,
) -> Result<TestResult<T>> {
    exact_permutation_test_capped(a, b, DEFAULT_EXACT_CAP)
}

pub fn exact_permutation_test_capped<T: Scalar>(
    a: &SampleSet<T>,
    b: &SampleSet<T>,
    cap: u128,
) -> Result<TestResult<T>> {
    let (ma, mb) = prepare(a, b)?;
    let pooled = Pooled::new(&ma, &mb);
    let stat = |x: &[usize], y: &[usize]| pooled.statistic(x, y);
    let outcome = permutation::exact(&stat, a.len(), cap)?;
    Ok(TestResult::from_outcome(
        outcome,
        ma.column_means(),
        mb.column_means(),
        None,
    ))
}
