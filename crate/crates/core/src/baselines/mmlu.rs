//! Multiple-choice accuracy baseline: per-question accuracy vectors
//! compared by their mean absolute distance.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::permutation::{self, Design, TestResult};
use crate::scalar::Scalar;

/// `N x P` binary correctness matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    prompts: Vec<String>,
    n_rows: usize,
    values: Vec<u8>,
}

impl AccuracyMatrix {
    pub fn new(prompts: Vec<String>, rows: Vec<Vec<u8>>) -> Result<Self> {
        let p = prompts.len();
        if p == 0 {
            return Err(Error::invalid("accuracy matrix needs at least one prompt"));
        }
        let mut values = Vec::with_capacity(rows.len() * p);
        for (j, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::invalid(format!(
                    "row {j} has {} entries, expected {p}",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|&&v| v > 1) {
                return Err(Error::invalid(format!("row {j} holds non-binary value {v}")));
            }
            values.extend_from_slice(row);
        }
        Ok(AccuracyMatrix {
            prompts,
            n_rows: rows.len(),
            values,
        })
    }

    /// Builds a matrix with prompts named `q0`, `q1`, ...
    pub fn from_rows(rows: Vec<Vec<u8>>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        Self::new((0..p).map(|i| format!("q{i}")).collect(), rows)
    }

    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    fn column_counts(&self, rows: impl Iterator<Item = usize>) -> Vec<u64> {
        let p = self.prompts.len();
        let mut counts = vec![0u64; p];
        for r in rows {
            for (c, &v) in counts.iter_mut().zip(&self.values[r * p..(r + 1) * p]) {
                *c += v as u64;
            }
        }
        counts
    }
}

/// Column means `(1/N) sum_j I[j, p]`.
pub fn per_prompt_accuracies<T: Scalar>(m: &AccuracyMatrix) -> Result<Vec<T>> {
    if m.n_rows == 0 {
        return Err(Error::invalid("accuracy matrix has no rows"));
    }
    let n = T::of_usize(m.n_rows);
    Ok(m.column_counts(0..m.n_rows)
        .into_iter()
        .map(|c| T::of(c as f64) / n)
        .collect())
}

/// `sum_p |ca/na - cb/nb| / P`, evaluated as one division of exact integers.
fn accuracy_distance<T: Scalar>(ca: &[u64], na: usize, cb: &[u64], nb: usize) -> T {
    let (na, nb) = (na as u64, nb as u64);
    let num: u64 = ca
        .iter()
        .zip(cb)
        .map(|(&a, &b)| (a * nb).abs_diff(b * na))
        .sum();
    T::of(num as f64) / T::of((na * nb * ca.len() as u64) as f64)
}

fn check_pair(a: &AccuracyMatrix, b: &AccuracyMatrix) -> Result<()> {
    if a.prompts != b.prompts {
        return Err(Error::invalid("accuracy matrices cover different prompts"));
    }
    if a.n_rows == 0 || b.n_rows == 0 {
        return Err(Error::invalid("accuracy matrix has no rows"));
    }
    Ok(())
}

/// Mean absolute distance between per-prompt accuracies.
pub fn mmlu_statistic<T: Scalar>(a: &AccuracyMatrix, b: &AccuracyMatrix) -> Result<T> {
    check_pair(a, b)?;
    Ok(accuracy_distance(
        &a.column_counts(0..a.n_rows),
        a.n_rows,
        &b.column_counts(0..b.n_rows),
        b.n_rows,
    ))
}

pub fn mmlu_test<T: Scalar>(
    a: &AccuracyMatrix,
    b: &AccuracyMatrix,
    permutations: usize,
    seed: u64,
) -> Result<TestResult<T>> {
    check_pair(a, b)?;
    if a.n_rows != b.n_rows || a.n_rows < 2 {
        return Err(Error::invalid(
            "accuracy test needs equal group sizes with N >= 2",
        ));
    }
    let n = a.n_rows;
    let p = a.prompts.len();
    let mut pooled = a.values.clone();
    pooled.extend_from_slice(&b.values);
    let counts = |rows: &[usize]| -> Vec<u64> {
        let mut c = vec![0u64; p];
        for &r in rows {
            for (x, &v) in c.iter_mut().zip(&pooled[r * p..(r + 1) * p]) {
                *x += v as u64;
            }
        }
        c
    };
    let stat = |x: &[usize], y: &[usize]| -> T {
        accuracy_distance(&counts(x), x.len(), &counts(y), y.len())
    };
    let outcome = permutation::monte_carlo(&stat, &Design::pooled(n), permutations, seed)?;
    Ok(TestResult::from_outcome(
        outcome,
        per_prompt_accuracies(a)?,
        per_prompt_accuracies(b)?,
        Some(seed),
    ))
}

/// True when the first non-whitespace character of `response` is the gold
/// letter, case-insensitively.
pub fn grade_response(response: &str, gold: char) -> bool {
    response
        .chars()
        .find(|c| !c.is_whitespace())
        .is_some_and(|c| c.eq_ignore_ascii_case(&gold))
}

/// One multiple-choice question, read from a line-delimited JSON file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub prompt: String,
    pub gold: char,
}

pub fn read_questions(reader: impl BufRead) -> Result<Vec<Question>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::invalid(format!("question file: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let q: Question = serde_json::from_str(&line)
            .map_err(|e| Error::invalid(format!("question line {}: {e}", i + 1)))?;
        if !matches!(q.gold.to_ascii_uppercase(), 'A'..='D') {
            return Err(Error::invalid(format!(
                "question {} has gold answer {:?}, expected A-D",
                q.id, q.gold
            )));
        }
        out.push(q);
    }
    Ok(out)
}
