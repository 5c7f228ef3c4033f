//! Permutation engine shared by every two-sample test in the crate.
//!
//! A statistic is evaluated on index splits of a pooled sample. The engine
//! knows nothing about the statistic; it only produces splits, so two tests
//! run with the same seed and group sizes see the same split sequence.

use itertools::Itertools;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::scalar::{FixedSum, Scalar};

/// C(20, 10), the largest enumeration allowed by default.
pub const DEFAULT_EXACT_CAP: u128 = 184_756;

/// A statistic over a split of pooled rows into two groups.
///
/// Group index slices are always sorted ascending.
pub trait SplitStatistic<T> {
    fn statistic(&self, group_a: &[usize], group_b: &[usize]) -> T;
}

impl<T, F: Fn(&[usize], &[usize]) -> T> SplitStatistic<T> for F {
    fn statistic(&self, group_a: &[usize], group_b: &[usize]) -> T {
        self(group_a, group_b)
    }
}

/// Layout of the pooled rows.
///
/// Stratum `s` owns `2 * sizes[s]` consecutive pooled indices; its first
/// `sizes[s]` rows are the observed group A and the rest group B. Random
/// splits are drawn independently inside each stratum. A single stratum is
/// the plain pooled design.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Design {
    sizes: Vec<usize>,
}

impl Design {
    pub fn pooled(n: usize) -> Self {
        Design { sizes: vec![n] }
    }

    pub fn stratified(sizes: Vec<usize>) -> Self {
        Design { sizes }
    }

    pub fn pooled_len(&self) -> usize {
        2 * self.sizes.iter().sum::<usize>()
    }

    fn offsets(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.sizes.iter().scan(0usize, |off, &n| {
            let start = *off;
            *off += 2 * n;
            Some((start, n))
        })
    }

    /// The observed split: first half of every stratum versus second half.
    pub fn observed_split(&self) -> (Vec<usize>, Vec<usize>) {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (start, n) in self.offsets() {
            a.extend(start..start + n);
            b.extend(start + n..start + 2 * n);
        }
        (a, b)
    }
}

/// Infinite stream of uniformly random splits for a design.
pub struct SplitSampler<'d> {
    design: &'d Design,
    rng: rand_chacha::ChaCha8Rng,
    scratch: Vec<usize>,
}

impl<'d> SplitSampler<'d> {
    pub fn new(design: &'d Design, seed: u64) -> Self {
        SplitSampler {
            design,
            rng: rng_for(seed, &[0x5e11_7000]),
            scratch: Vec::new(),
        }
    }

    /// Fills `a` and `b` with the next split, each sorted ascending.
    pub fn next_split(&mut self, a: &mut Vec<usize>, b: &mut Vec<usize>) {
        a.clear();
        b.clear();
        for (start, n) in self.design.offsets() {
            self.scratch.clear();
            self.scratch.extend(start..start + 2 * n);
            let (head, tail) = self.scratch.partial_shuffle(&mut self.rng, n);
            a.extend_from_slice(head);
            b.extend_from_slice(tail);
        }
        a.sort_unstable();
        b.sort_unstable();
    }
}

/// Number of equal-size splits of `2n` rows, `C(2n, n)`.
pub fn split_count(n: usize) -> u128 {
    let mut c: u128 = 1;
    for i in 0..n as u128 {
        c = c * (2 * n as u128 - i) / (i + 1);
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Permutations {
    MonteCarlo { draws: u64 },
    Exact { splits: u64 },
}

impl Permutations {
    pub fn count(&self) -> u64 {
        match *self {
            Permutations::MonteCarlo { draws } => draws,
            Permutations::Exact { splits } => splits,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermutationOutcome<T> {
    pub observed: T,
    /// Number of permuted statistics `>=` the observed one.
    pub exceedances: u64,
    pub permutations: Permutations,
}

impl<T: Scalar> PermutationOutcome<T> {
    /// Fraction of permuted statistics at least as large as the observed
    /// one. No `+1` correction, so this can be exactly zero.
    pub fn p_value(&self) -> T {
        T::of(self.exceedances as f64 / self.permutations.count() as f64)
    }
}

/// Monte-Carlo permutation test with `draws` random splits.
pub fn monte_carlo<T: Scalar, S: SplitStatistic<T>>(
    stat: &S,
    design: &Design,
    draws: usize,
    seed: u64,
) -> Result<PermutationOutcome<T>> {
    if draws == 0 {
        return Err(Error::invalid("number of permutations must be at least 1"));
    }
    let (oa, ob) = design.observed_split();
    let observed = stat.statistic(&oa, &ob);
    let mut sampler = SplitSampler::new(design, seed);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    let mut exceedances = 0u64;
    for _ in 0..draws {
        sampler.next_split(&mut a, &mut b);
        if stat.statistic(&a, &b) >= observed {
            exceedances += 1;
        }
    }
    Ok(PermutationOutcome {
        observed,
        exceedances,
        permutations: Permutations::MonteCarlo {
            draws: draws as u64,
        },
    })
}

/// Exact permutation test over every equal-size split of a pooled design.
pub fn exact<T: Scalar, S: SplitStatistic<T>>(
    stat: &S,
    n: usize,
    cap: u128,
) -> Result<PermutationOutcome<T>> {
    let splits = split_count(n);
    if splits > cap {
        return Err(Error::EnumerationCap { splits, cap });
    }
    let design = Design::pooled(n);
    let (oa, ob) = design.observed_split();
    let observed = stat.statistic(&oa, &ob);
    let total = 2 * n;
    let mut b = Vec::with_capacity(n);
    let mut exceedances = 0u64;
    for a in (0..total).combinations(n) {
        b.clear();
        let mut ai = a.iter().peekable();
        for i in 0..total {
            if ai.peek() == Some(&&i) {
                ai.next();
            } else {
                b.push(i);
            }
        }
        if stat.statistic(&a, &b) >= observed {
            exceedances += 1;
        }
    }
    Ok(PermutationOutcome {
        observed,
        exceedances,
        permutations: Permutations::Exact {
            splits: splits as u64,
        },
    })
}


/// Result of a two-sample test.
///
/// `means_a`/`means_b` are the per-column group means the statistic was
/// built from (per-token for logprob tracking, per-prompt for accuracy
/// tests); empty for kernel statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TestResult<T> {
    pub statistic: T,
    pub p_value: T,
    pub permutations: Permutations,
    pub exceedances: u64,
    pub means_a: Vec<T>,
    pub means_b: Vec<T>,
    /// `None` for exact enumeration.
    pub seed: Option<u64>,
}

impl<T: Scalar> TestResult<T> {
    pub(crate) fn from_outcome(
        outcome: PermutationOutcome<T>,
        means_a: Vec<T>,
        means_b: Vec<T>,
        seed: Option<u64>,
    ) -> Self {
        TestResult {
            statistic: outcome.observed,
            p_value: outcome.p_value(),
            permutations: outcome.permutations,
            exceedances: outcome.exceedances,
            means_a,
            means_b,
            seed,
        }
    }

    /// Mean absolute difference of the stored group means.
    pub fn recompute_statistic(&self) -> Option<T> {
        if self.means_a.is_empty() || self.means_a.len() != self.means_b.len() {
            return None;
        }
        Some(mean_abs_diff(&self.means_a, &self.means_b))
    }

    pub fn is_significant(&self, alpha: T) -> bool {
        self.p_value < alpha
    }
}

pub(crate) fn mean_abs_diff<T: Scalar>(a: &[T], b: &[T]) -> T {
    let total: T = a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum();
    total / T::of_usize(a.len())
}

/// Column means of the selected rows of a row-major matrix.
pub(crate) fn column_means<T: Scalar>(values: &[T], n_cols: usize, rows: &[usize]) -> Vec<T> {
    let mut sums = vec![FixedSum::default(); n_cols];
    for &r in rows {
        for (s, &v) in sums.iter_mut().zip(&values[r * n_cols..(r + 1) * n_cols]) {
            s.add(v);
        }
    }
    sums.into_iter().map(|s| s.mean(rows.len())).collect()
}
