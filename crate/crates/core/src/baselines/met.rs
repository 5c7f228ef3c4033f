//! Model equality testing with an MMD statistic over sampled token
//! sequences and a Hamming-similarity kernel.
//!
//! The kernel is `k(x, y) = 1 - H(x, y) / L`, where sequences shorter than
//! `L` are padded with a reserved pad symbol and `H` counts differing
//! positions. MMD² uses the unbiased U-statistic. Kernel sums are kept as
//! integer match counts so the statistic is a fixed function of exact
//! totals.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::permutation::{self, Design, TestResult};
use crate::scalar::Scalar;
use crate::token::TokenKey;

pub const DEFAULT_MET_LEN: usize = 50;
pub const DEFAULT_MET_PROMPTS: usize = 25;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<TokenKey>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<TokenKey>) -> Self {
        TokenSequence { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl<S: AsRef<str>> FromIterator<S> for TokenSequence {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        TokenSequence::new(iter.into_iter().map(|s| TokenKey::text(s.as_ref())).collect())
    }
}

fn check_len(x: &TokenSequence, len: usize) -> Result<()> {
    if len == 0 {
        return Err(Error::invalid("kernel length L must be positive"));
    }
    if x.len() > len {
        return Err(Error::invalid(format!(
            "sequence of length {} exceeds kernel length {len}",
            x.len()
        )));
    }
    Ok(())
}

/// `1 - H(x, y) / L` after pad-extension to `L`.
pub fn hamming_kernel<T: Scalar>(x: &TokenSequence, y: &TokenSequence, len: usize) -> Result<T> {
    check_len(x, len)?;
    check_len(y, len)?;
    let matches = (0..len)
        .filter(|&i| x.tokens.get(i) == y.tokens.get(i))
        .count();
    Ok(T::one() - T::of_usize(len - matches) / T::of_usize(len))
}

/// Exact ingredients of the unbiased MMD² estimate: summed position
/// matches over ordered off-diagonal pairs within each group, and over
/// cross-group pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MmdParts {
    pub within_a: u64,
    pub within_b: u64,
    pub cross: u64,
    pub n_a: usize,
    pub n_b: usize,
    pub len: usize,
}

impl MmdParts {
    /// `within_a / (L na (na-1)) + within_b / (L nb (nb-1)) - 2 cross / (L na nb)`
    /// over a common denominator, so the result is one correctly rounded
    /// division whenever both integers fit the mantissa.
    pub fn value<T: Scalar>(&self) -> T {
        let (na, nb, l) = (self.n_a as i128, self.n_b as i128, self.len as i128);
        let num = self.within_a as i128 * nb * (nb - 1) + self.within_b as i128 * na * (na - 1)
            - 2 * self.cross as i128 * (na - 1) * (nb - 1);
        let den = l * na * (na - 1) * nb * (nb - 1);
        T::of(num as f64) / T::of(den as f64)
    }
}

/// Position-match counts for every pooled pair, from interned token ids.
struct MatchGram {
    n: usize,
    counts: Vec<u32>,
    len: usize,
}

impl MatchGram {
    fn new(seqs: &[&TokenSequence], len: usize) -> Result<Self> {
        const PAD: u32 = u32::MAX;
        let mut ids: HashMap<&TokenKey, u32> = HashMap::new();
        let mut padded = Vec::with_capacity(seqs.len() * len);
        for s in seqs {
            check_len(s, len)?;
            for t in &s.tokens {
                let next = ids.len() as u32;
                padded.push(*ids.entry(t).or_insert(next));
            }
            padded.extend(std::iter::repeat_n(PAD, len - s.len()));
        }
        let n = seqs.len();
        let mut counts = vec![0u32; n * n];
        for i in 0..n {
            let xi = &padded[i * len..(i + 1) * len];
            counts[i * n + i] = len as u32;
            for j in i + 1..n {
                let xj = &padded[j * len..(j + 1) * len];
                let m = xi.iter().zip(xj).filter(|(a, b)| a == b).count() as u32;
                counts[i * n + j] = m;
                counts[j * n + i] = m;
            }
        }
        Ok(MatchGram { n, counts, len })
    }

    fn parts(&self, a: &[usize], b: &[usize]) -> MmdParts {
        let row = |i: usize| &self.counts[i * self.n..(i + 1) * self.n];
        let within = |g: &[usize]| -> u64 {
            g.iter()
                .map(|&i| {
                    let r = row(i);
                    g.iter().filter(|&&j| j != i).map(|&j| r[j] as u64).sum::<u64>()
                })
                .sum()
        };
        let cross: u64 = a
            .iter()
            .map(|&i| {
                let r = row(i);
                b.iter().map(|&j| r[j] as u64).sum::<u64>()
            })
            .sum();
        MmdParts {
            within_a: within(a),
            within_b: within(b),
            cross,
            n_a: a.len(),
            n_b: b.len(),
            len: self.len,
        }
    }
}

fn check_groups(sa: &[TokenSequence], sb: &[TokenSequence]) -> Result<()> {
    if sa.len() < 2 || sb.len() < 2 {
        return Err(Error::invalid(
            "unbiased MMD needs at least two sequences per group",
        ));
    }
    Ok(())
}

pub fn mmd_parts(sa: &[TokenSequence], sb: &[TokenSequence], len: usize) -> Result<MmdParts> {
    check_groups(sa, sb)?;
    let pooled: Vec<&TokenSequence> = sa.iter().chain(sb).collect();
    let gram = MatchGram::new(&pooled, len)?;
    let a: Vec<usize> = (0..sa.len()).collect();
    let b: Vec<usize> = (sa.len()..pooled.len()).collect();
    Ok(gram.parts(&a, &b))
}

/// Unbiased MMD² between two groups of sequences.
pub fn mmd_statistic<T: Scalar>(
    sa: &[TokenSequence],
    sb: &[TokenSequence],
    len: usize,
) -> Result<T> {
    Ok(mmd_parts(sa, sb, len)?.value())
}

/// Permutation test with the MMD² statistic over pooled sequences.
pub fn met_test<T: Scalar>(
    sa: &[TokenSequence],
    sb: &[TokenSequence],
    len: usize,
    permutations: usize,
    seed: u64,
) -> Result<TestResult<T>> {
    check_groups(sa, sb)?;
    if sa.len() != sb.len() {
        return Err(Error::invalid(format!(
            "group sizes differ ({} vs {}); the test needs equal N",
            sa.len(),
            sb.len()
        )));
    }
    let pooled: Vec<&TokenSequence> = sa.iter().chain(sb).collect();
    let gram = MatchGram::new(&pooled, len)?;
    let stat = |a: &[usize], b: &[usize]| gram.parts(a, b).value::<T>();
    let outcome =
        permutation::monte_carlo(&stat, &Design::pooled(sa.len()), permutations, seed)?;
    Ok(TestResult::from_outcome(outcome, vec![], vec![], Some(seed)))
}

/// How responses to several prompts are combined into one statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetAggregation {
    /// One MMD² over all sequences of all prompts.
    #[default]
    Pooled,
    /// Mean of per-prompt MMD²; splits are drawn within each prompt.
    PerPrompt,
}

/// Statistic only, for ROC-style evaluation.
pub fn met_statistic_prompts<T: Scalar>(
    prompts: &[(Vec<TokenSequence>, Vec<TokenSequence>)],
    aggregation: MetAggregation,
    len: usize,
) -> Result<T> {
    if prompts.is_empty() {
        return Err(Error::invalid("no prompts"));
    }
    match aggregation {
        MetAggregation::Pooled => {
            let sa: Vec<TokenSequence> = prompts.iter().flat_map(|p| p.0.clone()).collect();
            let sb: Vec<TokenSequence> = prompts.iter().flat_map(|p| p.1.clone()).collect();
            mmd_statistic(&sa, &sb, len)
        }
        MetAggregation::PerPrompt => {
            let mut total = T::zero();
            for (sa, sb) in prompts {
                total += mmd_statistic::<T>(sa, sb, len)?;
            }
            Ok(total / T::of_usize(prompts.len()))
        }
    }
}

/// Multi-prompt MET permutation test.
pub fn met_test_prompts<T: Scalar>(
    prompts: &[(Vec<TokenSequence>, Vec<TokenSequence>)],
    aggregation: MetAggregation,
    len: usize,
    permutations: usize,
    seed: u64,
) -> Result<TestResult<T>> {
    if prompts.is_empty() {
        return Err(Error::invalid("no prompts"));
    }
    for (sa, sb) in prompts {
        check_groups(sa, sb)?;
        if sa.len() != sb.len() {
            return Err(Error::invalid("per-prompt group sizes differ"));
        }
    }
    match aggregation {
        MetAggregation::Pooled => {
            let sa: Vec<TokenSequence> = prompts.iter().flat_map(|p| p.0.clone()).collect();
            let sb: Vec<TokenSequence> = prompts.iter().flat_map(|p| p.1.clone()).collect();
            met_test(&sa, &sb, len, permutations, seed)
        }
        MetAggregation::PerPrompt => {
            // stratum layout: prompt p owns [a_p.., b_p..]
            let pooled: Vec<&TokenSequence> =
                prompts.iter().flat_map(|(a, b)| a.iter().chain(b)).collect();
            let gram = MatchGram::new(&pooled, len)?;
            let mut bounds = Vec::with_capacity(prompts.len());
            let mut off = 0;
            for (a, _) in prompts {
                bounds.push(off..off + 2 * a.len());
                off += 2 * a.len();
            }
            let stat = |a: &[usize], b: &[usize]| -> T {
                let mut total = T::zero();
                for r in &bounds {
                    let ga: Vec<usize> = a.iter().copied().filter(|i| r.contains(i)).collect();
                    let gb: Vec<usize> = b.iter().copied().filter(|i| r.contains(i)).collect();
                    total += gram.parts(&ga, &gb).value::<T>();
                }
                total / T::of_usize(bounds.len())
            };
            let design = Design::stratified(prompts.iter().map(|p| p.0.len()).collect());
            let outcome = permutation::monte_carlo(&stat, &design, permutations, seed)?;
            Ok(TestResult::from_outcome(outcome, vec![], vec![], Some(seed)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(s: &str) -> TokenSequence {
        s.chars().map(|c| c.to_string()).collect()
    }

    #[test]
    fn kernel_examples() {
        let x = seq("abcd");
        assert_eq!(hamming_kernel::<f64>(&x, &x, 7).unwrap(), 1.0);
        assert_eq!(hamming_kernel::<f64>(&seq("abcd"), &seq("wxyz"), 4).unwrap(), 0.0);
        assert_eq!(hamming_kernel::<f64>(&seq("abcd"), &seq("abxy"), 4).unwrap(), 0.5);
        // padding: "ab" vs "abc" differ only at position 2
        assert_eq!(hamming_kernel::<f64>(&seq("ab"), &seq("abc"), 4).unwrap(), 0.75);
        assert!(hamming_kernel::<f64>(&seq("abcde"), &seq("a"), 4).is_err());
    }

    #[test]
    fn mmd_closed_forms() {
        let s = seq("abcd");
        let t = seq("abxy");
        let same = vec![s.clone(), s.clone(), s.clone()];
        assert_eq!(mmd_statistic::<f64>(&same, &same, 4).unwrap(), 0.0);
        let other = vec![t.clone(), t.clone()];
        assert_eq!(mmd_statistic::<f64>(&same, &other, 4).unwrap(), 1.0);
        assert!(mmd_statistic::<f64>(&same[..1], &other, 4).is_err());
    }

    #[test]
    fn met_identical_groups_p_one() {
        let g = vec![seq("ab"), seq("ab"), seq("ab")];
        let r = met_test::<f64>(&g, &g, 4, 200, 1).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn per_prompt_statistic_averages() {
        let p1 = (vec![seq("aa"), seq("aa")], vec![seq("bb"), seq("bb")]);
        let p2 = (vec![seq("aa"), seq("aa")], vec![seq("aa"), seq("aa")]);
        let v: f64 =
            met_statistic_prompts(&[p1.clone(), p2.clone()], MetAggregation::PerPrompt, 2)
                .unwrap();
        assert_eq!(v, 1.0);
        let r = met_test_prompts::<f64>(&[p1, p2], MetAggregation::PerPrompt, 2, 100, 3).unwrap();
        assert_eq!(r.statistic, 1.0);
    }
}
