use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RocResult<T> {
    pub auc: T,
    /// `2 * #(alt > null) + #(alt == null)` over all pairs.
    pub auc_numerator: u64,
    /// `2 * n_null * n_alt`.
    pub auc_denominator: u64,
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one point per distinct
    /// threshold, flagging statistics `>=` the threshold.
    pub curve: Vec<(T, T)>,
    pub n_null: usize,
    pub n_alt: usize,
}

fn sorted<T: Scalar>(xs: &[T], what: &str) -> Result<Vec<T>> {
    if xs.is_empty() {
        return Err(Error::invalid(format!("{what} statistics are empty")));
    }
    if xs.iter().any(|x| x.is_nan()) {
        return Err(Error::invalid(format!("{what} statistics contain NaN")));
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    Ok(v)
}

/// Mann-Whitney AUC, `P(alt > null) + P(alt == null) / 2`, and the ROC curve.
pub fn roc_auc<T: Scalar>(null_stats: &[T], alt_stats: &[T]) -> Result<RocResult<T>> {
    let null = sorted(null_stats, "null")?;
    let alt = sorted(alt_stats, "alternative")?;
    let (n, m) = (null.len(), alt.len());

    let (mut greater, mut ties) = (0u64, 0u64);
    for &a in &alt {
        let below = null.partition_point(|&x| x < a);
        let not_above = null.partition_point(|&x| x <= a);
        greater += below as u64;
        ties += (not_above - below) as u64;
    }
    let pairs = (n * m) as f64;
    let auc = (greater as f64 + 0.5 * ties as f64) / pairs;

    // thresholds descending over the distinct values of both samples
    let mut thresholds: Vec<T> = null.iter().chain(&alt).copied().collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    thresholds.dedup();
    let mut curve = Vec::with_capacity(thresholds.len() + 1);
    curve.push((T::zero(), T::zero()));
    for thr in thresholds {
        let fp = n - null.partition_point(|&x| x < thr);
        let tp = m - alt.partition_point(|&x| x < thr);
        curve.push((
            T::of(fp as f64 / n as f64),
            T::of(tp as f64 / m as f64),
        ));
    }

    Ok(RocResult {
        auc: T::of(auc),
        auc_numerator: 2 * greater + ties,
        auc_denominator: 2 * (n * m) as u64,
        curve,
        n_null: n,
        n_alt: m,
    })
}

/// Area under a piecewise-linear curve.
pub fn trapezoid_area<T: Scalar>(curve: &[(T, T)]) -> T {
    curve
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / T::of(2.0))
        .sum()
}
