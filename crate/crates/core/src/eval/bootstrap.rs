//! Hierarchical percentile bootstrap.
//!
//! Data is described as nested layers. [`Resampled`] draws its children with
//! replacement and then resamples each drawn child; [`Fixed`] keeps its
//! children and only recurses. An estimate such as "mean AUC over models"
//! bootstrapped at the model and test-statistic levels is
//! `Resampled<AucCell<T>>`; adding an unresampled variant level in between
//! gives `Resampled<Fixed<AucCell<T>>>`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::roc::roc_auc;
use crate::rng::rng_for;
use crate::scalar::Scalar;

pub trait Resample: Sized {
    fn resample<R: Rng>(&self, rng: &mut R) -> Self;
}

fn draw_with_replacement<C: Clone, R: Rng>(xs: &[C], rng: &mut R) -> Vec<C> {
    (0..xs.len())
        .map(|_| xs[rng.random_range(0..xs.len())].clone())
        .collect()
}

/// Bottom layer: plain values resampled with replacement.
#[derive(Debug, Clone, PartialEq)]
pub struct Leaf<T>(pub Vec<T>);

impl<T: Clone> Resample for Leaf<T> {
    fn resample<R: Rng>(&self, rng: &mut R) -> Self {
        Leaf(draw_with_replacement(&self.0, rng))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resampled<C>(pub Vec<C>);

impl<C: Resample + Clone> Resample for Resampled<C> {
    fn resample<R: Rng>(&self, rng: &mut R) -> Self {
        let drawn = draw_with_replacement(&self.0, rng);
        Resampled(drawn.iter().map(|c| c.resample(rng)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixed<C>(pub Vec<C>);

impl<C: Resample> Resample for Fixed<C> {
    fn resample<R: Rng>(&self, rng: &mut R) -> Self {
        Fixed(self.0.iter().map(|c| c.resample(rng)).collect())
    }
}

/// Null and alternative statistics of one original/variant comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct AucCell<T> {
    pub null: Vec<T>,
    pub alt: Vec<T>,
}

impl<T: Clone> Resample for AucCell<T> {
    fn resample<R: Rng>(&self, rng: &mut R) -> Self {
        AucCell {
            null: draw_with_replacement(&self.null, rng),
            alt: draw_with_replacement(&self.alt, rng),
        }
    }
}

impl<T: Scalar> AucCell<T> {
    pub fn auc(&self) -> T {
        roc_auc(&self.null, &self.alt).map_or_else(|_| T::nan(), |r| r.auc)
    }
}

/// Collects every cell of a layered structure.
pub trait Cells<T> {
    fn for_each_cell<'a>(&'a self, f: &mut dyn FnMut(&'a AucCell<T>));

    /// Mean AUC over all cells.
    fn mean_auc(&self) -> T
    where
        T: Scalar,
    {
        let mut total = T::zero();
        let mut n = 0usize;
        self.for_each_cell(&mut |c| {
            total += c.auc();
            n += 1;
        });
        total / T::of_usize(n)
    }
}

impl<T> Cells<T> for AucCell<T> {
    fn for_each_cell<'a>(&'a self, f: &mut dyn FnMut(&'a AucCell<T>)) {
        f(self)
    }
}

impl<T, C: Cells<T>> Cells<T> for Resampled<C> {
    fn for_each_cell<'a>(&'a self, f: &mut dyn FnMut(&'a AucCell<T>)) {
        self.0.iter().for_each(|c| c.for_each_cell(f))
    }
}

impl<T, C: Cells<T>> Cells<T> for Fixed<C> {
    fn for_each_cell<'a>(&'a self, f: &mut dyn FnMut(&'a AucCell<T>)) {
        self.0.iter().for_each(|c| c.for_each_cell(f))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Interval<T> {
    pub point: T,
    pub lo: T,
    pub hi: T,
    pub level: f64,
    pub resamples: usize,
    /// Every bootstrap estimate was identical.
    pub degenerate: bool,
}

impl<T: Scalar> Interval<T> {
    pub fn contains(&self, x: T) -> bool {
        self.lo <= x && x <= self.hi
    }
}

fn quantile<T: Scalar>(sorted: &[T], q: f64) -> T {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = T::of(h - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Percentile interval of `estimate` over `resamples` hierarchical resamples.
pub fn bootstrap_ci<S, T, F>(
    data: &S,
    estimate: F,
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<Interval<T>>
where
    S: Resample + Sync,
    T: Scalar,
    F: Fn(&S) -> T + Sync,
{
    if resamples < 100 {
        return Err(Error::invalid("bootstrap needs at least 100 resamples"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid("confidence level must be in (0, 1)"));
    }
    let point = estimate(data);
    let mut estimates: Vec<T> = (0..resamples as u64)
        .into_par_iter()
        .map(|r| estimate(&data.resample(&mut rng_for(seed, &[0xb007, r]))))
        .collect();
    if estimates.iter().any(|x| x.is_nan()) {
        return Err(Error::invalid("bootstrap estimate produced NaN"));
    }
    estimates.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    let degenerate = estimates.first() == estimates.last();
    let alpha = (1.0 - level) / 2.0;
    Ok(Interval {
        point,
        lo: quantile(&estimates, alpha),
        hi: quantile(&estimates, 1.0 - alpha),
        level,
        resamples,
        degenerate,
    })
}
