//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Floating point scalar: `f32` or `f64`.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + serde::Serialize
    + serde::de::DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`.
    fn of(x: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(x).unwrap_or_else(Self::nan)
    }

    /// Lossy conversion from a count.
    fn of_usize(n: usize) -> Self {
        <Self as num_traits::FromPrimitive>::from_usize(n).unwrap_or_else(Self::nan)
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

const FIXED_SCALE: f64 = 18_446_744_073_709_551_616.0; // 2^64
const FIXED_LIMIT: f64 = 1_125_899_906_842_624.0; // 2^50

/// Sum that is independent of the order of its addends.
///
/// Values are accumulated as integers in units of `2^-64` (clamped to
/// `|x| <= 2^50`), so any permutation of the same rows yields a
/// bit-identical column mean and permutation ties are exact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub(crate) struct FixedSum(i128);

impl FixedSum {
    pub(crate) fn add<T: Scalar>(&mut self, x: T) {
        let v = x.as_f64().clamp(-FIXED_LIMIT, FIXED_LIMIT);
        self.0 += (v * FIXED_SCALE).round() as i128;
    }

    pub(crate) fn mean<T: Scalar>(self, n: usize) -> T {
        T::of(self.0 as f64 / FIXED_SCALE) / T::of_usize(n)
    }
}

/// Arithmetic mean; `None` for an empty slice.
pub fn mean<T: Scalar>(xs: &[T]) -> Option<T> {
    if xs.is_empty() {
        return None;
    }
    Some(xs.iter().copied().sum::<T>() / T::of_usize(xs.len()))
}

/// Mean and sample (n - 1) standard deviation, two-pass.
pub fn mean_and_sample_std<T: Scalar>(xs: &[T]) -> Option<(T, T)> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss: T = xs.iter().map(|&x| (x - m) * (x - m)).sum();
    Some((m, (ss / T::of_usize(xs.len() - 1)).sqrt()))
}
