//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point type the toolkit computes in: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` literal. Never fails for finite inputs.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal representable in scalar type")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn half() -> Self {
        Self::lit(0.5)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + exp(z))` without overflow.
#[inline]
pub fn softplus<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Total order on scalars; NaN sorts last.
#[inline]
pub fn total_cmp<T: Scalar>(a: &T, b: &T) -> std::cmp::Ordering {
    a.partial_cmp(b).unwrap_or_else(|| a.is_nan().cmp(&b.is_nan()))
}

pub fn mean<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    Some(values.iter().copied().sum::<T>() / T::from_count(values.len()))
}

/// Sample standard deviation (n - 1 denominator). `None` below two values.
pub fn sample_sd<T: Scalar>(values: &[T]) -> Option<T> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values)?;
    let ss: T = values.iter().map(|&v| (v - m) * (v - m)).sum();
    Some((ss / T::from_count(values.len() - 1)).sqrt())
}

/// Percentile by linear interpolation between order statistics of an
/// ascending slice, `q` in `[0, 1]`.
pub fn percentile_sorted<T: Scalar>(sorted: &[T], q: T) -> T {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * T::from_count(n - 1);
    let lo = pos.floor();
    let lo_idx = lo.to_usize().unwrap_or(0).min(n - 1);
    let hi_idx = (lo_idx + 1).min(n - 1);
    let frac = pos - lo;
    sorted[lo_idx] + (sorted[hi_idx] - sorted[lo_idx]) * frac
}

pub fn median<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(total_cmp);
    Some(percentile_sorted(&v, T::half()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0_f64), 0.5);
        assert!(sigmoid(-800.0_f64) >= 0.0);
        assert_eq!(sigmoid(800.0_f64), 1.0);
        assert!((sigmoid(2.0_f32) - 0.880_797).abs() < 1e-5);
    }

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for z in [-5.0_f64, -0.3, 0.0, 0.7, 4.0] {
            assert!((softplus(z) - (1.0 + z.exp()).ln()).abs() < 1e-12);
        }
        assert!((softplus(1000.0_f64) - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn percentile_interpolates_linearly() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile_sorted(&v, 0.25), 2.0);
        assert_eq!(percentile_sorted(&v, 0.1), 1.4);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
    }

    #[test]
    fn sample_sd_uses_bessel_correction() {
        let sd = sample_sd(&[1.0_f64, 2.0, 3.0, 4.0]).unwrap();
        assert!((sd - (5.0_f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!(sample_sd(&[1.0_f64]).is_none());
    }
}
