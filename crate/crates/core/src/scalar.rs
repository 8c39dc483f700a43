//! Scalar abstraction and the shared numeric tolerances.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};

/// Floating-point scalar the core math is written against: `f32` or `f64`.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + 'static {
    /// Lossy conversion from `f64`; exact for `f64` itself.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    #[inline]
    fn to_f(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    #[inline]
    fn count(n: usize) -> Self {
        Self::from_usize(n).expect("count is representable")
    }
}

impl Real for f64 {}
impl Real for f32 {}

/// Algebraic identities that hold exactly up to rounding.
pub const ALGEBRAIC_TOL: f64 = 1e-12;
/// Agreement between two independent computations of the same quantity.
pub const CROSS_ORACLE_TOL: f64 = 1e-10;
/// Agreement between the two least-squares solution routes.
pub const SOLVER_TOL: f64 = 1e-8;
/// Normalization slack accepted when validating stored distributions.
pub const DISTRIBUTION_TOL: f64 = 1e-12;
/// Default relative singular-value cutoff for min-norm solves.
pub const DEFAULT_CUTOFF: f64 = 1e-10;

/// Numerically stable `ln(sum(exp(x)))`.
pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let m = xs.iter().copied().reduce(|a, b| a.max(b)).unwrap_or_else(T::zero);
    let s = xs.iter().fold(T::zero(), |acc, &x| acc + (x - m).exp());
    m + s.ln()
}

/// Softmax with max-subtraction.
pub fn softmax<T: Real>(xs: &[T]) -> Vec<T> {
    let m = xs.iter().copied().reduce(|a, b| a.max(b)).unwrap_or_else(T::zero);
    let mut out: Vec<T> = xs.iter().map(|&x| (x - m).exp()).collect();
    let z = out.iter().fold(T::zero(), |a, &b| a + b);
    for p in &mut out {
        *p /= z;
    }
    out
}

/// Inverse-CDF draw from `probs` using a uniform variate `u` in [0, 1).
/// A variate landing exactly on a CDF boundary goes to the lower index;
/// zero-mass entries are never returned.
pub fn inverse_cdf<T: Real>(probs: &[T], u: f64) -> usize {
    let mut cdf = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        let p = p.to_f();
        if p <= 0.0 {
            continue;
        }
        cdf += p;
        last = i;
        if u <= cdf {
            return i;
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_matches_closed_form() {
        let p = softmax(&[3f64.ln(), 0.0]);
        assert!((p[0] - 0.75).abs() < 1e-15);
        assert!((p[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let p = softmax(&[1000.0f64, 0.0]);
        assert_eq!(p[0], 1.0);
        assert!(p[1] >= 0.0);
        let p32 = softmax(&[80.0f32, -80.0, 0.0]);
        assert!((p32.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn inverse_cdf_boundaries_go_low_and_skip_zero_mass() {
        let p = [0.0f64, 0.5, 0.0, 0.5];
        assert_eq!(inverse_cdf(&p, 0.0), 1);
        assert_eq!(inverse_cdf(&p, 0.5), 1);
        assert_eq!(inverse_cdf(&p, 0.5000001), 3);
        assert_eq!(inverse_cdf(&p, 0.9999999999), 3);
        assert_eq!(inverse_cdf(&[0.0f64, 0.0, 1.0], 0.3), 2);
    }

    #[test]
    fn log_sum_exp_is_shift_equivariant() {
        let a = log_sum_exp(&[0.3f64, -1.2, 2.5]);
        let b = log_sum_exp(&[10.3f64, 8.8, 12.5]);
        assert!((b - a - 10.0).abs() < 1e-12);
    }
}
