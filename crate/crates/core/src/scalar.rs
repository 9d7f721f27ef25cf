//! Floating-point scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use rand::Rng;
use rand_distr::StandardNormal;

/// Real scalar the numerics are generic over: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Relative Gram off-diagonal threshold at which Jacobi sweeps stop.
    const SVD_TOLERANCE: f64;

    /// Converts an `f64` literal. Panics only if the value is unrepresentable,
    /// which cannot happen for finite inputs and the two supported types.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let v: f64 = rng.sample(StandardNormal);
        Self::of(v)
    }

    /// Uniform draw on `[0, 1)`.
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let v: f64 = rng.random();
        Self::of(v)
    }
}

impl Real for f64 {
    const SVD_TOLERANCE: f64 = 1e-14;
}

impl Real for f32 {
    const SVD_TOLERANCE: f64 = 1e-6;
}

/// Numerically stable `log(sum(exp(v)))`, summed in index order.
///
/// Returns negative infinity for an empty slice or when every entry is
/// negative infinity.
pub fn log_sum_exp<T: Real>(values: &[T]) -> T {
    let max = values
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    if max == T::neg_infinity() {
        return max;
    }
    if max == T::infinity() {
        return max;
    }
    let mut acc = T::zero();
    for &v in values {
        acc += (v - max).exp();
    }
    max + acc.ln()
}

/// `log(mean(exp(v)))`.
pub fn log_mean_exp<T: Real>(values: &[T]) -> T {
    log_sum_exp(values) - T::of(values.len() as f64).ln()
}
