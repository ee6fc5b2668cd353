//! Floating-point scalar abstraction shared by all numeric modules.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar the refinery math is written against: `f32` or `f64`.
///
/// Tolerances scale with the precision of the type, so the same invariant
/// checks work for both widths.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + LowerExp
    + FromStr
    + Default
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Allowed deviation of a probability vector's sum from one.
    fn simplex_tol() -> Self;

    /// Allowed deviation of a row norm from one.
    fn norm_tol() -> Self;

    /// Floor applied inside logarithms of probabilities.
    fn log_floor() -> Self;

    /// Lossy conversion from `f64`, used for constants and parsed parameters.
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("f64 converts to every Scalar")
    }

    /// Lossy conversion from a count.
    fn of_count(value: usize) -> Self {
        Self::from_usize(value).expect("usize converts to every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("every Scalar converts to f64")
    }
}

impl Scalar for f64 {
    fn simplex_tol() -> Self {
        1e-9
    }

    fn norm_tol() -> Self {
        1e-6
    }

    fn log_floor() -> Self {
        1e-12
    }
}

impl Scalar for f32 {
    fn simplex_tol() -> Self {
        1e-4
    }

    fn norm_tol() -> Self {
        1e-4
    }

    fn log_floor() -> Self {
        1e-12
    }
}

/// Euclidean norm of a slice.
pub(crate) fn norm<T: Scalar>(values: &[T]) -> T {
    values.iter().map(|&v| v * v).sum::<T>().sqrt()
}

/// Inner product of two equal-length slices.
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Scales `values` to unit norm in place. Returns `false` (leaving the
/// slice untouched) when the norm is zero or not finite.
pub(crate) fn normalize_in_place<T: Scalar>(values: &mut [T]) -> bool {
    let n = norm(values);
    if !(n > T::zero()) || !n.is_finite() {
        return false;
    }
    for v in values.iter_mut() {
        *v = *v / n;
    }
    true
}
