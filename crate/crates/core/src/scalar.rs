//! Scalar abstraction so the numeric core runs on `f32` or `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssignOps};

/// Floating-point element type of all model parameters, activations and
/// features. Implemented for `f32` and `f64`; the crate-root aliases pin
/// `f64` as the default precision.
pub trait Scalar:
    Float + NumAssignOps + Sum<Self> + Debug + Display + Default + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    /// Widen to `f64` (named to avoid clashing with
    /// `num_traits::ToPrimitive::to_f64`).
    fn as_f64(self) -> f64;

    #[inline]
    fn from_usize(n: usize) -> Self {
        Self::from_f64(n as f64)
    }
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
