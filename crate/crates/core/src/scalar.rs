use std::iter::Sum;

use ndarray::NdFloat;

/// Floating-point scalar underlying every numeric kernel in the crate.
///
/// Implemented for `f32`, `f64`, and [`crate::dual::Dual`], the forward-mode
/// differentiation scalar used to turn analytic gradients into exact
/// Hessian-vector products. All shipped defaults instantiate with `f64`
/// (see the type aliases at the crate root); the Hessian solves need the
/// precision.
pub trait Scalar: NdFloat + Sum<Self> {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        f64::from(self)
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
