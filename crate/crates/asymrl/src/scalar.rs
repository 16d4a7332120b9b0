//! Scalar abstraction for the numeric core.
//!
//! The network engine is generic over the floating-point type; the rest of
//! the crate pins `f64` through the [`crate::Real`] alias.

use std::fmt::{Debug, Display};
use std::ops::AddAssign;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;

/// Floating-point scalar usable by the network engine: `f32` or `f64`.
pub trait Scalar:
    Float + ScalarOperand + LinalgScalar + AddAssign + Display + Debug + Send + Sync + 'static
{
    /// Converts an `f64` constant, panicking only for values outside the
    /// target type's range (never the case for the constants used here).
    fn from_f64(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("constant out of scalar range")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
