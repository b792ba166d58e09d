//! Scalar abstraction for the numeric kernel.
//!
//! Reward arithmetic, advantage estimation, losses, and metrics are generic
//! over [`Scalar`] so the same code runs in `f32` or `f64`. The test suite and
//! the CLI pin `f64` (see [`crate::Real`]).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

/// Floating-point scalar used throughout the numeric kernel.
pub trait Scalar:
    Float + Sum + Debug + Display + Send + Sync + serde::Serialize + serde::de::DeserializeOwned + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    fn from_usize(n: usize) -> Self {
        Self::from_f64(n as f64)
    }
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}
