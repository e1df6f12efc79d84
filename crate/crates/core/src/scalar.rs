//! Scalar abstraction: every numeric routine in this crate is generic over
//! [`Real`], instantiated with `f32` or `f64`.
//!
//! Geometry oracles and voting run in `f64` for tight tolerances; the neural
//! stack is typically instantiated with `f32` for throughput. Concrete
//! aliases live at the crate root.

use num_traits::{Float, NumAssign};
use serde::{de::DeserializeOwned, Serialize};

/// Floating-point scalar usable throughout the crate: `f32` or `f64`.
pub trait Real:
    Float
    + NumAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    /// Logistic function 1/(1+e^{-x}).
    fn sigmoid(self) -> Self {
        Self::one() / (Self::one() + (-self).exp())
    }
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Shorthand for `Real::from_f64`, used all over the numeric code.
#[inline]
pub fn rl<S: Real>(x: f64) -> S {
    S::from_f64(x)
}
