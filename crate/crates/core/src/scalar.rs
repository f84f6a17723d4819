//! Floating-point element abstraction.
//!
//! Everything numeric in this crate is generic over [`Scalar`] so the same
//! code runs at 64-bit precision for oracle-grade tests and at 32-bit for
//! training throughput.

use num_traits::{Float, NumAssign};

/// Element type of all tensors, gradients, and optimizer state.
pub trait Scalar:
    Float + NumAssign + Default + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    fn from_usize(n: usize) -> Self {
        Self::from_f64(n as f64)
    }
}

impl Scalar for f32 {
    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x
    }

    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
}
