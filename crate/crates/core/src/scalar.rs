//! Scalar abstraction: the numeric core is generic over the element type.
//!
//! Test builds and checkpoints use `f64`; `f32` is available for fast
//! training builds. Finite-difference checking is only meaningful at 64-bit
//! precision, which callers can gate on [`Scalar::PRECISION_BITS`].

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Floating-point element type of tensors and parameters.
pub trait Scalar:
    Float + FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Mantissa-carrying width of the type: 32 or 64.
    const PRECISION_BITS: u32;

    fn from_float(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 conversion")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("f64 conversion")
    }

    /// Numerically stable ln(1 + e^x).
    fn softplus(self) -> Self {
        let zero = Self::zero();
        let big = self.max(zero);
        big + (-self.abs()).exp().ln_1p()
    }

    fn sigmoid(self) -> Self {
        let one = Self::one();
        one / (one + (-self).exp())
    }
}

impl Scalar for f32 {
    const PRECISION_BITS: u32 = 32;
}

impl Scalar for f64 {
    const PRECISION_BITS: u32 = 64;
}
