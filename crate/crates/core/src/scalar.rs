//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! The codec itself runs in `f32`; `f64` instantiations exist so that
//! finite-difference oracles and reference computations can reuse exactly the
//! same code paths at higher precision.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of a [`Tensor`](crate::tensor::Tensor).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant, rounding to the nearest representable value.
    fn lit(x: f64) -> Self;

    /// Widens to `f64` without loss for `f32`/`f64`.
    fn as_f64(self) -> f64;

    /// Narrows to the on-disk `f32` representation.
    fn as_f32(self) -> f32;

    fn of_f32(x: f32) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn as_f32(self) -> f32 {
        self
    }

    #[inline]
    fn of_f32(x: f32) -> Self {
        x
    }
}

impl Scalar for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    #[inline]
    fn as_f32(self) -> f32 {
        self as f32
    }

    #[inline]
    fn of_f32(x: f32) -> Self {
        x as f64
    }
}

/// Rounds half away from zero. This is the only rounding rule used for
/// anything that ends up in a bitstream.
#[inline]
pub fn round_half_away<T: Scalar>(x: T) -> T {
    // `Float::round` is specified as half-away-from-zero.
    x.round()
}
