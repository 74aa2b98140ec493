//! Scalar abstraction for the numeric core.
//!
//! Everything numeric in this crate is written against [`Scalar`] so the
//! same code runs at `f32` or `f64`. Experiments use `f64` (see the aliases
//! at the crate root); `f32` stays available for memory-bound uses.

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + std::fmt::Debug + std::fmt::Display + std::iter::Sum + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for converting an `f64` constant into the working scalar.
#[inline]
pub fn real<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("constant representable in scalar type")
}

/// Lossy conversion back to `f64`, for logging and serialization.
#[inline]
pub fn to_f64<F: Scalar>(x: F) -> f64 {
    x.to_f64().expect("scalar convertible to f64")
}
