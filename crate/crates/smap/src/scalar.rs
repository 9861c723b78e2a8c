//! Scalar abstraction for the numeric core.

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar the geometry and network code is generic over.
pub trait Scalar:
    num_traits::Float
    + num_traits::FloatConst
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + num_traits::NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand conversion from `f64` literals into the generic scalar.
#[inline]
pub fn s<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 -> scalar conversion")
}
