//! Floating point abstraction shared by the simulator.
//!
//! Every real-valued quantity (rewards, kWh, metric values, policy weights) is
//! carried as a [`Scalar`], implemented for `f32` and `f64`. The crate root
//! exposes `f64` aliases for the common case.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub trait Scalar:
    'static
    + Send
    + Sync
    + Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Default
    + Debug
    + Display
    + std::iter::Sum
    + Serialize
    + DeserializeOwned
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` literal into the working scalar type.
#[inline]
pub fn lit<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("f64 literal representable in scalar type")
}

/// Converts a count into the working scalar type.
#[inline]
pub fn count<F: Scalar>(n: usize) -> F {
    F::from_usize(n).expect("count representable in scalar type")
}

#[inline]
pub fn to_f64<F: Scalar>(x: F) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}
