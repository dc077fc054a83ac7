//! Scalar abstraction so the numeric core can run in `f32` or `f64`.

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar used throughout the numeric core.
///
/// The shipped pipeline instantiates everything at `f64` (see the crate-root
/// aliases); gradient checks at 1e-4 relative tolerance need the headroom.
/// `f32` remains available for memory-bound experiments.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Default
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to any float scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("any float scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for turning an `f64` constant into the working scalar type.
pub fn cast<S: Scalar>(x: f64) -> S {
    S::from_f64_lossy(x)
}
