//! Scalar abstraction shared by every numeric module.

use ndarray::LinalgScalar;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar the whole crate is generic over.
///
/// `nalgebra::RealField` supplies the transcendental math, `LinalgScalar`
/// unlocks `ndarray` matrix products. Implemented for `f32` and `f64`.
pub trait Scalar:
    nalgebra::RealField
    + LinalgScalar
    + FromPrimitive
    + ToPrimitive
    + Copy
    + Default
    + Send
    + Sync
    + 'static
{
    /// Machine epsilon of the concrete type.
    fn machine_epsilon() -> Self;
}

impl Scalar for f32 {
    fn machine_epsilon() -> Self {
        f32::EPSILON
    }
}

impl Scalar for f64 {
    fn machine_epsilon() -> Self {
        f64::EPSILON
    }
}

/// Converts an `f64` constant into the active scalar type.
#[inline]
pub fn sc<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 constant representable in scalar type")
}

/// Converts a scalar to `f64` for reporting, hashing, and IO.
#[inline]
pub fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().expect("scalar convertible to f64")
}
