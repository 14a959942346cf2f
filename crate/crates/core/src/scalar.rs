use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar the numerics are generic over: f32 or f64.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from f64; constants and noise draws go through here.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Scalar")
    }

    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("usize is representable in every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `base^exp` evaluated through logs so real exponents are allowed.
pub(crate) fn powr<T: Scalar>(base: T, exp: T) -> T {
    if exp == T::zero() {
        T::one()
    } else {
        base.powf(exp)
    }
}

/// `sum_{j=from}^{to} ratio^j`, zero when `to < from`. Ratio exactly one
/// counts terms instead of dividing by zero.
pub(crate) fn geometric_sum<T: Scalar>(ratio: T, from: i64, to: i64) -> T {
    if to < from {
        return T::zero();
    }
    let terms = (to - from + 1) as usize;
    if ratio == T::one() {
        return T::of_usize(terms);
    }
    if ratio == T::zero() {
        return if from == 0 { T::one() } else { T::zero() };
    }
    let first = ratio.powi(from as i32);
    first * (T::one() - ratio.powi(terms as i32)) / (T::one() - ratio)
}
