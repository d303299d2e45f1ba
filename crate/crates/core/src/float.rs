//! Scalar abstraction: every numerical routine in this crate is generic over
//! [`Float`], which `f32` and `f64` implement via a blanket impl.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{FloatConst, FromPrimitive, ToPrimitive};

/// Floating-point scalar the numerical core is generic over.
pub trait Float:
    num_traits::Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum<Self>
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lift an `f64` constant into `Self`.
    #[inline]
    fn c(value: f64) -> Self {
        Self::from_f64(value).expect("constant not representable in scalar type")
    }

    /// Lift an index into `Self`.
    #[inline]
    fn from_index(i: usize) -> Self {
        Self::from_usize(i).expect("index not representable in scalar type")
    }

    /// View as `f64`, used at I/O boundaries (CSV, JSON, PGM).
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("value not representable as f64")
    }
}

impl<T> Float for T where
    T: num_traits::Float
        + FloatConst
        + FromPrimitive
        + ToPrimitive
        + AddAssign
        + SubAssign
        + MulAssign
        + DivAssign
        + Sum<Self>
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}
