//! Floating point abstraction shared by the closed-form and geometric modules.

use num_traits::{Float, FloatConst, FromPrimitive};
use std::fmt::Debug;

/// Real scalar the forward models are written against: `f32` or `f64`.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + Debug + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Every supported type can represent the constants used here.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
