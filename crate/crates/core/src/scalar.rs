use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point type the estimators are generic over: `f32` or `f64`.
///
/// Kernel normalizing constants and other fixed integrals are always computed
/// in `f64` and converted once, so `f32` pipelines only lose precision in the
/// per-pixel sums.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + std::iter::Sum
    + 'static
{
    #[inline]
    fn lit(v: f64) -> Self {
        // from_f64 is infallible for f32/f64 (out of range maps to inf)
        Self::from_f64(v).unwrap()
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap()
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::lit(v as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
