//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into this type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Lossy conversion to `f64` for reporting and serialization.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Tolerance used when validating that probabilities sum to one.
    ///
    /// `1e-9` for `f64`; looser for narrower types where rounding alone exceeds that.
    #[inline]
    fn sum_tolerance() -> Self {
        let floor = Self::lit(1e-9);
        let eps = Self::epsilon() * Self::lit(1e3);
        if eps > floor {
            eps
        } else {
            floor
        }
    }

    /// Magnitude below which negative round-off is clamped to zero.
    #[inline]
    fn clamp_tolerance() -> Self {
        let floor = Self::lit(1e-12);
        let eps = Self::epsilon() * Self::lit(10.0);
        if eps > floor {
            eps
        } else {
            floor
        }
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
