use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type used throughout the crate: `f32` or `f64`.
///
/// Every numeric routine is written against this trait. `f64` is the working
/// precision for training and gradient checks; `f32` is supported for
/// inference-style use and is the storage precision of checkpoints.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Norm tolerance for "unit length" checks at this precision.
    fn unit_tolerance() -> Self;

    /// Lossless-enough conversion from an `f64` constant.
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    fn unit_tolerance() -> Self {
        1e-5
    }
}

impl Scalar for f64 {
    fn unit_tolerance() -> Self {
        1e-9
    }
}
