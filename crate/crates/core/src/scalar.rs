//! Scalar abstraction shared by the geometry and scene modules.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumCast};

/// Floating point coordinate type: `f32` or `f64`.
///
/// `Debug` must print the shortest representation that parses back to the
/// same value, which both primitive floats guarantee.
pub trait Scalar:
    Float + FromPrimitive + NumCast + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts a literal, panicking only if the target type cannot hold it.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    fn half() -> Self {
        Self::lit(0.5)
    }

    /// Rounds to `decimals` places after the point.
    fn round_to(self, decimals: u32) -> Self {
        let scale = Self::lit(10f64.powi(decimals as i32));
        (self * scale).round() / scale
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
