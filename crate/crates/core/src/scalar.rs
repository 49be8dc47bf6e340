//! Numeric element types the kernels are generic over.

use std::fmt::{Debug, Display};

/// Floating-point element type accepted by the arithmetic kernels: f32 or f64.
///
/// Kernels that accumulate (convolutions, softmax) widen to f64 internally via
/// [`num_traits::ToPrimitive`] and narrow back with [`num_traits::FromPrimitive`].
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + num_traits::NumAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Widen to the accumulator type.
    #[inline]
    fn widen(self) -> f64 {
        // Float -> f64 never fails for f32/f64.
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Narrow an accumulator back to the element type.
    #[inline]
    fn narrow(acc: f64) -> Self {
        Self::from_f64(acc).unwrap_or_else(Self::nan)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
