//! Scalar abstraction shared by the dense kernels.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

/// Floating point type usable by [`DenseMatrix`](crate::numerics::DenseMatrix)
/// and the generic kernels: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts a literal; every `f64` constant is representable (possibly
    /// rounded) in both implementors.
    fn c(x: f64) -> Self;

    fn to_f64_lossy(self) -> f64;

    /// Machine epsilon scaled for convergence tests in iterative kernels.
    fn tolerance() -> Self;
}

impl Real for f32 {
    #[inline]
    fn c(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
    fn tolerance() -> Self {
        1e-7
    }
}

impl Real for f64 {
    #[inline]
    fn c(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
    fn tolerance() -> Self {
        1e-15
    }
}
