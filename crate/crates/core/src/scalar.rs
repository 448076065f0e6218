//! Floating-point scalar abstraction shared by every numeric routine.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the numeric core is generic over (`f32` or `f64`).
///
/// The tolerance hooks let the same validation code run at either precision:
/// `f64` uses the tight values the engine is specified with, `f32` uses the
/// loosest value its mantissa can honour.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + LowerExp + Send + Sync + 'static
{
    /// Row-sum tolerance for externally supplied probability matrices.
    fn ingest_tol() -> Self;

    /// Row-sum tolerance for matrices produced inside the engine.
    fn internal_tol() -> Self;

    /// Lossless-enough conversion from a literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }
}

impl Scalar for f64 {
    fn ingest_tol() -> Self {
        1e-6
    }

    fn internal_tol() -> Self {
        1e-12
    }
}

impl Scalar for f32 {
    fn ingest_tol() -> Self {
        1e-4
    }

    fn internal_tol() -> Self {
        1e-5
    }
}
