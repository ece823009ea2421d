//! Scalar abstraction.
//!
//! Every algorithm in this crate is generic over [`Real`], a trait alias over
//! [`num_traits::Float`] plus the handful of extra bounds the library needs:
//! primitive conversion for numeric literals, `Send + Sync` for the parallel
//! sweeps, and formatting for error reports. A blanket impl makes `f32` and
//! `f64` (and any other IEEE-like float with the same trait surface) qualify
//! automatically. Concrete `f64` aliases for the main types live at the crate
//! root.

use core::fmt::{Debug, Display};
use core::iter::Sum;
use num_traits::{Float, FromPrimitive};

/// Floating-point scalar usable throughout the library.
pub trait Real:
    Float + FromPrimitive + Debug + Display + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal into `Self`, rounding if necessary.
    ///
    /// Panics only if the conversion is not representable at all, which does
    /// not happen for the finite constants this crate feeds it.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 literal must convert into the scalar type")
    }

    /// `self` widened (or narrowed) to `f64` for reporting and formatting.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Machine epsilon for this scalar type.
    #[inline]
    fn eps() -> Self {
        Self::epsilon()
    }
}

impl<T> Real for T where
    T: Float + FromPrimitive + Debug + Display + Sum + Send + Sync + 'static
{
}
