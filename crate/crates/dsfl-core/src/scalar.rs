//! Scalar abstraction for the numeric core.
//!
//! All signal containers and DSP routines are generic over a floating-point
//! scalar so the same code runs in `f32` or `f64`. The published accuracy
//! figures (SQNR predictions, Parseval bounds, k-space round-trips) are only
//! guaranteed for `f64`; `f32` instantiations are useful for memory-bound
//! bulk processing where a few dB of numeric floor is acceptable.

use std::fmt::{Debug, Display, LowerExp};

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};
use rustfft::FftNum;

/// Floating-point scalar usable throughout the crate: `f32` or `f64`.
///
/// `FftNum` supplies `Send + Sync + 'static`, so values and containers built
/// on a `Scalar` are freely shareable across threads.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + NumAssign + FftNum + Display + LowerExp + Debug
{
    /// Convert an `f64` constant into this scalar type.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant not representable as scalar")
    }

    /// Widen to `f64` (used for formatting and file I/O).
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Convert linear power to decibels, `10 log10(p)`.
pub fn db10<T: Scalar>(p: T) -> T {
    T::of(10.0) * p.log10()
}

/// Convert an amplitude ratio to decibels, `20 log10(a)`.
pub fn db20<T: Scalar>(a: T) -> T {
    T::of(20.0) * a.log10()
}

/// Inverse of [`db10`].
pub fn undb10<T: Scalar>(db: T) -> T {
    T::of(10.0).powf(db / T::of(10.0))
}

/// Inverse of [`db20`].
pub fn undb20<T: Scalar>(db: T) -> T {
    T::of(10.0).powf(db / T::of(20.0))
}
