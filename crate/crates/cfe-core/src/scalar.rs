//! Scalar abstraction so the solver can run on `f32` or `f64`.
//!
//! All algorithms are generic over [`Scalar`]; configuration values are plain
//! `f64` and enter the generic layer through [`real`]. Verification-grade runs
//! use `f64` (the tolerances in the acceptance suite assume it); `f32` exists
//! for cheap exploratory sweeps.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar used by every numerical routine in this crate.
///
/// Math operations (`exp`, `ln_1p`, `powf`, ...) come from [`Float`]; this
/// trait only pins down the conversions and marker bounds the solver needs.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossy view as `f64`, used for reports and CSV output.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar representable as f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts a configuration-layer `f64` into the working scalar type.
#[inline]
pub fn real<S: Scalar>(v: f64) -> S {
    S::from_f64(v).expect("constant representable in scalar type")
}
