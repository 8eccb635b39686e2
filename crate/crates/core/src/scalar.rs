//! Floating-point abstraction shared by the kernel, calibration and loss code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Real scalar the numerical core is generic over. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` constant into this scalar type.
    fn lit(value: f64) -> Self {
        <Self as FromPrimitive>::from_f64(value).expect("f64 literal representable")
    }

    fn from_count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("count representable")
    }

    /// Root-solver residual target: `1e-14` in double precision, a few ulps otherwise.
    fn solver_tolerance() -> Self {
        let floor = Self::lit(1e-14);
        let ulps = Self::epsilon() * Self::lit(8.0);
        if ulps > floor {
            ulps
        } else {
            floor
        }
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
