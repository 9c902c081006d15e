//! Floating-point abstraction shared by the matrix and geometry kernel.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive};

/// Real scalar usable by the kernel: `f32` or `f64`.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar type.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Geometric tolerance for predicates and reconstruction checks.
pub const TOL_GEOM: f64 = 1e-9;

/// Relative continuity tolerance; multiplied by the domain diameter.
pub const TOL_CONT_REL: f64 = 1e-9;

/// Angular tolerance in radians for orientation matching.
pub const TOL_ANGLE: f64 = 1e-6;
