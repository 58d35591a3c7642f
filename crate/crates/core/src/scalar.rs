//! Floating-point abstraction shared by the numeric modules.
//!
//! The choice-model math, the likelihood code and the LP machinery are all
//! written against [`Scalar`], so they run in `f32` or `f64`. Tolerances
//! scale with the precision of the type.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Smallest pivot magnitude the simplex accepts before declaring the
    /// basis numerically singular.
    fn pivot_eps() -> Self;

    /// Primal feasibility / reduced cost slack used inside the simplex.
    fn feas_tol() -> Self;

    /// Default column-generation reduced-cost tolerance.
    fn cg_tol() -> Self;

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    fn from_count(n: u64) -> Self {
        Self::from_u64(n).expect("count representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    fn pivot_eps() -> Self {
        1e-11
    }
    fn feas_tol() -> Self {
        1e-10
    }
    fn cg_tol() -> Self {
        1e-7
    }
}

impl Scalar for f32 {
    fn pivot_eps() -> Self {
        1e-6
    }
    fn feas_tol() -> Self {
        1e-5
    }
    fn cg_tol() -> Self {
        1e-4
    }
}
