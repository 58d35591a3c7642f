//! Online assortment optimization under an unknown multinomial-logit choice
//! model with hard resource constraints.
//!
//! The numeric core ([`mnl`], [`estimation`], [`lp`]) is generic over
//! [`Scalar`] (`f32` or `f64`). Policies and the simulator run in `f64`;
//! the aliases below name the `f64` instantiations.

pub mod estimation;
pub mod lp;
pub mod mnl;
pub mod policies;
pub mod scalar;
pub mod simulator;
pub mod verify;

pub use scalar::Scalar;

pub type UtilityVector = mnl::UtilityVector<f64>;
pub type AssortmentDistribution = lp::AssortmentDistribution<f64>;
pub type LpResult = lp::LpResult<f64>;
pub type ConfidenceConstants = estimation::ConfidenceConstants<f64>;
pub type UcbLpSpec = lp::UcbLpSpec<f64>;

pub use estimation::SalesHistory;
pub use mnl::{Assortment, AssortmentFamily, FamilyKind, Instance, PublicInstance};
