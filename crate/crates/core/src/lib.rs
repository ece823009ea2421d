//! Chemostat models with biomass mortality, and the dilution-rate feedback
//! laws that globally stabilize them.
//!
//! The library covers three related models of a continuously stirred
//! bioreactor in which the organism dies at rate `b` in addition to being
//! washed out at the dilution rate `D`:
//!
//! * a lumped two-state model (biomass `X`, substrate `S`),
//! * a three-state model (newborn-capable biomass `X`, total biomass `Y`,
//!   substrate `S`) obtained as the exact moment reduction of an
//!   age-structured population, and
//! * the age-structured transport PDE itself, with a renewal boundary
//!   condition coupled to the substrate.
//!
//! For the ODE models the crate computes equilibria and their linear
//! stability, applies the logarithmic change of coordinates that moves a
//! chosen positive equilibrium to the origin, evaluates the stabilizing
//! feedback laws and their Lyapunov certificates (including the derived
//! constants and a randomized decrease audit), simulates open- and
//! closed-loop trajectories with a guarded adaptive integrator, and
//! constructs the divergence scenario showing that constant dilution cannot
//! be globally stabilizing when mortality is large. For the PDE it provides
//! a positivity-preserving upwind discretization whose biomass moments can be
//! compared against the three-state reduction.
//!
//! Everything is generic over the scalar type through [`scalar::Real`];
//! `f64` aliases for the main types are exported at the crate root.

pub mod age;
pub mod age_pde;
pub mod analysis;
pub mod kinetics;
pub mod lumped;
pub mod numeric;
pub mod scalar;
pub mod sim;
pub mod tol;

use thiserror::Error;

/// Unified error type for the whole library.
///
/// Messages name the offending quantity or inequality so that callers can
/// surface them directly.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A constructor or operation was handed a parameter outside its
    /// documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// A state left the open domain on which the model is defined.
    #[error("state outside the model domain: {0}")]
    OutsideDomain(String),
    /// A structural assumption required by the requested certificate or
    /// scenario does not hold for these parameters.
    #[error("assumption not satisfied: {0}")]
    AssumptionFailed(String),
    /// An iterative numeric procedure could not produce a trustworthy result.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// An invariant the library itself guarantees was observed broken;
    /// always a bug, never user error.
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

pub use scalar::Real;

/// `f64` aliases for the library's main types.
pub type GrowthRateModel64 = kinetics::GrowthRateModel<f64>;
pub type SupLipschitz64 = kinetics::SupLipschitz<f64>;
pub type LumpedSystem64 = lumped::LumpedSystem<f64>;
pub type LumpedEquilibrium64 = lumped::LumpedEquilibrium<f64>;
pub type LyapunovConstants64 = lumped::LyapunovConstants<f64>;
pub type DivergenceScenario64 = lumped::DivergenceScenario<f64>;
pub type AgeSystem64 = age::AgeSystem<f64>;
pub type AgeEquilibrium64 = age::AgeEquilibrium<f64>;
pub type LyapunovConstants3_64 = age::LyapunovConstants3<f64>;
pub type FeedbackConfig64 = lumped::FeedbackConfig<f64>;
pub type IntegratorConfig64 = sim::IntegratorConfig<f64>;
pub type AgeGrid64 = age_pde::AgeGrid<f64>;
pub type MortalityKernel64 = age_pde::MortalityKernel<f64>;
pub type PdeState64 = age_pde::PdeState<f64>;
pub type StabilityReport64 = analysis::StabilityReport<f64>;
pub type AuditConfig64 = analysis::AuditConfig<f64>;
