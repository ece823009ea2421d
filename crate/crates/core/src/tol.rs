//! Central registry of numeric tolerances and search budgets.
//!
//! Every tolerance the library relies on lives here, next to the reason it has
//! the value it has. Functions that need a tolerance in the working scalar
//! type convert these with [`Real::lit`](crate::scalar::Real::lit); at `f32`
//! the tight ones degrade gracefully because every iteration is also bounded
//! by a no-progress check.

/// Absolute tolerance for scalar root finding (bisection) and growth-rate
/// inversion. Roots are located to this width before the midpoint is taken.
pub const ROOT_ABS: f64 = 1e-12;

/// Grid resolution used to bracket roots before bisection refines them.
pub const ROOT_SCAN_POINTS: usize = 4096;

/// Grid resolution for locating extrema (suprema of ratios, worst-case
/// margins) before golden-section refinement.
pub const EXTREMUM_SCAN_POINTS: usize = 4096;

/// Denser grid used for Lipschitz constants of growth laws, where the
/// derivative can be sharply peaked near zero substrate.
pub const LIPSCHITZ_SCAN_POINTS: usize = 10_000;

/// Relative interval width at which golden-section refinement stops.
pub const GOLDEN_REL: f64 = 1e-12;

/// Absolute tolerance of the adaptive Simpson quadrature used for the
/// Lyapunov potential integrals.
pub const QUAD_ABS: f64 = 1e-10;

/// Finite-difference derivative checks: relative and absolute tolerance.
/// Near zeros of the derivative the relative test is meaningless, so the
/// absolute one takes over.
pub const FD_REL: f64 = 1e-6;
pub const FD_ABS: f64 = 1e-9;

/// Step scale for numeric Jacobians: `h = JACOBIAN_STEP * max(|x|, 1)`
/// per coordinate, central differences.
pub const JACOBIAN_STEP: f64 = 1e-6;

/// Half-width of the Routh–Hurwitz marginal band: a stability test quantity
/// within this distance of zero is classified `Marginal` rather than forced
/// to a side.
pub const RH_MARGINAL: f64 = 1e-12;

/// An eigenvalue real part is reported as zero when its magnitude is below
/// this (numeric Jacobians carry ~1e-6 · condition error, so the closed-form
/// roots of analytically-derived polynomials are the ones held to it).
pub const EIG_ZERO: f64 = 1e-9;

/// Integrator defaults. Both tolerances must lie in `(0, MAX_IVP_TOL]`.
pub const DEFAULT_REL_TOL: f64 = 1e-8;
pub const DEFAULT_ABS_TOL: f64 = 1e-10;
pub const MAX_IVP_TOL: f64 = 1e-2;

/// A step is declared underflowed — and the run terminated with a
/// boundary-hit report — when the controller pushes `h` below this fraction
/// of the requested time span.
pub const STEP_UNDERFLOW_FRAC: f64 = 1e-12;

/// Washout thresholds: biomass below `WASHOUT_X_FRAC` of the reference
/// equilibrium biomass with substrate within `WASHOUT_S_FRAC · S_in` of the
/// feed concentration.
pub const WASHOUT_X_FRAC: f64 = 1e-6;
pub const WASHOUT_S_FRAC: f64 = 1e-3;

/// Lyapunov-audit defaults: sample count, box half-width in transformed
/// coordinates, and the radius of the ball around the origin excluded from
/// sign checks (the decrease inequality is strict only away from the
/// equilibrium).
pub const AUDIT_SAMPLES: usize = 100_000;
pub const AUDIT_HALF_WIDTH: f64 = 4.0;
pub const AUDIT_EXCLUSION: f64 = 1e-6;

/// Round-trip accuracy demanded of the coordinate transforms in tests.
pub const TRANSFORM_ROUND_TRIP: f64 = 1e-12;

/// Age-structured grid: minimum resolution, and the truncation threshold —
/// the survival-weighted renewal kernel at the grid end must fall below this
/// fraction of its maximum.
pub const PDE_MIN_CELLS: usize = 16;
pub const PDE_TRUNCATION_FRAC: f64 = 1e-8;

/// Sampling density and slack used to vet a custom growth law against its
/// declared supremum and Lipschitz bound.
pub const CUSTOM_CHECK_POINTS: usize = 1000;
pub const CUSTOM_DECL_REL_SLACK: f64 = 1e-6;
