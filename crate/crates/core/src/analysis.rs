//! Stability classification and statistical certificate checking.
//!
//! Three groups of tools live here:
//!
//! * **Polynomial stability tests.** Routh–Hurwitz verdicts for quadratic
//!   and cubic characteristic polynomials, closed-form root solvers with a
//!   Newton polish, and [`build_report`], which cross-validates an analytic
//!   characteristic polynomial against a numeric Jacobian and the root
//!   signs so that a disagreement anywhere in the chain is surfaced rather
//!   than silently trusted.
//! * **Lyapunov audits.** Seeded uniform sampling of the transformed state
//!   space (minus a small ball around the origin, where the decrease
//!   degenerates to zero) hunting for sign violations of a candidate
//!   certificate derivative. Sampling is sequential and evaluation is
//!   parallel, so reports are bit-identical for a given seed regardless of
//!   thread count.
//! * **Sweeps.** Grid-seeded phase portraits and basin-of-attraction
//!   labeling built on the guarded integrator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::age::{AgeEquilibrium, AgeSystem, LyapunovConstants3};
use crate::lumped::{FeedbackConfig, LumpedEquilibrium, LumpedSystem, LyapunovConstants};
use crate::scalar::Real;
use crate::sim::{self, IntegratorConfig, Termination, Trajectory};
use crate::{tol, Error, Result};

/// Outcome of a Routh–Hurwitz test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhVerdict {
    /// Every Hurwitz test value is positive: all roots in the open left
    /// half-plane.
    Stable,
    /// Some test value is negative: at least one root with positive real
    /// part.
    Unstable,
    /// A test value sits within the marginal band around zero; the test
    /// cannot decide.
    Marginal,
}

/// Routh–Hurwitz verdict for a quadratic or cubic with the full descending
/// coefficient list (leading coefficient included).
///
/// Quadratic `a2 s^2 + a1 s + a0`: stable iff `a1/a2 > 0` and `a0/a2 > 0`.
/// Cubic `a3 s^3 + a2 s^2 + a1 s + a0` (normalized monic): stable iff
/// `a2 > 0`, `a0 > 0` and `a2 a1 > a0`. Test values within `1e-12` of zero
/// yield [`RhVerdict::Marginal`].
///
/// # Errors
///
/// [`Error::InvalidParameter`] for degrees other than two or three, a
/// vanishing leading coefficient, or non-finite coefficients.
pub fn routh_hurwitz<T: Real>(coeffs: &[T]) -> Result<RhVerdict> {
    if !(coeffs.len() == 3 || coeffs.len() == 4) {
        return Err(Error::InvalidParameter(format!(
            "Routh–Hurwitz test covers quadratics and cubics; got {} coefficients",
            coeffs.len()
        )));
    }
    let band = T::lit(tol::RH_MARGINAL);
    let lead = coeffs[0];
    if !lead.is_finite() || lead.abs() <= band {
        return Err(Error::InvalidParameter(format!(
            "leading coefficient {lead} is zero or non-finite"
        )));
    }
    let c: Vec<T> = coeffs.iter().map(|v| *v / lead).collect();
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "characteristic polynomial has non-finite coefficients".into(),
        ));
    }
    let tests = match c.len() {
        3 => vec![c[1], c[2]],
        _ => vec![c[1], c[3], c[1] * c[2] - c[3]],
    };
    if tests.iter().any(|t| *t < -band) {
        Ok(RhVerdict::Unstable)
    } else if tests.iter().any(|t| t.abs() <= band) {
        Ok(RhVerdict::Marginal)
    } else {
        Ok(RhVerdict::Stable)
    }
}

fn sort_roots<T: Real>(roots: &mut [(T, T)]) {
    roots.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.1.partial_cmp(&b.1).unwrap_or(core::cmp::Ordering::Equal))
    });
}

/// Roots of the monic quadratic `s^2 + a1 s + a0` as `(re, im)` pairs,
/// sorted by real then imaginary part. Real roots use the
/// cancellation-free formula (larger-magnitude root first, the other via
/// the product `a0`).
pub fn quadratic_roots<T: Real>(a1: T, a0: T) -> [(T, T); 2] {
    let half = T::lit(0.5);
    let disc = a1 * a1 - T::lit(4.0) * a0;
    let mut roots = if disc >= T::zero() {
        let sd = disc.sqrt();
        let big = if a1 >= T::zero() { (-a1 - sd) * half } else { (-a1 + sd) * half };
        let other = if big != T::zero() { a0 / big } else { (-a1 + sd) * half };
        [(big, T::zero()), (other, T::zero())]
    } else {
        let re = -a1 * half;
        let im = (-disc).sqrt() * half;
        [(re, -im), (re, im)]
    };
    sort_roots(&mut roots);
    roots
}

/// Roots of the monic cubic `s^3 + a2 s^2 + a1 s + a0` as `(re, im)` pairs,
/// sorted by real then imaginary part. Real roots get a Newton polish
/// against the original cubic.
pub fn cubic_roots<T: Real>(a2: T, a1: T, a0: T) -> [(T, T); 3] {
    let third = T::one() / T::lit(3.0);
    let shift = a2 * third;
    // Depressed form t^3 + p t + q with s = t - a2/3.
    let p = a1 - a2 * a2 * third;
    let q = a2 * (T::lit(2.0) * a2 * a2 / T::lit(27.0) - a1 * third) + a0;
    let half_q = q * T::lit(0.5);
    let disc = half_q * half_q + (p * third) * (p * third) * (p * third);

    let f = |x: T| ((x + a2) * x + a1) * x + a0;
    let fp = |x: T| (T::lit(3.0) * x + T::lit(2.0) * a2) * x + a1;
    let polish = |mut x: T| {
        for _ in 0..3 {
            let d = fp(x);
            if d.abs() > T::zero() {
                let step = f(x) / d;
                if step.is_finite() {
                    x = x - step;
                }
            }
        }
        x
    };

    let mut roots = if disc > T::zero() {
        // One real root; stable Cardano (same-sign addition, no cancellation).
        let sd = disc.sqrt();
        let u3 = if q >= T::zero() { -half_q - sd } else { -half_q + sd };
        let u = u3.cbrt();
        let v = if u != T::zero() { -p * third / u } else { T::zero() };
        let real = polish(u + v - shift);
        // Deflate by the real root: s^2 + b1 s + b0.
        let b1 = a2 + real;
        let b0 = a1 + real * b1;
        let pair = quadratic_roots(b1, b0);
        [(real, T::zero()), pair[0], pair[1]]
    } else {
        // Three real roots via the trigonometric form (p <= 0 here).
        let m = T::lit(2.0) * (-p * third).max(T::zero()).sqrt();
        if m == T::zero() {
            let r = polish(-shift);
            [(r, T::zero()); 3]
        } else {
            // cos(3θ) = 3q / (p m), clamped against roundoff.
            let cos3 = (T::lit(3.0) * q / (p * m)).max(-T::one()).min(T::one());
            let theta = cos3.acos() * third;
            let two_pi_third = T::lit(2.0 * core::f64::consts::PI / 3.0);
            let mut out = [(T::zero(), T::zero()); 3];
            for (k, slot) in out.iter_mut().enumerate() {
                let t = m * (theta - two_pi_third * T::from_usize(k).unwrap()).cos();
                *slot = (polish(t - shift), T::zero());
            }
            out
        }
    };
    sort_roots(&mut roots);
    roots
}

/// Central-difference Jacobian of `f` at `x`, column step
/// `1e-6 · max(|x_j|, 1)`.
pub fn numeric_jacobian<T: Real, const N: usize>(
    f: impl Fn(&[T; N]) -> [T; N],
    x: &[T; N],
) -> [[T; N]; N] {
    let mut jac = [[T::zero(); N]; N];
    for j in 0..N {
        let h = T::lit(tol::JACOBIAN_STEP) * x[j].abs().max(T::one());
        let mut xp = *x;
        let mut xm = *x;
        xp[j] = xp[j] + h;
        xm[j] = xm[j] - h;
        let (fwd, bwd) = (f(&xp), f(&xm));
        let spacing = xp[j] - xm[j];
        for i in 0..N {
            jac[i][j] = (fwd[i] - bwd[i]) / spacing;
        }
    }
    jac
}

/// Eigenvalue sign pattern relative to a real-part tolerance band.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EigSigns {
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_zero: usize,
}

/// Counts root real parts against `±zero_tol`.
pub fn eig_signs<T: Real>(roots: &[(T, T)], zero_tol: T) -> EigSigns {
    let mut signs = EigSigns { n_pos: 0, n_neg: 0, n_zero: 0 };
    for (re, _) in roots {
        if *re > zero_tol {
            signs.n_pos += 1;
        } else if *re < -zero_tol {
            signs.n_neg += 1;
        } else {
            signs.n_zero += 1;
        }
    }
    signs
}

/// Everything [`build_report`] learned about one equilibrium.
#[derive(Debug, Clone)]
pub struct StabilityReport<T> {
    /// Analytic characteristic polynomial, normalized monic, descending.
    pub char_poly: Vec<T>,
    /// Routh–Hurwitz verdict on `char_poly`.
    pub verdict: RhVerdict,
    /// Roots of `char_poly` as `(re, im)`, sorted by real part.
    pub eigenvalues: Vec<(T, T)>,
    pub eig_signs: EigSigns,
    /// Characteristic polynomial recovered from the numeric Jacobian.
    pub jacobian_char_poly: Vec<T>,
    /// True when the numeric Jacobian agrees with the analytic coefficients
    /// (1e-5 relative) and the root signs agree with the verdict.
    pub consistent: bool,
}

fn char_poly_from_jacobian<T: Real, const N: usize>(j: &[[T; N]; N]) -> Result<Vec<T>> {
    match N {
        2 => {
            let tr = j[0][0] + j[1][1];
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            Ok(vec![T::one(), -tr, det])
        }
        3 => {
            let tr = j[0][0] + j[1][1] + j[2][2];
            let minors = (j[0][0] * j[1][1] - j[0][1] * j[1][0])
                + (j[0][0] * j[2][2] - j[0][2] * j[2][0])
                + (j[1][1] * j[2][2] - j[1][2] * j[2][1]);
            let det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1])
                - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
                + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
            Ok(vec![T::one(), -tr, minors, -det])
        }
        _ => Err(Error::InvalidParameter(format!(
            "characteristic polynomial extraction supports 2x2 and 3x3 Jacobians, not {N}x{N}"
        ))),
    }
}

/// Builds a [`StabilityReport`] from an analytic characteristic polynomial
/// (full descending coefficients, length `N + 1`) and the numeric Jacobian
/// of the same vector field at the same equilibrium.
///
/// # Errors
///
/// [`Error::InvalidParameter`] on a length mismatch, unsupported dimension,
/// or degenerate leading coefficient.
pub fn build_report<T: Real, const N: usize>(
    char_poly: Vec<T>,
    jac: &[[T; N]; N],
) -> Result<StabilityReport<T>> {
    if char_poly.len() != N + 1 {
        return Err(Error::InvalidParameter(format!(
            "characteristic polynomial of a {N}-state model needs {} coefficients, got {}",
            N + 1,
            char_poly.len()
        )));
    }
    let lead = char_poly[0];
    if !lead.is_finite() || lead == T::zero() {
        return Err(Error::InvalidParameter(format!(
            "leading coefficient {lead} is zero or non-finite"
        )));
    }
    let monic: Vec<T> = char_poly.iter().map(|c| *c / lead).collect();
    let verdict = routh_hurwitz(&monic)?;
    let jacobian_char_poly = char_poly_from_jacobian(jac)?;

    let eigenvalues: Vec<(T, T)> = match N {
        2 => quadratic_roots(monic[1], monic[2]).to_vec(),
        3 => cubic_roots(monic[1], monic[2], monic[3]).to_vec(),
        _ => unreachable!("dimension gated by char_poly_from_jacobian"),
    };
    let signs = eig_signs(&eigenvalues, T::lit(tol::EIG_ZERO));

    let rel = T::lit(1e-5);
    let coeffs_agree = monic
        .iter()
        .zip(&jacobian_char_poly)
        .all(|(a, b)| (*a - *b).abs() <= rel * a.abs().max(b.abs()).max(T::one()));
    let verdict_agrees = match verdict {
        RhVerdict::Stable => signs.n_neg == N && signs.n_pos == 0 && signs.n_zero == 0,
        RhVerdict::Unstable => signs.n_pos >= 1,
        // A marginal verdict makes no claim the root signs could contradict.
        RhVerdict::Marginal => true,
    };

    Ok(StabilityReport {
        char_poly: monic,
        verdict,
        eigenvalues,
        eig_signs: signs,
        jacobian_char_poly,
        consistent: coeffs_agree && verdict_agrees,
    })
}

/// Sampling plan for a Lyapunov-derivative audit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditConfig<T> {
    /// Number of accepted sample points.
    pub samples: usize,
    /// Seed for the ChaCha8 stream; the report is a pure function of the
    /// configuration.
    pub seed: u64,
    /// Samples are uniform on the cube `[-half_width, half_width]^N`.
    pub half_width: T,
    /// Euclidean radius of the origin ball to resample away from.
    pub exclusion: T,
}

impl<T: Real> Default for AuditConfig<T> {
    fn default() -> Self {
        Self {
            samples: tol::AUDIT_SAMPLES,
            seed: 0,
            half_width: T::lit(tol::AUDIT_HALF_WIDTH),
            exclusion: T::lit(tol::AUDIT_EXCLUSION),
        }
    }
}

/// Outcome of a Lyapunov-derivative audit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditReport<T, const N: usize> {
    pub samples: usize,
    /// Points where the derivative failed to be strictly negative.
    pub violations: usize,
    /// Largest derivative value seen (negative everywhere iff no
    /// violations).
    pub worst_value: T,
    pub worst_point: [T; N],
    /// First sampled violation in stream order, if any.
    pub first_violation: Option<[T; N]>,
}

#[derive(Clone, Copy)]
struct AuditAcc<T> {
    violations: usize,
    worst: T,
    worst_i: usize,
    first: Option<usize>,
}

impl<T: Real> AuditAcc<T> {
    fn identity() -> Self {
        Self { violations: 0, worst: T::neg_infinity(), worst_i: usize::MAX, first: None }
    }

    fn observe(mut self, i: usize, v: T) -> Self {
        // A certificate derivative must be strictly negative; NaN counts as
        // a violation rather than vanishing into a comparison.
        if !(v < T::zero()) {
            self.violations += 1;
            self.first = Some(self.first.map_or(i, |f| f.min(i)));
        }
        let vn = if v.is_nan() { T::infinity() } else { v };
        let take = self.worst_i == usize::MAX
            || vn > self.worst
            || (vn == self.worst && i < self.worst_i);
        if take {
            self.worst = vn;
            self.worst_i = i;
        }
        self
    }

    fn merge(self, other: Self) -> Self {
        let first = match (self.first, other.first) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        let (worst, worst_i) = if other.worst > self.worst
            || (other.worst == self.worst && other.worst_i < self.worst_i)
        {
            (other.worst, other.worst_i)
        } else {
            (self.worst, self.worst_i)
        };
        Self { violations: self.violations + other.violations, worst, worst_i, first }
    }
}

/// Samples `vdot` on the cube `[-hw, hw]^N` minus the exclusion ball and
/// counts sign violations. Point generation is sequential (seeded ChaCha8,
/// resampling draws that land inside the exclusion ball); evaluation is
/// parallel with order-independent reduction, so the report is
/// deterministic for a given configuration.
///
/// # Errors
///
/// [`Error::InvalidParameter`] for an empty sample budget, non-positive
/// half width, or an exclusion radius that swallows the cube.
pub fn lyapunov_audit<T: Real, const N: usize>(
    vdot: impl Fn(&[T; N]) -> T + Sync,
    acfg: &AuditConfig<T>,
) -> Result<AuditReport<T, N>> {
    if acfg.samples == 0 {
        return Err(Error::InvalidParameter("audit needs at least one sample".into()));
    }
    if !(acfg.half_width > T::zero() && acfg.half_width.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "audit half_width = {} must be positive",
            acfg.half_width
        )));
    }
    if !(acfg.exclusion >= T::zero() && acfg.exclusion < acfg.half_width) {
        return Err(Error::InvalidParameter(format!(
            "audit exclusion radius {} must lie in [0, half_width)",
            acfg.exclusion
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(acfg.seed);
    let excl_sq = acfg.exclusion * acfg.exclusion;
    let mut points: Vec<[T; N]> = Vec::with_capacity(acfg.samples);
    while points.len() < acfg.samples {
        let mut z = [T::zero(); N];
        let mut norm_sq = T::zero();
        for slot in &mut z {
            let u: f64 = rng.gen();
            *slot = acfg.half_width * T::lit(2.0 * u - 1.0);
            norm_sq = norm_sq + *slot * *slot;
        }
        if norm_sq >= excl_sq {
            points.push(z);
        }
    }

    let acc = points
        .par_iter()
        .enumerate()
        .fold(AuditAcc::identity, |acc, (i, z)| acc.observe(i, vdot(z)))
        .reduce(AuditAcc::identity, AuditAcc::merge);

    Ok(AuditReport {
        samples: acfg.samples,
        violations: acc.violations,
        worst_value: acc.worst,
        worst_point: points[acc.worst_i],
        first_violation: acc.first.map(|i| points[i]),
    })
}

/// [`lyapunov_audit`] specialized to the two-state certificate derivative.
pub fn lyapunov_audit2<T: Real>(
    sys: &LumpedSystem<T>,
    eq: &LumpedEquilibrium<T>,
    fb: &FeedbackConfig<T>,
    consts: &LyapunovConstants<T>,
    acfg: &AuditConfig<T>,
) -> Result<AuditReport<T, 2>> {
    lyapunov_audit(|z: &[T; 2]| sys.v2_dot(eq, fb, consts, *z), acfg)
}

/// [`lyapunov_audit`] specialized to the three-state certificate derivative.
pub fn lyapunov_audit3<T: Real>(
    sys: &AgeSystem<T>,
    eq: &AgeEquilibrium<T>,
    fb: &FeedbackConfig<T>,
    consts: &LyapunovConstants3<T>,
    acfg: &AuditConfig<T>,
) -> Result<AuditReport<T, 3>> {
    lyapunov_audit(|z: &[T; 3]| sys.v3_dot(eq, fb, consts, *z), acfg)
}

/// One axis of an initial-condition grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec<T> {
    pub lo: T,
    pub hi: T,
    pub n: usize,
    pub log: bool,
}

impl<T: Real> GridSpec<T> {
    /// Uniformly spaced grid on `[lo, hi]`.
    ///
    /// # Errors
    ///
    /// [`Error::InvalidParameter`] unless `lo < hi` (finite) and `n >= 1`.
    pub fn linear(lo: T, hi: T, n: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidParameter(format!(
                "grid range [{lo}, {hi}] must be finite and increasing"
            )));
        }
        if n == 0 {
            return Err(Error::InvalidParameter("grid needs at least one point".into()));
        }
        Ok(Self { lo, hi, n, log: false })
    }

    /// Log-spaced grid on `[lo, hi]`; requires `lo > 0`.
    ///
    /// # Errors
    ///
    /// As [`GridSpec::linear`], plus positivity of `lo`.
    pub fn logarithmic(lo: T, hi: T, n: usize) -> Result<Self> {
        if !(lo > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "log grid lower bound {lo} must be positive"
            )));
        }
        let mut g = Self::linear(lo, hi, n)?;
        g.log = true;
        Ok(g)
    }

    pub fn points(&self) -> Vec<T> {
        if self.n == 1 {
            return vec![self.lo];
        }
        let denom = T::from_usize(self.n - 1).unwrap();
        (0..self.n)
            .map(|i| {
                let frac = T::from_usize(i).unwrap() / denom;
                if self.log {
                    (self.lo.ln() + (self.hi.ln() - self.lo.ln()) * frac).exp()
                } else {
                    self.lo + (self.hi - self.lo) * frac
                }
            })
            .collect()
    }
}

/// Dilution policy for two-state sweeps.
#[derive(Debug, Clone, Copy)]
pub enum Dilution2<'a, T: Real> {
    Constant(T),
    Feedback { eq: &'a LumpedEquilibrium<T>, cfg: &'a FeedbackConfig<T> },
}

/// Dilution policy for three-state sweeps.
#[derive(Debug, Clone, Copy)]
pub enum Dilution3<'a, T: Real> {
    Constant(T),
    Feedback { eq: &'a AgeEquilibrium<T>, cfg: &'a FeedbackConfig<T> },
}

/// Integrates one trajectory per grid node (row-major over `grid_x` then
/// `grid_s`), in parallel, and returns them in grid order.
///
/// # Errors
///
/// Grid/policy validation plus anything the underlying runs report.
pub fn phase_portrait2<T: Real>(
    sys: &LumpedSystem<T>,
    policy: &Dilution2<'_, T>,
    grid_x: &GridSpec<T>,
    grid_s: &GridSpec<T>,
    t_final: T,
    icfg: &IntegratorConfig<T>,
) -> Result<Vec<Trajectory<T, 2>>> {
    let mut inits = Vec::with_capacity(grid_x.n * grid_s.n);
    for x0 in grid_x.points() {
        for s0 in grid_s.points() {
            inits.push([x0, s0]);
        }
    }
    inits
        .par_iter()
        .map(|init| match policy {
            Dilution2::Constant(d) => sim::simulate_open2(sys, *d, *init, t_final, icfg),
            Dilution2::Feedback { eq, cfg } => {
                sim::simulate_closed2(sys, eq, cfg, *init, t_final, icfg, None)
            }
        })
        .collect()
}

/// Three-state analogue of [`phase_portrait2`] (row-major over `grid_x`,
/// `grid_y`, `grid_s`).
pub fn phase_portrait3<T: Real>(
    sys: &AgeSystem<T>,
    policy: &Dilution3<'_, T>,
    grid_x: &GridSpec<T>,
    grid_y: &GridSpec<T>,
    grid_s: &GridSpec<T>,
    t_final: T,
    icfg: &IntegratorConfig<T>,
) -> Result<Vec<Trajectory<T, 3>>> {
    let mut inits = Vec::with_capacity(grid_x.n * grid_y.n * grid_s.n);
    for x0 in grid_x.points() {
        for y0 in grid_y.points() {
            for s0 in grid_s.points() {
                inits.push([x0, y0, s0]);
            }
        }
    }
    inits
        .par_iter()
        .map(|init| match policy {
            Dilution3::Constant(d) => sim::simulate_open3(sys, *d, *init, t_final, icfg),
            Dilution3::Feedback { eq, cfg } => {
                sim::simulate_closed3(sys, eq, cfg, *init, t_final, icfg, None)
            }
        })
        .collect()
}

/// Fate of one basin sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasinLabel {
    /// Entered the tolerance ball of `equilibria[i]`.
    ConvergedTo(usize),
    /// Biomass collapsed while the substrate relaxed to the feed value.
    Washout,
    /// Neither event fired before the time horizon.
    Undecided,
}

/// One labeled basin sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasinPoint<T, const N: usize> {
    pub init: [T; N],
    pub label: BasinLabel,
}

/// Labels a row-major `(X0, S0)` grid of initial conditions by where the
/// flow takes them: into the `ball` (infinity norm) around one of the
/// supplied equilibria, into washout (biomass below `1e-6` of the largest
/// equilibrium biomass with substrate within `0.1%` of the feed), or
/// neither within the horizon. Runs in parallel; output order is grid
/// order.
///
/// # Errors
///
/// [`Error::InvalidParameter`] when no equilibria are supplied or the ball
/// is not positive, plus anything the underlying runs report.
pub fn basin_sample2<T: Real>(
    sys: &LumpedSystem<T>,
    eqs: &[LumpedEquilibrium<T>],
    policy: &Dilution2<'_, T>,
    grid_x: &GridSpec<T>,
    grid_s: &GridSpec<T>,
    t_final: T,
    ball: T,
    icfg: &IntegratorConfig<T>,
) -> Result<Vec<BasinPoint<T, 2>>> {
    if eqs.is_empty() {
        return Err(Error::InvalidParameter(
            "basin labeling needs at least one target equilibrium".into(),
        ));
    }
    if !(ball > T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "basin tolerance ball {ball} must be positive"
        )));
    }
    if let Dilution2::Constant(d) = policy {
        if !(*d >= T::zero() && d.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "dilution rate D = {d} must be finite and non-negative"
            )));
        }
    }
    let x_ref = eqs.iter().map(|e| e.x_star).fold(T::zero(), T::max);
    let mut inits = Vec::with_capacity(grid_x.n * grid_s.n);
    for x0 in grid_x.points() {
        for s0 in grid_s.points() {
            inits.push([x0, s0]);
        }
    }
    inits
        .par_iter()
        .map(|init| {
            let mut label: Option<BasinLabel> = None;
            let rhs = |_t: T, y: &[T; 2]| match policy {
                Dilution2::Constant(d) => sys.rhs_open_raw(*y, *d),
                Dilution2::Feedback { eq, cfg } => sys.rhs_closed_raw(eq, cfg, *y),
            };
            let guard = sys.domain_guard(icfg.domain_margin);
            let stop = |_t: T, y: &[T; 2]| {
                for (i, eq) in eqs.iter().enumerate() {
                    let err = (y[0] - eq.x_star).abs().max((y[1] - eq.s_star).abs());
                    if err <= ball {
                        label = Some(BasinLabel::ConvergedTo(i));
                        return true;
                    }
                }
                if sim::washout_reached(y, x_ref, sys.s_in) {
                    label = Some(BasinLabel::Washout);
                    return true;
                }
                false
            };
            let traj = sim::integrate_until(rhs, guard, T::zero(), t_final, *init, icfg, stop)?;
            let label = label.unwrap_or(match traj.termination {
                // A boundary collapse with the washout signature still counts.
                Termination::BoundaryHit { .. }
                    if sim::washout_reached(&traj.end_state(), x_ref, sys.s_in) =>
                {
                    BasinLabel::Washout
                }
                _ => BasinLabel::Undecided,
            });
            Ok(BasinPoint { init: *init, label })
        })
        .collect()
}

/// Three-state analogue of [`basin_sample2`]: labels a row-major
/// `(X0, Y0, S0)` grid by the same events.
///
/// # Errors
///
/// As [`basin_sample2`].
pub fn basin_sample3<T: Real>(
    sys: &AgeSystem<T>,
    eqs: &[AgeEquilibrium<T>],
    policy: &Dilution3<'_, T>,
    grid_x: &GridSpec<T>,
    grid_y: &GridSpec<T>,
    grid_s: &GridSpec<T>,
    t_final: T,
    ball: T,
    icfg: &IntegratorConfig<T>,
) -> Result<Vec<BasinPoint<T, 3>>> {
    if eqs.is_empty() {
        return Err(Error::InvalidParameter(
            "basin labeling needs at least one target equilibrium".into(),
        ));
    }
    if !(ball > T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "basin tolerance ball {ball} must be positive"
        )));
    }
    if let Dilution3::Constant(d) = policy {
        if !(*d >= T::zero() && d.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "dilution rate D = {d} must be finite and non-negative"
            )));
        }
    }
    let x_ref = eqs.iter().map(|e| e.x_star).fold(T::zero(), T::max);
    let mut inits = Vec::with_capacity(grid_x.n * grid_y.n * grid_s.n);
    for x0 in grid_x.points() {
        for y0 in grid_y.points() {
            for s0 in grid_s.points() {
                inits.push([x0, y0, s0]);
            }
        }
    }
    inits
        .par_iter()
        .map(|init| {
            let mut label: Option<BasinLabel> = None;
            let rhs = |_t: T, y: &[T; 3]| match policy {
                Dilution3::Constant(d) => sys.rhs_open_raw(*y, *d),
                Dilution3::Feedback { eq, cfg } => sys.rhs_closed_raw(eq, cfg, *y),
            };
            let guard = sys.domain_guard(icfg.domain_margin);
            let stop = |_t: T, y: &[T; 3]| {
                for (i, eq) in eqs.iter().enumerate() {
                    let err = (y[0] - eq.x_star)
                        .abs()
                        .max((y[1] - eq.y_star).abs())
                        .max((y[2] - eq.s_star).abs());
                    if err <= ball {
                        label = Some(BasinLabel::ConvergedTo(i));
                        return true;
                    }
                }
                if sim::washout_reached(y, x_ref, sys.s_in) {
                    label = Some(BasinLabel::Washout);
                    return true;
                }
                false
            };
            let traj = sim::integrate_until(rhs, guard, T::zero(), t_final, *init, icfg, stop)?;
            let label = label.unwrap_or(match traj.termination {
                Termination::BoundaryHit { .. }
                    if sim::washout_reached(&traj.end_state(), x_ref, sys.s_in) =>
                {
                    BasinLabel::Washout
                }
                _ => BasinLabel::Undecided,
            });
            Ok(BasinPoint { init: *init, label })
        })
        .collect()
}
