//! Lumped two-state chemostat with biomass mortality, its equilibrium
//! transform, the stabilizing dilution feedback, the Lyapunov certificate,
//! and the divergence scenario showing constant dilution cannot match it.
//!
//! Model, on the open domain `X > 0`, `0 < S < S_in`, with dilution input
//! `D >= 0`:
//!
//! ```text
//! dX/dt = (p0·μ(S) − b − D)·X
//! dS/dt = D·(S_in − S) − μ(S)·X
//! ```
//!
//! A positive equilibrium `(X*, S*)` at nominal dilution `D*` satisfies
//! `p0·μ(S*) = b + D*` and `X* = D*(S_in − S*)/μ(S*)`. The logarithmic
//! change of coordinates
//!
//! ```text
//! x1 = ln( μ(S*)·X / (D*(S_in − S)) )       x2 = ln( S(S_in − S*) / (S*(S_in − S)) )
//! ```
//!
//! maps the domain diffeomorphically onto the plane and the equilibrium to
//! the origin. With `κ = (S_in − S*)/S*`, `p(x2) = κ·e^(−x2) + 1` and
//! `g(x2) = μ(S_in/p(x2))/μ(S*)`, the open-loop dynamics become
//!
//! ```text
//! dx1/dt = b(g − 1) + D*·g·(1 − e^x1)
//! dx2/dt = p(x2)·(D − D*·g·e^x1)
//! ```
//!
//! The feedback law (in original coordinates, `gain = δ·b`)
//!
//! ```text
//! D(X, S) = D*·μ(S)·X/(μ(S*)·X*) + δ·b·(|μ(S) − μ(S*)|/μ(S*))^(1+α)·[S <= S*]
//! ```
//!
//! renders the equilibrium globally asymptotically stable on the open
//! domain whenever `p0·μ(S) > b` on `[S*, S_in]`. The certificate is
//! `V(z) = e^x1 − x1 − 1 + Q(x2)` with a piecewise potential `Q`; the
//! closed-loop derivative is evaluated in closed form by [`LumpedSystem::v2_dot`].
//!
//! When mortality is too large for that margin — `p0·μ(S̄) < b` on a
//! non-increasing tail of the growth law — no constant dilution can be
//! globally stabilizing: [`LumpedSystem::divergence_scenario`] constructs
//! initial data whose `x1` component decays below `x1(0) − θ·t` forever, so
//! the biomass washes out even though a positive equilibrium exists.

use crate::analysis::{self, StabilityReport};
use crate::kinetics::GrowthRateModel;
use crate::numeric::{adaptive_simpson, bisect, scan_max, scan_min};
use crate::scalar::Real;
use crate::{tol, Error, Result};

/// Gains of the stabilizing feedback law: `delta` scales the transient
/// boost, `alpha` shapes its exponent (`1 + alpha` on the growth-rate
/// mismatch).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackConfig<T> {
    pub delta: T,
    pub alpha: T,
}

impl<T: Real> FeedbackConfig<T> {
    /// # Errors
    ///
    /// [`Error::InvalidParameter`] unless `delta > 0` and `0 <= alpha < 1`.
    pub fn new(delta: T, alpha: T) -> Result<Self> {
        if !(delta.is_finite() && delta > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "feedback delta must be positive, got {delta}"
            )));
        }
        if !(alpha.is_finite() && alpha >= T::zero() && alpha < T::one()) {
            return Err(Error::InvalidParameter(format!(
                "feedback alpha must lie in [0, 1), got {alpha}"
            )));
        }
        Ok(Self { delta, alpha })
    }
}

/// The two-state chemostat: growth law, feed concentration `s_in`, nominal
/// dilution `d_star`, mortality `b`, and reproduction efficiency `p0`.
#[derive(Debug, Clone)]
pub struct LumpedSystem<T: Real> {
    pub growth: GrowthRateModel<T>,
    pub s_in: T,
    pub d_star: T,
    pub b: T,
    pub p0: T,
}

/// A positive equilibrium of the lumped model at the nominal dilution, with
/// the derived constants the transform needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LumpedEquilibrium<T> {
    pub x_star: T,
    pub s_star: T,
    /// `κ = (S_in − S*)/S*`.
    pub kappa: T,
    /// `μ(S*) = (b + D*)/p0`.
    pub mu_star: T,
}

/// `g` and `p` evaluated at one transformed substrate coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformConstants<T> {
    pub g: T,
    pub p: T,
}

/// Outcome of the growth-margin check `p0·μ(S) > b` on `[S*, S_in]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionAReport<T> {
    pub holds: bool,
    /// `min (p0·μ(S) − b)` over the interval; positive iff the check holds.
    pub margin: T,
    pub arg_min: T,
}

/// Constants of the two-state Lyapunov certificate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovConstants<T> {
    /// Lipschitz-type bound with `|g(x2) − 1| <= a·|e^x2 − 1|`.
    pub a: T,
    /// Worst relative growth deficit `sup b(μ(S*)/μ(S) − 1)/D*` on
    /// `[S*, S_in]`; must lie in `[0, 1)`.
    pub r: T,
    /// Shift such that `r + e^(−c) < 1`: `c = −ln((1 − r)/2)`.
    pub c: T,
    /// Gain of the expansive branch of the potential; any value above
    /// `big_r_lower` certifies, and twice the bound is emitted.
    pub big_r: T,
    /// The certified strict lower bound `a²·b²·e^c / D*²`.
    pub big_r_lower: T,
}

/// Constructed initial data for the washout divergence run, together with
/// the constants entering its estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceScenario<T> {
    /// Substrate level with `p0·μ(S̄) < b` on a non-increasing tail.
    pub s_bar: T,
    /// Decay margin `θ = b − p0·μ(S̄)`; the run certifies
    /// `x1(t) <= x1(0) − θ·t`.
    pub theta: T,
    /// Transformed coordinate of `S̄`.
    pub beta: T,
    /// Initial `x2`, strictly beyond `beta` with `g(xbar2) < g(beta)`.
    pub xbar2: T,
    /// Initial `x1`, small enough that the dilution transient cannot lift
    /// the biomass again.
    pub x1_0: T,
    /// Growth-curvature constant `G = 1 + p0·κ·S_in·M/((D*+b)(κ+e^β))`.
    pub big_g: T,
    /// `M = max |μ′|` on `[S̄, S_in]`.
    pub big_m: T,
}

impl<T: Real> LumpedSystem<T> {
    /// # Errors
    ///
    /// [`Error::InvalidParameter`] unless `s_in > 0`, `d_star > 0`, `b >= 0`,
    /// `p0 > 0`, all finite.
    pub fn new(growth: GrowthRateModel<T>, s_in: T, d_star: T, b: T, p0: T) -> Result<Self> {
        for (name, v, lower_open) in [
            ("s_in", s_in, true),
            ("d_star", d_star, true),
            ("b", b, false),
            ("p0", p0, true),
        ] {
            if !v.is_finite() || (lower_open && v <= T::zero()) || v < T::zero() {
                return Err(Error::InvalidParameter(format!(
                    "lumped model parameter {name} = {v} out of range"
                )));
            }
        }
        Ok(Self { growth, s_in, d_star, b, p0 })
    }

    /// Equilibrium growth rate `(b + D*)/p0`.
    #[inline]
    pub fn mu_star(&self) -> T {
        (self.b + self.d_star) / self.p0
    }

    /// All positive equilibria at the nominal dilution, ascending in `S*`.
    ///
    /// # Errors
    ///
    /// Propagates growth-law domain errors; an empty vector (no equilibrium)
    /// is a valid outcome, not an error.
    pub fn equilibria(&self) -> Result<Vec<LumpedEquilibrium<T>>> {
        let target = self.mu_star();
        let roots = self.growth.invert_mu(target, T::zero(), self.s_in)?;
        Ok(roots
            .into_iter()
            .filter(|s| *s > T::zero() && *s < self.s_in * (T::one() - T::lit(1e-12)))
            .map(|s_star| LumpedEquilibrium {
                x_star: self.d_star * (self.s_in - s_star) / self.growth.mu_raw(s_star),
                s_star,
                kappa: (self.s_in - s_star) / s_star,
                mu_star: self.growth.mu_raw(s_star),
            })
            .collect())
    }

    #[inline]
    pub(crate) fn rhs_open_raw(&self, state: [T; 2], d: T) -> [T; 2] {
        let [x, s] = state;
        let mu = self.growth.mu_raw(s);
        [
            (self.p0 * mu - self.b - d) * x,
            d * (self.s_in - s) - mu * x,
        ]
    }

    fn check_state(&self, state: [T; 2]) -> Result<()> {
        let [x, s] = state;
        if !(x > T::zero() && x.is_finite()) {
            return Err(Error::OutsideDomain(format!(
                "biomass X = {x} must be positive"
            )));
        }
        if !(s > T::zero() && s < self.s_in) {
            return Err(Error::OutsideDomain(format!(
                "substrate S = {s} must lie in (0, {})",
                self.s_in
            )));
        }
        Ok(())
    }

    /// Open-loop vector field at `state = [X, S]` under dilution `d`.
    ///
    /// # Errors
    ///
    /// [`Error::OutsideDomain`] off the open domain, or
    /// [`Error::InvalidParameter`] for negative dilution.
    pub fn rhs_open(&self, state: [T; 2], d: T) -> Result<[T; 2]> {
        self.check_state(state)?;
        if !(d >= T::zero() && d.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "dilution rate D = {d} must be finite and non-negative"
            )));
        }
        Ok(self.rhs_open_raw(state, d))
    }

    #[inline]
    pub(crate) fn feedback_raw(
        &self,
        eq: &LumpedEquilibrium<T>,
        cfg: &FeedbackConfig<T>,
        state: [T; 2],
    ) -> T {
        let [x, s] = state;
        let mu = self.growth.mu_raw(s);
        let base = self.d_star * mu * x / (eq.mu_star * eq.x_star);
        if s <= eq.s_star {
            let mismatch = (mu - eq.mu_star).abs() / eq.mu_star;
            base + cfg.delta * self.b * mismatch.powf(T::one() + cfg.alpha)
        } else {
            base
        }
    }

    /// The stabilizing dilution law `D(X, S)`; strictly positive on the open
    /// domain.
    ///
    /// # Errors
    ///
    /// [`Error::OutsideDomain`] off the open domain.
    pub fn feedback(
        &self,
        eq: &LumpedEquilibrium<T>,
        cfg: &FeedbackConfig<T>,
        state: [T; 2],
    ) -> Result<T> {
        self.check_state(state)?;
        Ok(self.feedback_raw(eq, cfg, state))
    }

    #[inline]
    pub(crate) fn rhs_closed_raw(
        &self,
        eq: &LumpedEquilibrium<T>,
        cfg: &FeedbackConfig<T>,
        state: [T; 2],
    ) -> [T; 2] {
        self.rhs_open_raw(state, self.feedback_raw(eq, cfg, state))
    }

    /// Closed-loop vector field under the stabilizing feedback.
    ///
    /// # Errors
    ///
    /// [`Error::OutsideDomain`] off the open domain.
    pub fn rhs_closed(
        &self,
        eq: &LumpedEquilibrium<T>,
        cfg: &FeedbackConfig<T>,
        state: [T; 2],
    ) -> Result<[T; 2]> {
        self.check_state(state)?;
        Ok(self.rhs_closed_raw(eq, cfg, state))
    }

    /// Transform to equilibrium-centered logarithmic coordinates.
    ///
    /// # Errors
    ///
    /// [`Error::OutsideDomain`] off the open domain.
    pub fn to_z(&self, eq: &LumpedEquilibrium<T>, state: [T; 2]) -> Result<[T; 2]> {
        self.check_state(state)?;
        let [x, s] = state;
        let x1 = (eq.mu_star * x / (self.d_star * (self.s_in - s))).ln();
        let x2 = (s * (self.s_in - eq.s_star) / (eq.s_star * (self.s_in - s))).ln();
        Ok([x1, x2])
    }

    /// Inverse transform; maps every point of the plane into the open
    /// domain. (At `|x2|` beyond roughly 700 the substrate saturates to the
    /// domain boundary in floating point.)
    pub fn from_z(&self, eq: &LumpedEquilibrium<T>, z: [T; 2]) -> [T; 2] {
        let [x1, x2] = z;
        let p = eq.kappa * (-x2).exp() + T::one();
        let s = self.s_in / p;
        let x = self.d_star * self.s_in * eq.kappa * (x1 - x2).exp() / (eq.mu_star * p);
        [x, s]
    }

    /// `g(x2) = μ(S_in/p(x2))/μ(S*)` and `p(x2) = κ·e^(−x2) + 1`.
    #[inline]
    pub fn transform_constants(&self, eq: &LumpedEquilibrium<T>, x2: T) -> TransformConstants<T> {
        let p = eq.kappa * (-x2).exp() + T::one();
        let g = self.growth.mu_raw(self.s_in / p) / eq.mu_star;
        TransformConstants { g, p }
    }

    /// Transient boost of the feedback law in transformed coordinates:
    /// `u(x2) = δ·b·|g(x2) − 1|^(1+α)` on `x2 <= 0`, zero otherwise.
    #[inline]
    fn boost(&self, cfg: &FeedbackConfig<T>, x2: T, g: T) -> T {
        if x2 <= T::zero() {
            cfg.delta * self.b * (g - T::one()).abs().powf(T::one() + cfg.alpha)
        } else {
            T::zero()
        }
    }

    /// The feedback law expressed in transformed coordinates:
    /// `D = (κ+1)·D*·g·e^(x1−x2)/p + u(x2)`.
    pub fn feedback_z(&self, eq: &LumpedEquilibrium<T>, cfg: &FeedbackConfig<T>, z: [T; 2]) -> T {
        let [x1, x2] = z;
        let tc = self.transform_constants(eq, x2);
        (eq.kappa + T::one()) * self.d_star * tc.g * (x1 - x2).exp() / tc.p
            + self.boost(cfg, x2, tc.g)
    }

    /// Open-loop dynamics in transformed coordinates under dilution `d`.
    pub fn rhs_open_z(&self, eq: &LumpedEquilibrium<T>, z: [T; 2], d: T) -> [T; 2] {
        let [x1, x2] = z;
        let tc = self.transform_constants(eq, x2);
        [
            self.b * (tc.g - T::one()) + self.d_star * tc.g * (T::one() - x1.exp()),
            tc.p * (d - self.d_star * tc.g * x1.exp()),
        ]
    }

    /// Closed-loop dynamics in transformed coordinates:
    ///
    /// ```text
    /// dx1/dt = b(g − 1) + D*·g·(1 − e^x1)
    /// dx2/dt = D*·g·e^(x1−x2)·(1 − e^x2) + p(x2)·u(x2)
    /// ```
    pub fn rhs_closed_z(
        &self,
        eq: &LumpedEquilibrium<T>,
        cfg: &FeedbackConfig<T>,
        z: [T; 2],
    ) -> [T; 2] {
        let [x1, x2] = z;
        let tc = self.transform_constants(eq, x2);
        let u = self.boost(cfg, x2, tc.g);
        [
            self.b * (tc.g - T::one()) + self.d_star * tc.g * (T::one() - x1.exp()),
            self.d_star * tc.g * (x1 - x2).exp() * (T::one() - x2.exp()) + tc.p * u,
        ]
    }

    /// Checks the stabilizability margin `p0·μ(S) > b` on `[S*, S_in]`.
    pub fn check_assumption_a(&self, eq: &LumpedEquilibrium<T>) -> AssumptionAReport<T> {
        let (arg_min, margin) = scan_min(
            |s| self.p0 * self.growth.mu_raw(s) - self.b,
            eq.s_star,
            self.s_in,
            tol::EXTREMUM_SCAN_POINTS,
        );
        AssumptionAReport { holds: margin > T::zero(), margin, arg_min }
    }

    /// Derives the certificate constants for this equilibrium.
    ///
    /// With `b = 0` the deficit `r` and the lower bound on the gain both
    /// vanish; any positive gain certifies, and `big_r = 1` is emitted.
    ///
    /// # Errors
    ///
    /// [`Error::AssumptionFailed`] when the growth margin fails (including
    /// the equivalent condition `r >= 1`).
    pub fn lyapunov_constants(&self, eq: &LumpedEquilibrium<T>) -> Result<LyapunovConstants<T>> {
        let ar = self.check_assumption_a(eq);
        if !ar.holds {
            return Err(Error::AssumptionFailed(format!(
                "p0·mu(S) > b fails on [S*, S_in]: margin {} at S = {}",
                ar.margin, ar.arg_min
            )));
        }
        let sl = self.growth.sup_and_lipschitz(self.s_in)?;
        let a = sl.lipschitz * self.p0 * eq.s_star / (self.b + self.d_star);
        let r = if self.b == T::zero() {
            T::zero()
        } else {
            let (_, sup) = scan_max(
                |s| self.b * (eq.mu_star / self.growth.mu_raw(s) - T::one()) / self.d_star,
                eq.s_star,
                self.s_in,
                tol::EXTREMUM_SCAN_POINTS,
            );
            sup.max(T::zero())
        };
        if r >= T::one() {
            return Err(Error::AssumptionFailed(format!(
                "relative growth deficit r = {r} must lie in [0, 1)"
            )));
        }
        let c = -((T::one() - r) * T::lit(0.5)).ln();
        let big_r_lower = a * a * self.b * self.b * c.exp() / (self.d_star * self.d_star);
        let big_r = if big_r_lower == T::zero() { T::one() } else { big_r_lower + big_r_lower };
        Ok(LyapunovConstants { a, r, c, big_r, big_r_lower })
    }

    /// The Lyapunov function `V(z) = e^x1 − x1 − 1 + Q(x2)`, where
    ///
    /// ```text
    /// Q(x2) = x2²/2 + b/(2·D*·δ) · ∫_{x2}^0 |g(s)−1|^(1−α) / (p(s)·g(s)) ds     (x2 <= 0)
    /// Q(x2) = R · ∫_0^{x2} e^s (e^s − 1) / g(s)² ds                             (x2 > 0)
    /// ```
    ///
    /// # Errors
    ///
    /// [`Error::Numerical`] if the quadrature fails.
    pub fn v2(
        &self,
        eq: &LumpedEquilibrium<T>,
        cfg: &FeedbackConfig<T>,
        consts: &LyapunovConstants<T>,
        z: [T; 2],
    ) -> Result<T> {
        let [x1, x2] = z;
        let core = x1.exp() - x1 - T::one();
        let q = if x2 <= T::zero() {
            let quadratic = x2 * x2 * T::lit(0.5);
            if self.b == T::zero() {
                quadratic
            } else {
                let coef = self.b / (T::lit(2.0) * self.d_star * cfg.delta);
                let tail = adaptive_simpson(
                    |s| {
                        let tc = self.transform_constants(eq, s);
                        (tc.g - T::one()).abs().powf(T::one() - cfg.alpha) / (tc.p * tc.g)
                    },
                    x2,
                    T::zero(),
                    T::lit(tol::QUAD_ABS),
                )?;
                quadratic + coef * tail
            }
        } else {
            consts.big_r
                * adaptive_simpson(
                    |s| {
                        let g = self.transform_constants(eq, s).g;
                        s.exp() * (s.exp() - T::one()) / (g * g)
                    },
                    T::zero(),
                    x2,
                    T::lit(tol::QUAD_ABS),
                )?
        };
        Ok(core + q)
    }

    /// `Q′(x2)`: derivative of the potential branch of [`Self::v2`].
    fn q_prime(
        &self,
        _eq: &LumpedEquilibrium<T>,
        cfg: &FeedbackConfig<T>,
        consts: &LyapunovConstants<T>,
        x2: T,
        tc: TransformConstants<T>,
    ) -> T {
        if x2 <= T::zero() {
            let coef = self.b / (T::lit(2.0) * self.d_star * cfg.delta);
            x2 - coef * (tc.g - T::one()).abs().powf(T::one() - cfg.alpha) / (tc.p * tc.g)
        } else {
            let e2 = x2.exp();
            consts.big_r * e2 * (e2 - T::one()) / (tc.g * tc.g)
        }
    }

    /// Closed-form derivative of [`Self::v2`] along the closed loop:
    ///
    /// ```text
    /// dV/dt = b(g−1)(e^x1 −1) − D*·g·(e^x1 −1)² + Q′·p·u − D*·Q′·g·e^(x1−x2)·(e^x2 −1)
    /// ```
    ///
    /// Strictly negative away from the origin once the constants certify.
    pub fn v2_dot(
        &self,
        eq: &LumpedEquilibrium<T>,
        cfg: &FeedbackConfig<T>,
        consts: &LyapunovConstants<T>,
        z: [T; 2],
    ) -> T {
        let [x1, x2] = z;
        let tc = self.transform_constants(eq, x2);
        let em1 = x1.exp() - T::one();
        let u = self.boost(cfg, x2, tc.g);
        let qp = self.q_prime(eq, cfg, consts, x2, tc);
        self.b * (tc.g - T::one()) * em1 - self.d_star * tc.g * em1 * em1 + qp * tc.p * u
            - self.d_star * qp * tc.g * (x1 - x2).exp() * (x2.exp() - T::one())
    }

    /// Linear stability of an equilibrium under constant dilution `D*`.
    ///
    /// The characteristic polynomial comes from the transformed dynamics in
    /// closed form,
    ///
    /// ```text
    /// s² + D*(1 + (κ+1)·g′(0))·s + D*(κ+1)·g′(0)·(b + D*),
    /// g′(0) = μ′(S*)·S*·κ / ((κ+1)·μ(S*)),
    /// ```
    ///
    /// and is cross-checked against a finite-difference Jacobian of the
    /// original vector field; `consistent` records the agreement.
    pub fn classify_equilibrium(&self, eq: &LumpedEquilibrium<T>) -> Result<StabilityReport<T>> {
        let g_prime0 = self.growth.mu_prime_raw(eq.s_star) * eq.s_star * eq.kappa
            / ((eq.kappa + T::one()) * eq.mu_star);
        let a1 = self.d_star * (T::one() + (eq.kappa + T::one()) * g_prime0);
        let a0 = self.d_star * (eq.kappa + T::one()) * g_prime0 * (self.b + self.d_star);
        let char_poly = vec![T::one(), a1, a0];
        let jac = analysis::numeric_jacobian(
            |st| self.rhs_open_raw(*st, self.d_star),
            &[eq.x_star, eq.s_star],
        );
        analysis::build_report(char_poly, &jac)
    }

    /// Guard closure for the open domain, shrunk by an absolute `margin` on
    /// each boundary.
    pub fn domain_guard(&self, margin: T) -> impl Fn(&[T; 2]) -> bool + '_ {
        move |st: &[T; 2]| {
            st[0] > margin && st[1] > margin && st[1] < self.s_in - margin
        }
    }

    /// Constructs the washout divergence run: initial data from which `x1`
    /// decays below `x1(0) − θ·t` for all time under *any* of the considered
    /// dilution laws (constant `D*` or the stabilizing feedback).
    ///
    /// When `s_bar` is not supplied, the non-increasing tail of the growth
    /// law is searched for the level maximizing the margin
    /// `min(b − p0·μ(S̄), p0·(μ(S̄) − μ(S_in)))`.
    ///
    /// # Errors
    ///
    /// [`Error::AssumptionFailed`] when the required ordering
    /// `p0·μ(S_in) < p0·μ(S̄) < b` fails, `μ` increases somewhere on
    /// `[S̄, S_in]`, or `b = 0`.
    pub fn divergence_scenario(
        &self,
        eq: &LumpedEquilibrium<T>,
        s_bar: Option<T>,
    ) -> Result<DivergenceScenario<T>> {
        if self.b <= T::zero() {
            return Err(Error::AssumptionFailed(
                "divergence scenario requires positive mortality b".into(),
            ));
        }
        let mu_sin = self.growth.mu_raw(self.s_in);
        let s_bar = match s_bar {
            Some(s) => {
                if !(s > eq.s_star && s < self.s_in) {
                    return Err(Error::InvalidParameter(format!(
                        "s_bar = {s} must lie in (S*, S_in) = ({}, {})",
                        eq.s_star, self.s_in
                    )));
                }
                s
            }
            None => self.search_s_bar(eq, mu_sin)?,
        };
        let mu_bar = self.growth.mu_raw(s_bar);
        if !(self.p0 * mu_sin < self.p0 * mu_bar) {
            return Err(Error::AssumptionFailed(format!(
                "p0·mu(S_in) = {} must lie strictly below p0·mu(S̄) = {}",
                self.p0 * mu_sin,
                self.p0 * mu_bar
            )));
        }
        if !(self.p0 * mu_bar < self.b) {
            return Err(Error::AssumptionFailed(format!(
                "p0·mu(S̄) = {} must lie strictly below the mortality rate b = {}",
                self.p0 * mu_bar,
                self.b
            )));
        }
        let (arg_up, max_slope) = scan_max(
            |s| self.growth.mu_prime_raw(s),
            s_bar,
            self.s_in,
            tol::EXTREMUM_SCAN_POINTS,
        );
        let slope_slack = self.growth.sup_and_lipschitz(self.s_in)?.lipschitz * T::eps().sqrt();
        if max_slope > slope_slack {
            return Err(Error::AssumptionFailed(format!(
                "growth law must be non-increasing on [S̄, S_in]; mu'({arg_up}) = {max_slope}"
            )));
        }

        let theta = self.b - self.p0 * mu_bar;
        let beta = (eq.kappa * s_bar / (self.s_in - s_bar)).ln();
        // Initial substrate coordinate: march from the midpoint of the tail
        // toward S_in until g drops strictly below g(beta).
        let g_beta = mu_bar / eq.mu_star;
        let mut s_x = (s_bar + self.s_in) * T::lit(0.5);
        let mut g_x = self.growth.mu_raw(s_x) / eq.mu_star;
        let mut tries = 0;
        while !(g_x < g_beta) {
            s_x = (s_x + self.s_in) * T::lit(0.5);
            g_x = self.growth.mu_raw(s_x) / eq.mu_star;
            tries += 1;
            if tries > 200 {
                return Err(Error::Numerical(
                    "could not find an initial substrate with growth strictly below g(beta)"
                        .into(),
                ));
            }
        }
        let xbar2 = (eq.kappa * s_x / (self.s_in - s_x)).ln();
        let (_, big_m) = scan_max(
            |s| self.growth.mu_prime_raw(s).abs(),
            s_bar,
            self.s_in,
            tol::EXTREMUM_SCAN_POINTS,
        );
        let big_g = T::one()
            + self.p0 * eq.kappa * self.s_in * big_m
                / ((self.d_star + self.b) * (eq.kappa + beta.exp()));
        // Deepest admissible x1(0): equality in
        //   θ + (b+D*)·g(xbar2) + (κ+1)·G·b·D*·e^{x1(0)}/θ = b.
        let headroom = self.b - theta - (self.b + self.d_star) * g_x;
        if !(headroom > T::zero()) {
            return Err(Error::Internal(format!(
                "initial-depth headroom must be positive by construction, got {headroom}"
            )));
        }
        let x1_0 =
            (theta * headroom / ((eq.kappa + T::one()) * big_g * self.b * self.d_star)).ln();
        Ok(DivergenceScenario { s_bar, theta, beta, xbar2, x1_0, big_g, big_m })
    }

    /// Searches `(S*, S_in)` for the washout substrate level: restricts to
    /// the non-increasing tail of μ, then maximizes the two-sided margin.
    fn search_s_bar(&self, eq: &LumpedEquilibrium<T>, mu_sin: T) -> Result<T> {
        // Left edge of the non-increasing tail: the last grid point where μ
        // still increases, refined by bisection on μ′ when it changes sign.
        let n = tol::EXTREMUM_SCAN_POINTS;
        let lo = eq.s_star;
        let hi = self.s_in;
        let dx = (hi - lo) / T::from_usize(n).unwrap();
        let mut tail_start = lo;
        for i in (0..n).rev() {
            let x = lo + dx * T::from_usize(i).unwrap();
            if self.growth.mu_prime_raw(x) > T::zero() {
                tail_start = bisect(|s| self.growth.mu_prime_raw(s), x, x + dx, T::lit(tol::ROOT_ABS))
                    .unwrap_or(x + dx);
                break;
            }
        }
        let margin = |s: T| {
            let mu = self.growth.mu_raw(s);
            (self.b - self.p0 * mu).min(self.p0 * (mu - mu_sin))
        };
        let pad = (hi - tail_start) * T::lit(1e-6);
        let (best, best_margin) = scan_max(margin, tail_start + pad, hi - pad, n);
        if !(best_margin > T::zero()) {
            return Err(Error::AssumptionFailed(format!(
                "no admissible washout level: need p0·mu(S̄) strictly between \
                 p0·mu(S_in) = {} and b = {} on the non-increasing tail",
                self.p0 * mu_sin,
                self.b
            )));
        }
        Ok(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn example_system() -> LumpedSystem<f64> {
        LumpedSystem::new(
            GrowthRateModel::haldane(3.5, 1.0, 1.0).unwrap(),
            16.0 / 3.0,
            0.9,
            0.1,
            1.0,
        )
        .unwrap()
    }

    fn upper_equilibrium(sys: &LumpedSystem<f64>) -> LumpedEquilibrium<f64> {
        // S* = 2: the larger substrate root of μ(S) = 1.
        sys.equilibria().unwrap()[1]
    }

    #[test]
    fn equilibria_ascending_with_reference_values() {
        let sys = example_system();
        let eqs = sys.equilibria().unwrap();
        assert_eq!(eqs.len(), 2);
        assert_abs_diff_eq!(eqs[0].s_star, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(eqs[0].x_star, 4.35, epsilon = 1e-9);
        assert_abs_diff_eq!(eqs[0].kappa, 29.0 / 3.0, epsilon = 1e-8);
        assert_abs_diff_eq!(eqs[1].s_star, 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(eqs[1].x_star, 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(eqs[1].kappa, 5.0 / 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(eqs[1].mu_star, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn open_loop_field_reference_point() {
        let sys = example_system();
        let [dx, ds] = sys.rhs_open([1.0, 1.0], 0.9).unwrap();
        assert_abs_diff_eq!(dx, 1.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ds, 0.9 * 13.0 / 3.0 - 3.5 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn domain_violations_are_named() {
        let sys = example_system();
        let err = sys.rhs_open([0.0, 1.0], 0.9).unwrap_err();
        assert!(err.to_string().contains("biomass"), "{err}");
        let err = sys.rhs_open([1.0, 6.0], 0.9).unwrap_err();
        assert!(err.to_string().contains("substrate"), "{err}");
        assert!(sys.rhs_open([1.0, 1.0], -0.1).is_err());
    }

    #[test]
    fn transform_reference_point() {
        let sys = example_system();
        let eq = upper_equilibrium(&sys);
        let [x1, x2] = sys.to_z(&eq, [1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(x1, (1.0f64 / 3.9).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(x2, (10.0f64 / 26.0).ln(), epsilon = 1e-12);
        // g at that substrate coordinate is μ(1)/μ(2) = 7/6.
        let tc = sys.transform_constants(&eq, x2);
        assert_abs_diff_eq!(tc.g, 7.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(tc.p, 16.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn transform_round_trips() {
        let sys = example_system();
        let eq = upper_equilibrium(&sys);
        for (x, s) in [(1.0, 1.0), (0.01, 5.0), (40.0, 0.2), (3.0, 2.0)] {
            let z = sys.to_z(&eq, [x, s]).unwrap();
            let back = sys.from_z(&eq, z);
            assert_abs_diff_eq!(back[0], x, epsilon = 1e-12 * x.max(1.0));
            assert_abs_diff_eq!(back[1], s, epsilon = 1e-12 * s.max(1.0));
        }
        // Equilibrium maps to the origin.
        let z = sys.to_z(&eq, [eq.x_star, eq.s_star]).unwrap();
        assert_abs_diff_eq!(z[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(z[1], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn feedback_reference_value() {
        let sys = example_system();
        let eq = upper_equilibrium(&sys);
        let cfg = FeedbackConfig::new(10.0, 0.5).unwrap();
        let d = sys.feedback(&eq, &cfg, [1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(d, 0.35 + (1.0f64 / 6.0).powf(1.5), epsilon = 1e-12);
        // Above S* the boost is off.
        let d_hi = sys.feedback(&eq, &cfg, [1.0, 3.0]).unwrap();
        assert_abs_diff_eq!(
            d_hi,
            0.9 * sys.growth.mu(3.0).unwrap() / 3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn closed_loop_substrate_rate_matches_invariant_form() {
        // dS/dt under feedback collapses to
        // μ(S)·X·(S*−S)/(S_in−S*) + δ·b·(S_in−S)·(|μ−μ*|/μ*)^(1+α)·[S<=S*].
        let sys = example_system();
        let eq = upper_equilibrium(&sys);
        let cfg = FeedbackConfig::new(10.0, 0.5).unwrap();
        for (x, s) in [(1.0, 1.0), (2.5, 1.9), (4.0, 3.0), (0.3, 0.4), (3.0, 2.0)] {
            let [_, ds] = sys.rhs_closed(&eq, &cfg, [x, s]).unwrap();
            let mu = sys.growth.mu(s).unwrap();
            let boost = if s <= eq.s_star {
                cfg.delta * sys.b * ((mu - eq.mu_star).abs() / eq.mu_star).powf(1.5)
            } else {
                0.0
            };
            let expect =
                mu * x * (eq.s_star - s) / (sys.s_in - eq.s_star) + boost * (sys.s_in - s);
            assert_abs_diff_eq!(ds, expect, epsilon = 1e-12 * expect.abs().max(1.0));
        }
    }

    /// The transformed fields must be the pushforward of the original ones:
    /// x1' = dX/X + dS/(S_in−S), x2' = dS·S_in/(S(S_in−S)).
    #[test]
    fn z_dynamics_are_the_pushforward_of_the_original_field() {
        let sys = example_system();
        let eq = upper_equilibrium(&sys);
        let cfg = FeedbackConfig::new(10.0, 0.5).unwrap();
        let mut rng_state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            // xorshift64*: plenty for test point scatter.
            rng_state ^= rng_state >> 12;
            rng_state ^= rng_state << 25;
            rng_state ^= rng_state >> 27;
            (rng_state.wrapping_mul(0x2545F4914F6CDD1D) >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..1000 {
            let z = [6.0 * next() - 3.0, 6.0 * next() - 3.0];
            let d = 2.0 * next();
            let [x, s] = sys.from_z(&eq, z);
            let push = |f: [f64; 2]| {
                [
                    f[0] / x + f[1] / (sys.s_in - s),
                    f[1] * sys.s_in / (s * (sys.s_in - s)),
                ]
            };
            let open_push = push(sys.rhs_open([x, s], d).unwrap());
            let open_z = sys.rhs_open_z(&eq, z, d);
            for i in 0..2 {
                let scale = open_z[i].abs().max(1.0);
                assert!(
                    (open_push[i] - open_z[i]).abs() <= 1e-12 * scale,
                    "open pushforward mismatch at z = {z:?}: {open_push:?} vs {open_z:?}"
                );
            }
            let closed_push = push(sys.rhs_closed(&eq, &cfg, [x, s]).unwrap());
            let closed_z = sys.rhs_closed_z(&eq, &cfg, z);
            for i in 0..2 {
                let scale = closed_z[i].abs().max(1.0);
                assert!(
                    (closed_push[i] - closed_z[i]).abs() <= 1e-11 * scale,
                    "closed pushforward mismatch at z = {z:?}"
                );
            }
        }
    }

    #[test]
    fn closed_loop_is_open_loop_under_the_transformed_feedback() {
        let sys = example_system();
        let eq = upper_equilibrium(&sys);
        let cfg = FeedbackConfig::new(10.0, 0.5).unwrap();
        for z in [[0.5, -1.0], [-2.0, 1.5], [1.0, 0.0], [-0.3, -0.2]] {
            let d = sys.feedback_z(&eq, &cfg, z);
            let via_open = sys.rhs_open_z(&eq, z, d);
            let closed = sys.rhs_closed_z(&eq, &cfg, z);
            assert_abs_diff_eq!(via_open[0], closed[0], epsilon = 1e-12);
            assert_abs_diff_eq!(via_open[1], closed[1], epsilon = 1e-12);
            // And the two feedback representations agree.
            let d_orig = sys.feedback(&eq, &cfg, sys.from_z(&eq, z)).unwrap();
            assert_abs_diff_eq!(d, d_orig, epsilon = 1e-12 * d.max(1.0));
        }
    }

    #[test]
    fn growth_margin_reference_value() {
        let sys = example_system();
        let eq = upper_equilibrium(&sys);
        let rep = sys.check_assumption_a(&eq);
        assert!(rep.holds);
        // Minimum of p0·μ − b on [2, 16/3] sits at the feed concentration.
        assert_abs_diff_eq!(rep.margin, 168.0 / 313.0 - 0.1, epsilon = 1e-9);
        assert_abs_diff_eq!(rep.arg_min, 16.0 / 3.0, epsilon = 1e-6);
    }

    #[test]
    fn lyapunov_constants_reference_values() {
        let sys = example_system();
        let eq = upper_equilibrium(&sys);
        let k = sys.lyapunov_constants(&eq).unwrap();
        assert_abs_diff_eq!(k.a, 7.0, epsilon = 1e-8);
        let r_expect = 145.0 / 1512.0;
        assert_abs_diff_eq!(k.r, r_expect, epsilon = 1e-9);
        let c_expect = -((1.0 - r_expect) / 2.0f64).ln();
        assert_abs_diff_eq!(k.c, c_expect, epsilon = 1e-9);
        let lower = 49.0 * 0.01 * c_expect.exp() / 0.81;
        assert_abs_diff_eq!(k.big_r_lower, lower, epsilon = 1e-8);
        assert_abs_diff_eq!(k.big_r, 2.0 * lower, epsilon = 1e-8);
    }

    #[test]
    fn zero_mortality_degenerates_gracefully() {
        let sys = LumpedSystem::new(
            GrowthRateModel::haldane(3.5, 1.0, 1.0).unwrap(),
            16.0 / 3.0,
            0.9,
            0.0,
            1.0,
        )
        .unwrap();
        let eq = sys.equilibria().unwrap()[1];
        let k = sys.lyapunov_constants(&eq).unwrap();
        assert_eq!(k.r, 0.0);
        assert_abs_diff_eq!(k.c, 2.0f64.ln(), epsilon = 1e-15);
        assert_eq!(k.big_r_lower, 0.0);
        assert_eq!(k.big_r, 1.0);
    }

    #[test]
    fn lyapunov_function_reference_points() {
        let sys = example_system();
        let eq = upper_equilibrium(&sys);
        let cfg = FeedbackConfig::new(10.0, 0.5).unwrap();
        let k = sys.lyapunov_constants(&eq).unwrap();
        // Q(0) = 0, so V(1, 0) = e − 2 and V vanishes only at the origin.
        let v = sys.v2(&eq, &cfg, &k, [1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(v, 1.0f64.exp() - 2.0, epsilon = 1e-12);
        assert_eq!(sys.v2(&eq, &cfg, &k, [0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(sys.v2_dot(&eq, &cfg, &k, [0.0, 0.0]), 0.0);
        for z in [[0.5, 0.7], [-1.0, -2.0], [2.0, -1.0], [-0.1, 3.0]] {
            assert!(sys.v2(&eq, &cfg, &k, z).unwrap() > 0.0, "V must be positive at {z:?}");
        }
    }

    #[test]
    fn analytic_decrease_rate_matches_directional_difference() {
        let sys = example_system();
        let eq = upper_equilibrium(&sys);
        let cfg = FeedbackConfig::new(10.0, 0.5).unwrap();
        let k = sys.lyapunov_constants(&eq).unwrap();
        let mut state = 0x153u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..1000 {
            let z = [4.0 * next() - 2.0, 4.0 * next() - 2.0];
            let f = sys.rhs_closed_z(&eq, &cfg, z);
            let speed = (f[0] * f[0] + f[1] * f[1]).sqrt();
            if speed < 1e-12 {
                continue;
            }
            let h = 1e-4 / speed.max(1.0);
            let zp = [z[0] + h * f[0], z[1] + h * f[1]];
            let zm = [z[0] - h * f[0], z[1] - h * f[1]];
            let fd = (sys.v2(&eq, &cfg, &k, zp).unwrap() - sys.v2(&eq, &cfg, &k, zm).unwrap())
                / (2.0 * h);
            let vd = sys.v2_dot(&eq, &cfg, &k, z);
            assert!(
                (fd - vd).abs() <= 1e-5 * vd.abs().max(1.0) + 1e-7,
                "dV/dt mismatch at {z:?}: analytic {vd}, difference {fd}"
            );
        }
    }

    #[test]
    fn stability_classification_of_both_equilibria() {
        let sys = example_system();
        let eqs = sys.equilibria().unwrap();
        // Smaller substrate equilibrium: stable.
        let low = sys.classify_equilibrium(&eqs[0]).unwrap();
        assert_eq!(low.verdict, analysis::RhVerdict::Stable);
        assert!(low.consistent);
        assert_abs_diff_eq!(low.char_poly[1], 162.0 / 35.0, epsilon = 1e-9);
        assert_abs_diff_eq!(low.char_poly[2], 261.0 / 70.0, epsilon = 1e-9);
        // Larger substrate equilibrium: a saddle.
        let high = sys.classify_equilibrium(&eqs[1]).unwrap();
        assert_eq!(high.verdict, analysis::RhVerdict::Unstable);
        assert!(high.consistent);
        assert_abs_diff_eq!(high.char_poly[1], 9.0 / 35.0, epsilon = 1e-10);
        assert_abs_diff_eq!(high.char_poly[2], -9.0 / 14.0, epsilon = 1e-10);
        assert_eq!(high.eig_signs.n_pos, 1);
        assert_eq!(high.eig_signs.n_neg, 1);
    }

    #[test]
    fn divergence_scenario_reference_values() {
        let sys = LumpedSystem::new(
            GrowthRateModel::haldane(3.5, 1.0, 1.0).unwrap(),
            16.0 / 3.0,
            0.2,
            0.8,
            1.0,
        )
        .unwrap();
        let eq = sys.equilibria().unwrap()[0];
        assert_abs_diff_eq!(eq.s_star, 0.5, epsilon = 1e-9);
        let sc = sys.divergence_scenario(&eq, Some(3.5)).unwrap();
        assert_abs_diff_eq!(sc.theta, 23.0 / 335.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sc.beta, (203.0f64 / 11.0).ln(), epsilon = 1e-10);
        assert_abs_diff_eq!(sc.big_m, 0.14034309, epsilon = 1e-6);
        assert_abs_diff_eq!(sc.big_g, 1.2572985, epsilon = 1e-5);
        assert_abs_diff_eq!(sc.xbar2, (1537.0f64 / 33.0).ln(), epsilon = 1e-10);
        assert_abs_diff_eq!(sc.x1_0, -5.639367, epsilon = 1e-4);
        assert!(sc.xbar2 > sc.beta);
        // The auto-search also lands on an admissible level.
        let auto = sys.divergence_scenario(&eq, None).unwrap();
        assert!(auto.theta > 0.0);
        assert!(sys.growth.mu(auto.s_bar).unwrap() < 0.8);
        assert!(sys.growth.mu(auto.s_bar).unwrap() > sys.growth.mu(sys.s_in).unwrap());
    }

    #[test]
    fn divergence_scenario_rejects_small_mortality() {
        let sys = example_system(); // b = 0.1 < p0·μ everywhere on the tail
        let eq = upper_equilibrium(&sys);
        assert!(sys.divergence_scenario(&eq, Some(3.5)).is_err());
        assert!(sys.divergence_scenario(&eq, None).is_err());
    }

    #[test]
    fn works_at_f32() {
        let sys = LumpedSystem::<f32>::new(
            GrowthRateModel::haldane(3.5, 1.0, 1.0).unwrap(),
            16.0 / 3.0,
            0.9,
            0.1,
            1.0,
        )
        .unwrap();
        let eqs = sys.equilibria().unwrap();
        assert_eq!(eqs.len(), 2);
        assert!((eqs[1].s_star - 2.0).abs() < 1e-4);
        let z = sys.to_z(&eqs[1], [1.0, 1.0]).unwrap();
        let back = sys.from_z(&eqs[1], z);
        assert!((back[0] - 1.0).abs() < 1e-4 && (back[1] - 1.0).abs() < 1e-4);
    }

    proptest! {
        /// from_z lands inside the open domain and to_z inverts it.
        #[test]
        fn transform_round_trip_property(
            x1 in -6.0f64..6.0,
            x2 in -6.0f64..6.0,
        ) {
            let sys = example_system();
            let eq = upper_equilibrium(&sys);
            let state = sys.from_z(&eq, [x1, x2]);
            prop_assert!(state[0] > 0.0 && state[1] > 0.0 && state[1] < sys.s_in);
            let z = sys.to_z(&eq, state).unwrap();
            prop_assert!((z[0] - x1).abs() <= 1e-12 * x1.abs().max(1.0));
            prop_assert!((z[1] - x2).abs() <= 1e-12 * x2.abs().max(1.0));
        }

        /// The feedback law stays strictly positive on the open domain.
        #[test]
        fn feedback_is_positive(
            x in 1e-6f64..100.0,
            s_frac in 1e-6f64..0.999_999,
            delta in 0.1f64..100.0,
            alpha in 0.0f64..0.99,
        ) {
            let sys = example_system();
            let eq = upper_equilibrium(&sys);
            let cfg = FeedbackConfig::new(delta, alpha).unwrap();
            let s = s_frac * sys.s_in;
            prop_assert!(sys.feedback(&eq, &cfg, [x, s]).unwrap() > 0.0);
        }
    }
}
