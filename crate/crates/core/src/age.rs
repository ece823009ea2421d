//! Three-state chemostat model obtained by collapsing an age-structured
//! population onto two weighted moments, plus its stabilizing feedback and
//! Lyapunov certificate.
//!
//! States `[X, Y, S]`: `X` is the substrate-consumption moment of the
//! population, `Y` the division-kernel moment feeding the renewal term,
//! `S` the substrate. With growth law `μ`, feed `S_in`, mortality `b`,
//! kernel slopes `p0`, `q0` and coupling `γ`:
//!
//! ```text
//! dX/dt = q0·μ(S)·Y − (b + D)·X
//! dY/dt = p0·μ(S)·Y + γ·X − (b + D)·Y
//! dS/dt = D·(S_in − S) − μ(S)·X
//! ```
//!
//! Interior equilibria under constant `D = D*` sit at growth level
//! `μ* = (b+D*)² / (p0(b+D*) + γ·q0)`, with
//!
//! ```text
//! X* = D*(S_in − S*)/μ*,   Y* = (b+D*)·X*/(q0·μ*),
//! λ  = γ·X* / (Y*·(b+D*))  ∈ [0, 1)      (so p0·μ* = (1−λ)(b+D*)).
//! ```
//!
//! The logarithmic change of variables
//!
//! ```text
//! x1 = ln(μ*·X/(D*(S_in−S))),  x2 = ln(X*·Y/(Y*·X)),  x3 = ln(S(S_in−S*)/(S*(S_in−S)))
//! ```
//!
//! maps the open domain onto all of `R³` and sends the design equilibrium
//! to the origin. Writing `p(x3) = κ·e^(−x3) + 1` (κ = (S_in−S*)/S*) and
//! `g(x3) = μ(S_in/p)/μ*`, the transformed open-loop dynamics are
//!
//! ```text
//! dx1/dt = (b+D*)·g·e^x2 − b − D*·g·e^x1
//! dx2/dt = (b+D*)·((1−λ)·g + λ·e^(−x2) − g·e^x2)
//! dx3/dt = p·(D − D*·g·e^x1)
//! ```
//!
//! (`x1` and `x2` evolve independently of the input). The stabilizing law
//! mirrors the two-state one, with a unit gain scale instead of the
//! mortality factor:
//!
//! ```text
//! D(X, S) = D*·μ(S)·X/(μ*·X*) + δ·(|μ(S)−μ*|/μ*)^(1+α)·[S ≤ S*]
//! ```
//!
//! Global convergence on the open domain is certified by
//!
//! ```text
//! V = e^x1 − x1 − 1 + B·(e^x2 − x2 − 1)/(b+D*) + Q(x3),
//! B = (1+λ)·φ·(b+D*)²/D*,   Ω = 2b² + λ·B²·D*²/(2(b+D*)²),
//! ```
//!
//! where `Q` has the same two branches as the two-state certificate with
//! coefficient `Ω/(2D*δ)` on the negative side and gain `R` on the
//! positive side, provided the margin condition ((C) below) holds for the
//! chosen multiplier `φ > 1`:
//!
//! ```text
//! (b − λ(b+D*)/2)·(μ*/μ(S) − 1) + (1+λ)·λ²·φ·(b+D*)²/(4D*)·(μ*/μ(S) − 1)²
//!     < D*·(1 − 1/(4φ(1+λ)))          for all S in [S*, S_in].
//! ```
//!
//! At `λ = 0` feasibility over φ reduces exactly to the two-state
//! growth-margin condition `p0·μ(S) > b` on `[S*, S_in]`.

use crate::kinetics::GrowthRateModel;
use crate::lumped::{FeedbackConfig, TransformConstants};
use crate::numeric::{adaptive_simpson, scan_max};
use crate::scalar::Real;
use crate::{analysis, tol, Error, Result};
use analysis::StabilityReport;

/// Three-state model parameters.
#[derive(Debug, Clone)]
pub struct AgeSystem<T: Real> {
    pub growth: GrowthRateModel<T>,
    pub s_in: T,
    pub d_star: T,
    pub b: T,
    pub p0: T,
    pub q0: T,
    pub gamma: T,
}

/// One interior equilibrium of the open loop under `D = D*`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgeEquilibrium<T> {
    pub x_star: T,
    pub y_star: T,
    pub s_star: T,
    /// `(S_in − S*)/S*`.
    pub kappa: T,
    /// Equilibrium growth level `μ(S*)`.
    pub mu_star: T,
    /// Coupling fraction `γ·X*/(Y*·(b+D*))`, in `[0, 1)`.
    pub lambda: T,
}

/// Margin report for the certificate condition (C) at a fixed multiplier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionCReport<T> {
    pub holds: bool,
    /// `rhs − sup lhs`; positive iff the condition holds.
    pub margin: T,
    pub sup_lhs: T,
    /// Substrate level achieving the supremum.
    pub arg_sup: T,
    /// The constant right-hand side `D*(1 − 1/(4φ(1+λ)))`.
    pub rhs: T,
}

/// Constants certifying the three-state closed loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovConstants3<T> {
    /// Coupling fraction of the equilibrium (copied for self-containment).
    pub lambda: T,
    /// The multiplier φ the constants were derived at.
    pub phi: T,
    /// Weight of the `x2` well: `(1+λ)·φ·(b+D*)²/D*`.
    pub big_b: T,
    /// Boost-branch scale: `2b² + λ·B²·D*²/(2(b+D*)²)`.
    pub omega: T,
    /// Interaction bound `L·p0·S*/(b+D*)`.
    pub a: T,
    /// Margin of condition (C) at φ.
    pub r: T,
    /// Offset `ln(((b + λ(b+D*)/2)·max|g−1|/g + 2D*)/r) + ln 2`.
    pub c: T,
    /// Any gain above this certifies; `big_r` doubles it.
    pub big_r_lower: T,
    pub big_r: T,
}

impl<T: Real> AgeSystem<T> {
    /// # Errors
    ///
    /// [`Error::InvalidParameter`] for non-positive `s_in`, `d_star`, `p0`
    /// or `q0`, or negative `b` or `gamma`.
    pub fn new(
        growth: GrowthRateModel<T>,
        s_in: T,
        d_star: T,
        b: T,
        p0: T,
        q0: T,
        gamma: T,
    ) -> Result<Self> {
        for (name, v, strict) in [
            ("s_in", s_in, true),
            ("d_star", d_star, true),
            ("b", b, false),
            ("p0", p0, true),
            ("q0", q0, true),
            ("gamma", gamma, false),
        ] {
            let ok = v.is_finite() && if strict { v > T::zero() } else { v >= T::zero() };
            if !ok {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {v} must be {}",
                    if strict { "positive" } else { "non-negative" }
                )));
            }
        }
        Ok(Self { growth, s_in, d_star, b, p0, q0, gamma })
    }

    /// Growth level every interior equilibrium must attain:
    /// `(b+D*)²/(p0(b+D*) + γ·q0)`.
    pub fn mu_star(&self) -> T {
        let bd = self.b + self.d_star;
        bd * bd / (self.p0 * bd + self.gamma * self.q0)
    }

    /// All interior equilibria under `D = D*`, ascending in `S*`.
    ///
    /// # Errors
    ///
    /// [`Error::InvalidParameter`] via the growth-law inversion.
    pub fn equilibria(&self) -> Result<Vec<AgeEquilibrium<T>>> {
        let target = self.mu_star();
        let cap = self.s_in * (T::one() - T::lit(1e-12));
        let bd = self.b + self.d_star;
        let roots = self.growth.invert_mu(target, T::zero(), self.s_in)?;
        Ok(roots
            .into_iter()
            .filter(|s| *s > T::zero() && *s < cap)
            .map(|s_star| {
                let x_star = self.d_star * (self.s_in - s_star) / target;
                let y_star = bd * x_star / (self.q0 * target);
                AgeEquilibrium {
                    x_star,
                    y_star,
                    s_star,
                    kappa: (self.s_in - s_star) / s_star,
                    mu_star: target,
                    lambda: self.gamma * x_star / (y_star * bd),
                }
            })
            .collect())
    }

    #[inline]
    pub(crate) fn rhs_open_raw(&self, state: [T; 3], d: T) -> [T; 3] {
        let [x, y, s] = state;
        let mu = self.growth.mu_raw(s);
        let bd = self.b + d;
        [
            self.q0 * mu * y - bd * x,
            self.p0 * mu * y + self.gamma * x - bd * y,
            d * (self.s_in - s) - mu * x,
        ]
    }

    fn check_state(&self, state: [T; 3]) -> Result<()> {
        let [x, y, s] = state;
        if !(x > T::zero() && x.is_finite()) {
            return Err(Error::OutsideDomain(format!(
                "consumption moment X = {x} must be positive"
            )));
        }
        if !(y > T::zero() && y.is_finite()) {
            return Err(Error::OutsideDomain(format!(
                "renewal moment Y = {y} must be positive"
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

    /// Open-loop vector field at `state = [X, Y, S]` under dilution `d`.
    ///
    /// # Errors
    ///
    /// [`Error::OutsideDomain`] off the open domain, or
    /// [`Error::InvalidParameter`] for negative dilution.
    pub fn rhs_open(&self, state: [T; 3], d: T) -> Result<[T; 3]> {
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
        eq: &AgeEquilibrium<T>,
        cfg: &FeedbackConfig<T>,
        state: [T; 3],
    ) -> T {
        let [x, _y, s] = state;
        let mu = self.growth.mu_raw(s);
        let base = self.d_star * mu * x / (eq.mu_star * eq.x_star);
        if s <= eq.s_star {
            let mismatch = (mu - eq.mu_star).abs() / eq.mu_star;
            base + cfg.delta * mismatch.powf(T::one() + cfg.alpha)
        } else {
            base
        }
    }

    /// The stabilizing dilution law `D(X, S)`; independent of `Y` and
    /// strictly positive on the open domain.
    ///
    /// # Errors
    ///
    /// [`Error::OutsideDomain`] off the open domain.
    pub fn feedback(
        &self,
        eq: &AgeEquilibrium<T>,
        cfg: &FeedbackConfig<T>,
        state: [T; 3],
    ) -> Result<T> {
        self.check_state(state)?;
        Ok(self.feedback_raw(eq, cfg, state))
    }

    #[inline]
    pub(crate) fn rhs_closed_raw(
        &self,
        eq: &AgeEquilibrium<T>,
        cfg: &FeedbackConfig<T>,
        state: [T; 3],
    ) -> [T; 3] {
        self.rhs_open_raw(state, self.feedback_raw(eq, cfg, state))
    }

    /// Closed-loop vector field under the stabilizing feedback.
    ///
    /// # Errors
    ///
    /// [`Error::OutsideDomain`] off the open domain.
    pub fn rhs_closed(
        &self,
        eq: &AgeEquilibrium<T>,
        cfg: &FeedbackConfig<T>,
        state: [T; 3],
    ) -> Result<[T; 3]> {
        self.check_state(state)?;
        Ok(self.rhs_closed_raw(eq, cfg, state))
    }

    /// Transform to equilibrium-centered logarithmic coordinates.
    ///
    /// # Errors
    ///
    /// [`Error::OutsideDomain`] off the open domain.
    pub fn to_z(&self, eq: &AgeEquilibrium<T>, state: [T; 3]) -> Result<[T; 3]> {
        self.check_state(state)?;
        let [x, y, s] = state;
        let x1 = (eq.mu_star * x / (self.d_star * (self.s_in - s))).ln();
        let x2 = (eq.x_star * y / (eq.y_star * x)).ln();
        let x3 = (s * (self.s_in - eq.s_star) / (eq.s_star * (self.s_in - s))).ln();
        Ok([x1, x2, x3])
    }

    /// Inverse transform; maps all of `R³` into the open domain. (At large
    /// `|x3|` the substrate saturates to the boundary in floating point.)
    pub fn from_z(&self, eq: &AgeEquilibrium<T>, z: [T; 3]) -> [T; 3] {
        let [x1, x2, x3] = z;
        let p = eq.kappa * (-x3).exp() + T::one();
        let s = self.s_in / p;
        let x = self.d_star * self.s_in * eq.kappa * (x1 - x3).exp() / (eq.mu_star * p);
        let y = x * eq.y_star / eq.x_star * x2.exp();
        [x, y, s]
    }

    /// `g(x3) = μ(S_in/p(x3))/μ*` and `p(x3) = κ·e^(−x3) + 1`.
    #[inline]
    pub fn transform_constants(&self, eq: &AgeEquilibrium<T>, x3: T) -> TransformConstants<T> {
        let p = eq.kappa * (-x3).exp() + T::one();
        let g = self.growth.mu_raw(self.s_in / p) / eq.mu_star;
        TransformConstants { g, p }
    }

    /// Transient boost of the feedback law in transformed coordinates:
    /// `u = δ·|g−1|^(1+α)` on `x3 <= 0`, zero above.
    #[inline]
    fn boost(&self, cfg: &FeedbackConfig<T>, x3: T, g: T) -> T {
        if x3 <= T::zero() {
            cfg.delta * (g - T::one()).abs().powf(T::one() + cfg.alpha)
        } else {
            T::zero()
        }
    }

    /// The feedback law evaluated in transformed coordinates.
    pub fn feedback_z(&self, eq: &AgeEquilibrium<T>, cfg: &FeedbackConfig<T>, z: [T; 3]) -> T {
        let [x1, _x2, x3] = z;
        let tc = self.transform_constants(eq, x3);
        self.d_star * tc.g * (eq.kappa + T::one()) * (x1 - x3).exp() / tc.p
            + self.boost(cfg, x3, tc.g)
    }

    /// Open-loop dynamics in transformed coordinates under dilution `d`.
    pub fn rhs_open_z(&self, eq: &AgeEquilibrium<T>, z: [T; 3], d: T) -> [T; 3] {
        let [x1, x2, x3] = z;
        let tc = self.transform_constants(eq, x3);
        let bd = self.b + self.d_star;
        [
            bd * tc.g * x2.exp() - self.b - self.d_star * tc.g * x1.exp(),
            bd * ((T::one() - eq.lambda) * tc.g + eq.lambda * (-x2).exp()
                - tc.g * x2.exp()),
            tc.p * (d - self.d_star * tc.g * x1.exp()),
        ]
    }

    /// Closed-loop dynamics in transformed coordinates.
    pub fn rhs_closed_z(&self, eq: &AgeEquilibrium<T>, cfg: &FeedbackConfig<T>, z: [T; 3]) -> [T; 3] {
        let [x1, x2, x3] = z;
        let tc = self.transform_constants(eq, x3);
        let bd = self.b + self.d_star;
        let u = self.boost(cfg, x3, tc.g);
        [
            bd * tc.g * x2.exp() - self.b - self.d_star * tc.g * x1.exp(),
            bd * ((T::one() - eq.lambda) * tc.g + eq.lambda * (-x2).exp()
                - tc.g * x2.exp()),
            self.d_star * tc.g * (x1 - x3).exp() * (T::one() - x3.exp()) + tc.p * u,
        ]
    }

    /// Evaluates the margin condition (C) at multiplier `phi`.
    ///
    /// # Errors
    ///
    /// [`Error::InvalidParameter`] unless `phi > 1`.
    pub fn check_assumption_c(
        &self,
        eq: &AgeEquilibrium<T>,
        phi: T,
    ) -> Result<AssumptionCReport<T>> {
        if !(phi > T::one() && phi.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "certificate multiplier phi = {phi} must exceed 1"
            )));
        }
        let bd = self.b + self.d_star;
        let lam = eq.lambda;
        let lin = self.b - lam * bd * T::lit(0.5);
        let quad = (T::one() + lam) * lam * lam * phi * bd * bd
            / (T::lit(4.0) * self.d_star);
        let (arg_sup, sup_lhs) = scan_max(
            |s| {
                let ratio = eq.mu_star / self.growth.mu_raw(s) - T::one();
                lin * ratio + quad * ratio * ratio
            },
            eq.s_star,
            self.s_in,
            tol::EXTREMUM_SCAN_POINTS,
        );
        let rhs = self.d_star
            * (T::one() - T::one() / (T::lit(4.0) * phi * (T::one() + lam)));
        let margin = rhs - sup_lhs;
        Ok(AssumptionCReport { holds: margin > T::zero(), margin, sup_lhs, arg_sup, rhs })
    }

    /// Searches a log-spaced multiplier grid on `(1, 1e9]` for the φ with
    /// the best (C)-margin; `None` when no sampled φ yields a positive one.
    pub fn find_phi(&self, eq: &AgeEquilibrium<T>) -> Option<T> {
        let n = 1024usize;
        let (lo, hi) = (T::lit(-6.0), T::lit(9.0));
        let denom = T::from_usize(n - 1).unwrap();
        let ten = T::lit(10.0);
        let mut best: Option<(T, T)> = None;
        for i in 0..n {
            let expo = lo + (hi - lo) * T::from_usize(i).unwrap() / denom;
            let phi = T::one() + ten.powf(expo);
            let Ok(rep) = self.check_assumption_c(eq, phi) else { continue };
            if !rep.margin.is_finite() {
                continue;
            }
            if best.map_or(true, |(_, m)| rep.margin > m) {
                best = Some((phi, rep.margin));
            }
        }
        best.and_then(|(phi, m)| (m > T::zero()).then_some(phi))
    }

    /// Derives the certificate constants at multiplier `phi`.
    ///
    /// With `b = 0` and `λ = 0` the boost-branch scale `Ω` vanishes; any
    /// positive gain certifies and `big_r = 1` is emitted.
    ///
    /// # Errors
    ///
    /// [`Error::AssumptionFailed`] when condition (C) fails at `phi`;
    /// [`Error::InvalidParameter`] for `phi <= 1`; [`Error::Numerical`] if
    /// the derived offset overflows.
    pub fn lyapunov_constants(
        &self,
        eq: &AgeEquilibrium<T>,
        phi: T,
    ) -> Result<LyapunovConstants3<T>> {
        let rep = self.check_assumption_c(eq, phi)?;
        if !rep.holds {
            return Err(Error::AssumptionFailed(format!(
                "margin condition fails at phi = {phi}: sup lhs {} vs rhs {} on [S*, S_in]",
                rep.sup_lhs, rep.rhs
            )));
        }
        let bd = self.b + self.d_star;
        let lam = eq.lambda;
        let big_b = (T::one() + lam) * phi * bd * bd / self.d_star;
        let omega = T::lit(2.0) * self.b * self.b
            + lam * big_b * big_b * self.d_star * self.d_star
                / (T::lit(2.0) * bd * bd);
        let sl = self.growth.sup_and_lipschitz(self.s_in)?;
        let a = sl.lipschitz * self.p0 * eq.s_star / bd;
        let r = rep.margin;
        let (_, max_ratio) = scan_max(
            |s| {
                let mu = self.growth.mu_raw(s);
                (mu - eq.mu_star).abs() / mu
            },
            eq.s_star,
            self.s_in,
            tol::EXTREMUM_SCAN_POINTS,
        );
        let c = (((self.b + lam * bd * T::lit(0.5)) * max_ratio + T::lit(2.0) * self.d_star)
            / r)
            .ln()
            + T::lit(2.0).ln();
        if !c.is_finite() {
            return Err(Error::Numerical(format!(
                "certificate offset c is non-finite (margin r = {r})"
            )));
        }
        let big_r_lower = a * a * omega * c.exp() / (self.d_star * self.d_star);
        let big_r = if big_r_lower == T::zero() { T::one() } else { big_r_lower + big_r_lower };
        Ok(LyapunovConstants3 {
            lambda: lam,
            phi,
            big_b,
            omega,
            a,
            r,
            c,
            big_r_lower,
            big_r,
        })
    }

    /// The Lyapunov function
    ///
    /// ```text
    /// V(z) = e^x1 − x1 − 1 + B·(e^x2 − x2 − 1)/(b+D*) + Q(x3),
    /// Q(x3) = x3²/2 + Ω/(2·D*·δ) · ∫_{x3}^0 |g(s)−1|^(1−α) / (p(s)·g(s)) ds   (x3 <= 0)
    /// Q(x3) = R · ∫_0^{x3} e^s (e^s − 1) / g(s)² ds                           (x3 > 0)
    /// ```
    ///
    /// # Errors
    ///
    /// [`Error::Numerical`] if the quadrature fails.
    pub fn v3(
        &self,
        eq: &AgeEquilibrium<T>,
        cfg: &FeedbackConfig<T>,
        consts: &LyapunovConstants3<T>,
        z: [T; 3],
    ) -> Result<T> {
        let [x1, x2, x3] = z;
        let bd = self.b + self.d_star;
        let core = x1.exp() - x1 - T::one()
            + consts.big_b * (x2.exp() - x2 - T::one()) / bd;
        let q = if x3 <= T::zero() {
            let quadratic = x3 * x3 * T::lit(0.5);
            if consts.omega == T::zero() {
                quadratic
            } else {
                let coef = consts.omega / (T::lit(2.0) * self.d_star * cfg.delta);
                let tail = adaptive_simpson(
                    |s| {
                        let tc = self.transform_constants(eq, s);
                        (tc.g - T::one()).abs().powf(T::one() - cfg.alpha) / (tc.p * tc.g)
                    },
                    x3,
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
                    x3,
                    T::lit(tol::QUAD_ABS),
                )?
        };
        Ok(core + q)
    }

    /// `Q′(x3)`: derivative of the potential branch of [`Self::v3`].
    fn q_prime(
        &self,
        cfg: &FeedbackConfig<T>,
        consts: &LyapunovConstants3<T>,
        x3: T,
        tc: TransformConstants<T>,
    ) -> T {
        if x3 <= T::zero() {
            let coef = consts.omega / (T::lit(2.0) * self.d_star * cfg.delta);
            x3 - coef * (tc.g - T::one()).abs().powf(T::one() - cfg.alpha) / (tc.p * tc.g)
        } else {
            let e3 = x3.exp();
            consts.big_r * e3 * (e3 - T::one()) / (tc.g * tc.g)
        }
    }

    /// Closed-form derivative of [`Self::v3`] along the closed loop:
    ///
    /// ```text
    /// dV/dt = (b+D*)·g·(e^x1 −1)(e^x2 −1) + b(g−1)(e^x1 −1) + B·λ(1−g)(e^x2 −1)
    ///         − B·(λe^(−x2) + g)(e^x2 −1)² − D*·g·(e^x1 −1)²
    ///         − D*·Q′·g·e^(x1−x3)·(e^x3 −1) + Q′·p·u
    /// ```
    ///
    /// Strictly negative away from the origin once the constants certify.
    pub fn v3_dot(
        &self,
        eq: &AgeEquilibrium<T>,
        cfg: &FeedbackConfig<T>,
        consts: &LyapunovConstants3<T>,
        z: [T; 3],
    ) -> T {
        let [x1, x2, x3] = z;
        let tc = self.transform_constants(eq, x3);
        let bd = self.b + self.d_star;
        let f1 = x1.exp() - T::one();
        let f2 = x2.exp() - T::one();
        let u = self.boost(cfg, x3, tc.g);
        let qp = self.q_prime(cfg, consts, x3, tc);
        bd * tc.g * f1 * f2
            + self.b * (tc.g - T::one()) * f1
            + consts.big_b * consts.lambda * (T::one() - tc.g) * f2
            - consts.big_b * (consts.lambda * (-x2).exp() + tc.g) * f2 * f2
            - self.d_star * tc.g * f1 * f1
            - self.d_star * qp * tc.g * (x1 - x3).exp() * (x3.exp() - T::one())
            + qp * tc.p * u
    }

    /// Linear stability of an equilibrium under constant dilution `D*`.
    ///
    /// The characteristic polynomial comes from the model in closed form:
    /// with `ζ = μ′(S*)·X*` and `w = γ·q0/(p0(b+D*) + γ·q0)`,
    ///
    /// ```text
    /// s³ + (b + w(b+D*) + 2D* + ζ)·s²
    ///    + (b+D*)(D* + (D*+ζ)·w + 2ζ)·s + (b+D*)²·ζ,
    /// ```
    ///
    /// cross-checked against a finite-difference Jacobian of the original
    /// vector field; `consistent` records the agreement.
    pub fn classify_equilibrium(&self, eq: &AgeEquilibrium<T>) -> Result<StabilityReport<T>> {
        let bd = self.b + self.d_star;
        let zeta = self.growth.mu_prime_raw(eq.s_star) * eq.x_star;
        let w = self.gamma * self.q0 / (self.p0 * bd + self.gamma * self.q0);
        let a2 = self.b + w * bd + T::lit(2.0) * self.d_star + zeta;
        let a1 = bd * (self.d_star + (self.d_star + zeta) * w + T::lit(2.0) * zeta);
        let a0 = bd * bd * zeta;
        let char_poly = vec![T::one(), a2, a1, a0];
        let jac = analysis::numeric_jacobian(
            |st| self.rhs_open_raw(*st, self.d_star),
            &[eq.x_star, eq.y_star, eq.s_star],
        );
        analysis::build_report(char_poly, &jac)
    }

    /// Guard closure for the open domain, shrunk by an absolute `margin`
    /// on each boundary.
    pub fn domain_guard(&self, margin: T) -> impl Fn(&[T; 3]) -> bool + '_ {
        move |st: &[T; 3]| {
            st[0] > margin && st[1] > margin && st[2] > margin && st[2] < self.s_in - margin
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::RhVerdict;
    use crate::lumped::LumpedSystem;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Reference parameter set: Haldane growth peaking at S = 1 with an
    /// interior design equilibrium at S* = 2 and λ = 0.2.
    fn example_system() -> AgeSystem<f64> {
        AgeSystem::new(
            GrowthRateModel::haldane(3.5, 1.0, 1.0).unwrap(),
            16.0 / 3.0,
            0.9,
            0.1,
            0.8,
            1.0,
            0.2,
        )
        .unwrap()
    }

    fn design_eq(sys: &AgeSystem<f64>) -> AgeEquilibrium<f64> {
        sys.equilibria()
            .unwrap()
            .into_iter()
            .find(|e| (e.s_star - 2.0).abs() < 1e-9)
            .expect("design equilibrium at S* = 2")
    }

    #[test]
    fn constructor_rejects_bad_parameters() {
        let g = || GrowthRateModel::haldane(3.5, 1.0, 1.0).unwrap();
        assert!(AgeSystem::new(g(), 0.0, 0.9, 0.1, 0.8, 1.0, 0.2).is_err());
        assert!(AgeSystem::new(g(), 5.0, -0.1, 0.1, 0.8, 1.0, 0.2).is_err());
        assert!(AgeSystem::new(g(), 5.0, 0.9, -0.1, 0.8, 1.0, 0.2).is_err());
        assert!(AgeSystem::new(g(), 5.0, 0.9, 0.1, 0.0, 1.0, 0.2).is_err());
        assert!(AgeSystem::new(g(), 5.0, 0.9, 0.1, 0.8, 0.0, 0.2).is_err());
        assert!(AgeSystem::new(g(), 5.0, 0.9, 0.1, 0.8, 1.0, -0.2).is_err());
        // γ = 0 is a valid (decoupled) configuration.
        assert!(AgeSystem::new(g(), 5.0, 0.9, 0.1, 0.8, 1.0, 0.0).is_ok());
    }

    #[test]
    fn equilibria_match_reference_values() {
        let sys = example_system();
        assert_abs_diff_eq!(sys.mu_star(), 1.0, epsilon = 1e-15);
        let eqs = sys.equilibria().unwrap();
        assert_eq!(eqs.len(), 2);
        // Ascending in S*: (4.35, 4.35, 0.5) then (3, 3, 2).
        assert_abs_diff_eq!(eqs[0].s_star, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(eqs[0].x_star, 4.35, epsilon = 1e-12);
        assert_abs_diff_eq!(eqs[0].y_star, 4.35, epsilon = 1e-12);
        assert_abs_diff_eq!(eqs[1].s_star, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eqs[1].x_star, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eqs[1].y_star, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eqs[1].kappa, 5.0 / 3.0, epsilon = 1e-12);
        for eq in &eqs {
            // λ from the state ratio and from the growth split must agree.
            assert_abs_diff_eq!(eq.lambda, 0.2, epsilon = 1e-12);
            let alt = 1.0 - sys.p0 * eq.mu_star / (sys.b + sys.d_star);
            assert_abs_diff_eq!(eq.lambda, alt, epsilon = 1e-12);
        }
    }

    #[test]
    fn open_loop_field_matches_hand_computation() {
        let sys = example_system();
        let mu1 = 3.5 / 3.0;
        let f = sys.rhs_open([1.0, 1.0, 1.0], 0.9).unwrap();
        assert_abs_diff_eq!(f[0], mu1 - 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f[1], 0.8 * mu1 + 0.2 - 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f[2], 0.9 * 13.0 / 3.0 - mu1, epsilon = 1e-15);
        // Equilibrium is a fixed point.
        let eq = design_eq(&sys);
        let f = sys.rhs_open([eq.x_star, eq.y_star, eq.s_star], 0.9).unwrap();
        for c in f {
            assert_abs_diff_eq!(c, 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn domain_violations_name_the_offending_state() {
        let sys = example_system();
        let err = sys.rhs_open([0.0, 1.0, 1.0], 0.9).unwrap_err();
        assert!(err.to_string().contains("consumption moment X"), "{err}");
        let err = sys.rhs_open([1.0, -2.0, 1.0], 0.9).unwrap_err();
        assert!(err.to_string().contains("renewal moment Y"), "{err}");
        let err = sys.rhs_open([1.0, 1.0, 6.0], 0.9).unwrap_err();
        assert!(err.to_string().contains("substrate S"), "{err}");
        assert!(sys.rhs_open([1.0, 1.0, 1.0], -0.5).is_err());
    }

    #[test]
    fn transform_round_trips_and_hits_reference_points() {
        let sys = example_system();
        let eq = design_eq(&sys);
        // (3, 6, 2) differs from the equilibrium only in Y, by a factor 2.
        let z = sys.to_z(&eq, [3.0, 6.0, 2.0]).unwrap();
        assert_abs_diff_eq!(z[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(z[1], 2f64.ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(z[2], 0.0, epsilon = 1e-14);
        // Equilibrium maps to the origin and back.
        let z = sys.to_z(&eq, [eq.x_star, eq.y_star, eq.s_star]).unwrap();
        for c in z {
            assert_abs_diff_eq!(c, 0.0, epsilon = 1e-14);
        }
        let st = sys.from_z(&eq, [0.0, 0.0, 0.0]);
        assert_abs_diff_eq!(st[0], eq.x_star, epsilon = 1e-13);
        assert_abs_diff_eq!(st[1], eq.y_star, epsilon = 1e-13);
        assert_abs_diff_eq!(st[2], eq.s_star, epsilon = 1e-13);
        // Round trip through a generic state.
        let state = [0.7, 2.9, 4.1];
        let back = sys.from_z(&eq, sys.to_z(&eq, state).unwrap());
        for (a, b) in back.iter().zip(state) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12 * b.abs());
        }
    }

    /// The transformed vector field must equal the pushforward of the
    /// original one under the coordinate map:
    ///
    /// dx1 = dX/X + dS/(S_in−S),  dx2 = dY/Y − dX/X,  dx3 = dS·S_in/(S(S_in−S)).
    #[test]
    fn z_dynamics_agree_with_the_pushforward_of_the_original_field() {
        let sys = example_system();
        let eq = design_eq(&sys);
        let fb = FeedbackConfig::new(10.0, 0.5).unwrap();
        let mut seed = 0x9e37_79b9_7f4a_7c15u64;
        let mut rnd = move || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..1000 {
            let st = [
                0.05 + 8.0 * rnd(),
                0.05 + 8.0 * rnd(),
                sys.s_in * (0.02 + 0.96 * rnd()),
            ];
            let [x, y, s] = st;
            let push = |f: [f64; 3]| {
                [
                    f[0] / x + f[2] / (sys.s_in - s),
                    f[1] / y - f[0] / x,
                    f[2] * sys.s_in / (s * (sys.s_in - s)),
                ]
            };
            let z = sys.to_z(&eq, st).unwrap();
            let d = 1.3 * rnd();

            let expect = push(sys.rhs_open(st, d).unwrap());
            let got = sys.rhs_open_z(&eq, z, d);
            for (g, e) in got.iter().zip(expect) {
                assert_abs_diff_eq!(*g, e, epsilon = 1e-12 * (1.0 + e.abs()));
            }

            let expect = push(sys.rhs_closed(&eq, &fb, st).unwrap());
            let got = sys.rhs_closed_z(&eq, &fb, z);
            for (g, e) in got.iter().zip(expect) {
                assert_abs_diff_eq!(*g, e, epsilon = 1e-11 * (1.0 + e.abs()));
            }
        }
    }

    #[test]
    fn feedback_matches_hand_computation_and_ignores_y() {
        let sys = example_system();
        let eq = design_eq(&sys);
        let fb = FeedbackConfig::new(1.0, 0.5).unwrap();
        let mu1 = 3.5 / 3.0;
        // S = 1 <= S*: boost active, with unit gain scale (no mortality factor).
        let want = 0.9 * mu1 * 1.0 / (1.0 * 3.0) + (mu1 - 1.0f64).powf(1.5);
        let d = sys.feedback(&eq, &fb, [1.0, 5.0, 1.0]).unwrap();
        assert_abs_diff_eq!(d, want, epsilon = 1e-14);
        // Y plays no role in the law.
        let d2 = sys.feedback(&eq, &fb, [1.0, 99.0, 1.0]).unwrap();
        assert_abs_diff_eq!(d, d2, epsilon = 0.0);
        // Above S* the boost is off.
        let d = sys.feedback(&eq, &fb, [1.0, 1.0, 3.0]).unwrap();
        assert_abs_diff_eq!(d, 0.9 * sys.growth.mu(3.0).unwrap() / 3.0, epsilon = 1e-14);
        // At the equilibrium the law returns D*.
        let d = sys.feedback(&eq, &fb, [eq.x_star, eq.y_star, eq.s_star]).unwrap();
        assert_abs_diff_eq!(d, 0.9, epsilon = 1e-14);
    }

    #[test]
    fn closed_loop_is_open_loop_under_the_feedback() {
        let sys = example_system();
        let eq = design_eq(&sys);
        let fb = FeedbackConfig::new(5.0, 0.25).unwrap();
        let st = [2.0, 1.5, 1.2];
        let d = sys.feedback(&eq, &fb, st).unwrap();
        let open = sys.rhs_open(st, d).unwrap();
        let closed = sys.rhs_closed(&eq, &fb, st).unwrap();
        assert_eq!(open, closed);
        // Same statement in transformed coordinates.
        let z = sys.to_z(&eq, st).unwrap();
        assert_abs_diff_eq!(sys.feedback_z(&eq, &fb, z), d, epsilon = 1e-13);
        let open_z = sys.rhs_open_z(&eq, z, d);
        let closed_z = sys.rhs_closed_z(&eq, &fb, z);
        for (a, b) in open_z.iter().zip(closed_z) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn margin_condition_matches_reference_numbers() {
        let sys = example_system();
        let eq = design_eq(&sys);
        let rep = sys.check_assumption_c(&eq, 1.1).unwrap();
        assert!(rep.holds);
        assert_abs_diff_eq!(rep.rhs, 0.7295454545454545, epsilon = 1e-12);
        assert!((rep.sup_lhs - 0.010925689720332582).abs() / 0.010925689720332582 < 1e-6);
        assert_abs_diff_eq!(rep.margin, 0.7186197648251219, epsilon = 1e-8);
        // The supremum sits at the far end of the interval here.
        assert_abs_diff_eq!(rep.arg_sup, sys.s_in, epsilon = 1e-6);
        assert!(sys.check_assumption_c(&eq, 1.0).is_err());
        assert!(sys.check_assumption_c(&eq, 0.5).is_err());
    }

    #[test]
    fn find_phi_succeeds_here_and_fails_under_heavy_mortality() {
        let sys = example_system();
        let eq = design_eq(&sys);
        let phi = sys.find_phi(&eq).expect("feasible multiplier");
        let rep = sys.check_assumption_c(&eq, phi).unwrap();
        assert!(rep.margin > 0.5, "margin {} at phi {phi}", rep.margin);

        // Mortality dominating the dilution: the linear term of the lhs
        // exceeds D* for every multiplier.
        let heavy = AgeSystem::new(
            GrowthRateModel::haldane(30.0, 1.0, 1.0).unwrap(),
            16.0 / 3.0,
            0.9,
            5.0,
            0.8,
            1.0,
            0.2,
        )
        .unwrap();
        let eqs = heavy.equilibria().unwrap();
        assert!(!eqs.is_empty());
        assert!(heavy.find_phi(&eqs[0]).is_none());
    }

    #[test]
    fn certificate_constants_match_reference_values() {
        let sys = example_system();
        let eq = design_eq(&sys);
        let k = sys.lyapunov_constants(&eq, 1.1).unwrap();
        assert_abs_diff_eq!(k.lambda, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(k.phi, 1.1, epsilon = 0.0);
        assert_abs_diff_eq!(k.big_b, 22.0 / 15.0, epsilon = 1e-12);
        assert_abs_diff_eq!(k.omega, 0.19424, epsilon = 1e-12);
        assert_abs_diff_eq!(k.a, 5.6, epsilon = 1e-10);
        assert_abs_diff_eq!(k.r, 0.7186197648251219, epsilon = 1e-8);
        assert_abs_diff_eq!(k.c, 1.7029322062028909, epsilon = 1e-7);
        assert_abs_diff_eq!(k.big_r_lower, 41.2860909300937, epsilon = 1e-5);
        assert_abs_diff_eq!(k.big_r, 82.5721818601874, epsilon = 1e-5);
    }

    #[test]
    fn certificate_constants_degenerate_cleanly_without_mortality_or_coupling() {
        // b = 0, γ = 0: Ω = 0, so the gain bound collapses and R = 1.
        let sys = AgeSystem::new(
            GrowthRateModel::haldane(3.5, 1.0, 1.0).unwrap(),
            16.0 / 3.0,
            0.9,
            0.0,
            0.8,
            1.0,
            0.0,
        )
        .unwrap();
        let eqs = sys.equilibria().unwrap();
        let eq = eqs.last().unwrap();
        assert_abs_diff_eq!(eq.lambda, 0.0, epsilon = 1e-15);
        let k = sys.lyapunov_constants(eq, 2.0).unwrap();
        assert_eq!(k.omega, 0.0);
        assert_eq!(k.big_r_lower, 0.0);
        assert_eq!(k.big_r, 1.0);
    }

    #[test]
    fn lyapunov_function_basics() {
        let sys = example_system();
        let eq = design_eq(&sys);
        let fb = FeedbackConfig::new(10.0, 0.5).unwrap();
        let k = sys.lyapunov_constants(&eq, 1.1).unwrap();
        assert_abs_diff_eq!(sys.v3(&eq, &fb, &k, [0.0; 3]).unwrap(), 0.0, epsilon = 1e-14);
        let want = core::f64::consts::E - 2.0;
        assert_abs_diff_eq!(sys.v3(&eq, &fb, &k, [1.0, 0.0, 0.0]).unwrap(), want, epsilon = 1e-12);
        assert_abs_diff_eq!(
            sys.v3(&eq, &fb, &k, [0.0, 1.0, 0.0]).unwrap(),
            k.big_b * want,
            epsilon = 1e-12
        );
        for z in [[0.5, -0.3, 0.8], [-1.0, 2.0, -1.5], [3.0, -2.0, 2.5], [-0.1, 0.1, -0.1]] {
            assert!(sys.v3(&eq, &fb, &k, z).unwrap() > 0.0, "V must be positive at {z:?}");
        }
        assert_abs_diff_eq!(sys.v3_dot(&eq, &fb, &k, [0.0; 3]), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn analytic_derivative_matches_finite_differences_along_the_flow() {
        let sys = example_system();
        let eq = design_eq(&sys);
        let fb = FeedbackConfig::new(10.0, 0.5).unwrap();
        let k = sys.lyapunov_constants(&eq, 1.1).unwrap();
        let mut state = 0x243f_6a88_85a3_08d3u64;
        let mut rnd = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..500 {
            let z = [4.0 * rnd() - 2.0, 4.0 * rnd() - 2.0, 4.0 * rnd() - 2.0];
            if z[2].abs() < 1e-3 {
                continue; // Q″ jumps at the branch point; FD is meaningless there.
            }
            let dz = sys.rhs_closed_z(&eq, &fb, z);
            let speed = dz.iter().fold(0.0f64, |m, c| m.max(c.abs()));
            let h = 1e-4 / speed.max(1.0);
            let at = |t: f64| {
                let w = [z[0] + t * dz[0], z[1] + t * dz[1], z[2] + t * dz[2]];
                sys.v3(&eq, &fb, &k, w).unwrap()
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            let an = sys.v3_dot(&eq, &fb, &k, z);
            assert_abs_diff_eq!(an, fd, epsilon = 1e-5 * (1.0 + an.abs()) + 1e-7);
        }
    }

    #[test]
    fn classification_matches_closed_form_coefficients() {
        let sys = example_system();
        let eqs = sys.equilibria().unwrap();

        // S* = 0.5: ζ = (6/7)·4.35, all Hurwitz tests positive.
        let rep = sys.classify_equilibrium(&eqs[0]).unwrap();
        assert_eq!(rep.verdict, RhVerdict::Stable);
        assert!(rep.consistent);
        assert_abs_diff_eq!(rep.char_poly[1], 204.0 / 35.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.char_poly[2], 3249.0 / 350.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.char_poly[3], 261.0 / 70.0, epsilon = 1e-12);
        assert_eq!(
            (rep.eig_signs.n_pos, rep.eig_signs.n_neg, rep.eig_signs.n_zero),
            (0, 3, 0)
        );

        // S* = 2: negative constant coefficient, saddle.
        let rep = sys.classify_equilibrium(&eqs[1]).unwrap();
        assert_eq!(rep.verdict, RhVerdict::Unstable);
        assert!(rep.consistent);
        assert_abs_diff_eq!(rep.char_poly[1], 51.0 / 35.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.char_poly[2], -117.0 / 350.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.char_poly[3], -9.0 / 14.0, epsilon = 1e-12);
        assert_eq!(
            (rep.eig_signs.n_pos, rep.eig_signs.n_neg, rep.eig_signs.n_zero),
            (1, 2, 0)
        );
    }

    #[test]
    fn closed_loop_linearization_has_the_expected_spectrum() {
        // Jacobian of the transformed closed loop at the origin. The boost
        // contributes nothing to first order (its slope vanishes at 0 for
        // α > 0), so a negligible gain keeps finite differences clean. The
        // spectrum is {−D*, −D*, −(1+λ)(b+D*)} = {−0.9, −0.9, −1.2}.
        let sys = example_system();
        let eq = design_eq(&sys);
        let fb = FeedbackConfig::new(1e-8, 0.5).unwrap();
        let jac = analysis::numeric_jacobian(
            |z| sys.rhs_closed_z(&eq, &fb, *z),
            &[0.0f64, 0.0, 0.0],
        );
        let tr = jac[0][0] + jac[1][1] + jac[2][2];
        let minors = (jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0])
            + (jac[0][0] * jac[2][2] - jac[0][2] * jac[2][0])
            + (jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1]);
        let det = jac[0][0] * (jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1])
            - jac[0][1] * (jac[1][0] * jac[2][2] - jac[1][2] * jac[2][0])
            + jac[0][2] * (jac[1][0] * jac[2][1] - jac[1][1] * jac[2][0]);
        // (s + 0.9)²(s + 1.2) = s³ + 3s² + 2.97s + 0.972.
        assert_abs_diff_eq!(tr, -3.0, epsilon = 1e-5);
        assert_abs_diff_eq!(minors, 2.97, epsilon = 1e-5);
        assert_abs_diff_eq!(det, -0.972, epsilon = 1e-5);
        let roots = analysis::cubic_roots(-tr, minors, -det);
        assert_abs_diff_eq!(roots[0].0, -1.2, epsilon = 1e-4);
        // The −0.9 pair is defective, so it splits like sqrt of the FD noise.
        assert_abs_diff_eq!(roots[1].0, -0.9, epsilon = 1e-2);
        assert_abs_diff_eq!(roots[2].0, -0.9, epsilon = 1e-2);
    }

    #[test]
    fn decoupled_model_reduces_to_the_two_state_margin_condition() {
        // With γ = 0 (so λ = 0), feasibility of the margin condition over
        // the multiplier equals the two-state growth margin p0·μ > b.
        let growth = || GrowthRateModel::haldane(3.5, 1.0, 1.0).unwrap();
        for (b, d_star, expect) in [(0.1, 0.9, true), (0.0, 0.9, true), (0.5, 0.2, false)] {
            let sys3 =
                AgeSystem::new(growth(), 16.0 / 3.0, d_star, b, 0.8, 1.0, 0.0).unwrap();
            let sys2 = LumpedSystem::new(growth(), 16.0 / 3.0, d_star, b, 0.8).unwrap();
            let eqs3 = sys3.equilibria().unwrap();
            let eqs2 = sys2.equilibria().unwrap();
            if eqs3.is_empty() {
                assert!(eqs2.is_empty());
                continue;
            }
            // Same growth target, hence the same equilibria.
            assert_abs_diff_eq!(sys3.mu_star(), sys2.mu_star(), epsilon = 1e-14);
            for (e3, e2) in eqs3.iter().zip(&eqs2) {
                assert_abs_diff_eq!(e3.s_star, e2.s_star, epsilon = 1e-12);
                assert_abs_diff_eq!(e3.lambda, 0.0, epsilon = 1e-15);
                let feasible = sys3.find_phi(e3).is_some();
                let margin_holds = sys2.check_assumption_a(e2).holds;
                assert_eq!(feasible, margin_holds, "b = {b}, S* = {}", e3.s_star);
                if e3.s_star > 1.9 {
                    assert_eq!(feasible, expect, "b = {b}");
                }
            }
        }
    }

    #[test]
    fn everything_runs_at_f32() {
        let sys = AgeSystem::<f32>::new(
            GrowthRateModel::haldane(3.5, 1.0, 1.0).unwrap(),
            16.0 / 3.0,
            0.9,
            0.1,
            0.8,
            1.0,
            0.2,
        )
        .unwrap();
        let eqs = sys.equilibria().unwrap();
        assert_eq!(eqs.len(), 2);
        let eq = eqs[1];
        assert!((eq.x_star - 3.0).abs() < 1e-4);
        let st = sys.from_z(&eq, sys.to_z(&eq, [1.0, 2.0, 1.5]).unwrap());
        assert!((st[0] - 1.0).abs() < 1e-4);
        assert!((st[1] - 2.0).abs() < 1e-4);
        assert!((st[2] - 1.5).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn transform_round_trip_is_tight(
            x in 1e-3f64..1e3,
            y in 1e-3f64..1e3,
            sf in 1e-6f64..0.999_999,
        ) {
            let sys = example_system();
            let eq = design_eq(&sys);
            let st = [x, y, sf * sys.s_in];
            let z = sys.to_z(&eq, st).unwrap();
            let back = sys.from_z(&eq, z);
            for (a, b) in back.iter().zip(st) {
                prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-300));
            }
        }

        #[test]
        fn from_z_lands_in_the_domain_and_feedback_stays_positive(
            z1 in -6.0f64..6.0,
            z2 in -6.0f64..6.0,
            z3 in -6.0f64..6.0,
            delta in 1e-3f64..1e3,
            alpha in 0.0f64..0.99,
        ) {
            let sys = example_system();
            let eq = design_eq(&sys);
            let fb = FeedbackConfig::new(delta, alpha).unwrap();
            let st = sys.from_z(&eq, [z1, z2, z3]);
            prop_assert!(st[0] > 0.0 && st[1] > 0.0);
            prop_assert!(st[2] > 0.0 && st[2] < sys.s_in);
            let d = sys.feedback(&eq, &fb, st).unwrap();
            prop_assert!(d > 0.0);
        }
    }
}
