//! Guarded adaptive integration and the model-specific simulation drivers.
//!
//! The integrator is an embedded Dormand–Prince 5(4) pair with proportional
//! step control. Two behaviors matter for these models and are built in
//! rather than bolted on:
//!
//! * **Domain guarding.** The chemostat fields are only meaningful on an
//!   open set (`X > 0`, `0 < S < S_in`). A trial step whose end state leaves
//!   the guarded set is rejected and the step halved; if the controller is
//!   driven below `1e-12` of the requested span the run terminates with a
//!   [`Termination::BoundaryHit`] report instead of stepping outside.
//! * **Dense output.** States and derivatives at accepted steps feed a cubic
//!   Hermite interpolant ([`Trajectory::sample`]), so diagnostics never need
//!   to re-run the integration.

use crate::age::{AgeEquilibrium, AgeSystem, LyapunovConstants3};
use crate::lumped::{FeedbackConfig, LumpedEquilibrium, LumpedSystem, LyapunovConstants};
use crate::scalar::Real;
use crate::{tol, Error, Result};

/// Tolerances and step bounds for [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig<T> {
    /// Relative tolerance per component; must lie in `(0, 1e-2]`.
    pub rel_tol: T,
    /// Absolute tolerance per component; must lie in `(0, 1e-2]`.
    pub abs_tol: T,
    /// Optional hard cap on the step size.
    pub max_step: Option<T>,
    /// Absolute margin by which the domain guards shrink the open domain;
    /// zero keeps the strict inequalities.
    pub domain_margin: T,
}

impl<T: Real> Default for IntegratorConfig<T> {
    fn default() -> Self {
        Self {
            rel_tol: T::lit(tol::DEFAULT_REL_TOL),
            abs_tol: T::lit(tol::DEFAULT_ABS_TOL),
            max_step: None,
            domain_margin: T::zero(),
        }
    }
}

impl<T: Real> IntegratorConfig<T> {
    /// # Errors
    ///
    /// [`Error::InvalidParameter`] when a tolerance leaves `(0, 1e-2]`, the
    /// step cap is not positive, or the margin is negative.
    pub fn validate(&self) -> Result<()> {
        let max_tol = T::lit(tol::MAX_IVP_TOL);
        for (name, v) in [("rel_tol", self.rel_tol), ("abs_tol", self.abs_tol)] {
            if !(v > T::zero() && v <= max_tol) {
                return Err(Error::InvalidParameter(format!(
                    "integrator {name} = {v} must lie in (0, {max_tol}]"
                )));
            }
        }
        if let Some(h) = self.max_step {
            if !(h > T::zero() && h.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "integrator max_step = {h} must be positive"
                )));
            }
        }
        if !(self.domain_margin >= T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "integrator domain_margin = {} must be non-negative",
                self.domain_margin
            )));
        }
        Ok(())
    }
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination<T> {
    /// Reached the requested final time.
    Completed,
    /// The step size underflowed against the domain guard; the flow is
    /// collapsing onto the domain boundary at time `t`.
    BoundaryHit { t: T },
    /// A caller-supplied stop condition fired at time `t`.
    Stopped { t: T },
}

/// An accepted-step record of one integration, with enough data for cubic
/// Hermite dense output. `inputs` carries the applied dilution and
/// `lyapunov` the certificate value when the driver recorded them.
#[derive(Debug, Clone)]
pub struct Trajectory<T, const N: usize> {
    pub times: Vec<T>,
    pub states: Vec<[T; N]>,
    pub derivs: Vec<[T; N]>,
    pub inputs: Option<Vec<T>>,
    pub lyapunov: Option<Vec<T>>,
    pub termination: Termination<T>,
}

impl<T: Real, const N: usize> Trajectory<T, N> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn end_time(&self) -> T {
        *self.times.last().expect("trajectory holds at least the initial state")
    }

    pub fn end_state(&self) -> [T; N] {
        *self.states.last().expect("trajectory holds at least the initial state")
    }

    /// Cubic Hermite interpolation between accepted steps; `None` outside
    /// the recorded time range.
    pub fn sample(&self, t: T) -> Option<[T; N]> {
        let (&t0, &t_end) = (self.times.first()?, self.times.last()?);
        if t < t0 || t > t_end {
            return None;
        }
        // Index of the segment [times[i], times[i+1]] containing t.
        let i = match self.times.binary_search_by(|probe| {
            probe.partial_cmp(&t).unwrap_or(core::cmp::Ordering::Less)
        }) {
            Ok(exact) => return Some(self.states[exact]),
            Err(at) => at.saturating_sub(1).min(self.times.len().saturating_sub(2)),
        };
        let (ta, tb) = (self.times[i], self.times[i + 1]);
        let h = tb - ta;
        if h <= T::zero() {
            return Some(self.states[i]);
        }
        let th = (t - ta) / h;
        let th2 = th * th;
        let th3 = th2 * th;
        let (h00, h10, h01, h11) = (
            T::lit(2.0) * th3 - T::lit(3.0) * th2 + T::one(),
            th3 - T::lit(2.0) * th2 + th,
            -T::lit(2.0) * th3 + T::lit(3.0) * th2,
            th3 - th2,
        );
        let mut out = [T::zero(); N];
        for c in 0..N {
            out[c] = h00 * self.states[i][c]
                + h10 * h * self.derivs[i][c]
                + h01 * self.states[i + 1][c]
                + h11 * h * self.derivs[i + 1][c];
        }
        Some(out)
    }
}

/// Integrates `dy/dt = rhs(t, y)` from `t0` to `t_final` inside the open set
/// accepted by `guard`.
///
/// # Errors
///
/// [`Error::OutsideDomain`] if the initial state fails the guard,
/// [`Error::InvalidParameter`] for a bad configuration or time span, and
/// [`Error::Numerical`] if the derivative is non-finite at the initial state
/// or the step budget is exhausted.
pub fn integrate<T: Real, const N: usize>(
    rhs: impl Fn(T, &[T; N]) -> [T; N],
    guard: impl Fn(&[T; N]) -> bool,
    t0: T,
    t_final: T,
    y0: [T; N],
    cfg: &IntegratorConfig<T>,
) -> Result<Trajectory<T, N>> {
    integrate_until(rhs, guard, t0, t_final, y0, cfg, |_, _| false)
}

/// [`integrate`] with a stop condition checked at every accepted step; when
/// it fires the run ends with [`Termination::Stopped`].
pub fn integrate_until<T: Real, const N: usize>(
    rhs: impl Fn(T, &[T; N]) -> [T; N],
    guard: impl Fn(&[T; N]) -> bool,
    t0: T,
    t_final: T,
    y0: [T; N],
    cfg: &IntegratorConfig<T>,
    mut stop: impl FnMut(T, &[T; N]) -> bool,
) -> Result<Trajectory<T, N>> {
    cfg.validate()?;
    if !(t_final > t0) {
        return Err(Error::InvalidParameter(format!(
            "integration span [{t0}, {t_final}] must be increasing"
        )));
    }
    if !guard(&y0) {
        return Err(Error::OutsideDomain(format!(
            "initial state {y0:?} fails the domain guard"
        )));
    }

    // Dormand–Prince 5(4) tableau.
    let a21 = T::lit(1.0 / 5.0);
    let (a31, a32) = (T::lit(3.0 / 40.0), T::lit(9.0 / 40.0));
    let (a41, a42, a43) = (T::lit(44.0 / 45.0), T::lit(-56.0 / 15.0), T::lit(32.0 / 9.0));
    let (a51, a52, a53, a54) = (
        T::lit(19372.0 / 6561.0),
        T::lit(-25360.0 / 2187.0),
        T::lit(64448.0 / 6561.0),
        T::lit(-212.0 / 729.0),
    );
    let (a61, a62, a63, a64, a65) = (
        T::lit(9017.0 / 3168.0),
        T::lit(-355.0 / 33.0),
        T::lit(46732.0 / 5247.0),
        T::lit(49.0 / 176.0),
        T::lit(-5103.0 / 18656.0),
    );
    // Fifth-order weights (also row seven of the tableau: FSAL).
    let (b1, b3, b4, b5, b6) = (
        T::lit(35.0 / 384.0),
        T::lit(500.0 / 1113.0),
        T::lit(125.0 / 192.0),
        T::lit(-2187.0 / 6784.0),
        T::lit(11.0 / 84.0),
    );
    // Difference to the embedded fourth-order weights.
    let (e1, e3, e4, e5, e6, e7) = (
        T::lit(35.0 / 384.0 - 5179.0 / 57600.0),
        T::lit(500.0 / 1113.0 - 7571.0 / 16695.0),
        T::lit(125.0 / 192.0 - 393.0 / 640.0),
        T::lit(-2187.0 / 6784.0 + 92097.0 / 339200.0),
        T::lit(11.0 / 84.0 - 187.0 / 2100.0),
        T::lit(-1.0 / 40.0),
    );
    let (c2, c3, c4, c5) = (
        T::lit(1.0 / 5.0),
        T::lit(3.0 / 10.0),
        T::lit(4.0 / 5.0),
        T::lit(8.0 / 9.0),
    );

    let span = t_final - t0;
    let h_min = span * T::lit(tol::STEP_UNDERFLOW_FRAC);
    let clamp_h = |h: T| match cfg.max_step {
        Some(cap) => h.min(cap),
        None => h,
    };
    let mut h = clamp_h(span * T::lit(1e-3));

    let mut t = t0;
    let mut y = y0;
    let mut k1 = rhs(t, &y);
    if k1.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "derivative non-finite at the initial state {y0:?}"
        )));
    }

    let mut times = vec![t0];
    let mut states = vec![y0];
    let mut derivs = vec![k1];
    let mut termination = Termination::Completed;

    if stop(t0, &y0) {
        return Ok(Trajectory {
            times,
            states,
            derivs,
            inputs: None,
            lyapunov: None,
            termination: Termination::Stopped { t: t0 },
        });
    }

    let combine = |y: &[T; N], h: T, terms: &[(T, &[T; N])]| {
        let mut out = *y;
        for c in 0..N {
            let mut acc = T::zero();
            for (w, k) in terms {
                acc = acc + *w * k[c];
            }
            out[c] = out[c] + h * acc;
        }
        out
    };

    let mut steps: u64 = 0;
    const MAX_STEPS: u64 = 50_000_000;
    while t < t_final {
        steps += 1;
        if steps > MAX_STEPS {
            return Err(Error::Numerical(format!(
                "step budget exhausted at t = {t} (span [{t0}, {t_final}])"
            )));
        }
        let h_eff = h.min(t_final - t);

        let y2 = combine(&y, h_eff, &[(a21, &k1)]);
        let k2 = rhs(t + c2 * h_eff, &y2);
        let y3 = combine(&y, h_eff, &[(a31, &k1), (a32, &k2)]);
        let k3 = rhs(t + c3 * h_eff, &y3);
        let y4 = combine(&y, h_eff, &[(a41, &k1), (a42, &k2), (a43, &k3)]);
        let k4 = rhs(t + c4 * h_eff, &y4);
        let y5 = combine(&y, h_eff, &[(a51, &k1), (a52, &k2), (a53, &k3), (a54, &k4)]);
        let k5 = rhs(t + c5 * h_eff, &y5);
        let y6 = combine(
            &y,
            h_eff,
            &[(a61, &k1), (a62, &k2), (a63, &k3), (a64, &k4), (a65, &k5)],
        );
        let k6 = rhs(t + h_eff, &y6);
        let y_new = combine(
            &y,
            h_eff,
            &[(b1, &k1), (b3, &k3), (b4, &k4), (b5, &k5), (b6, &k6)],
        );
        let t_new = t + h_eff;
        let k7 = rhs(t_new, &y_new);

        let finite = y_new.iter().all(|v| v.is_finite()) && k7.iter().all(|v| v.is_finite());
        if !finite || !guard(&y_new) {
            // Trial state escaped (or blew up): halve and retry.
            h = h_eff * T::lit(0.5);
            if h < h_min {
                termination = Termination::BoundaryHit { t };
                break;
            }
            continue;
        }

        // Weighted RMS of the embedded error estimate.
        let mut err_sq = T::zero();
        for c in 0..N {
            let e = h_eff
                * (e1 * k1[c] + e3 * k3[c] + e4 * k4[c] + e5 * k5[c] + e6 * k6[c] + e7 * k7[c]);
            let scale = cfg.abs_tol + cfg.rel_tol * y[c].abs().max(y_new[c].abs());
            let ratio = e / scale;
            err_sq = err_sq + ratio * ratio;
        }
        let err = (err_sq / T::from_usize(N).unwrap()).sqrt();

        if err.is_finite() && err <= T::one() {
            t = t_new;
            y = y_new;
            k1 = k7;
            times.push(t);
            states.push(y);
            derivs.push(k1);
            if stop(t, &y) {
                termination = Termination::Stopped { t };
                break;
            }
            let factor = if err == T::zero() {
                T::lit(5.0)
            } else {
                (T::lit(0.9) * err.powf(T::lit(-0.2))).min(T::lit(5.0)).max(T::lit(0.2))
            };
            h = clamp_h(h_eff * factor);
        } else {
            let factor = if err.is_finite() {
                (T::lit(0.9) * err.powf(T::lit(-0.2))).min(T::lit(0.9)).max(T::lit(0.2))
            } else {
                T::lit(0.5)
            };
            h = h_eff * factor;
        }
        if h < h_min {
            termination = Termination::BoundaryHit { t };
            break;
        }
    }

    Ok(Trajectory { times, states, derivs, inputs: None, lyapunov: None, termination })
}

/// Open-loop lumped run under constant dilution `d`.
///
/// # Errors
///
/// Everything [`integrate`] reports, plus [`Error::InvalidParameter`] for a
/// negative dilution.
pub fn simulate_open2<T: Real>(
    sys: &LumpedSystem<T>,
    d: T,
    init: [T; 2],
    t_final: T,
    icfg: &IntegratorConfig<T>,
) -> Result<Trajectory<T, 2>> {
    if !(d >= T::zero() && d.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "dilution rate D = {d} must be finite and non-negative"
        )));
    }
    let guard = sys.domain_guard(icfg.domain_margin);
    let mut traj = integrate(
        |_t, y: &[T; 2]| sys.rhs_open_raw(*y, d),
        guard,
        T::zero(),
        t_final,
        init,
        icfg,
    )?;
    traj.inputs = Some(vec![d; traj.len()]);
    Ok(traj)
}

/// Closed-loop lumped run under the stabilizing feedback, recording the
/// applied dilution at every accepted step and, when certificate constants
/// are supplied, the Lyapunov value as well.
///
/// # Errors
///
/// Everything [`integrate`] reports; [`Error::Internal`] if the recorded
/// dilution ever fails to be positive (the law guarantees it, so this is a
/// bug trap, not a reachable user error).
pub fn simulate_closed2<T: Real>(
    sys: &LumpedSystem<T>,
    eq: &LumpedEquilibrium<T>,
    cfg: &FeedbackConfig<T>,
    init: [T; 2],
    t_final: T,
    icfg: &IntegratorConfig<T>,
    consts: Option<&LyapunovConstants<T>>,
) -> Result<Trajectory<T, 2>> {
    let guard = sys.domain_guard(icfg.domain_margin);
    let mut traj = integrate(
        |_t, y: &[T; 2]| sys.rhs_closed_raw(eq, cfg, *y),
        guard,
        T::zero(),
        t_final,
        init,
        icfg,
    )?;
    let mut inputs = Vec::with_capacity(traj.len());
    for st in &traj.states {
        let d = sys.feedback_raw(eq, cfg, *st);
        if !(d > T::zero()) {
            return Err(Error::Internal(format!(
                "feedback produced non-positive dilution {d} at state {st:?}"
            )));
        }
        inputs.push(d);
    }
    traj.inputs = Some(inputs);
    if let Some(k) = consts {
        let mut vs = Vec::with_capacity(traj.len());
        for st in &traj.states {
            vs.push(sys.v2(eq, cfg, k, sys.to_z(eq, *st)?)?);
        }
        traj.lyapunov = Some(vs);
    }
    Ok(traj)
}

/// Open-loop lumped run in transformed coordinates (constant dilution `d`);
/// the transformed plane needs no domain guard.
pub fn simulate_open_z2<T: Real>(
    sys: &LumpedSystem<T>,
    eq: &LumpedEquilibrium<T>,
    d: T,
    z0: [T; 2],
    t_final: T,
    icfg: &IntegratorConfig<T>,
) -> Result<Trajectory<T, 2>> {
    if !(d >= T::zero() && d.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "dilution rate D = {d} must be finite and non-negative"
        )));
    }
    let mut traj = integrate(
        |_t, z: &[T; 2]| sys.rhs_open_z(eq, *z, d),
        |_z: &[T; 2]| true,
        T::zero(),
        t_final,
        z0,
        icfg,
    )?;
    traj.inputs = Some(vec![d; traj.len()]);
    Ok(traj)
}

/// Closed-loop lumped run in transformed coordinates.
pub fn simulate_closed_z2<T: Real>(
    sys: &LumpedSystem<T>,
    eq: &LumpedEquilibrium<T>,
    cfg: &FeedbackConfig<T>,
    z0: [T; 2],
    t_final: T,
    icfg: &IntegratorConfig<T>,
    consts: Option<&LyapunovConstants<T>>,
) -> Result<Trajectory<T, 2>> {
    let mut traj = integrate(
        |_t, z: &[T; 2]| sys.rhs_closed_z(eq, cfg, *z),
        |_z: &[T; 2]| true,
        T::zero(),
        t_final,
        z0,
        icfg,
    )?;
    traj.inputs = Some(traj.states.iter().map(|z| sys.feedback_z(eq, cfg, *z)).collect());
    if let Some(k) = consts {
        let mut vs = Vec::with_capacity(traj.len());
        for z in &traj.states {
            vs.push(sys.v2(eq, cfg, k, *z)?);
        }
        traj.lyapunov = Some(vs);
    }
    Ok(traj)
}

/// Open-loop three-state run under constant dilution `d`.
pub fn simulate_open3<T: Real>(
    sys: &AgeSystem<T>,
    d: T,
    init: [T; 3],
    t_final: T,
    icfg: &IntegratorConfig<T>,
) -> Result<Trajectory<T, 3>> {
    if !(d >= T::zero() && d.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "dilution rate D = {d} must be finite and non-negative"
        )));
    }
    let guard = sys.domain_guard(icfg.domain_margin);
    let mut traj = integrate(
        |_t, y: &[T; 3]| sys.rhs_open_raw(*y, d),
        guard,
        T::zero(),
        t_final,
        init,
        icfg,
    )?;
    traj.inputs = Some(vec![d; traj.len()]);
    Ok(traj)
}

/// Closed-loop three-state run under the stabilizing feedback.
///
/// # Errors
///
/// As [`simulate_closed2`].
pub fn simulate_closed3<T: Real>(
    sys: &AgeSystem<T>,
    eq: &AgeEquilibrium<T>,
    cfg: &FeedbackConfig<T>,
    init: [T; 3],
    t_final: T,
    icfg: &IntegratorConfig<T>,
    consts: Option<&LyapunovConstants3<T>>,
) -> Result<Trajectory<T, 3>> {
    let guard = sys.domain_guard(icfg.domain_margin);
    let mut traj = integrate(
        |_t, y: &[T; 3]| sys.rhs_closed_raw(eq, cfg, *y),
        guard,
        T::zero(),
        t_final,
        init,
        icfg,
    )?;
    let mut inputs = Vec::with_capacity(traj.len());
    for st in &traj.states {
        let d = sys.feedback_raw(eq, cfg, *st);
        if !(d > T::zero()) {
            return Err(Error::Internal(format!(
                "feedback produced non-positive dilution {d} at state {st:?}"
            )));
        }
        inputs.push(d);
    }
    traj.inputs = Some(inputs);
    if let Some(k) = consts {
        let mut vs = Vec::with_capacity(traj.len());
        for st in &traj.states {
            vs.push(sys.v3(eq, cfg, k, sys.to_z(eq, *st)?)?);
        }
        traj.lyapunov = Some(vs);
    }
    Ok(traj)
}

/// Convergence diagnosis of a finished run against a target state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceMetrics<T> {
    /// Final recorded state within `tol_inf` of the target.
    pub converged: bool,
    /// Earliest time after which the recorded trajectory stays within
    /// `tol_inf` (refined on the dense output), when it converged.
    pub settle_time: Option<T>,
    /// Infinity-norm error of the final state.
    pub final_error: T,
}

/// Measures when `traj` enters — and stays inside — the `tol_inf` ball
/// around `target`.
pub fn convergence_metrics<T: Real, const N: usize>(
    traj: &Trajectory<T, N>,
    target: &[T; N],
    tol_inf: T,
) -> ConvergenceMetrics<T> {
    let err_of = |st: &[T; N]| {
        let mut m = T::zero();
        for c in 0..N {
            m = m.max((st[c] - target[c]).abs());
        }
        m
    };
    let final_error = err_of(&traj.end_state());
    if !(final_error <= tol_inf) {
        return ConvergenceMetrics { converged: false, settle_time: None, final_error };
    }
    // Last recorded excursion outside the ball.
    let mut last_out: Option<usize> = None;
    for (i, st) in traj.states.iter().enumerate() {
        if err_of(st) > tol_inf {
            last_out = Some(i);
        }
    }
    let settle = match last_out {
        None => traj.times[0],
        Some(i) if i + 1 >= traj.len() => traj.end_time(),
        Some(i) => {
            // Bisect the crossing on the dense output.
            let (mut lo, mut hi) = (traj.times[i], traj.times[i + 1]);
            for _ in 0..80 {
                let mid = lo + (hi - lo) * T::lit(0.5);
                if mid <= lo || mid >= hi {
                    break;
                }
                let inside = traj.sample(mid).map(|st| err_of(&st) <= tol_inf).unwrap_or(true);
                if inside {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            hi
        }
    };
    ConvergenceMetrics { converged: true, settle_time: Some(settle), final_error }
}

/// Washout test: biomass below `1e-6` of the reference equilibrium biomass
/// while the substrate has relaxed to within `0.1%` of the feed. The state
/// layout is `[X, .., S]` for both model sizes.
pub fn washout_reached<T: Real, const N: usize>(state: &[T; N], x_ref: T, s_in: T) -> bool {
    state[0] < T::lit(tol::WASHOUT_X_FRAC) * x_ref
        && (state[N - 1] - s_in).abs() < T::lit(tol::WASHOUT_S_FRAC) * s_in
}
