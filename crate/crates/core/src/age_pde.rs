//! Age-structured population PDE and its exact moment reduction.
//!
//! The density `f(t, a)` of cells over age `a` obeys a transport equation
//! with age-dependent mortality `β(a)` and dilution `D`:
//!
//! ```text
//! ∂f/∂t + ∂f/∂a = −(β(a) + D)·f,
//! f(t, 0) = μ(S(t))·Y(t)                    (renewal)
//! dS/dt   = D·(S_in − S) − μ(S(t))·X(t),
//! ```
//!
//! where the moments are taken against weights solving
//!
//! ```text
//! q′ = (β − b)·q,           q(0) = q0   ⇒  q(a) = q0·e^{∫₀ᵃ(β−b)}
//! k′ = (β − b)·k + γ·q,     k(0) = p0   ⇒  k(a) = e^{∫₀ᵃ(β−b)}·(p0 + γ·q0·a)
//! X  = ∫ q·f da,   Y = ∫ k·f da.
//! ```
//!
//! With these weights the moments of *any* solution satisfy the three-state
//! model of [`crate::age`] exactly — the reduction is not an approximation,
//! which is what the discrete convergence study checks: as the grid is
//! refined, PDE moments converge (first order, matching the upwind/Euler
//! scheme) to the ODE trajectory.
//!
//! Discretization: first-order upwind in age with the removal sink applied
//! to the *transported* value — equivalently, the sink is evaluated at the
//! foot of the characteristic:
//!
//! ```text
//! f_i ← (1 − dt·(β_foot + D)) · ((1−c)·f_i + c·f_{i−1}),   c = dt/da.
//! ```
//!
//! Evaluating the sink at node `i` instead admits a growing sawtooth mode
//! for Courant numbers near 1 (amplification |−1 − dt(β+D)| > 1), while the
//! multiplicative form is von-Neumann stable for every `c <= 1`; at
//! `c = 1/2` it also turns into the midpoint rule along the steady profile,
//! so the scheme's equilibrium offset is O(da²) even though transients
//! converge at first order. Renewal and substrate are fed by
//! same-time-level moments (explicit coupling), moments use trapezoid
//! quadrature, and steps must respect both `dt <= da` and
//! `dt·(β_max + D) <= 1`. The age axis is truncated where the
//! survival-weighted renewal mass `(p0 + γ·q0·a)·e^{−(b+D_ref)·a}` has
//! decayed below `1e-8` of its peak (the `∫β` factors of weight and
//! survival cancel exactly, so `β` never enters the truncation rule).

use crate::age::{AgeEquilibrium, AgeSystem};
use crate::kinetics::GrowthRateModel;
use crate::lumped::FeedbackConfig;
use crate::numeric::{bisect, trapezoid_uniform};
use crate::scalar::Real;
use crate::{tol, Error, Result};

/// Uniform age grid: `n_cells` intervals of width `da`, nodes
/// `0, da, …, a_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeGrid<T> {
    pub a_max: T,
    pub n_cells: usize,
    pub da: T,
}

impl<T: Real> AgeGrid<T> {
    /// # Errors
    ///
    /// [`Error::InvalidParameter`] for a non-positive span or fewer than 16
    /// cells (too coarse for the moment quadrature to mean anything).
    pub fn new(a_max: T, n_cells: usize) -> Result<Self> {
        if !(a_max > T::zero() && a_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "age span a_max = {a_max} must be positive"
            )));
        }
        if n_cells < tol::PDE_MIN_CELLS {
            return Err(Error::InvalidParameter(format!(
                "age grid needs at least {} cells, got {n_cells}",
                tol::PDE_MIN_CELLS
            )));
        }
        Ok(Self { a_max, n_cells, da: a_max / T::from_usize(n_cells).unwrap() })
    }

    /// Picks `a_max` from the decay of the renewal-mass weight
    /// `w(a) = (p0 + γ·q0·a)·e^{−(b+d_ref)·a}`, truncating where `w` falls
    /// below `1e-8` of its maximum.
    ///
    /// # Errors
    ///
    /// [`Error::InvalidParameter`] when the weight does not decay
    /// (`b + d_ref <= 0`) or parameters are out of range.
    pub fn from_decay(
        b: T,
        p0: T,
        q0: T,
        gamma: T,
        d_ref: T,
        n_cells: usize,
    ) -> Result<Self> {
        for (name, v, strict) in
            [("p0", p0, true), ("q0", q0, true), ("gamma", gamma, false), ("b", b, false)]
        {
            let ok = v.is_finite() && if strict { v > T::zero() } else { v >= T::zero() };
            if !ok {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {v} must be {}",
                    if strict { "positive" } else { "non-negative" }
                )));
            }
        }
        let decay = b + d_ref;
        if !(decay > T::zero() && decay.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "renewal weight needs b + d_ref > 0 to decay, got {decay}"
            )));
        }
        let w = |a: T| (p0 + gamma * q0 * a) * (-decay * a).exp();
        // The weight peaks at 1/(b+d_ref) − p0/(γ·q0), clamped to zero.
        let a_peak = if gamma * q0 == T::zero() {
            T::zero()
        } else {
            (T::one() / decay - p0 / (gamma * q0)).max(T::zero())
        };
        let w_max = w(a_peak);
        let cut = w_max * T::lit(tol::PDE_TRUNCATION_FRAC);
        // w is monotone decreasing beyond the peak: bracket then bisect.
        let mut hi = a_peak + T::one() / decay;
        let mut tries = 0;
        while w(hi) > cut {
            hi = hi + hi;
            tries += 1;
            if tries > 200 {
                return Err(Error::Numerical(
                    "renewal weight decays too slowly to truncate".into(),
                ));
            }
        }
        let a_max = bisect(|a| w(a) - cut, a_peak, hi, T::lit(tol::ROOT_ABS))?;
        Self::new(a_max, n_cells)
    }

    /// Node ages `0, da, …, a_max`.
    pub fn ages(&self) -> Vec<T> {
        (0..=self.n_cells).map(|i| self.da * T::from_usize(i).unwrap()).collect()
    }
}

/// Mortality profile sampled on a grid, together with the moment weights
/// that make the three-state reduction exact.
#[derive(Debug, Clone, PartialEq)]
pub struct MortalityKernel<T> {
    pub b: T,
    pub p0: T,
    pub q0: T,
    pub gamma: T,
    /// `β(a)` at the grid nodes.
    pub beta: Vec<T>,
    /// `q(a) = q0·e^{∫(β−b)}` at the nodes.
    pub q_weights: Vec<T>,
    /// `k(a) = e^{∫(β−b)}·(p0 + γ·q0·a)` at the nodes.
    pub k_weights: Vec<T>,
}

/// Cumulative trapezoid integral of node values, starting at zero.
fn cumtrapz<T: Real>(values: &[T], dx: T) -> Vec<T> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = T::zero();
    out.push(acc);
    for w in values.windows(2) {
        acc = acc + (w[0] + w[1]) * dx * T::lit(0.5);
        out.push(acc);
    }
    out
}

impl<T: Real> MortalityKernel<T> {
    /// Samples `beta` on the grid nodes and derives the moment weights.
    ///
    /// # Errors
    ///
    /// [`Error::InvalidParameter`] when a sampled rate is negative or
    /// non-finite, or [`Error::AssumptionFailed`] when `β(a) > b` somewhere
    /// (the reduction needs the age-dependent mortality to sit below the
    /// lumped rate, so that the weights stay bounded).
    pub fn build(
        grid: &AgeGrid<T>,
        beta_fn: impl Fn(T) -> T,
        b: T,
        p0: T,
        q0: T,
        gamma: T,
    ) -> Result<Self> {
        for (name, v, strict) in
            [("p0", p0, true), ("q0", q0, true), ("gamma", gamma, false), ("b", b, false)]
        {
            let ok = v.is_finite() && if strict { v > T::zero() } else { v >= T::zero() };
            if !ok {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {v} must be {}",
                    if strict { "positive" } else { "non-negative" }
                )));
            }
        }
        let ages = grid.ages();
        let mut beta = Vec::with_capacity(ages.len());
        let slack = b * T::lit(1e-12) + T::lit(1e-14);
        for &a in &ages {
            let v = beta_fn(a);
            if !(v >= T::zero() && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "mortality beta({a}) = {v} must be finite and non-negative"
                )));
            }
            if v > b + slack {
                return Err(Error::AssumptionFailed(format!(
                    "beta(a) <= b is violated: beta({a}) = {v} exceeds b = {b}"
                )));
            }
            beta.push(v);
        }
        let shifted: Vec<T> = beta.iter().map(|v| *v - b).collect();
        let integral = cumtrapz(&shifted, grid.da);
        let q_weights: Vec<T> = integral.iter().map(|i| q0 * i.exp()).collect();
        let k_weights: Vec<T> = integral
            .iter()
            .zip(&ages)
            .map(|(i, a)| i.exp() * (p0 + gamma * q0 * *a))
            .collect();
        Ok(Self { b, p0, q0, gamma, beta, q_weights, k_weights })
    }

    /// Checks that this kernel was built from the same population
    /// parameters as `sys`.
    ///
    /// # Errors
    ///
    /// [`Error::InvalidParameter`] naming the first mismatching field.
    pub fn check_matches(&self, sys: &AgeSystem<T>) -> Result<()> {
        for (name, own, theirs) in [
            ("b", self.b, sys.b),
            ("p0", self.p0, sys.p0),
            ("q0", self.q0, sys.q0),
            ("gamma", self.gamma, sys.gamma),
        ] {
            if own != theirs {
                return Err(Error::InvalidParameter(format!(
                    "kernel {name} = {own} does not match the model's {name} = {theirs}"
                )));
            }
        }
        Ok(())
    }
}

/// One time slice of the PDE: node densities and the substrate level.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeState<T> {
    /// `f(t, a_i)` at the grid nodes (length `n_cells + 1`).
    pub f: Vec<T>,
    pub s: T,
}

impl<T: Real> PdeState<T> {
    /// The reduced moments `(X, Y) = (∫ q f da, ∫ k f da)` by trapezoid
    /// quadrature.
    pub fn moments(&self, grid: &AgeGrid<T>, kernel: &MortalityKernel<T>) -> (T, T) {
        let qf: Vec<T> = self.f.iter().zip(&kernel.q_weights).map(|(f, q)| *f * *q).collect();
        let kf: Vec<T> = self.f.iter().zip(&kernel.k_weights).map(|(f, k)| *f * *k).collect();
        (trapezoid_uniform(&qf, grid.da), trapezoid_uniform(&kf, grid.da))
    }
}

/// Advances the PDE by one explicit step of size `dt` under dilution `d`.
///
/// Interior and outflow nodes use first-order upwind transport with the
/// removal sink `−(β+D)f` applied to the transported value (see the module
/// notes on why the sink must ride the characteristic); the renewal node is
/// set from the same-time-level moments, `f(t+dt, 0) = μ(S(t))·Y(t)`; the
/// substrate takes an explicit Euler step on the same moments.
///
/// # Errors
///
/// [`Error::InvalidParameter`] when `dt` violates `0 < dt <= da`, the decay
/// positivity bound `dt·(β_max + D) <= 1` fails, the dilution is negative,
/// or the profile length disagrees with the grid; [`Error::Numerical`] when
/// the state has left the meaningful region (non-finite density or
/// substrate outside `(0, S_in)`).
pub fn pde_step<T: Real>(
    grid: &AgeGrid<T>,
    kernel: &MortalityKernel<T>,
    growth: &GrowthRateModel<T>,
    s_in: T,
    state: &PdeState<T>,
    d: T,
    dt: T,
) -> Result<PdeState<T>> {
    if !(dt > T::zero() && dt <= grid.da) {
        return Err(Error::InvalidParameter(format!(
            "time step dt = {dt} must satisfy 0 < dt <= da = {} (CFL)",
            grid.da
        )));
    }
    if !(d >= T::zero() && d.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "dilution rate D = {d} must be finite and non-negative"
        )));
    }
    if state.f.len() != grid.n_cells + 1 {
        return Err(Error::InvalidParameter(format!(
            "profile has {} nodes but the grid has {}",
            state.f.len(),
            grid.n_cells + 1
        )));
    }
    if state.f.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("age profile has non-finite entries".into()));
    }
    if !(state.s > T::zero() && state.s < s_in) {
        return Err(Error::Numerical(format!(
            "substrate S = {} left the interval (0, {s_in})",
            state.s
        )));
    }

    let beta_max = kernel.beta.iter().fold(T::zero(), |m, v| m.max(*v));
    if !(dt * (beta_max + d) <= T::one()) {
        return Err(Error::InvalidParameter(format!(
            "time step dt = {dt} is too large for the removal rate beta_max + D = {}",
            beta_max + d
        )));
    }

    let (x, y) = state.moments(grid, kernel);
    let mu = growth.mu_raw(state.s);
    let courant = dt / grid.da;

    let mut f_new = Vec::with_capacity(state.f.len());
    f_new.push(mu * y);
    for i in 1..state.f.len() {
        let fi = state.f[i];
        let fm = state.f[i - 1];
        let transported = fi - courant * (fi - fm);
        let beta_foot = kernel.beta[i] - courant * (kernel.beta[i] - kernel.beta[i - 1]);
        f_new.push((T::one() - dt * (beta_foot + d)) * transported);
    }
    let s_new = state.s + dt * (d * (s_in - state.s) - mu * x);
    Ok(PdeState { f: f_new, s: s_new })
}

/// Moment history of a PDE run, sampled at every time step.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeRun<T> {
    pub times: Vec<T>,
    pub x: Vec<T>,
    pub y: Vec<T>,
    pub s: Vec<T>,
    /// Dilution applied on the step *leaving* each time node (the last
    /// entry repeats the final feedback evaluation).
    pub d: Vec<T>,
    /// Final age profile.
    pub final_f: Vec<T>,
}

fn simulate_pde<T: Real>(
    sys: &AgeSystem<T>,
    grid: &AgeGrid<T>,
    kernel: &MortalityKernel<T>,
    f0: &[T],
    s0: T,
    t_final: T,
    dt: T,
    mut dilution: impl FnMut(T, T) -> T,
) -> Result<PdeRun<T>> {
    kernel.check_matches(sys)?;
    if !(t_final > T::zero() && t_final.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "horizon t_final = {t_final} must be positive"
        )));
    }
    let mut state = PdeState { f: f0.to_vec(), s: s0 };
    let mut t = T::zero();
    let (mut x, mut y) = state.moments(grid, kernel);

    let mut run = PdeRun {
        times: vec![t],
        x: vec![x],
        y: vec![y],
        s: vec![s0],
        d: Vec::new(),
        final_f: Vec::new(),
    };
    loop {
        if !(x > T::zero()) {
            return Err(Error::Numerical(format!(
                "consumption moment X = {x} collapsed at t = {t}"
            )));
        }
        let d = dilution(x, state.s);
        let remaining = t_final - t;
        let step = dt.min(remaining);
        run.d.push(d);
        if !(step > T::zero()) {
            break;
        }
        state = pde_step(grid, kernel, &sys.growth, sys.s_in, &state, d, step)?;
        t = t + step;
        let m = state.moments(grid, kernel);
        x = m.0;
        y = m.1;
        run.times.push(t);
        run.x.push(x);
        run.y.push(y);
        run.s.push(state.s);
        if t >= t_final {
            run.d.push(dilution(x, state.s));
            break;
        }
    }
    run.final_f = state.f;
    Ok(run)
}

/// PDE run under constant dilution `d`.
///
/// # Errors
///
/// Parameter/kernel mismatches as in [`pde_step`] and
/// [`MortalityKernel::check_matches`].
pub fn simulate_open_pde<T: Real>(
    sys: &AgeSystem<T>,
    grid: &AgeGrid<T>,
    kernel: &MortalityKernel<T>,
    d: T,
    f0: &[T],
    s0: T,
    t_final: T,
    dt: T,
) -> Result<PdeRun<T>> {
    if !(d >= T::zero() && d.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "dilution rate D = {d} must be finite and non-negative"
        )));
    }
    simulate_pde(sys, grid, kernel, f0, s0, t_final, dt, |_x, _s| d)
}

/// PDE run under the stabilizing moment feedback: the law of
/// [`AgeSystem::feedback`] evaluated on the *reduced* moments of the
/// current profile, exactly as a moment-sensing controller would apply it.
///
/// # Errors
///
/// As [`simulate_open_pde`].
pub fn simulate_closed_pde<T: Real>(
    sys: &AgeSystem<T>,
    eq: &AgeEquilibrium<T>,
    cfg: &FeedbackConfig<T>,
    grid: &AgeGrid<T>,
    kernel: &MortalityKernel<T>,
    f0: &[T],
    s0: T,
    t_final: T,
    dt: T,
) -> Result<PdeRun<T>> {
    simulate_pde(sys, grid, kernel, f0, s0, t_final, dt, |x, s| {
        sys.feedback_raw(eq, cfg, [x, T::one(), s])
    })
}

/// The steady profile of the PDE under constant `D*`:
/// `f*(a) = μ*·Y*·e^{−∫₀ᵃ(β+D*)}`; its continuum moments are exactly
/// `(X*, Y*)`.
pub fn equilibrium_profile<T: Real>(
    sys: &AgeSystem<T>,
    eq: &AgeEquilibrium<T>,
    grid: &AgeGrid<T>,
    kernel: &MortalityKernel<T>,
) -> Vec<T> {
    let decay: Vec<T> = kernel.beta.iter().map(|b| *b + sys.d_star).collect();
    let integral = cumtrapz(&decay, grid.da);
    integral.iter().map(|i| eq.mu_star * eq.y_star * (-*i).exp()).collect()
}

/// A Gaussian cohort centered at `center` with standard deviation `width`,
/// scaled so the plain density mass `∫ f da` equals `mass`.
///
/// # Errors
///
/// [`Error::InvalidParameter`] for non-positive `width` or `mass`, or a
/// center outside the grid.
pub fn cohort_profile<T: Real>(
    grid: &AgeGrid<T>,
    center: T,
    width: T,
    mass: T,
) -> Result<Vec<T>> {
    if !(width > T::zero() && mass > T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "cohort width = {width} and mass = {mass} must be positive"
        )));
    }
    if !(center >= T::zero() && center <= grid.a_max) {
        return Err(Error::InvalidParameter(format!(
            "cohort center = {center} must lie on the age grid [0, {}]",
            grid.a_max
        )));
    }
    let shape: Vec<T> = grid
        .ages()
        .iter()
        .map(|a| {
            let t = (*a - center) / width;
            (-t * t * T::lit(0.5)).exp()
        })
        .collect();
    let total = trapezoid_uniform(&shape, grid.da);
    Ok(shape.into_iter().map(|v| v * mass / total).collect())
}

/// An exponential profile `C·e^{−rate·a}` scaled so `∫ f da = mass`.
///
/// # Errors
///
/// [`Error::InvalidParameter`] for non-positive `rate` or `mass`.
pub fn exponential_profile<T: Real>(grid: &AgeGrid<T>, rate: T, mass: T) -> Result<Vec<T>> {
    if !(rate > T::zero() && mass > T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "profile rate = {rate} and mass = {mass} must be positive"
        )));
    }
    let shape: Vec<T> = grid.ages().iter().map(|a| (-rate * *a).exp()).collect();
    let total = trapezoid_uniform(&shape, grid.da);
    Ok(shape.into_iter().map(|v| v * mass / total).collect())
}
