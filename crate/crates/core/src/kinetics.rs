//! Specific growth-rate laws μ(S) and the scalar queries the models need:
//! pointwise values and derivatives, suprema and Lipschitz constants on a
//! substrate interval, and inversion of μ back to substrate concentrations.
//!
//! Built-in laws:
//!
//! ```text
//! Haldane:  μ(S) = m·S / (k + S + a·S²)     (substrate-inhibited, unimodal)
//! Monod:    μ(S) = mu_max·S / (k + S)       (monotone saturating)
//! ```
//!
//! A custom law supplies closures for μ and μ′ together with a declared
//! supremum and Lipschitz bound; the constructor vets the declarations by
//! dense sampling and rejects inconsistent ones, so downstream certificates
//! can trust every model variant equally.

use std::sync::Arc;

use crate::numeric::{bracketed_roots, scan_max};
use crate::scalar::Real;
use crate::{tol, Error, Result};

/// A growth law μ with μ(0) = 0 and μ > 0 on the positive substrate range it
/// is used on.
#[derive(Clone)]
pub enum GrowthRateModel<T: Real> {
    /// Substrate-inhibited kinetics `m·S/(k + S + a·S²)`; unimodal with the
    /// peak at `S = sqrt(k/a)` when `a > 0`.
    Haldane { m: T, k: T, a: T },
    /// Monotone saturating kinetics `mu_max·S/(k + S)`.
    Monod { mu_max: T, k: T },
    /// User-supplied law with declared bounds, vetted at construction.
    Custom(CustomGrowth<T>),
}

/// A user-supplied growth law: closures for μ and μ′ plus the declared
/// supremum and Lipschitz constant on `[0, domain_max]`.
#[derive(Clone)]
pub struct CustomGrowth<T: Real> {
    value: Arc<dyn Fn(T) -> T + Send + Sync>,
    derivative: Arc<dyn Fn(T) -> T + Send + Sync>,
    declared_sup: T,
    declared_lipschitz: T,
    domain_max: T,
}

impl<T: Real> core::fmt::Debug for GrowthRateModel<T> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::Haldane { m, k, a } => {
                write!(f, "Haldane {{ m: {m}, k: {k}, a: {a} }}")
            }
            Self::Monod { mu_max, k } => write!(f, "Monod {{ mu_max: {mu_max}, k: {k} }}"),
            Self::Custom(c) => write!(
                f,
                "Custom {{ declared_sup: {}, declared_lipschitz: {}, domain_max: {} }}",
                c.declared_sup, c.declared_lipschitz, c.domain_max
            ),
        }
    }
}

/// Supremum and Lipschitz constant of μ on an interval, with the substrate
/// values attaining them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupLipschitz<T> {
    pub sup: T,
    pub arg_sup: T,
    pub lipschitz: T,
    pub arg_lipschitz: T,
}

impl<T: Real> GrowthRateModel<T> {
    /// Haldane kinetics `m·S/(k + S + a·S²)`.
    ///
    /// # Errors
    ///
    /// [`Error::InvalidParameter`] unless `m > 0`, `k > 0`, `a >= 0` and all
    /// are finite.
    pub fn haldane(m: T, k: T, a: T) -> Result<Self> {
        for (name, v) in [("m", m), ("k", k), ("a", a)] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "Haldane coefficient {name} = {v} is not finite"
                )));
            }
        }
        if m <= T::zero() || k <= T::zero() || a < T::zero() {
            return Err(Error::InvalidParameter(format!(
                "Haldane requires m > 0, k > 0, a >= 0; got m = {m}, k = {k}, a = {a}"
            )));
        }
        Ok(Self::Haldane { m, k, a })
    }

    /// Monod kinetics `mu_max·S/(k + S)`.
    ///
    /// # Errors
    ///
    /// [`Error::InvalidParameter`] unless `mu_max > 0` and `k > 0`.
    pub fn monod(mu_max: T, k: T) -> Result<Self> {
        if !(mu_max.is_finite() && k.is_finite() && mu_max > T::zero() && k > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "Monod requires mu_max > 0 and k > 0; got mu_max = {mu_max}, k = {k}"
            )));
        }
        Ok(Self::Monod { mu_max, k })
    }

    /// A custom law from value/derivative closures and declared bounds on
    /// `[0, domain_max]`.
    ///
    /// The constructor samples both closures on a dense grid and rejects the
    /// declaration when μ(0) ≠ 0, μ dips non-positive on the open interval,
    /// either declared bound is exceeded, or the derivative closure disagrees
    /// with a central finite difference of the value closure.
    ///
    /// # Errors
    ///
    /// [`Error::InvalidParameter`] with a message naming the failed check.
    pub fn custom(
        value: impl Fn(T) -> T + Send + Sync + 'static,
        derivative: impl Fn(T) -> T + Send + Sync + 'static,
        declared_sup: T,
        declared_lipschitz: T,
        domain_max: T,
    ) -> Result<Self> {
        if !(domain_max.is_finite() && domain_max > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "custom growth law needs domain_max > 0, got {domain_max}"
            )));
        }
        if !(declared_sup.is_finite() && declared_sup > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "custom growth law needs declared_sup > 0, got {declared_sup}"
            )));
        }
        if !(declared_lipschitz.is_finite() && declared_lipschitz > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "custom growth law needs declared_lipschitz > 0, got {declared_lipschitz}"
            )));
        }
        let at_zero = value(T::zero());
        if at_zero.abs() > declared_sup * T::lit(1e-12) {
            return Err(Error::InvalidParameter(format!(
                "custom growth law must vanish at S = 0, got mu(0) = {at_zero}"
            )));
        }
        let slack = T::one() + T::lit(tol::CUSTOM_DECL_REL_SLACK);
        // Central-difference consistency degrades as eps^(2/3); keep the f64
        // check at the documented 1e-6 while staying honest for narrower
        // scalars.
        let fd_h_scale = T::eps().powf(T::lit(1.0 / 3.0));
        let fd_rel = T::lit(100.0) * T::eps().powf(T::lit(2.0 / 3.0));
        let fd_rel = fd_rel.max(T::lit(tol::FD_REL));
        let n = tol::CUSTOM_CHECK_POINTS;
        for i in 0..=n {
            let s = domain_max * T::from_usize(i).unwrap() / T::from_usize(n).unwrap();
            let v = value(s);
            let d = derivative(s);
            if !v.is_finite() || !d.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "custom growth law is non-finite at S = {s}"
                )));
            }
            if i > 0 && v <= T::zero() {
                return Err(Error::InvalidParameter(format!(
                    "custom growth law must be positive on (0, {domain_max}], got mu({s}) = {v}"
                )));
            }
            if v > declared_sup * slack {
                return Err(Error::InvalidParameter(format!(
                    "declared_sup {declared_sup} understates the law: mu({s}) = {v}"
                )));
            }
            if d.abs() > declared_lipschitz * slack {
                return Err(Error::InvalidParameter(format!(
                    "declared_lipschitz {declared_lipschitz} understates the law: |mu'({s})| = {}",
                    d.abs()
                )));
            }
            let h = fd_h_scale * s.abs().max(T::one());
            // One-sided at the domain edge to avoid sampling S < 0.
            if s - h >= T::zero() && s + h <= domain_max {
                let fd = (value(s + h) - value(s - h)) / (h + h);
                let err = (d - fd).abs();
                if err > fd_rel * d.abs().max(fd.abs()) + T::lit(tol::FD_ABS) {
                    return Err(Error::InvalidParameter(format!(
                        "derivative closure disagrees with finite difference at S = {s}: \
                         closure {d}, difference {fd}"
                    )));
                }
            }
        }
        Ok(Self::Custom(CustomGrowth {
            value: Arc::new(value),
            derivative: Arc::new(derivative),
            declared_sup,
            declared_lipschitz,
            domain_max,
        }))
    }

    /// μ(S) without the domain check; callers guarantee `s >= 0`.
    #[inline]
    pub(crate) fn mu_raw(&self, s: T) -> T {
        match self {
            Self::Haldane { m, k, a } => *m * s / (*k + s + *a * s * s),
            Self::Monod { mu_max, k } => *mu_max * s / (*k + s),
            Self::Custom(c) => (c.value)(s),
        }
    }

    /// μ′(S) without the domain check; callers guarantee `s >= 0`.
    #[inline]
    pub(crate) fn mu_prime_raw(&self, s: T) -> T {
        match self {
            Self::Haldane { m, k, a } => {
                let den = *k + s + *a * s * s;
                *m * (*k - *a * s * s) / (den * den)
            }
            Self::Monod { mu_max, k } => {
                let den = *k + s;
                *mu_max * *k / (den * den)
            }
            Self::Custom(c) => (c.derivative)(s),
        }
    }

    /// Growth rate μ(S).
    ///
    /// # Errors
    ///
    /// [`Error::OutsideDomain`] for negative substrate.
    pub fn mu(&self, s: T) -> Result<T> {
        if !(s >= T::zero()) {
            return Err(Error::OutsideDomain(format!(
                "growth rate queried at negative substrate S = {s}"
            )));
        }
        Ok(self.mu_raw(s))
    }

    /// Derivative μ′(S).
    ///
    /// # Errors
    ///
    /// [`Error::OutsideDomain`] for negative substrate.
    pub fn mu_prime(&self, s: T) -> Result<T> {
        if !(s >= T::zero()) {
            return Err(Error::OutsideDomain(format!(
                "growth-rate derivative queried at negative substrate S = {s}"
            )));
        }
        Ok(self.mu_prime_raw(s))
    }

    /// Supremum of μ and Lipschitz constant of μ (the maximum of |μ′|) on
    /// `[0, s_max]`, by closed form where the law admits one and by dense
    /// scanning with golden-section refinement otherwise.
    ///
    /// # Errors
    ///
    /// [`Error::InvalidParameter`] if `s_max <= 0`.
    pub fn sup_and_lipschitz(&self, s_max: T) -> Result<SupLipschitz<T>> {
        if !(s_max.is_finite() && s_max > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "sup_and_lipschitz needs s_max > 0, got {s_max}"
            )));
        }
        let abs_slope = |s: T| self.mu_prime_raw(s).abs();
        match self {
            Self::Haldane { m, k, a } => {
                let (arg_sup, sup) = if *a > T::zero() {
                    let peak = (*k / *a).sqrt();
                    if peak <= s_max {
                        // μ(sqrt(k/a)) = m / (1 + 2·sqrt(k·a)).
                        (peak, *m / (T::one() + T::lit(2.0) * (*k * *a).sqrt()))
                    } else {
                        (s_max, self.mu_raw(s_max))
                    }
                } else {
                    (s_max, self.mu_raw(s_max))
                };
                let (arg_l, l) = scan_max(abs_slope, T::zero(), s_max, tol::LIPSCHITZ_SCAN_POINTS);
                Ok(SupLipschitz { sup, arg_sup, lipschitz: l, arg_lipschitz: arg_l })
            }
            Self::Monod { mu_max, k } => Ok(SupLipschitz {
                // Monotone: supremum at the right end, steepest at the origin.
                sup: self.mu_raw(s_max),
                arg_sup: s_max,
                lipschitz: *mu_max / *k,
                arg_lipschitz: T::zero(),
            }),
            Self::Custom(_) => {
                let (arg_sup, sup) =
                    scan_max(|s| self.mu_raw(s), T::zero(), s_max, tol::LIPSCHITZ_SCAN_POINTS);
                let (arg_l, l) = scan_max(abs_slope, T::zero(), s_max, tol::LIPSCHITZ_SCAN_POINTS);
                Ok(SupLipschitz { sup, arg_sup, lipschitz: l, arg_lipschitz: arg_l })
            }
        }
    }

    /// All substrate concentrations in `[lo, hi]` with μ(S) = `target`,
    /// ascending: a dense bracketing scan followed by bisection to the
    /// absolute tolerance [`tol::ROOT_ABS`].
    ///
    /// An empty result means μ never meets `target` on the interval (e.g. the
    /// target exceeds the supremum).
    ///
    /// # Errors
    ///
    /// [`Error::InvalidParameter`] unless `0 <= lo < hi` and `target` is
    /// finite and non-negative.
    pub fn invert_mu(&self, target: T, lo: T, hi: T) -> Result<Vec<T>> {
        if !(target.is_finite() && target >= T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "invert_mu target must be finite and non-negative, got {target}"
            )));
        }
        if !(lo >= T::zero() && hi > lo && hi.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "invert_mu needs 0 <= lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(bracketed_roots(
            |s| self.mu_raw(s) - target,
            lo,
            hi,
            tol::ROOT_SCAN_POINTS,
            T::lit(tol::ROOT_ABS),
        ))
    }
}
