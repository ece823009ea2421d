//! Scalar numeric kernels: bracketed root finding, extremum location with
//! golden-section refinement, and adaptive Simpson quadrature.
//!
//! These are deliberately small, allocation-light routines. They terminate on
//! *either* the requested tolerance or loss of progress (the next iterate no
//! longer changes at the working precision), so the same code is safe for
//! `f32` even when handed an `f64`-grade tolerance.

use crate::scalar::Real;
use crate::{tol, Error, Result};

/// Maximum bisection / golden-section iterations. 200 halvings exhaust the
/// mantissa of any IEEE float long before this trips; it only guards against
/// pathological custom scalars.
const MAX_ITERS: usize = 200;

/// Locates a root of `f` in `[lo, hi]` by bisection, to absolute tolerance
/// `tol_x` on the abscissa.
///
/// Requires a sign change (or an exact zero) on the bracket.
///
/// # Errors
///
/// [`Error::Numerical`] if `f` has the same nonzero sign at both ends, or if
/// either endpoint evaluates to a non-finite value.
pub fn bisect<T: Real, F: Fn(T) -> T>(f: F, lo: T, hi: T, tol_x: T) -> Result<T> {
    let (mut lo, mut hi) = (lo, hi);
    let mut flo = f(lo);
    let fhi = f(hi);
    if !flo.is_finite() || !fhi.is_finite() {
        return Err(Error::Numerical(format!(
            "bisection endpoints evaluate to non-finite values on [{lo}, {hi}]"
        )));
    }
    if flo == T::zero() {
        return Ok(lo);
    }
    if fhi == T::zero() {
        return Ok(hi);
    }
    if (flo > T::zero()) == (fhi > T::zero()) {
        return Err(Error::Numerical(format!(
            "no sign change on [{lo}, {hi}]: f(lo) = {flo}, f(hi) = {fhi}"
        )));
    }
    for _ in 0..MAX_ITERS {
        let mid = lo + (hi - lo) * T::lit(0.5);
        // No representable point strictly between the ends: done.
        if mid <= lo.min(hi) || mid >= lo.max(hi) {
            break;
        }
        let fm = f(mid);
        if fm == T::zero() {
            return Ok(mid);
        }
        if (fm > T::zero()) == (flo > T::zero()) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() <= tol_x {
            break;
        }
    }
    Ok(lo + (hi - lo) * T::lit(0.5))
}

/// Finds every sign-change root of `f` on `[lo, hi]` by scanning `n`
/// subintervals and bisecting each bracket, ascending order.
///
/// Exact zeros on grid nodes are kept; roots closer together than the scan
/// resolution merge into one. Subintervals where `f` is non-finite are
/// skipped rather than reported as errors, so a scan may legitimately come
/// back empty.
pub fn bracketed_roots<T: Real, F: Fn(T) -> T>(
    f: F,
    lo: T,
    hi: T,
    n: usize,
    tol_x: T,
) -> Vec<T> {
    let mut roots: Vec<T> = Vec::new();
    if !(hi > lo) || n == 0 {
        return roots;
    }
    let dx = (hi - lo) / T::from_usize(n).unwrap();
    let push = |roots: &mut Vec<T>, r: T| {
        // Merge near-duplicates produced by a zero landing on a node.
        if roots.last().is_none_or(|last| (r - *last).abs() > dx * T::lit(0.5)) {
            roots.push(r);
        }
    };
    let mut x_prev = lo;
    let mut f_prev = f(lo);
    if f_prev == T::zero() {
        push(&mut roots, lo);
    }
    for i in 1..=n {
        let x = if i == n { hi } else { lo + dx * T::from_usize(i).unwrap() };
        let fx = f(x);
        if fx == T::zero() {
            push(&mut roots, x);
        } else if f_prev != T::zero()
            && f_prev.is_finite()
            && fx.is_finite()
            && (fx > T::zero()) != (f_prev > T::zero())
        {
            if let Ok(r) = bisect(&f, x_prev, x, tol_x) {
                push(&mut roots, r);
            }
        }
        x_prev = x;
        f_prev = fx;
    }
    roots
}

/// Golden-section search for the maximum of a unimodal `f` on `[a, b]`.
/// Returns `(argmax, max)`.
pub fn golden_max<T: Real, F: Fn(T) -> T>(f: F, a: T, b: T) -> (T, T) {
    let inv_phi = (T::lit(5.0).sqrt() - T::one()) * T::lit(0.5);
    let tol_x = (b - a).abs() * T::lit(tol::GOLDEN_REL);
    let (mut a, mut b) = (a, b);
    let mut x1 = b - (b - a) * inv_phi;
    let mut x2 = a + (b - a) * inv_phi;
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..MAX_ITERS {
        if (b - a).abs() <= tol_x || x1 >= x2 {
            break;
        }
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + (b - a) * inv_phi;
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - (b - a) * inv_phi;
            f1 = f(x1);
        }
    }
    let mid = a + (b - a) * T::lit(0.5);
    let fm = f(mid);
    if f1 >= f2 && f1 >= fm {
        (x1, f1)
    } else if f2 >= fm {
        (x2, f2)
    } else {
        (mid, fm)
    }
}

/// Maximum of `f` on `[lo, hi]`: scan `n` subintervals for the best node,
/// then golden-section refine on the two neighboring subintervals.
/// Returns `(argmax, max)`.
pub fn scan_max<T: Real, F: Fn(T) -> T>(f: F, lo: T, hi: T, n: usize) -> (T, T) {
    if !(hi > lo) || n == 0 {
        return (lo, f(lo));
    }
    let dx = (hi - lo) / T::from_usize(n).unwrap();
    let mut best_i = 0usize;
    let mut best = f(lo);
    for i in 1..=n {
        let x = if i == n { hi } else { lo + dx * T::from_usize(i).unwrap() };
        let fx = f(x);
        if fx > best {
            best = fx;
            best_i = i;
        }
    }
    let a = if best_i == 0 { lo } else { lo + dx * T::from_usize(best_i - 1).unwrap() };
    let b = if best_i >= n { hi } else { lo + dx * T::from_usize(best_i + 1).unwrap() };
    let (xr, fr) = golden_max(&f, a, b.min(hi));
    if fr >= best {
        (xr, fr)
    } else {
        let xb = lo + dx * T::from_usize(best_i).unwrap();
        (if best_i == n { hi } else { xb }, best)
    }
}

/// Minimum of `f` on `[lo, hi]` via [`scan_max`] of `-f`. Returns
/// `(argmin, min)`.
pub fn scan_min<T: Real, F: Fn(T) -> T>(f: F, lo: T, hi: T, n: usize) -> (T, T) {
    let (x, neg) = scan_max(|x| -f(x), lo, hi, n);
    (x, -neg)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` (either orientation) to
/// absolute tolerance `tol_abs`.
///
/// # Errors
///
/// [`Error::Numerical`] if the integrand is non-finite anywhere the rule
/// samples it.
pub fn adaptive_simpson<T: Real, F: Fn(T) -> T>(f: F, a: T, b: T, tol_abs: T) -> Result<T> {
    if a == b {
        return Ok(T::zero());
    }
    let (lo, hi, sign) = if a < b { (a, b, T::one()) } else { (b, a, -T::one()) };
    let half = T::lit(0.5);
    let sixth = T::lit(1.0 / 6.0);

    let simpson = |fa: T, fm: T, fb: T, h: T| (fa + T::lit(4.0) * fm + fb) * h * sixth;

    // Explicit stack of (a, fa, m, fm, b, fb, whole, tol, depth).
    struct Seg<T> {
        a: T,
        fa: T,
        m: T,
        fm: T,
        b: T,
        fb: T,
        whole: T,
        tol: T,
        depth: u32,
    }
    let fa = f(lo);
    let fb = f(hi);
    let m0 = lo + (hi - lo) * half;
    let fm = f(m0);
    if !(fa.is_finite() && fb.is_finite() && fm.is_finite()) {
        return Err(Error::Numerical(format!(
            "integrand non-finite on [{lo}, {hi}]"
        )));
    }
    let mut stack = vec![Seg {
        a: lo,
        fa,
        m: m0,
        fm,
        b: hi,
        fb,
        whole: simpson(fa, fm, fb, hi - lo),
        tol: tol_abs,
        depth: 0,
    }];
    let mut total = T::zero();
    while let Some(seg) = stack.pop() {
        let lm = seg.a + (seg.m - seg.a) * half;
        let rm = seg.m + (seg.b - seg.m) * half;
        let flm = f(lm);
        let frm = f(rm);
        if !(flm.is_finite() && frm.is_finite()) {
            return Err(Error::Numerical(format!(
                "integrand non-finite near {lm} or {rm}"
            )));
        }
        let left = simpson(seg.fa, flm, seg.fm, seg.m - seg.a);
        let right = simpson(seg.fm, frm, seg.fb, seg.b - seg.m);
        let delta = left + right - seg.whole;
        // 15 = 2^4 - 1: Richardson factor for Simpson's rule.
        if delta.abs() <= T::lit(15.0) * seg.tol || seg.depth >= 48 || rm <= lm {
            total = total + left + right + delta / T::lit(15.0);
        } else {
            let child_tol = seg.tol * half;
            stack.push(Seg {
                a: seg.a,
                fa: seg.fa,
                m: lm,
                fm: flm,
                b: seg.m,
                fb: seg.fm,
                whole: left,
                tol: child_tol,
                depth: seg.depth + 1,
            });
            stack.push(Seg {
                a: seg.m,
                fa: seg.fm,
                m: rm,
                fm: frm,
                b: seg.b,
                fb: seg.fb,
                whole: right,
                tol: child_tol,
                depth: seg.depth + 1,
            });
        }
    }
    Ok(sign * total)
}

/// Trapezoid rule over uniformly spaced samples `values` with spacing `dx`.
pub fn trapezoid_uniform<T: Real>(values: &[T], dx: T) -> T {
    match values {
        [] | [_] => T::zero(),
        [first, inner @ .., last] => {
            let inner_sum: T = inner.iter().copied().sum();
            (inner_sum + (*first + *last) * T::lit(0.5)) * dx
        }
    }
}
