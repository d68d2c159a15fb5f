//! Log-domain special functions behind the vMF normalizer.

use std::f64::consts::{LN_2, PI};

use crate::error::{PattError, Result};

/// Below this argument (or the order, whichever is larger) the power series is used.
const SERIES_MIN_ARG: f64 = 20.0;
/// Orders at or above this use the Debye expansion once `x > nu`. Truncated
/// after `u_4` its relative error is about `1e-2 / nu^5`.
const DEBYE_MIN_ORDER: f64 = 50.0;
const SERIES_MAX_TERMS: usize = 100_000;
const HANKEL_MAX_TERMS: usize = 200;

/// `ln Σ exp(v_i)`, shifted by the maximum.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(PattError::contract("log_sum_exp of an empty slice"));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(PattError::contract(format!(
            "log_sum_exp input {v} is not finite"
        )));
    }
    Ok(lse_unchecked(values))
}

/// `log_sum_exp` without validation; `-inf` entries are tolerated.
pub(crate) fn lse_unchecked(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Softmax computed with the same max shift as [`log_sum_exp`].
pub(crate) fn softmax(values: &[f64]) -> Vec<f64> {
    let lse = lse_unchecked(values);
    values.iter().map(|v| (v - lse).exp()).collect()
}

pub(crate) fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `ln I_nu(x)` for the modified Bessel function of the first kind.
///
/// Three regimes:
/// - the ascending power series (all terms positive, so no cancellation)
///   for `x <= max(20, nu)` and, for orders below 50, up to `x <= nu^2`;
/// - the large-argument Hankel expansion for orders below 50 beyond that;
/// - the Debye uniform expansion for orders of 50 and above with `x > nu`.
pub fn log_bessel_i(nu: f64, x: f64) -> Result<f64> {
    if !(nu >= 0.0 && x >= 0.0) || !nu.is_finite() || !x.is_finite() {
        return Err(PattError::contract(format!(
            "log_bessel_i requires finite nu >= 0 and x >= 0, got nu={nu}, x={x}"
        )));
    }
    Ok(log_bessel_i_unchecked(nu, x))
}

pub(crate) fn log_bessel_i_unchecked(nu: f64, x: f64) -> f64 {
    if x == 0.0 {
        return if nu == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if x <= SERIES_MIN_ARG.max(nu) || (nu < DEBYE_MIN_ORDER && x <= nu * nu) {
        log_bessel_series(nu, x)
    } else if nu < DEBYE_MIN_ORDER {
        log_bessel_hankel(nu, x)
    } else {
        log_bessel_debye(nu, x)
    }
}

/// `Σ_m (x/2)^(2m+nu) / (m! Γ(m+nu+1))`, summed relative to the first term.
fn log_bessel_series(nu: f64, x: f64) -> f64 {
    let quarter_sq = 0.25 * x * x;
    let mut log_scale = nu * (0.5 * x).ln() - ln_gamma(nu + 1.0);
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    for m in 1..SERIES_MAX_TERMS {
        let mf = m as f64;
        term *= quarter_sq / (mf * (mf + nu));
        sum += term;
        if sum > 1e280 {
            log_scale += sum.ln();
            term /= sum;
            sum = 1.0;
        }
        // Terms are past their peak once the ratio drops below one.
        if term < 1e-17 * sum && quarter_sq < mf * (mf + nu) {
            break;
        }
    }
    log_scale + sum.ln()
}

/// `I_nu(x) ~ e^x / sqrt(2 pi x) Σ_k (-1)^k a_k(nu) / x^k`, truncated at the smallest term.
fn log_bessel_hankel(nu: f64, x: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    for k in 1..HANKEL_MAX_TERMS {
        let kf = k as f64;
        let odd = 2.0 * kf - 1.0;
        let next = term * (odd * odd - mu) / (8.0 * kf * x);
        if next == 0.0 || next.abs() >= term.abs() && k > 1 {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    x - 0.5 * (2.0 * PI * x).ln() + sum.ln()
}

/// Debye expansion of `I_nu(nu z)` through `u_4`.
fn log_bessel_debye(nu: f64, x: f64) -> f64 {
    let z = x / nu;
    let root = (1.0 + z * z).sqrt();
    let t = 1.0 / root;
    let eta = root + (z / (1.0 + root)).ln();
    let t2 = t * t;
    let u1 = t * (3.0 - 5.0 * t2) / 24.0;
    let u2 = t2 * (81.0 + t2 * (-462.0 + t2 * 385.0)) / 1152.0;
    let u3 = t * t2 * (30375.0 + t2 * (-369603.0 + t2 * (765765.0 - t2 * 425425.0))) / 414720.0;
    let u4 = t2
        * t2
        * (4465125.0
            + t2 * (-94121676.0 + t2 * (349922430.0 + t2 * (-446185740.0 + t2 * 185910725.0))))
        / 39813120.0;
    let inv = 1.0 / nu;
    let series = 1.0 + inv * (u1 + inv * (u2 + inv * (u3 + inv * u4)));
    nu * eta - 0.5 * (2.0 * PI * nu).ln() - 0.5 * root.ln() + series.ln()
}

/// `ln` of the surface area of the unit sphere `S^{dim-1}`.
pub fn log_sphere_area(dim: usize) -> f64 {
    let half = 0.5 * dim as f64;
    LN_2 + half * PI.ln() - ln_gamma(half)
}

/// `ln Z_d(kappa)` with `Z_d(kappa) = kappa^{d/2-1} / ((2 pi)^{d/2} I_{d/2-1}(kappa))`.
///
/// At `kappa = 0` the uniform density `1 / |S^{d-1}|` is returned.
pub fn log_norm_const(dim: usize, kappa: f64) -> Result<f64> {
    if dim < 2 {
        return Err(PattError::contract(format!(
            "vMF dimension must be >= 2, got {dim}"
        )));
    }
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(PattError::contract(format!(
            "kappa must be finite and >= 0, got {kappa}"
        )));
    }
    Ok(log_norm_const_unchecked(dim, kappa))
}

pub(crate) fn log_norm_const_unchecked(dim: usize, kappa: f64) -> f64 {
    if kappa == 0.0 {
        return -log_sphere_area(dim);
    }
    let half = 0.5 * dim as f64;
    let nu = half - 1.0;
    nu * kappa.ln() - half * (2.0 * PI).ln() - log_bessel_i_unchecked(nu, kappa)
}

/// Mean resultant length `A_d(kappa) = I_{d/2}(kappa) / I_{d/2-1}(kappa)`.
///
/// `d ln Z_d / d kappa = -A_d(kappa)`; defined as 0 at `kappa = 0`.
pub fn bessel_ratio(dim: usize, kappa: f64) -> f64 {
    if kappa <= 0.0 {
        return 0.0;
    }
    let nu = 0.5 * dim as f64 - 1.0;
    (log_bessel_i_unchecked(nu + 1.0, kappa) - log_bessel_i_unchecked(nu, kappa)).exp()
}
