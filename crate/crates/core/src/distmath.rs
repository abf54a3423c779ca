//! Error function, skew-normal density and sampling.
//!
//! Everything that feeds the likelihood is evaluated in log space. The normal
//! CDF term `Φ(αu)` is routed through [`log_ndtr`], which switches to a
//! continued-fraction form of `erfc` in the lower tail so that the log-density
//! stays finite for any finite input.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FuseError, Result};

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;
const SQRT_2: f64 = std::f64::consts::SQRT_2;
const LN_2: f64 = std::f64::consts::LN_2;
/// `0.5 * ln(2π)`
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
/// `sqrt(2/π)`
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Below this argument the positive-term series is used for erf; above it the
/// Laplace continued fraction for erfc.
const SERIES_CUTOFF: f64 = 1.5;

/// Location, scale and shape of a skew-normal density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewNormalParams {
    pub xi: f64,
    pub omega: f64,
    pub alpha: f64,
}

impl SkewNormalParams {
    pub fn new(xi: f64, omega: f64, alpha: f64) -> Result<Self> {
        let p = SkewNormalParams { xi, omega, alpha };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0) || !self.omega.is_finite() {
            return Err(FuseError::Parameter(format!(
                "skew-normal scale must be positive and finite, got {}",
                self.omega
            )));
        }
        if !self.xi.is_finite() || !self.alpha.is_finite() {
            return Err(FuseError::Parameter(format!(
                "skew-normal location/shape must be finite, got xi={} alpha={}",
                self.xi, self.alpha
            )));
        }
        Ok(())
    }

    /// `δ = α / sqrt(1 + α²)`
    pub fn delta(&self) -> f64 {
        self.alpha / (1.0 + self.alpha * self.alpha).sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.xi + self.omega * self.delta() * SQRT_2_OVER_PI
    }
}

/// `erf(x) = 2/√π ∫₀ˣ e^{-t²} dt`.
pub fn erf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(FuseError::Domain(format!("erf of non-finite value {x}")));
    }
    Ok(erf_unchecked(x))
}

/// Complementary error function, accurate in relative terms for large `x`.
pub fn erfc(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(FuseError::Domain(format!("erfc of non-finite value {x}")));
    }
    Ok(erfc_unchecked(x))
}

pub(crate) fn erf_unchecked(x: f64) -> f64 {
    let ax = x.abs();
    if ax < SERIES_CUTOFF {
        erf_series(x)
    } else if ax >= 6.0 {
        // erfc(6) ≈ 2.2e-17 is below half an ulp of 1
        1.0f64.copysign(x)
    } else {
        (1.0 - erfc_tail(ax)).copysign(x)
    }
}

pub(crate) fn erfc_unchecked(x: f64) -> f64 {
    if x < 0.0 {
        2.0 - erfc_unchecked(-x)
    } else if x < SERIES_CUTOFF {
        1.0 - erf_series(x)
    } else {
        erfc_tail(x)
    }
}

/// `erf(x) = 2/√π · e^{-x²} · Σ 2ⁿ x^{2n+1} / (2n+1)!!`
///
/// Every term is positive (for x > 0) so there is no cancellation.
fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0u32;
    loop {
        n += 1;
        term *= 2.0 * x2 / f64::from(2 * n + 1);
        sum += term;
        if term.abs() <= sum.abs() * 1e-17 || n > 200 {
            break;
        }
    }
    FRAC_2_SQRT_PI * (-x2).exp() * sum
}

/// Continued fraction `K(x)` with `erfc(x) = e^{-x²} K(x) / √π`, x > 0:
///
/// `K(x) = 1 / (x + (1/2) / (x + 1 / (x + (3/2) / (x + ...))))`
///
/// Evaluated with the modified Lentz algorithm.
fn erfc_scaled_cf(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for n in 1..5000 {
        let a = f64::from(n) * 0.5;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

fn erfc_tail(x: f64) -> f64 {
    (-x * x).exp() * erfc_scaled_cf(x) / std::f64::consts::PI.sqrt()
}

/// `ln Φ(t)` for the standard normal CDF, finite for every finite `t`.
pub fn log_ndtr(t: f64) -> f64 {
    let y = -t / SQRT_2;
    if y > SERIES_CUTOFF {
        // Φ(t) = ½ e^{-y²} K(y)/√π
        -LN_2 - y * y + (erfc_scaled_cf(y) / std::f64::consts::PI.sqrt()).ln()
    } else if y >= 0.0 {
        (0.5 * erfc_unchecked(y)).ln()
    } else {
        (-0.5 * erfc_unchecked(-y)).ln_1p()
    }
}

/// Inverse Mills ratio `φ(t) / Φ(t)`, the derivative of [`log_ndtr`].
pub fn ndtr_mills(t: f64) -> f64 {
    let y = -t / SQRT_2;
    if y > SERIES_CUTOFF {
        // φ(t) = e^{-y²}/√(2π), so the exponentials cancel.
        SQRT_2 / erfc_scaled_cf(y)
    } else {
        let pdf = (-0.5 * t * t - HALF_LN_2PI).exp();
        pdf / (0.5 * erfc_unchecked(y))
    }
}

/// Log-density of `SN(ξ, ω, α)`:
/// `ln[(2/ω) φ(u) Φ(αu)]`, `u = (x − ξ)/ω`.
pub fn skew_normal_log_pdf(x: f64, p: &SkewNormalParams) -> Result<f64> {
    p.validate()?;
    if !x.is_finite() {
        return Err(FuseError::Domain(format!(
            "skew-normal density at non-finite point {x}"
        )));
    }
    Ok(sn_log_pdf_eval(x - p.xi, p.omega, p.alpha).value)
}

/// Log-density and its partial derivatives with respect to the residual
/// `r = x − ξ`, the scale `ω` and the shape `α`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SnEval {
    pub value: f64,
    pub d_resid: f64,
    pub d_omega: f64,
    pub d_alpha: f64,
}

pub(crate) fn sn_log_pdf_eval(resid: f64, omega: f64, alpha: f64) -> SnEval {
    let u = resid / omega;
    let t = alpha * u;
    let value = LN_2 - omega.ln() - HALF_LN_2PI - 0.5 * u * u + log_ndtr(t);
    let mills = ndtr_mills(t);
    let d_u = -u + alpha * mills;
    SnEval {
        value,
        d_resid: d_u / omega,
        d_omega: -1.0 / omega - d_u * u / omega,
        d_alpha: u * mills,
    }
}

/// Scale and shape of the skew-normal obtained by adding independent
/// `N(0, σ²)` noise to `SN(0, ω, α)`:
///
/// `ω̃ = √(ω² + σ²)`, `α̃ = αω / √(ω² + σ² + α²σ²)`.
pub fn combine_noise_params(omega: f64, sigma: f64, alpha: f64) -> Result<(f64, f64)> {
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(FuseError::Parameter(format!(
            "noise scale must be positive, got {omega}"
        )));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(FuseError::Parameter(format!(
            "model noise must be non-negative, got {sigma}"
        )));
    }
    let c = combine_eval(omega, sigma, alpha);
    Ok((c.omega_t, c.alpha_t))
}

/// Combined parameters together with their Jacobian.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Combined {
    pub omega_t: f64,
    pub alpha_t: f64,
    pub domega_t_domega: f64,
    pub domega_t_dsigma: f64,
    pub dalpha_t_domega: f64,
    pub dalpha_t_dsigma: f64,
    pub dalpha_t_dalpha: f64,
}

pub(crate) fn combine_eval(omega: f64, sigma: f64, alpha: f64) -> Combined {
    let w2 = omega * omega;
    let s2 = sigma * sigma;
    let a2 = alpha * alpha;
    let omega_t = (w2 + s2).sqrt();
    let d = w2 + s2 + a2 * s2;
    let root = d.sqrt();
    let root3 = d * root;
    Combined {
        omega_t,
        alpha_t: alpha * omega / root,
        domega_t_domega: omega / omega_t,
        domega_t_dsigma: sigma / omega_t,
        dalpha_t_domega: alpha * s2 * (1.0 + a2) / root3,
        dalpha_t_dsigma: -alpha * omega * sigma * (1.0 + a2) / root3,
        dalpha_t_dalpha: omega * (w2 + s2) / root3,
    }
}

/// Draws one variate from `SN(ξ, ω, α)` via
/// `ξ + ω(δ|U₀| + √(1−δ²) U₁)` with `U₀, U₁` iid standard normal.
pub fn skew_normal_sample<R: Rng + ?Sized>(rng: &mut R, p: &SkewNormalParams) -> f64 {
    let delta = p.delta();
    let u0: f64 = rng.sample(StandardNormal);
    let u1: f64 = rng.sample(StandardNormal);
    p.xi + p.omega * (delta * u0.abs() + (1.0 - delta * delta).sqrt() * u1)
}
