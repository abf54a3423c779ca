//! Per-metric decoder `f(z) = −e^{a(z−b)} + c` and uncertainty head
//! `g(z) = softplus(a z² + b z + c) + ε`.

use serde::{Deserialize, Serialize};

/// Lower bound added to every emitted scale.
pub const SCALE_FLOOR: f64 = 1e-4;
/// Exponents beyond this magnitude are clamped in [`decode`].
pub const MAX_EXPONENT: f64 = 700.0;

/// Exponential decoder mapping latent quality to a metric's score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Whether the uncertainty head may depend on `z`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UncertaintyMode {
    #[default]
    ScoreLevel,
    /// Quadratic and linear coefficients pinned to zero.
    ModelLevel,
}

/// Quadratic uncertainty head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    #[serde(default)]
    pub mode: UncertaintyMode,
}

impl UncertaintyParams {
    pub fn score_level(a: f64, b: f64, c: f64) -> Self {
        UncertaintyParams { a, b, c, mode: UncertaintyMode::ScoreLevel }
    }

    pub fn model_level(c: f64) -> Self {
        UncertaintyParams { a: 0.0, b: 0.0, c, mode: UncertaintyMode::ModelLevel }
    }
}

/// Shape `α` and model-level noise of one metric.
///
/// `σ = √(σ_min² + exp(2·log_sigma))`. The floor `σ_min` is fixed before
/// training; it stops the fit from explaining one metric exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricNoiseParams {
    pub alpha: f64,
    pub log_sigma: f64,
    #[serde(default)]
    pub sigma_floor: f64,
}

impl MetricNoiseParams {
    pub fn new(alpha: f64, log_sigma: f64) -> Self {
        MetricNoiseParams { alpha, log_sigma, sigma_floor: 0.0 }
    }

    pub fn sigma(&self) -> f64 {
        let free = (2.0 * self.log_sigma).exp();
        (self.sigma_floor * self.sigma_floor + free).sqrt()
    }

    /// `dσ/d(log_sigma)`
    pub fn dsigma(&self) -> f64 {
        let s = self.sigma();
        if s > 0.0 {
            (2.0 * self.log_sigma).exp() / s
        } else {
            0.0
        }
    }
}

/// Decoder output and its partial derivatives.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DecodeEval {
    pub value: f64,
    pub da: f64,
    pub db: f64,
    pub dc: f64,
    pub dz: f64,
    /// The exponent was clamped to `±MAX_EXPONENT`.
    pub saturated: bool,
}

pub fn decode(p: &DecoderParams, z: f64) -> f64 {
    decode_eval(p, z).value
}

pub(crate) fn decode_eval(p: &DecoderParams, z: f64) -> DecodeEval {
    let arg = p.a * (z - p.b);
    let saturated = arg.abs() > MAX_EXPONENT;
    let e = arg.clamp(-MAX_EXPONENT, MAX_EXPONENT).exp();
    if saturated {
        return DecodeEval { value: -e + p.c, da: 0.0, db: 0.0, dc: 1.0, dz: 0.0, saturated };
    }
    DecodeEval {
        value: -e + p.c,
        da: -e * (z - p.b),
        db: e * p.a,
        dc: 1.0,
        dz: -e * p.a,
        saturated,
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    // ln(eʸ − 1) = y + ln(1 − e^{−y})
    y + (-(-y).exp()).ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ScaleEval {
    pub value: f64,
    pub da: f64,
    pub db: f64,
    pub dc: f64,
    pub dz: f64,
}

pub fn scale(p: &UncertaintyParams, z: f64) -> f64 {
    scale_eval(p, z).value
}

pub(crate) fn scale_eval(p: &UncertaintyParams, z: f64) -> ScaleEval {
    let (a, b) = match p.mode {
        UncertaintyMode::ScoreLevel => (p.a, p.b),
        UncertaintyMode::ModelLevel => (0.0, 0.0),
    };
    let q = a * z * z + b * z + p.c;
    let s = sigmoid(q);
    ScaleEval {
        value: softplus(q) + SCALE_FLOOR,
        da: s * z * z,
        db: s * z,
        dc: s,
        dz: s * (2.0 * a * z + b),
    }
}
