//! The fitted fusion model: learned parameters plus the preprocessing state
//! needed to score unseen images.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{NormState, ScoreView};
use crate::distmath::combine_eval;
use crate::encoder::EncoderParams;
use crate::error::{FuseError, Result};
use crate::heads::{scale, DecoderParams, MetricNoiseParams, UncertaintyMode, UncertaintyParams};
use crate::rankfuse::RankState;
use crate::trainer::TrainConfig;

/// Which flavour of the model is fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Score fusion, model- and score-level uncertainty.
    #[serde(rename = "sf-ms")]
    SfMs,
    /// Rank fusion, model- and score-level uncertainty.
    #[serde(rename = "rf-ms")]
    RfMs,
    /// Score fusion, model-level uncertainty only.
    #[serde(rename = "sf-m")]
    SfM,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::SfMs => "sf-ms",
            Variant::RfMs => "rf-ms",
            Variant::SfM => "sf-m",
        }
    }

    pub fn uses_ranks(&self) -> bool {
        matches!(self, Variant::RfMs)
    }

    pub fn uncertainty_mode(&self) -> UncertaintyMode {
        match self {
            Variant::SfM => UncertaintyMode::ModelLevel,
            Variant::SfMs | Variant::RfMs => UncertaintyMode::ScoreLevel,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = FuseError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sf-ms" => Ok(Variant::SfMs),
            "rf-ms" => Ok(Variant::RfMs),
            "sf-m" => Ok(Variant::SfM),
            other => Err(FuseError::Config(format!("unknown variant `{other}`"))),
        }
    }
}

/// Decoder, uncertainty head and noise parameters of one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricHead {
    pub decoder: DecoderParams,
    pub uncertainty: UncertaintyParams,
    pub noise: MetricNoiseParams,
}

/// Every trainable scalar. Also used as the gradient bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub heads: Vec<MetricHead>,
}

impl ModelParams {
    pub fn n_metrics(&self) -> usize {
        self.heads.len()
    }

    /// Same shape, all zeros, uncertainty modes preserved.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|v| *v = 0.0);
        z
    }

    /// Visits every trainable scalar in a fixed canonical order.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for layer in &mut self.encoder.layers {
            layer.weights.iter_mut().for_each(&mut f);
            layer.bias.iter_mut().for_each(&mut f);
        }
        for h in &mut self.heads {
            f(&mut h.decoder.a);
            f(&mut h.decoder.b);
            f(&mut h.decoder.c);
            f(&mut h.uncertainty.a);
            f(&mut h.uncertainty.b);
            f(&mut h.uncertainty.c);
            f(&mut h.noise.alpha);
            f(&mut h.noise.log_sigma);
        }
    }

    pub fn for_each(&self, mut f: impl FnMut(f64)) {
        for layer in &self.encoder.layers {
            layer.weights.iter().chain(&layer.bias).for_each(|v| f(*v));
        }
        for h in &self.heads {
            for v in [
                h.decoder.a,
                h.decoder.b,
                h.decoder.c,
                h.uncertainty.a,
                h.uncertainty.b,
                h.uncertainty.c,
                h.noise.alpha,
                h.noise.log_sigma,
            ] {
                f(v);
            }
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        self.for_each(|v| out.push(v));
        out
    }

    pub fn assign(&mut self, values: &[f64]) {
        let mut it = values.iter();
        self.for_each_mut(|v| *v = *it.next().expect("parameter vector too short"));
    }

    pub fn len(&self) -> usize {
        let m = self.encoder.dim();
        self.encoder.layers.len() * (m * m + m) + 8 * self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `false` for scalars that must stay fixed (the quadratic and linear
    /// uncertainty coefficients of model-level heads).
    pub fn trainable_mask(&self) -> Vec<bool> {
        let m = self.encoder.dim();
        let mut mask = vec![true; self.encoder.layers.len() * (m * m + m)];
        for h in &self.heads {
            let free = h.uncertainty.mode == UncertaintyMode::ScoreLevel;
            mask.extend([true, true, true, free, free, true, true, true]);
        }
        mask
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        let flat = other.flatten();
        let mut it = flat.iter();
        self.for_each_mut(|v| *v += it.next().expect("shape mismatch"));
    }

    pub fn scale_by(&mut self, k: f64) {
        self.for_each_mut(|v| *v *= k);
    }
}

/// How raw scores are mapped into the model's working units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preprocess {
    MinMax(NormState),
    Rank(RankState),
}

impl Preprocess {
    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        match self {
            Preprocess::MinMax(norm) => norm.apply_row(raw),
            Preprocess::Rank(ranks) => {
                raw.iter().enumerate().map(|(j, &x)| ranks.lookup(j, x)).collect()
            }
        }
    }
}

/// Summary of one metric's fitted noise at a given latent quality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSummary {
    pub omega: f64,
    pub sigma: f64,
    pub omega_tilde: f64,
    pub alpha: f64,
    pub alpha_tilde: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub variant: Variant,
    pub metric_names: Vec<String>,
    pub params: ModelParams,
    pub preprocess: Preprocess,
    /// Reported predictions are `1 − z` so that they increase with the
    /// reference metric.
    pub flipped: bool,
    pub config: TrainConfig,
}

impl FusionModel {
    pub fn n_metrics(&self) -> usize {
        self.metric_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.n_metrics();
        self.params.encoder.validate()?;
        if self.params.encoder.dim() != m {
            return Err(FuseError::Shape { expected: m, actual: self.params.encoder.dim() });
        }
        if self.params.heads.len() != m {
            return Err(FuseError::Shape { expected: m, actual: self.params.heads.len() });
        }
        let mut finite = true;
        self.params.for_each(|v| finite &= v.is_finite());
        if !finite {
            return Err(FuseError::Parameter("model contains non-finite parameters".into()));
        }
        if let Some(j) = self.params.heads.iter().position(|h| !(h.noise.sigma_floor >= 0.0) || !h.noise.sigma_floor.is_finite()) {
            return Err(FuseError::Parameter(format!("metric {j}: noise floor must be >= 0")));
        }
        let expected_mode = self.variant.uncertainty_mode();
        if self.params.heads.iter().any(|h| h.uncertainty.mode != expected_mode) {
            return Err(FuseError::Parameter(format!(
                "uncertainty heads do not match variant {}",
                self.variant
            )));
        }
        match (&self.preprocess, self.variant.uses_ranks()) {
            (Preprocess::Rank(r), true) => r.validate(m)?,
            (Preprocess::MinMax(n), false) => n.validate(m)?,
            _ => {
                return Err(FuseError::Parameter(format!(
                    "preprocessing state does not match variant {}",
                    self.variant
                )))
            }
        }
        Ok(())
    }

    pub fn rank_state(&self) -> Option<&RankState> {
        match &self.preprocess {
            Preprocess::Rank(r) => Some(r),
            Preprocess::MinMax(_) => None,
        }
    }

    /// For each model metric, the index of the same-named column in `names`.
    pub fn align(&self, names: &[String]) -> Result<Vec<usize>> {
        self.metric_names
            .iter()
            .map(|want| {
                names.iter().position(|n| n == want).ok_or_else(|| {
                    FuseError::Data(format!("missing metric column `{want}`"))
                })
            })
            .collect()
    }

    fn check_row(&self, raw: &[f64]) -> Result<()> {
        if raw.len() != self.n_metrics() {
            return Err(FuseError::Shape { expected: self.n_metrics(), actual: raw.len() });
        }
        Ok(())
    }

    /// Scores mapped into working units (normalized scores or ranks).
    pub fn prepare(&self, raw: &[f64]) -> Result<Vec<f64>> {
        self.check_row(raw)?;
        Ok(self.preprocess.apply(raw))
    }

    /// Raw encoder output `z` for one image, before orientation.
    pub fn latent(&self, raw: &[f64]) -> Result<f64> {
        self.params.encoder.fuse_score(&self.prepare(raw)?)
    }

    /// Fused quality prediction for one image, given its raw metric scores in
    /// model metric order.
    pub fn predict(&self, raw: &[f64]) -> Result<f64> {
        let z = self.latent(raw)?;
        Ok(if self.flipped { 1.0 - z } else { z })
    }

    /// Predictions for every image of `scores`, matching columns by name.
    pub fn predict_view(&self, scores: &ScoreView<'_>) -> Result<Vec<f64>> {
        let cols = self.align(scores.metric_names())?;
        (0..scores.n_images())
            .map(|i| {
                let row = scores.row(i);
                let raw: Vec<f64> = cols.iter().map(|&c| row[c]).collect();
                self.predict(&raw)
            })
            .collect()
    }

    /// Content-adaptive combination weights for one image.
    pub fn encoder_weights(&self, raw: &[f64]) -> Result<Vec<f64>> {
        self.params.encoder.predict_weights(&self.prepare(raw)?)
    }

    /// Fitted noise of metric `j` at latent quality `z`.
    pub fn noise_at(&self, j: usize, z: f64) -> NoiseSummary {
        let h = &self.params.heads[j];
        let omega = scale(&h.uncertainty, z);
        let sigma = h.noise.sigma();
        let c = combine_eval(omega, sigma, h.noise.alpha);
        NoiseSummary {
            omega,
            sigma,
            omega_tilde: c.omega_t,
            alpha: h.noise.alpha,
            alpha_tilde: c.alpha_t,
        }
    }
}
