//! End-to-end fitting with Adam, minibatches and plateau stopping.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{NormState, ScoreView};
use crate::encoder::EncoderParams;
use crate::error::{FuseError, Result};
use crate::evaluate::{plcc, srcc};
use crate::heads::{softplus_inv, DecoderParams, MetricNoiseParams, UncertaintyParams};
use crate::model::{FusionModel, MetricHead, ModelParams, Preprocess, Variant};
use crate::objective::{gradient, negative_log_posterior, BatchLoss};
use crate::rankfuse::{mean_rank_baseline, rank_normalize, RankState};

/// Smallest per-metric spread used when initializing heads.
const MIN_INIT_STD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub plateau_rel_tol: f64,
    pub plateau_patience: usize,
    pub prior_lambda: f64,
    /// Fraction of each metric's spread around the rank consensus used as
    /// its model-noise floor. Zero gives the unconstrained posterior.
    #[serde(default = "default_noise_floor")]
    pub noise_floor: f64,
    pub seed: u64,
}

fn default_noise_floor() -> f64 {
    0.5
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::SfMs,
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 256,
            max_epochs: 2000,
            plateau_rel_tol: 1e-5,
            plateau_patience: 10,
            prior_lambda: 10.0,
            noise_floor: default_noise_floor(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FuseError::Config(msg));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("betas must lie in [0, 1), got {} and {}", self.beta1, self.beta2));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max epochs must be at least 1".into());
        }
        if !(self.prior_lambda >= 0.0) || !self.prior_lambda.is_finite() {
            return bad(format!("prior weight must be >= 0, got {}", self.prior_lambda));
        }
        if !(self.noise_floor >= 0.0) || !self.noise_floor.is_finite() {
            return bad(format!("noise floor must be >= 0, got {}", self.noise_floor));
        }
        if !(self.plateau_rel_tol >= 0.0) {
            return bad(format!("plateau tolerance must be >= 0, got {}", self.plateau_rel_tol));
        }
        Ok(())
    }
}

/// First and second moment estimates for every scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(FuseError::Shape { expected: params.len(), actual: grads.len() });
    }
    if let Some(k) = grads.iter().position(|g| !g.is_finite()) {
        return Err(FuseError::Domain(format!("non-finite gradient in slot {k}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Full-data loss after one epoch, averaged per image.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub nll: f64,
    pub penalty: f64,
    pub per_metric_nll: Vec<f64>,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} loss={:.6} nll={:.6} penalty={:.6}",
            self.epoch, self.loss, self.nll, self.penalty
        )
    }
}

/// A trained model together with its training history.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: FusionModel,
    pub history: Vec<EpochRecord>,
    /// `true` when training stopped on a loss plateau rather than the epoch cap.
    pub plateaued: bool,
    /// Decoder evaluations that hit the exponent clamp during the final pass.
    pub saturated: usize,
}

impl Fitted {
    pub fn final_loss(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |r| r.loss)
    }
}

/// Spread of each working column around the mean-rank consensus,
/// `std(x)·√(1 − ρ²)` with `ρ` the Pearson correlation to the consensus.
fn consensus_spread(scores: &ScoreView<'_>, columns: &[Vec<f64>]) -> Result<Vec<f64>> {
    if columns.len() < 2 {
        return Ok(vec![0.0; columns.len()]);
    }
    let consensus = mean_rank_baseline(scores)?;
    Ok(columns
        .iter()
        .map(|col| {
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let std = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            let rho = plcc(col, &consensus).unwrap_or(0.0);
            std * (1.0 - rho * rho).max(0.0).sqrt()
        })
        .collect())
}

fn initial_heads(columns: &[Vec<f64>], floors: &[f64], variant: Variant) -> Vec<MetricHead> {
    columns
        .iter()
        .zip(floors)
        .map(|(col, &sigma_floor)| {
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let std = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt().max(MIN_INIT_STD);
            let unc_c = softplus_inv(std);
            let uncertainty = match variant.uncertainty_mode() {
                crate::heads::UncertaintyMode::ScoreLevel => UncertaintyParams::score_level(0.0, 0.0, unc_c),
                crate::heads::UncertaintyMode::ModelLevel => UncertaintyParams::model_level(unc_c),
            };
            MetricHead {
                decoder: DecoderParams { a: -1.0, b: 0.5, c: mean + 1.0 },
                uncertainty,
                noise: MetricNoiseParams { alpha: 0.0, log_sigma: (0.1 * std).ln(), sigma_floor },
            }
        })
        .collect()
}

/// Fits a model to unlabeled scores.
pub fn train(scores: ScoreView<'_>, cfg: &TrainConfig) -> Result<Fitted> {
    train_with_observer(scores, cfg, |_| {})
}

/// [`train`], calling `observer` after every epoch.
pub fn train_with_observer(
    scores: ScoreView<'_>,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochRecord),
) -> Result<Fitted> {
    cfg.validate()?;
    let n = scores.n_images();
    let m = scores.n_metrics();
    if n < m.max(2) {
        return Err(FuseError::Data(format!("need at least max(M, 2) = {} images, got {n}", m.max(2))));
    }

    let raw_columns = scores.columns();
    for (j, col) in raw_columns.iter().enumerate() {
        if col.iter().all(|&v| v == col[0]) {
            log::warn!(
                "metric `{}` has zero variance; kept, its noise terms will absorb it",
                scores.metric_names()[j]
            );
        }
    }
    let (preprocess, columns) = if cfg.variant.uses_ranks() {
        let ranked = raw_columns.iter().map(|c| rank_normalize(c)).collect::<Result<Vec<_>>>()?;
        (Preprocess::Rank(RankState::fit(&raw_columns)?), ranked)
    } else {
        let norm = NormState::fit(&scores)?;
        let normed = raw_columns
            .iter()
            .enumerate()
            .map(|(j, c)| c.iter().map(|&x| norm.apply(j, x)).collect())
            .collect();
        (Preprocess::MinMax(norm), normed)
    };
    let rows: Vec<Vec<f64>> = (0..n).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
    let all_rows: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();

    let floors: Vec<f64> =
        consensus_spread(&scores, &columns)?.into_iter().map(|s| cfg.noise_floor * s).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams {
        encoder: EncoderParams::random(m, &mut rng),
        heads: initial_heads(&columns, &floors, cfg.variant),
    };
    let mask = params.trainable_mask();
    let mut flat = params.flatten();
    let mut adam = AdamState::new(flat.len());

    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::new();
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    let mut plateaued = false;
    let mut last_eval = BatchLoss { nll: 0.0, prior_penalty: 0.0, per_metric_nll: vec![0.0; m], saturated: 0 };

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let batch_rows: Vec<&[f64]> = batch.iter().map(|&i| rows[i].as_slice()).collect();
            let (_, grad) = gradient(&params, &batch_rows, cfg.prior_lambda)?;
            let inv = 1.0 / batch.len() as f64;
            let mut g = grad.flatten();
            for (gv, &free) in g.iter_mut().zip(&mask) {
                *gv = if free { *gv * inv } else { 0.0 };
            }
            adam_step(&mut flat, &g, &mut adam, cfg)?;
            params.assign(&flat);
        }

        last_eval = negative_log_posterior(&params, &all_rows, cfg.prior_lambda)?;
        let per_image = 1.0 / n as f64;
        let record = EpochRecord {
            epoch,
            loss: last_eval.total() * per_image,
            nll: last_eval.nll * per_image,
            penalty: last_eval.prior_penalty * per_image,
            per_metric_nll: last_eval.per_metric_nll.iter().map(|v| v * per_image).collect(),
        };
        observer(&record);

        let improved = best - record.loss > cfg.plateau_rel_tol * best.abs().max(1e-12);
        if best.is_finite() && !improved {
            stale += 1;
        } else {
            stale = 0;
        }
        best = best.min(record.loss);
        history.push(record);
        if stale >= cfg.plateau_patience {
            plateaued = true;
            break;
        }
    }

    if last_eval.saturated > 0 {
        log::warn!("{} decoder evaluations hit the exponent clamp", last_eval.saturated);
    }

    // Orient predictions so they increase with the first non-constant metric.
    let fused: Vec<f64> = all_rows.iter().map(|x| params.encoder.forward(x).fused()).collect();
    let flipped = match columns.iter().find(|c| c.iter().any(|&v| v != c[0])) {
        Some(reference) => srcc(&fused, reference).map(|r| r < 0.0).unwrap_or(false),
        None => false,
    };

    let model = FusionModel {
        variant: cfg.variant,
        metric_names: scores.metric_names().to_vec(),
        params,
        preprocess,
        flipped,
        config: cfg.clone(),
    };
    Ok(Fitted { model, history, plateaued, saturated: last_eval.saturated })
}
