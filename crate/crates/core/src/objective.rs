//! Negative log-posterior of a batch and its exact gradient.
//!
//! For image `i` with working-unit scores `x_i`:
//!
//! ```text
//! z_i   = e(x_i)
//! ω_ij  = g_j(z_i)
//! (ω̃, α̃) = combine(ω_ij, σ_j, α_j)
//! loss  = Σ_i Σ_j −ln SN(x_ij; f_j(z_i), ω̃, α̃) + Σ_i λ·hinge²(z_i)
//! ```
//!
//! The gradient is back-propagated by hand through the heads and the
//! encoder. Per-image terms are evaluated in parallel over fixed-size chunks
//! and reduced in chunk order, so results do not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distmath::{combine_eval, sn_log_pdf_eval};
use crate::error::{FuseError, Result};
use crate::heads::{decode_eval, scale_eval, UncertaintyMode};
use crate::model::ModelParams;

/// Images per parallel work unit. Fixed so that summation order is too.
const CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    /// Summed negative log-likelihood (nats).
    pub nll: f64,
    pub prior_penalty: f64,
    pub per_metric_nll: Vec<f64>,
    /// Number of decoder evaluations whose exponent was clamped.
    pub saturated: usize,
}

impl BatchLoss {
    fn zeros(m: usize) -> Self {
        BatchLoss { nll: 0.0, prior_penalty: 0.0, per_metric_nll: vec![0.0; m], saturated: 0 }
    }

    pub fn total(&self) -> f64 {
        self.nll + self.prior_penalty
    }

    fn merge(&mut self, other: &BatchLoss) {
        self.nll += other.nll;
        self.prior_penalty += other.prior_penalty;
        for (a, b) in self.per_metric_nll.iter_mut().zip(&other.per_metric_nll) {
            *a += b;
        }
        self.saturated += other.saturated;
    }
}

/// Differentiable stand-in for the `U(0,1)` prior on `z`:
/// `λ·(max(0, z−1)² + max(0, −z)²)`.
pub fn prior_penalty(z: f64, lambda: f64) -> f64 {
    let over = (z - 1.0).max(0.0);
    let under = (-z).max(0.0);
    lambda * (over * over + under * under)
}

fn prior_penalty_grad(z: f64, lambda: f64) -> f64 {
    2.0 * lambda * ((z - 1.0).max(0.0) - (-z).max(0.0))
}

fn check_rows(params: &ModelParams, rows: &[&[f64]]) -> Result<()> {
    if rows.is_empty() {
        return Err(FuseError::Data("empty batch".into()));
    }
    let m = params.n_metrics();
    if params.encoder.dim() != m {
        return Err(FuseError::Shape { expected: m, actual: params.encoder.dim() });
    }
    for r in rows {
        if r.len() != m {
            return Err(FuseError::Shape { expected: m, actual: r.len() });
        }
    }
    Ok(())
}

/// Adds image `index`'s contribution to `loss` (and to `grad`, when given).
fn image_term(
    params: &ModelParams,
    x: &[f64],
    index: usize,
    lambda: f64,
    loss: &mut BatchLoss,
    grad: Option<&mut ModelParams>,
) -> Result<()> {
    let trace = params.encoder.forward(x);
    let z = trace.fused();
    if !z.is_finite() {
        return Err(FuseError::NonFinite { image: index, metric: 0 });
    }
    loss.prior_penalty += prior_penalty(z, lambda);

    let want_grad = grad.is_some();
    let mut head_grads = Vec::new();
    let mut dz = prior_penalty_grad(z, lambda);

    for (j, head) in params.heads.iter().enumerate() {
        let dec = decode_eval(&head.decoder, z);
        let sc = scale_eval(&head.uncertainty, z);
        let sigma = head.noise.sigma();
        let comb = combine_eval(sc.value, sigma, head.noise.alpha);
        let resid = x[j] - dec.value;
        let e = sn_log_pdf_eval(resid, comb.omega_t, comb.alpha_t);
        let nll = -e.value;
        if !nll.is_finite() {
            return Err(FuseError::NonFinite { image: index, metric: j });
        }
        loss.nll += nll;
        loss.per_metric_nll[j] += nll;
        loss.saturated += usize::from(dec.saturated);

        if !want_grad {
            continue;
        }
        // d(nll)/d(f) = −d(nll)/d(resid) = e.d_resid
        let g_f = e.d_resid;
        let g_wt = -e.d_omega;
        let g_at = -e.d_alpha;
        let g_omega = g_wt * comb.domega_t_domega + g_at * comb.dalpha_t_domega;
        let g_sigma = g_wt * comb.domega_t_dsigma + g_at * comb.dalpha_t_dsigma;
        let g_alpha = g_at * comb.dalpha_t_dalpha;
        let score_level = head.uncertainty.mode == UncertaintyMode::ScoreLevel;
        head_grads.push([
            g_f * dec.da,
            g_f * dec.db,
            g_f * dec.dc,
            if score_level { g_omega * sc.da } else { 0.0 },
            if score_level { g_omega * sc.db } else { 0.0 },
            g_omega * sc.dc,
            g_alpha,
            g_sigma * head.noise.dsigma(),
        ]);
        dz += g_f * dec.dz + g_omega * sc.dz;
    }

    if let Some(grad) = grad {
        for (h, g) in grad.heads.iter_mut().zip(&head_grads) {
            h.decoder.a += g[0];
            h.decoder.b += g[1];
            h.decoder.c += g[2];
            h.uncertainty.a += g[3];
            h.uncertainty.b += g[4];
            h.uncertainty.c += g[5];
            h.noise.alpha += g[6];
            h.noise.log_sigma += g[7];
        }
        params.encoder.backward(&trace, dz, &mut grad.encoder);
    }
    Ok(())
}

fn evaluate(
    params: &ModelParams,
    rows: &[&[f64]],
    lambda: f64,
    with_grad: bool,
) -> Result<(BatchLoss, Option<ModelParams>)> {
    check_rows(params, rows)?;
    let m = params.n_metrics();
    let parts: Vec<(BatchLoss, Option<ModelParams>)> = rows
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut loss = BatchLoss::zeros(m);
            let mut grad = with_grad.then(|| params.zeros_like());
            for (k, x) in chunk.iter().enumerate() {
                image_term(params, x, c * CHUNK + k, lambda, &mut loss, grad.as_mut())?;
            }
            Ok((loss, grad))
        })
        .collect::<Result<_>>()?;

    let mut total = BatchLoss::zeros(m);
    let mut grad = with_grad.then(|| params.zeros_like());
    for (loss, g) in &parts {
        total.merge(loss);
        if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
            acc.add_assign(g);
        }
    }
    if !total.total().is_finite() {
        return Err(FuseError::NonFinite { image: 0, metric: 0 });
    }
    Ok((total, grad))
}

/// Summed negative log-posterior of `rows` (scores in working units).
pub fn negative_log_posterior(params: &ModelParams, rows: &[&[f64]], lambda: f64) -> Result<BatchLoss> {
    evaluate(params, rows, lambda, false).map(|(l, _)| l)
}

/// Loss together with its gradient with respect to every parameter.
pub fn gradient(params: &ModelParams, rows: &[&[f64]], lambda: f64) -> Result<(BatchLoss, ModelParams)> {
    let (loss, grad) = evaluate(params, rows, lambda, true)?;
    Ok((loss, grad.expect("gradient requested")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distmath::{skew_normal_log_pdf, SkewNormalParams, HALF_LN_2PI};
    use crate::encoder::{EncoderParams, ENCODER_DEPTH};
    use crate::heads::{
        decode, scale, softplus_inv, DecoderParams, MetricNoiseParams, UncertaintyParams,
    };
    use crate::model::MetricHead;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(m: usize, mode: UncertaintyMode, rng: &mut ChaCha8Rng) -> ModelParams {
        let mut encoder = EncoderParams::random(m, rng);
        for l in &mut encoder.layers {
            for b in &mut l.bias {
                *b = rng.random_range(-0.2..0.2);
            }
        }
        let heads = (0..m)
            .map(|_| MetricHead {
                decoder: DecoderParams {
                    a: rng.random_range(-2.0..-0.2),
                    b: rng.random_range(0.0..1.0),
                    c: rng.random_range(0.0..2.0),
                },
                uncertainty: UncertaintyParams {
                    a: if mode == UncertaintyMode::ScoreLevel { rng.random_range(-1.0..1.0) } else { 0.0 },
                    b: if mode == UncertaintyMode::ScoreLevel { rng.random_range(-1.0..1.0) } else { 0.0 },
                    c: rng.random_range(-2.5..-0.5),
                    mode,
                },
                noise: MetricNoiseParams {
                    alpha: rng.random_range(-3.0..3.0),
                    log_sigma: rng.random_range(-3.0..-1.0),
                    sigma_floor: rng.random_range(0.0..0.05),
                },
            })
            .collect();
        ModelParams { encoder, heads }
    }

    fn random_rows(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..m).map(|_| rng.random_range(0.0..1.0)).collect()).collect()
    }

    fn refs(rows: &[Vec<f64>]) -> Vec<&[f64]> {
        rows.iter().map(Vec::as_slice).collect()
    }

    /// Straight-line reimplementation calling the public distmath API.
    fn naive_loss(params: &ModelParams, rows: &[Vec<f64>], lambda: f64) -> f64 {
        let mut total = 0.0;
        for x in rows {
            let z = params.encoder.fuse_score(x).unwrap();
            for (j, h) in params.heads.iter().enumerate() {
                let omega = scale(&h.uncertainty, z);
                let sigma = h.noise.sigma_floor.hypot(h.noise.log_sigma.exp());
                let (wt, at) = crate::distmath::combine_noise_params(omega, sigma, h.noise.alpha).unwrap();
                let p = SkewNormalParams::new(decode(&h.decoder, z), wt, at).unwrap();
                total -= skew_normal_log_pdf(x[j], &p).unwrap();
            }
            total += prior_penalty(z, lambda);
        }
        total
    }

    #[test]
    fn penalty_examples() {
        assert_eq!(prior_penalty(0.5, 123.0), 0.0);
        assert!((prior_penalty(1.2, 10.0) - 0.4).abs() < 1e-12);
        assert!((prior_penalty(-0.3, 10.0) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn residual_free_normal_case() {
        // One metric, z pinned to 0.6 by a constant weight of 1 on x = 0.6.
        let mut encoder = EncoderParams::zeros(1);
        encoder.layers[ENCODER_DEPTH - 1].bias[0] = 1.0;
        let omega = 0.3;
        let head = MetricHead {
            // f(0.6) = −e⁰ + 1.6 = 0.6
            decoder: DecoderParams { a: -1.0, b: 0.6, c: 1.6 },
            uncertainty: UncertaintyParams::model_level(softplus_inv(omega - crate::heads::SCALE_FLOOR)),
            noise: MetricNoiseParams::new(0.0, -60.0),
        };
        let params = ModelParams { encoder, heads: vec![head] };
        let x = [0.6];
        let l = negative_log_posterior(&params, &[&x], 10.0).unwrap();
        let want = omega.ln() + HALF_LN_2PI;
        assert!((l.nll - want).abs() < 1e-12, "{} vs {}", l.nll, want);
        assert_eq!(l.prior_penalty, 0.0);

        // residual zero and α = 0: decoder offset gradient vanishes
        let (_, g) = gradient(&params, &[&x], 10.0).unwrap();
        assert!(g.heads[0].decoder.c.abs() < 1e-12);
    }

    #[test]
    fn matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &(n, m) in &[(5usize, 3usize), (50, 8), (17, 1)] {
            let params = random_params(m, UncertaintyMode::ScoreLevel, &mut rng);
            let rows = random_rows(n, m, &mut rng);
            let got = negative_log_posterior(&params, &refs(&rows), 10.0).unwrap();
            let want = naive_loss(&params, &rows, 10.0);
            assert!((got.total() - want).abs() < 1e-10 * want.abs().max(1.0), "{} vs {}", got.total(), want);
            let per_metric: f64 = got.per_metric_nll.iter().sum();
            assert!((per_metric - got.nll).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicating_batch_doubles_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let params = random_params(3, UncertaintyMode::ScoreLevel, &mut rng);
        let rows = random_rows(8, 3, &mut rng);
        let mut doubled = rows.clone();
        doubled.extend(rows.clone());
        let (l1, g1) = gradient(&params, &refs(&rows), 10.0).unwrap();
        let (l2, g2) = gradient(&params, &refs(&doubled), 10.0).unwrap();
        assert!((l2.nll - 2.0 * l1.nll).abs() < 1e-12 * l1.nll.abs().max(1.0));
        for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
            assert!((b - 2.0 * a).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let params = random_params(4, UncertaintyMode::ScoreLevel, &mut rng);
        let rows = random_rows(40, 4, &mut rng);
        let mut rev = rows.clone();
        rev.reverse();
        let a = negative_log_posterior(&params, &refs(&rows), 10.0).unwrap().total();
        let b = negative_log_posterior(&params, &refs(&rev), 10.0).unwrap().total();
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn model_level_matches_score_level_with_flat_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let mut params = random_params(3, UncertaintyMode::ScoreLevel, &mut rng);
        for h in &mut params.heads {
            h.uncertainty.a = 0.0;
            h.uncertainty.b = 0.0;
        }
        let mut flat = params.clone();
        for h in &mut flat.heads {
            h.uncertainty.mode = UncertaintyMode::ModelLevel;
        }
        let rows = random_rows(10, 3, &mut rng);
        let a = negative_log_posterior(&params, &refs(&rows), 10.0).unwrap();
        let b = negative_log_posterior(&flat, &refs(&rows), 10.0).unwrap();
        assert_eq!(a.total(), b.total());
    }

    /// Rows near the model's own decoders, so the loss stays O(N·M) and
    /// central differences are not swamped by rounding.
    fn plausible_rows(params: &ModelParams, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let z: f64 = rng.random_range(0.0..1.0);
                params
                    .heads
                    .iter()
                    .map(|h| decode(&h.decoder, z) + rng.random_range(-0.1..0.1))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let mut params = random_params(3, UncertaintyMode::ScoreLevel, &mut rng);
        // positive biases keep most units on the unit slope, otherwise the
        // first-layer gradients fall below what differencing can resolve
        for l in &mut params.encoder.layers {
            for b in &mut l.bias {
                *b = rng.random_range(0.1..0.5);
            }
        }
        let rows = plausible_rows(&params, 8, &mut rng);
        let rows = refs(&rows);
        let (_, grad) = gradient(&params, &rows, 10.0).unwrap();
        let analytic = grad.flatten();
        let base = params.flatten();
        let h = 1e-5;
        // differences are taken per image and per term before summing, so the
        // rounding error scales with one term rather than the batch total
        let terms = |p: &ModelParams| -> Vec<f64> {
            rows.iter()
                .flat_map(|r| {
                    let l = negative_log_posterior(p, &[*r], 10.0).unwrap();
                    let mut t = l.per_metric_nll;
                    t.push(l.prior_penalty);
                    t
                })
                .collect()
        };
        for (k, an) in analytic.iter().enumerate() {
            let mut p = params.clone();
            let mut v = base.clone();
            v[k] += h;
            p.assign(&v);
            let hi = terms(&p);
            v[k] -= 2.0 * h;
            p.assign(&v);
            let lo = terms(&p);
            let fd: f64 = hi.iter().zip(&lo).map(|(a, b)| (a - b) / (2.0 * h)).sum();
            let ok = if an.abs() < 1e-6 {
                (fd - an).abs() < 1e-7
            } else {
                (fd - an).abs() / an.abs() < 1e-4
            };
            assert!(ok, "slot {k}: analytic={an} fd={fd}");
        }
    }

    #[test]
    fn empty_and_mismatched_batches_fail() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let params = random_params(3, UncertaintyMode::ScoreLevel, &mut rng);
        assert!(negative_log_posterior(&params, &[], 1.0).is_err());
        assert!(matches!(
            negative_log_posterior(&params, &[&[0.1, 0.2]], 1.0),
            Err(FuseError::Shape { .. })
        ));
    }
}
