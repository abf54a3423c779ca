//! Amortized encoder: a six-layer square fully connected network that maps
//! one image's `M` normalized scores to `M` content-adaptive weights, which
//! then linearly combine those same scores into the fused prediction `z`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FuseError, Result};

pub const ENCODER_DEPTH: usize = 6;
pub const LEAKY_SLOPE: f64 = 0.01;

/// One affine map `y = W x + b` with `W` stored row-major (`out × in`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn zeros(m: usize) -> Self {
        DenseLayer { weights: vec![0.0; m * m], bias: vec![0.0; m] }
    }

    fn apply(&self, input: &[f64], out: &mut [f64]) {
        let m = input.len();
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.weights[r * m..(r + 1) * m];
            *o = self.bias[r] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub layers: Vec<DenseLayer>,
    pub leaky_slope: f64,
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

/// Activations retained for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct EncoderTrace {
    /// `inputs[l]` is the input to layer `l`; `inputs[0]` is the score vector.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activation outputs of each layer. The last one is the weight vector.
    pub pre: Vec<Vec<f64>>,
}

impl EncoderTrace {
    pub fn weights(&self) -> &[f64] {
        &self.pre[ENCODER_DEPTH - 1]
    }

    pub fn fused(&self) -> f64 {
        dot(self.weights(), &self.inputs[0])
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl EncoderParams {
    pub fn zeros(m: usize) -> Self {
        EncoderParams {
            layers: (0..ENCODER_DEPTH).map(|_| DenseLayer::zeros(m)).collect(),
            leaky_slope: LEAKY_SLOPE,
        }
    }

    pub fn identity(m: usize) -> Self {
        let mut p = Self::zeros(m);
        for layer in &mut p.layers {
            for i in 0..m {
                layer.weights[i * m + i] = 1.0;
            }
        }
        p
    }

    /// Uniform `±√(6/(2M))` weights, zero biases.
    pub fn random<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (2 * m) as f64).sqrt();
        let mut p = Self::zeros(m);
        for layer in &mut p.layers {
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..=limit);
            }
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.bias.len())
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.dim();
        if self.layers.len() != ENCODER_DEPTH {
            return Err(FuseError::Shape { expected: ENCODER_DEPTH, actual: self.layers.len() });
        }
        for layer in &self.layers {
            if layer.bias.len() != m {
                return Err(FuseError::Shape { expected: m, actual: layer.bias.len() });
            }
            if layer.weights.len() != m * m {
                return Err(FuseError::Shape { expected: m * m, actual: layer.weights.len() });
            }
            if layer.weights.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(FuseError::Parameter("non-finite encoder parameter".into()));
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(FuseError::Shape { expected: self.dim(), actual: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(FuseError::Domain("non-finite encoder input".into()));
        }
        Ok(())
    }

    pub fn predict_weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut trace = self.forward(x);
        Ok(trace.pre.pop().unwrap_or_default())
    }

    /// `z = ⟨predict_weights(x), x⟩`
    pub fn fuse_score(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.forward(x).fused())
    }

    pub(crate) fn forward(&self, x: &[f64]) -> EncoderTrace {
        let m = x.len();
        let mut inputs = Vec::with_capacity(ENCODER_DEPTH);
        let mut pre = Vec::with_capacity(ENCODER_DEPTH);
        let mut current = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; m];
            layer.apply(&current, &mut out);
            let next = if l + 1 < ENCODER_DEPTH {
                out.iter().map(|&v| leaky(v, self.leaky_slope)).collect()
            } else {
                Vec::new()
            };
            inputs.push(std::mem::replace(&mut current, next));
            pre.push(out);
        }
        EncoderTrace { inputs, pre }
    }

    /// Accumulates `dz_grad · ∂z/∂θ` into `grad`, `z` being the fused score.
    pub(crate) fn backward(&self, trace: &EncoderTrace, dz_grad: f64, grad: &mut EncoderParams) {
        let m = self.dim();
        // ∂z/∂w = x
        let mut delta: Vec<f64> = trace.inputs[0].iter().map(|x| dz_grad * x).collect();
        for l in (0..ENCODER_DEPTH).rev() {
            if l + 1 < ENCODER_DEPTH {
                for (d, &a) in delta.iter_mut().zip(&trace.pre[l]) {
                    if a < 0.0 {
                        *d *= self.leaky_slope;
                    }
                }
            }
            let input = &trace.inputs[l];
            let g = &mut grad.layers[l];
            for ((b, row), &d) in g.bias.iter_mut().zip(g.weights.chunks_mut(m)).zip(&delta) {
                *b += d;
                for (gw, x) in row.iter_mut().zip(input) {
                    *gw += d * x;
                }
            }
            if l > 0 {
                let w = &self.layers[l].weights;
                let mut prev = vec![0.0; m];
                for (row, &d) in w.chunks(m).zip(&delta) {
                    for (p, wv) in prev.iter_mut().zip(row) {
                        *p += wv * d;
                    }
                }
                delta = prev;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let p = EncoderParams::zeros(4);
        let x = [0.3, -1.0, 2.0, 0.7];
        assert_eq!(p.predict_weights(&x).unwrap(), vec![0.0; 4]);
        assert_eq!(p.fuse_score(&x).unwrap(), 0.0);
    }

    #[test]
    fn identity_network_passes_nonnegative_inputs() {
        let p = EncoderParams::identity(3);
        let x = [0.0, 0.4, 1.5];
        assert_eq!(p.predict_weights(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn identity_network_damps_negative_inputs() {
        let p = EncoderParams::identity(3);
        let w = p.predict_weights(&[-1.0, -1.0, -1.0]).unwrap();
        assert!((w[0] + 1e-10).abs() < 1e-24, "{}", w[0]);
    }

    #[test]
    fn one_hot_weights_select_metric() {
        let mut p = EncoderParams::zeros(3);
        p.layers[ENCODER_DEPTH - 1].bias[1] = 1.0;
        assert_eq!(p.fuse_score(&[0.2, 0.65, 0.9]).unwrap(), 0.65);
    }

    #[test]
    fn zero_input_fuses_to_zero() {
        let p = EncoderParams::random(5, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(p.fuse_score(&[0.0; 5]).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = EncoderParams::zeros(3);
        assert!(matches!(
            p.predict_weights(&[1.0, 2.0]),
            Err(FuseError::Shape { expected: 3, actual: 2 })
        ));
    }

    #[test]
    fn init_respects_bounds_and_seed() {
        let a = EncoderParams::random(4, &mut ChaCha8Rng::seed_from_u64(1));
        let b = EncoderParams::random(4, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        let limit = (6.0f64 / 8.0).sqrt();
        assert!(a.layers.iter().flat_map(|l| &l.weights).all(|w| w.abs() <= limit));
        assert!(a.layers.iter().flat_map(|l| &l.bias).all(|b| *b == 0.0));
        a.validate().unwrap();
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = 4;
        let mut p = EncoderParams::random(m, &mut rng);
        for l in &mut p.layers {
            for b in &mut l.bias {
                *b = rng.random_range(-0.3..0.3);
            }
        }
        let x: Vec<f64> = (0..m).map(|_| rng.random_range(-0.2..1.2)).collect();
        let trace = p.forward(&x);
        let mut grad = EncoderParams::zeros(m);
        p.backward(&trace, 1.0, &mut grad);

        let h = 1e-6;
        for l in 0..ENCODER_DEPTH {
            for k in 0..m * m + m {
                let bump = |q: &mut EncoderParams, d: f64| {
                    if k < m * m {
                        q.layers[l].weights[k] += d;
                    } else {
                        q.layers[l].bias[k - m * m] += d;
                    }
                };
                let mut hi = p.clone();
                bump(&mut hi, h);
                let mut lo = p.clone();
                bump(&mut lo, -h);
                let fd = (hi.fuse_score(&x).unwrap() - lo.fuse_score(&x).unwrap()) / (2.0 * h);
                let an = if k < m * m {
                    grad.layers[l].weights[k]
                } else {
                    grad.layers[l].bias[k - m * m]
                };
                assert!(
                    (fd - an).abs() <= 1e-4 * an.abs().max(1e-3),
                    "layer {l} slot {k}: fd={fd} an={an}"
                );
            }
        }
    }
}
