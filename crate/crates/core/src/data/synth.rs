//! Synthetic score tables drawn from the observation model
//! `x = f(z) + n + n̂`, `z ~ U(0,1)`, `n ~ SN(0, g(z), α)`, `n̂ ~ N(0, σ²)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::table::ScoreTable;
use crate::distmath::{skew_normal_sample, SkewNormalParams};
use crate::error::{FuseError, Result};
use crate::heads::{decode, scale, DecoderParams, UncertaintyParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthMetric {
    #[serde(default)]
    pub name: Option<String>,
    pub decoder: DecoderParams,
    pub uncertainty: UncertaintyParams,
    pub alpha: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    #[serde(rename = "metric")]
    pub metrics: Vec<SynthMetric>,
}

impl SynthSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SynthSpec =
            toml::from_str(text).map_err(|e| FuseError::Config(format!("synthetic spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(FuseError::Config("synthetic spec needs n >= 1".into()));
        }
        if self.m == 0 || self.metrics.len() != self.m {
            return Err(FuseError::Config(format!(
                "synthetic spec declares m = {} but lists {} metrics",
                self.m,
                self.metrics.len()
            )));
        }
        for (j, mt) in self.metrics.iter().enumerate() {
            let finite = [
                mt.decoder.a,
                mt.decoder.b,
                mt.decoder.c,
                mt.uncertainty.a,
                mt.uncertainty.b,
                mt.uncertainty.c,
                mt.alpha,
            ];
            if finite.iter().any(|v| !v.is_finite()) {
                return Err(FuseError::Config(format!("metric {j}: non-finite parameter")));
            }
            if !(mt.sigma >= 0.0) || !mt.sigma.is_finite() {
                return Err(FuseError::Config(format!("metric {j}: sigma must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn metric_names(&self) -> Vec<String> {
        self.metrics
            .iter()
            .enumerate()
            .map(|(j, m)| m.name.clone().unwrap_or_else(|| format!("metric{}", j + 1)))
            .collect()
    }
}

/// Draws a table (with `mos` = true `z`) and the true latent qualities.
pub fn synth_generate(spec: &SynthSpec) -> Result<(ScoreTable, Vec<f64>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut zs = Vec::with_capacity(spec.n);
    let mut rows = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let z: f64 = rng.random();
        let row = spec
            .metrics
            .iter()
            .map(|mt| {
                let noise = SkewNormalParams { xi: 0.0, omega: scale(&mt.uncertainty, z), alpha: mt.alpha };
                let n = skew_normal_sample(&mut rng, &noise);
                let n_hat: f64 = rng.sample::<f64, _>(StandardNormal) * mt.sigma;
                decode(&mt.decoder, z) + n + n_hat
            })
            .collect();
        rows.push(row);
        zs.push(z);
    }
    let ids = (0..spec.n).map(|i| format!("img{i:06}")).collect();
    let table = ScoreTable::new("synthetic", ids, spec.metric_names(), rows, Some(zs.clone()))?;
    Ok((table, zs))
}

/// Appends `count` columns of `U(0,1)` noise named `random1`, `random2`...
pub fn with_uniform_metrics(table: &ScoreTable, count: usize, seed: u64) -> Result<ScoreTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = table.clone();
    for k in 0..count {
        let col: Vec<f64> = (0..table.n_images()).map(|_| rng.random::<f64>()).collect();
        out = out.with_metric(format!("random{}", k + 1), &col)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluate::srcc;

    fn metric(a: f64, unc_c: f64, alpha: f64, sigma: f64) -> SynthMetric {
        SynthMetric {
            name: None,
            decoder: DecoderParams { a, b: 0.5, c: 1.0 },
            uncertainty: UncertaintyParams::score_level(0.0, 0.0, unc_c),
            alpha,
            sigma,
        }
    }

    fn skewness(xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n / m2.powf(1.5)
    }

    fn residuals(spec: &SynthSpec, table: &ScoreTable, z: &[f64], j: usize) -> Vec<f64> {
        (0..table.n_images())
            .map(|i| table.row(i)[j] - decode(&spec.metrics[j].decoder, z[i]))
            .collect()
    }

    #[test]
    fn noiseless_metrics_are_monotone_in_z() {
        let spec = SynthSpec {
            n: 300,
            m: 2,
            seed: 1,
            metrics: vec![metric(-2.0, -60.0, 0.0, 0.0), metric(1.5, -60.0, 0.0, 0.0)],
        };
        let (t, z) = synth_generate(&spec).unwrap();
        // only the 1e-4 scale floor remains, which can swap near-equal z
        assert!(srcc(&t.column(0), &z).unwrap() > 1.0 - 1e-4);
        assert!(srcc(&t.column(1), &z).unwrap() < -1.0 + 1e-4);
        assert_eq!(t.mos().unwrap(), z.as_slice());
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SynthSpec { n: 50, m: 1, seed: 9, metrics: vec![metric(-1.0, -2.0, 3.0, 0.1)] };
        assert_eq!(synth_generate(&spec).unwrap(), synth_generate(&spec).unwrap());
        let other = SynthSpec { seed: 10, ..spec.clone() };
        assert_ne!(synth_generate(&spec).unwrap().1, synth_generate(&other).unwrap().1);
    }

    #[test]
    fn residual_skew_follows_shape_sign() {
        let spec = SynthSpec {
            n: 5000,
            m: 2,
            seed: 4,
            metrics: vec![metric(-1.0, -2.0, 4.0, 0.02), metric(-1.0, -2.0, -4.0, 0.02)],
        };
        let (t, z) = synth_generate(&spec).unwrap();
        assert!(skewness(&residuals(&spec, &t, &z, 0)) > 0.0);
        assert!(skewness(&residuals(&spec, &t, &z, 1)) < 0.0);
    }

    #[test]
    fn symmetric_noise_has_no_skew() {
        let spec = SynthSpec { n: 10_000, m: 1, seed: 5, metrics: vec![metric(-1.0, -2.0, 0.0, 0.05)] };
        let (t, z) = synth_generate(&spec).unwrap();
        assert!(skewness(&residuals(&spec, &t, &z, 0)).abs() < 0.05);
    }

    #[test]
    fn conditional_spread_tracks_noise_model() {
        let mut m = metric(-1.0, 0.0, 0.0, 0.03);
        m.uncertainty = UncertaintyParams::score_level(0.0, -4.0, -1.5);
        let spec = SynthSpec { n: 10_000, m: 1, seed: 6, metrics: vec![m.clone()] };
        let (t, z) = synth_generate(&spec).unwrap();
        let res = residuals(&spec, &t, &z, 0);
        for bin in 0..5 {
            let lo = bin as f64 * 0.2;
            let sel: Vec<f64> = (0..res.len()).filter(|&i| z[i] >= lo && z[i] < lo + 0.2).map(|i| res[i]).collect();
            let mean = sel.iter().sum::<f64>() / sel.len() as f64;
            let sd = (sel.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / sel.len() as f64).sqrt();
            let mid = lo + 0.1;
            let want = (scale(&m.uncertainty, mid).powi(2) + m.sigma * m.sigma).sqrt();
            assert!((sd / want - 1.0).abs() < 0.1, "bin {bin}: sd={sd} want={want}");
        }
    }

    #[test]
    fn spec_parsing() {
        let text = r#"
            n = 10
            m = 2
            seed = 3

            [[metric]]
            name = "good"
            decoder = { a = -2.0, b = 0.5, c = 1.0 }
            uncertainty = { a = 0.0, b = -1.0, c = -2.0 }
            alpha = -1.5
            sigma = 0.05

            [[metric]]
            decoder = { a = 1.0, b = 0.0, c = 0.0 }
            uncertainty = { a = 0.0, b = 0.0, c = -1.0 }
            alpha = 0.0
            sigma = 0.1
        "#;
        let spec = SynthSpec::from_toml(text).unwrap();
        assert_eq!(spec.metric_names(), ["good", "metric2"]);
        assert_eq!(SynthSpec::from_toml(&spec.to_toml()).unwrap(), spec);
        assert!(SynthSpec::from_toml(&text.replace("m = 2", "m = 3")).is_err());
        assert!(SynthSpec::from_toml("n = 1").is_err());
    }

    #[test]
    fn uniform_columns_are_appended() {
        let spec = SynthSpec { n: 20, m: 1, seed: 2, metrics: vec![metric(-1.0, -2.0, 0.0, 0.05)] };
        let (t, _) = synth_generate(&spec).unwrap();
        let u = with_uniform_metrics(&t, 2, 77).unwrap();
        assert_eq!(u.metric_names(), ["metric1", "random1", "random2"]);
        assert!(u.column(2).iter().all(|&v| (0.0..1.0).contains(&v)));
    }
}
