#![allow(dead_code)]

use fuseq::data::{synth_generate, SynthMetric};
use fuseq::heads::{DecoderParams, UncertaintyParams};
use fuseq::{srcc, ScoreTable, SynthSpec, TrainConfig, Variant};

fn metric(dec: [f64; 3], unc: [f64; 3], alpha: f64, sigma: f64) -> SynthMetric {
    SynthMetric {
        name: None,
        decoder: DecoderParams { a: dec[0], b: dec[1], c: dec[2] },
        uncertainty: UncertaintyParams::score_level(unc[0], unc[1], unc[2]),
        alpha,
        sigma,
    }
}

/// Eight metrics of mixed polarity and quality with strongly z-dependent
/// noise. Individual |SRCC| against the true z lies between about 0.6 and 0.95.
pub fn recovery_spec() -> SynthSpec {
    let metrics = vec![
        metric([-1.5, 0.5, 2.0], [0.0, -4.0, 0.5], 2.0, 0.05),
        metric([2.0, 0.3, 3.0], [0.0, 3.0, -1.5], -3.0, 0.05),
        metric([-0.8, 0.0, 1.0], [2.0, -3.0, -0.8], 0.0, 0.08),
        metric([1.2, 0.8, 0.5], [0.0, -2.0, -0.3], 4.0, 0.05),
        metric([-3.0, 0.6, 1.0], [0.0, 4.0, -2.5], -2.0, 0.05),
        metric([-1.0, 0.5, 2.0], [0.0, -5.0, 0.3], 1.0, 0.1),
        metric([1.6, 0.2, 1.5], [3.0, -3.0, -0.8], 0.0, 0.06),
        metric([-2.0, 0.4, 1.5], [0.0, 0.0, -0.8], -1.0, 0.05),
    ];
    SynthSpec { n: 2000, m: 8, seed: 7, metrics }
}

/// Three metrics, few images: cheap enough for repeated training runs.
pub fn small_spec(n: usize, seed: u64) -> SynthSpec {
    let metrics = vec![
        metric([-1.5, 0.5, 2.0], [0.0, -2.0, -2.0], 1.0, 0.03),
        metric([2.0, 0.3, 3.0], [0.0, 2.0, -2.5], -2.0, 0.03),
        metric([-1.0, 0.5, 1.0], [0.0, 0.0, -1.5], 0.0, 0.05),
    ];
    SynthSpec { n, m: 3, seed, metrics }
}

pub fn generate(spec: &SynthSpec) -> (ScoreTable, Vec<f64>) {
    synth_generate(spec).expect("fixture spec is valid")
}

pub fn quick_config(variant: Variant, max_epochs: usize) -> TrainConfig {
    TrainConfig { variant, max_epochs, batch_size: 64, ..Default::default() }
}

/// |SRCC| of every metric column against `z`.
pub fn individual_srcc(table: &ScoreTable, z: &[f64]) -> Vec<f64> {
    (0..table.n_metrics()).map(|j| srcc(&table.column(j), z).unwrap().abs()).collect()
}
