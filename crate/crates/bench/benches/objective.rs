use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use fuseq::data::{synth_generate, SynthMetric};
use fuseq::distmath::{erf, log_ndtr, skew_normal_log_pdf};
use fuseq::heads::{DecoderParams, UncertaintyParams};
use fuseq::objective::gradient;
use fuseq::{train, FusionModel, ScoreTable, SkewNormalParams, SynthSpec, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn table(n: usize, m: usize) -> ScoreTable {
    let metrics = (0..m)
        .map(|j| {
            let sign = if j % 2 == 0 { -1.0 } else { 1.0 };
            SynthMetric {
                name: None,
                decoder: DecoderParams { a: sign * (1.0 + 0.2 * j as f64), b: 0.5, c: 2.0 },
                uncertainty: UncertaintyParams::score_level(0.0, -2.0, -1.5 - 0.1 * j as f64),
                alpha: sign,
                sigma: 0.05,
            }
        })
        .collect();
    synth_generate(&SynthSpec { n, m, seed: 3, metrics }).unwrap().0
}

/// A briefly trained model and its working-unit rows.
fn fitted(n: usize, m: usize) -> (FusionModel, Vec<Vec<f64>>) {
    let t = table(n, m);
    let cfg = TrainConfig { max_epochs: 3, ..Default::default() };
    let model = train(t.view(), &cfg).unwrap().model;
    let rows = (0..n).map(|i| model.prepare(t.row(i)).unwrap()).collect();
    (model, rows)
}

fn bench_distmath(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xs: Vec<f64> = (0..1024).map(|_| rng.random_range(-6.0..6.0)).collect();
    let p = SkewNormalParams::new(0.1, 0.3, -2.0).unwrap();

    let mut g = c.benchmark_group("distmath");
    g.bench_function("erf_1024", |b| b.iter(|| xs.iter().map(|&x| erf(black_box(x)).unwrap()).sum::<f64>()));
    g.bench_function("log_ndtr_1024", |b| b.iter(|| xs.iter().map(|&x| log_ndtr(black_box(x))).sum::<f64>()));
    g.bench_function("skew_normal_log_pdf_1024", |b| {
        b.iter(|| xs.iter().map(|&x| skew_normal_log_pdf(black_box(x), &p).unwrap()).sum::<f64>())
    });
    g.finish();
}

fn bench_gradient(c: &mut Criterion) {
    let mut g = c.benchmark_group("gradient_batch256");
    for m in [4, 8, 16] {
        let (model, rows) = fitted(512, m);
        let batch: Vec<&[f64]> = rows.iter().take(256).map(Vec::as_slice).collect();
        g.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| {
            b.iter(|| gradient(black_box(&model.params), &batch, 10.0).unwrap())
        });
    }
    g.finish();
}

fn bench_predict(c: &mut Criterion) {
    let (model, _) = fitted(256, 8);
    let t = table(1, 8);
    let row = t.row(0).to_vec();
    c.bench_function("predict_one_m8", |b| b.iter(|| model.predict(black_box(&row)).unwrap()));
}

fn bench_epoch(c: &mut Criterion) {
    let t = table(2000, 8);
    let cfg = TrainConfig { max_epochs: 1, ..Default::default() };
    let mut g = c.benchmark_group("train");
    g.sample_size(10);
    g.bench_function("one_epoch_n2000_m8", |b| {
        b.iter_batched(|| t.clone(), |t| train(t.view(), &cfg).unwrap(), BatchSize::LargeInput)
    });
    g.finish();
}

criterion_group!(benches, bench_distmath, bench_gradient, bench_predict, bench_epoch);
criterion_main!(benches);
