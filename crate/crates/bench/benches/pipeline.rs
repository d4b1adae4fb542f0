use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use radio_twin::models::{train, Model, ModelKind, ModelOptions, TrainConfig};
use radio_twin::ofdm::{sound_channel, ComplexVec, OfdmConfig};
use radio_twin::physio::{simulate_subject, CohortConfig};
use radio_twin::preprocess::{build_pairs, extract_d7};
use radio_twin::spectral::{dct2, idct2};
use radio_twin::Complex64;

fn wave(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = i as f64 / 250.0;
            (2.0 * std::f64::consts::PI * 1.3 * t).sin() + 0.3 * (0.37 * i as f64).cos()
        })
        .collect()
}

fn transforms(c: &mut Criterion) {
    let x = wave(450);
    c.bench_function("dct2_450", |b| b.iter(|| dct2(black_box(&x)).unwrap()));
    let coeffs = dct2(&x).unwrap();
    c.bench_function("idct2_450", |b| b.iter(|| idct2(black_box(&coeffs)).unwrap()));

    let long = wave(30_000);
    c.bench_function("extract_d7_30000", |b| b.iter(|| extract_d7(black_box(&long), 250.0).unwrap()));
}

fn sounding(c: &mut Criterion) {
    let cfg = OfdmConfig::default();
    let h = ComplexVec::new(
        (0..cfg.n_subcarriers)
            .map(|k| Complex64::from_polar(0.5 + 0.01 * k as f64, 0.1 * k as f64))
            .collect(),
    )
    .unwrap();
    let mut seed = 0;
    c.bench_function("sound_channel_1obs", |b| {
        b.iter(|| {
            seed += 1;
            sound_channel(black_box(&h), &cfg, 1, 1e-4, seed).unwrap()
        })
    });
}

fn unet_step(c: &mut Criterion) {
    let rec = simulate_subject(0, 30.0, 3, &CohortConfig::default()).unwrap();
    let pairs = build_pairs(&rec.radio, &rec.ppg, 10).unwrap();
    let batch = &pairs[..8];
    let opts = ModelOptions { unet_width: 8, ..ModelOptions::default() };
    let cfg = TrainConfig { epochs: 1, batch_size: 8, lr: 1e-3, ..TrainConfig::default() };
    let mut model = Model::build(ModelKind::UnetCascade, 10, &opts, 0).unwrap();

    let mut group = c.benchmark_group("unet_cascade");
    group.sample_size(10);
    group.bench_function("train_step_w8_b8", |b| b.iter(|| train(&mut model, batch, &[], &cfg).unwrap()));
    group.finish();
}

criterion_group!(benches, transforms, sounding, unet_step);
criterion_main!(benches);
