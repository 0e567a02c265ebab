use std::hint::black_box;

use attengluco_core::model::BaselineConfig;
use attengluco_core::{Graph, ModelConfig, ModelInput, ModelSpec, Tensor};
use criterion::{criterion_group, criterion_main, Criterion};

fn ramp(n: usize, phase: f64) -> Vec<f64> {
    (0..n).map(|i| (i as f64 * 0.37 + phase).sin()).collect()
}

fn kernels(c: &mut Criterion) {
    let a = Tensor::matrix(80, 64, ramp(80 * 64, 0.0)).unwrap();
    let b = Tensor::matrix(64, 64, ramp(64 * 64, 1.0)).unwrap();
    c.bench_function("matmul 80x64x64", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let (x, y) = (g.constant(a.clone()), g.constant(b.clone()));
            black_box(g.matmul(x, y).unwrap());
        })
    });
    let logits = Tensor::matrix(80, 80, ramp(80 * 80, 2.0)).unwrap();
    c.bench_function("softmax 80x80", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let x = g.constant(logits.clone());
            black_box(g.softmax_rows(x).unwrap());
        })
    });
}

fn models(c: &mut Criterion) {
    let t = 80;
    let chans = [ramp(t, 0.0), ramp(t, 0.5), ramp(t, 1.5)];
    let inputs: Vec<ModelInput<'_>> = (0..8)
        .map(|_| ModelInput {
            glucose: &chans[0],
            steps: &chans[1],
            intervals: &chans[2],
        })
        .collect();
    let targets = vec![0.1; 8 * 6];
    let atten = ModelSpec::AttenGluco(ModelConfig::new(t, 6, 16, 2)).build(0).unwrap();
    let base = ModelSpec::Baseline(BaselineConfig { window: t, horizon: 6 })
        .build(0)
        .unwrap();

    c.bench_function("attengluco forward batch 8", |b| {
        b.iter(|| black_box(atten.predict(&inputs).unwrap()))
    });
    c.bench_function("attengluco forward+backward batch 8", |b| {
        b.iter(|| black_box(atten.loss_and_grads(&inputs, &targets).unwrap()))
    });
    c.bench_function("baseline forward batch 8", |b| {
        b.iter(|| black_box(base.predict(&inputs).unwrap()))
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = kernels, models
}
criterion_main!(benches);
