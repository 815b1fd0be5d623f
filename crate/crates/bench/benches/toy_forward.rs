use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use evrel_core::toy_model::synthetic_grid;
use evrel_core::{KfpConfig, ToyModel, ToyModelConfig};

fn forward(c: &mut Criterion) {
    let model = ToyModel::new(ToyModelConfig::default()).unwrap();
    let cfg = model.config();
    let grid = synthetic_grid(cfg, "clip-0000", 0);
    let text = cfg.tokenize("According to the video, what happened first? (1) a (2) b (3) c");
    let kfp = KfpConfig::default();

    let mut g = c.benchmark_group("toy_forward");
    g.bench_function("baseline", |b| {
        b.iter(|| model.forward(black_box(&grid), black_box(&text), None).unwrap())
    });
    g.bench_function("kfp", |b| {
        b.iter(|| model.forward(black_box(&grid), black_box(&text), Some(&kfp)).unwrap())
    });
    g.finish();
}

criterion_group!(benches, forward);
criterion_main!(benches);
