use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use kaml_core::datagen::{generate, GeneratorConfig};
use kaml_core::engine::Matrix;
use kaml_core::losses::{joint_loss, LossConfig, Targets};
use kaml_core::masking::{MaskMatrix, MaskStrategy};
use kaml_core::metrics::auc;
use kaml_core::model::{FeatureBatch, Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BATCH: usize = 512;

fn model_and_batch(hke: bool) -> (Model, Vec<u32>, Vec<u8>) {
    let vocab = vec![4000, 40, 200, 24];
    let mut cfg = ModelConfig::new(5, vocab.clone());
    cfg.hke = hke;
    let model = Model::new(cfg, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ids = (0..BATCH)
        .flat_map(|_| vocab.iter().map(|&v| rng.random_range(1..=v as u32)).collect::<Vec<_>>())
        .collect();
    let route = (0..BATCH * 5).map(|_| rng.random_range(0..2u8)).collect();
    (model, ids, route)
}

fn forward_backward(c: &mut Criterion) {
    for hke in [false, true] {
        let (mut model, ids, route) = model_and_batch(hke);
        let name = if hke { "mmoe_hke" } else { "mmoe" };
        c.bench_function(&format!("forward/{name}/{BATCH}"), |b| {
            let batch = FeatureBatch::new(&ids, 4).unwrap();
            b.iter(|| model.forward(black_box(&batch), Some(&route)).unwrap())
        });
        c.bench_function(&format!("forward_backward/{name}/{BATCH}"), |b| {
            let ids = ids.clone();
            let labels: Vec<u8> = route.iter().map(|&r| 1 - r).collect();
            let mask = vec![1u8; BATCH * 5];
            let loss = LossConfig::new(5);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            b.iter(|| {
                let batch = FeatureBatch::new(&ids, 4).unwrap();
                let fp = model.forward(&batch, Some(&route)).unwrap();
                let t = Targets { labels: &labels, mask: &mask };
                let (_, g) = joint_loss(&fp.logits, &t, &loss, &mut rng).unwrap();
                model.params_mut().zero_grad();
                model.backward(&fp.cache, &g).unwrap();
            })
        });
    }
}

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let scores: Vec<f64> = (0..20_000).map(|_| rng.random()).collect();
    let labels: Vec<u8> = (0..20_000).map(|_| rng.random_bool(0.1) as u8).collect();
    c.bench_function("auc/20000", |b| b.iter(|| auc(black_box(&scores), black_box(&labels)).unwrap()));
    let logits = Matrix::from_vec(BATCH, 5, (0..BATCH * 5).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
    let labels: Vec<u8> = (0..BATCH * 5).map(|_| rng.random_bool(0.2) as u8).collect();
    let mask = vec![1u8; BATCH * 5];
    let cfg = LossConfig::new(5);
    c.bench_function(&format!("joint_loss/{BATCH}"), |b| {
        b.iter_batched(
            || ChaCha8Rng::seed_from_u64(5),
            |mut r| joint_loss(&logits, &Targets { labels: &labels, mask: &mask }, &cfg, &mut r).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn masking(c: &mut Criterion) {
    let cfg = GeneratorConfig {
        n_train: 50_000,
        n_test: 100,
        ..GeneratorConfig::default()
    };
    let ds = generate(&cfg, 6).unwrap().train;
    c.bench_function("adm_mask/50000", |b| {
        b.iter(|| MaskMatrix::build(black_box(&ds), &MaskStrategy::adm(vec![1.0; 5])).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = forward_backward, metrics, masking
}
criterion_main!(benches);
