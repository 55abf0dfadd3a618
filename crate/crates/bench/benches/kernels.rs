use std::hint::black_box;

use auxspec::attract_repel::{specialize, ArConfig};
use auxspec::constraints::build_constraints;
use auxspec::nn::{MlpNetwork, Mode};
use auxspec::postspec::GeneratorConfig;
use auxspec::synthetic::{named_space, random_orthogonal};
use auxspec::xling::{procrustes, Csls};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

fn mlp(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dim = 300;
    let net = MlpNetwork::new(GeneratorConfig::default().spec(dim), &mut rng).unwrap();
    let batch = random(32, dim, &mut rng);
    c.bench_function("generator forward+backward, batch 32, dim 300", |b| {
        b.iter(|| {
            let (out, cache) = net.forward(batch.view(), Mode::Train, &mut rng).unwrap();
            black_box(net.backward(&cache, out.view()).unwrap())
        })
    });
}

fn csls(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let q = random(1000, 100, &mut rng);
    let cand = random(1000, 100, &mut rng);
    c.bench_function("csls 1000x1000, dim 100, k 10", |b| {
        b.iter(|| black_box(Csls::new(q.view(), cand.view(), 10).unwrap().argmaxes()))
    });
}

fn procrustes_fit(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let r = random_orthogonal(300, &mut rng);
    let source = random(5000, 300, &mut rng);
    let target = source.dot(&r.t());
    c.bench_function("procrustes 5000 pairs, dim 300", |b| {
        b.iter(|| black_box(procrustes(target.view(), source.view()).unwrap()))
    });
}

fn attract_repel(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let space = named_space("w", random(2000, 100, &mut rng)).unwrap();
    let pair = |i: usize| (format!("w{}", 2 * i), format!("w{}", 2 * i + 1));
    let (cs, _) = build_constraints(
        (0..400).map(pair).collect::<Vec<_>>(),
        (400..800).map(pair).collect::<Vec<_>>(),
        &space,
    );
    let cfg = ArConfig {
        epochs: 1,
        ..Default::default()
    };
    c.bench_function("attract-repel epoch, 800 pairs, dim 100", |b| {
        b.iter_batched(
            || space.clone(),
            |s| black_box(specialize(&s, &cs, &cfg, 5).unwrap()),
            BatchSize::LargeInput,
        )
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = mlp, csls, procrustes_fit, attract_repel
}
criterion_main!(benches);
