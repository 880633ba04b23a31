use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use vera_bench::{linear_instance, mlp_energy, moons_vera, rng};
use vera_core::entropy::{entropy_grad, snis_score};
use vera_core::samplers::{sgld_chain, SgldConfig};
use vera_core::trainers::{minibatch, vera_step, VeraConfig};
use vera_core::Tensor;

fn matmul(c: &mut Criterion) {
    let mut r = rng(0);
    let a = Tensor::randn(256, 256, &mut r);
    let b = Tensor::randn(256, 256, &mut r);
    c.bench_function("matmul_256", |bench| bench.iter(|| a.matmul(&b)));
}

fn score_estimators(c: &mut Criterion) {
    let (g, post) = linear_instance();
    let mut r = rng(1);
    let batch = g.sample(64, &mut r).unwrap();
    c.bench_function("snis_score_k20_b64", |bench| {
        bench.iter(|| snis_score(&g, &post, &batch.x, &batch.z0, 20, &mut r).unwrap())
    });
    let score = snis_score(&g, &post, &batch.x, &batch.z0, 20, &mut r).unwrap().score;
    c.bench_function("entropy_grad_b64", |bench| {
        bench.iter(|| entropy_grad(&g, &batch.z0, &batch.eps, &score).unwrap())
    });
}

fn training_step(c: &mut Criterion) {
    let cfg = VeraConfig::default();
    let (state, data) = moons_vera(&cfg);
    let mut r = rng(2);
    c.bench_function("vera_step_mog100_b64", |bench| {
        bench.iter_batched(
            || (state.clone(), minibatch(&data, cfg.batch_size, &mut r)),
            |(mut st, x)| vera_step(&mut st, &x, &cfg, &mut rng(3)).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn sgld(c: &mut Criterion) {
    let e = mlp_energy(2);
    let mut r = rng(4);
    let x0 = Tensor::randn(64, 2, &mut r);
    let cfg = SgldConfig { step: 0.01, steps: 20, noise: true };
    c.bench_function("sgld_20_steps_b64", |bench| bench.iter(|| sgld_chain(&e, &x0, &cfg, &mut r).unwrap()));
}

criterion_group!(benches, matmul, score_estimators, training_step, sgld);
criterion_main!(benches);
