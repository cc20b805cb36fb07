use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use rwmu_bench::{dataset, model};
use rwmu_core::datasets::sample_windows;
use rwmu_core::mopo::{imagine, init_actor_critic, PpoConfig};
use rwmu_core::nn::{Backend, Eager, Gru, Tape, Tensor};
use rwmu_core::rng;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng::rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng::normal(&mut r)).collect()).unwrap()
}

fn matmul(c: &mut Criterion) {
    let a = random(&[256, 64], 1);
    let b = random(&[64, 64], 2);
    c.bench_function("matmul 256x64 * 64x64", |bench| bench.iter(|| Eager.matmul(black_box(&a), black_box(&b))));
}

fn gru_step(c: &mut Criterion) {
    let gru = Gru::new(10, &[64], &mut rng::rng(3));
    let h = vec![Tensor::zeros(&[256, 64])];
    let x = random(&[256, 10], 4);
    c.bench_function("gru step batch 256 hidden 64", |bench| bench.iter(|| gru.forward(black_box(&h), black_box(&x)).unwrap()));
}

fn world_model_loss(c: &mut Criterion) {
    let (_, ds) = dataset(5_000);
    let m = model(&ds);
    let mut r = rng::rng(5);
    let batch = sample_windows(&ds, m.config.history, m.config.horizon, 16, m.ensemble(), 0.8, &mut r).unwrap();
    c.bench_function("world-model loss + backward, batch 16", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let bound = m.bind(&mut tape);
            let loss = m.window_loss(&mut tape, &bound, &batch, 1.0, None).unwrap();
            tape.backward(loss.total).unwrap()
        })
    });
}

fn imagination(c: &mut Criterion) {
    let (env, ds) = dataset(5_000);
    let m = model(&ds);
    let cfg = PpoConfig { agents: 64, steps: 8, ..PpoConfig::default() };
    let ac = init_actor_critic(&env, &cfg);
    c.bench_function("imagination 64 agents x 8 steps", |bench| {
        bench.iter_batched(|| rng::rng(6), |mut r| imagine(&m, &ac, &ds, &env, &cfg, &mut r).unwrap(), BatchSize::SmallInput)
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = matmul, gru_step, world_model_loss, imagination
}
criterion_main!(benches);
