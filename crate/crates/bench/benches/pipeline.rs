use criterion::{black_box, criterion_group, criterion_main, Criterion};
use crowdcast::autodiff::{Graph, Tensor};
use crowdcast::nn::{Lstm, ParamStore};
use crowdcast::predict::{predict_one_shot, SampleMode};
use crowdcast::topo::{ha_star, HaStarOptions};
use crowdcast_bench::{blocked_square, default_model_and_context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn predict(c: &mut Criterion) {
    let (model, ctx) = default_model_and_context();
    c.bench_function("predict_one_shot", |b| {
        b.iter(|| predict_one_shot(&model, black_box(&ctx), SampleMode::PriorMean).unwrap())
    });
}

fn lstm_step(c: &mut Criterion) {
    let mut store = ParamStore::<f32>::new();
    let lstm = Lstm::new(&mut store, "lstm", 512, 128, &mut ChaCha8Rng::seed_from_u64(0));
    let x = Tensor::full(&[16, 512], 0.1f32);
    c.bench_function("lstm_step_b16_512x128", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let p = store.bind(&mut g);
            let s = lstm.zero_state(&mut g, 16);
            let xv = g.constant(x.clone());
            black_box(lstm.step(&mut g, &p, xv, s).unwrap())
        })
    });
}

fn planner(c: &mut Criterion) {
    let g = blocked_square();
    c.bench_function("ha_star_two_classes", |b| {
        b.iter(|| ha_star(black_box(&g), (5, 50), (95, 50), 2, &HaStarOptions::default()).unwrap())
    });
}

criterion_group!(benches, predict, lstm_step, planner);
criterion_main!(benches);
