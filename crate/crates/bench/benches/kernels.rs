use criterion::{criterion_group, criterion_main, Criterion};
use medti_core::classifier::auc;
use medti_core::diffusion::{
    build_schedule, euler_ancestral_step, sample, DenoiserBackbone, GuidanceSpec, ToyDenoiser, ToyDenoiserConfig,
};
use medti_core::evaluation::{frechet_distance, stats_from_features};
use medti_core::textual_inversion::{init_embedding, ti_loss_and_grad, InitSource, TextConditioner, Token, ToyConditioner};
use medti_core::{LatentTensor, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SHAPE: Shape = Shape::new(1, 32, 32);

fn setup() -> (ToyDenoiser, ToyConditioner, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut net = ToyDenoiser::new(ToyDenoiserConfig::default(), &mut rng).unwrap();
    net.freeze();
    let cond = ToyConditioner::random_vocab(net.cond_dim(), &["organ", "spots"], 2);
    (net, cond, rng)
}

fn denoiser(c: &mut Criterion) {
    let (net, cond, mut rng) = setup();
    let x = LatentTensor::randn(SHAPE, &mut rng);
    let ctx = cond.encode(&[Token::Vocab("organ")]).unwrap();
    c.bench_function("denoiser_forward_32x32", |b| b.iter(|| net.predict(&x, 0.7, &ctx).unwrap()));

    let e = init_embedding("c", 8, net.cond_dim(), &InitSource::default(), 0).unwrap();
    let eps = LatentTensor::randn(SHAPE, &mut rng);
    c.bench_function("ti_loss_and_grad_32x32", |b| {
        b.iter(|| ti_loss_and_grad(&net, &cond, &e, &x, 0.7, &eps).unwrap())
    });
}

fn sampler(c: &mut Criterion) {
    let (net, cond, mut rng) = setup();
    let x = LatentTensor::randn(SHAPE, &mut rng);
    let eps = LatentTensor::randn(SHAPE, &mut rng);
    let noise = LatentTensor::randn(SHAPE, &mut rng);
    c.bench_function("euler_ancestral_step", |b| {
        b.iter(|| euler_ancestral_step(&x, 1.2, 0.9, &eps, &noise).unwrap())
    });
    let schedule = build_schedule(25, 0.02, 10.0, 7.0).unwrap();
    let g = GuidanceSpec::single(cond.encode(&[Token::Vocab("spots")]).unwrap(), 2.0);
    c.bench_function("sample_25_steps_cfg2", |b| b.iter(|| sample(&net, &schedule, &g, 0, SHAPE).unwrap()));
}

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut features = |shift: f64| -> Vec<Vec<f64>> {
        (0..200).map(|_| (0..32).map(|_| rng.random::<f64>() + shift).collect()).collect()
    };
    let a = stats_from_features(&features(0.0)).unwrap();
    let b = stats_from_features(&features(0.1)).unwrap();
    c.bench_function("frechet_distance_d32", |bench| bench.iter(|| frechet_distance(&a, &b).unwrap()));

    let scores: Vec<(f64, bool)> = (0..1000).map(|_| (rng.random(), rng.random())).collect();
    c.bench_function("auc_n1000", |bench| bench.iter(|| auc(&scores).unwrap()));
}

criterion_group!(benches, denoiser, sampler, metrics);
criterion_main!(benches);
