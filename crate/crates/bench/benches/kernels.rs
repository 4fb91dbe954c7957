use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use skycollect::agents::{ActMode, HybridPolicy};
use skycollect::channel::{all_rates, realize_channel, ChannelAssignment, ChannelParams, Position3D};
use skycollect::env::{reset, step, EnvConfig};
use skycollect::nn::{backward, forward, Activation, HeadSpec, NetworkSpec, ParameterSet};
use skycollect::{Algorithm, PpoConfig};

fn channel(c: &mut Criterion) {
    let params = ChannelParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let users: Vec<Position3D> = (0..params.num_users)
        .map(|_| Position3D::ground(rng.random_range(0.0..200.0), rng.random_range(0.0..200.0)))
        .collect();
    let uav = Position3D::new(100.0, 100.0, 100.0);
    c.bench_function("realize_channel_5x3", |b| {
        b.iter(|| realize_channel(black_box(&users), uav, &params, &mut rng).unwrap())
    });
    let real = realize_channel(&users, uav, &params, &mut rng).unwrap();
    let assignment = ChannelAssignment::new(vec![1, 2, 3, 1, 2], 3).unwrap();
    let powers = vec![5.0; 5];
    c.bench_function("all_rates_5x3", |b| {
        b.iter(|| all_rates(black_box(&real), &assignment, &powers, params.bandwidth_hz).unwrap())
    });
}

fn network(c: &mut Criterion) {
    let mut group = c.benchmark_group("mlp");
    for width in [64usize, 128] {
        let spec = NetworkSpec::new(
            12,
            vec![width, width],
            vec![
                HeadSpec::new("mu", 12, Activation::Linear),
                HeadSpec::new("sigma", 12, Activation::Softplus),
            ],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = ParameterSet::orthogonal(&spec, 2f64.sqrt(), &[0.01, 0.01], &mut rng);
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let up = vec![vec![0.1; 12], vec![0.1; 12]];
        group.bench_with_input(BenchmarkId::new("forward", width), &width, |b, _| {
            b.iter(|| forward(&spec, &params, black_box(&x)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("backward", width), &width, |b, _| {
            b.iter(|| backward(&spec, &params, black_box(&x), &up).unwrap())
        });
    }
    group.finish();
}

fn environment(c: &mut Criterion) {
    let env = EnvConfig::default();
    let policy = HybridPolicy::new(Algorithm::Hybrid, &env, &PpoConfig::default(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let state = reset(&env, &mut rng).unwrap();
    let (action, _) = policy.act(&state, &env, ActMode::Sample, &mut rng).unwrap();
    c.bench_function("env_step_default", |b| {
        b.iter(|| step(black_box(&state), &action, &env, &mut rng).unwrap())
    });
    c.bench_function("policy_act_default", |b| {
        b.iter(|| policy.act(black_box(&state), &env, ActMode::Sample, &mut rng).unwrap())
    });
}

criterion_group!(benches, channel, network, environment);
criterion_main!(benches);
