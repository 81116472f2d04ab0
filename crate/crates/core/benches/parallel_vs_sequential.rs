use std::hint::black_box;

use advcover::attack::{exact_attack_grid, BallSpec};
use advcover::covers::{uniform_cover_verify, CoverVerifyConfig, UniformCoverSpec};
use advcover::data::{Dataset, Sample};
use advcover::linalg::Exponent;
use advcover::network::{ActivationKind, LossSpec, Network};
use advcover::par::{set_execution, Execution};
use advcover::rademacher::{mc_adversarial_rc, HypothesisClass};
use advcover::attack::AttackConfig;
use advcover::rng::StreamKey;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn cover_verify(c: &mut Criterion) {
    let spec = UniformCoverSpec::new(1.0, 1.0, 0.5, 4, 3).unwrap();
    let cfg = CoverVerifyConfig::new(64, 16, 7);
    let mut g = c.benchmark_group("uniform_cover_verify");
    g.sample_size(10);
    for (name, mode) in MODES {
        set_execution(mode);
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| uniform_cover_verify(black_box(&spec), &cfg).unwrap()));
    }
    g.finish();
}

fn rademacher(c: &mut Criterion) {
    let mut s = StreamKey::new(1).stream();
    let data = Dataset::new((0..200).map(|i| Sample { x: s.gaussian_vec(10), y: i % 2 }).collect()).unwrap();
    let class = HypothesisClass::linear(Exponent::TWO, 1.0)
        .with_attack(BallSpec::new(Exponent::INF, 0.05).unwrap(), AttackConfig::default_for(0.05, 1));
    let mut g = c.benchmark_group("mc_adversarial_rc");
    for (name, mode) in MODES {
        set_execution(mode);
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| mc_adversarial_rc(&class, black_box(&data), 2000, 3).unwrap()));
    }
    g.finish();
}

fn grid_attack(c: &mut Criterion) {
    let net = Network::random(&[2, 16, 3], &[ActivationKind::Relu, ActivationKind::Identity], 1.0, StreamKey::new(2)).unwrap();
    let loss = LossSpec::ramp(1.0).unwrap();
    let ball = BallSpec::new(Exponent::INF, 0.3).unwrap();
    let x = [0.2, -0.4];
    let mut g = c.benchmark_group("exact_attack_grid");
    for (name, mode) in MODES {
        set_execution(mode);
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| exact_attack_grid(&net, black_box(&x), 0, &ball.around(&x), &loss, 401).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, cover_verify, rademacher, grid_attack);
criterion_main!(benches);
