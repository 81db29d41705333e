//! Parallel against sequential execution of the data-parallel hot paths:
//! optimizer rollouts, fixed-point deviation sweeps and episode collection.
//! Without the `parallel` feature both variants run sequentially.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ncsim::evaluation::start_state;
use ncsim::imitation::{collect_cartpole, CartpoleCollectConfig, Sample};
use ncsim::neuralnet::{path_deviations, QMlpModel, QuantConfig, CAR_LAYERS};
use ncsim::nmpc::{CarMpc, CarMpcConfig, CartpoleMpc, CartpoleMpcConfig, CartpoleTarget};
use ncsim::plants::{CarParams, CartpoleParams, CartpoleState};
use ncsim::raceline::builtin;

const MODES: [(&str, bool); 2] = [("sequential", false), ("parallel", true)];

fn cartpole_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("cartpole_mpc_step");
    let state = CartpoleState::hanging();
    let target = CartpoleTarget::up(0.0);
    for (name, parallel) in MODES {
        let mut cfg = CartpoleMpcConfig::default();
        cfg.optimizer.parallel = parallel;
        let mut mpc = CartpoleMpc::new(cfg, CartpoleParams::default()).unwrap();
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                mpc.reset();
                black_box(mpc.step(black_box(&state), target).unwrap().command)
            })
        });
    }
    group.finish();
}

fn car_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("car_mpc_step");
    let params = CarParams::default();
    let line = builtin("train").unwrap();
    let car = start_state(&line, 1.0, 1.0, &params);
    for (name, parallel) in MODES {
        let mut cfg = CarMpcConfig::default();
        cfg.optimizer.parallel = parallel;
        let mut mpc = CarMpc::new(cfg, params.clone()).unwrap();
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                mpc.reset();
                black_box(mpc.step(black_box(&car), &line, 1.0).unwrap().command)
            })
        });
    }
    group.finish();
}

fn deviation_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("car_deviation_sweep_2000");
    let model = QMlpModel::new(&CAR_LAYERS, QuantConfig::car(), 1).unwrap();
    let samples: Vec<Sample> = (0..2000)
        .map(|i| Sample {
            episode: 0,
            t: i as f64,
            features: (0..CAR_LAYERS[0]).map(|k| ((i * 64 + k) as f64 * 0.013).sin()).collect(),
            label: vec![0.0, 0.0],
            state: vec![],
        })
        .collect();
    let bounds = [(-1.0, 1.0), (-1.0, 1.0)];
    for (name, parallel) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(path_deviations(&model, &samples, &bounds, parallel).unwrap()))
        });
    }
    group.finish();
}

fn collection(c: &mut Criterion) {
    let mut group = c.benchmark_group("cartpole_collect_8x1s");
    group.sample_size(10);
    let plant = CartpoleParams::default();
    for (name, parallel) in MODES {
        let cfg = CartpoleCollectConfig {
            duration: 8.0,
            episode_duration: 1.0,
            parallel,
            ..CartpoleCollectConfig::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(collect_cartpole(&cfg, &plant).unwrap().len()))
        });
    }
    group.finish();
}

criterion_group!(benches, cartpole_solve, car_solve, deviation_sweep, collection);
criterion_main!(benches);
