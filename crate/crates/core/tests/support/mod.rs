//! Property checks over the public API, shared by the property suite and the
//! acceptance harness. Each runs a fixed number of cases from a deterministic
//! stream and returns the first counterexample as an error.

#![allow(dead_code)]

use ncsim::baseline_pp::{pp_control, PurePursuitConfig};
use ncsim::imitation::{collect_cartpole, replay_cartpole, CartpoleCollectConfig};
use ncsim::neuralnet::{InferencePath, QMlpModel, QuantConfig, CARTPOLE_LAYERS};
use ncsim::nmpc::{CartpoleMpc, CartpoleMpcConfig, CartpoleTarget, ControlPlan, OptimizerConfig, PlanProblem, Rpgd};
use ncsim::plants::{step_euler, CarParams, CarState, CartpoleParams, CartpoleState};
use ncsim::qformat::{quantize, QFormatSpec, TanhTable};
use ncsim::raceline::{Raceline, Waypoint};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = std::result::Result<(), String>;

fn run<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Check {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let rng = TestRng::deterministic_rng(config.rng_algorithm);
    TestRunner::new_with_rng(config, rng)
        .run(&strategy, test)
        .map_err(|e| e.to_string())
}

fn q(s: &str) -> QFormatSpec {
    s.parse().unwrap()
}

fn formats() -> impl Strategy<Value = QFormatSpec> {
    prop::sample::select(vec!["Q12.1", "Q12.2", "Q14.4", "Q16.4", "Q16.8", "Q18.8"]).prop_map(q)
}

pub fn quantize_is_idempotent(cases: u32) -> Check {
    run(cases, (formats(), -300.0f64..300.0), |(spec, x)| {
        let once = quantize(x, spec).unwrap();
        let twice = quantize(once.value(), spec).unwrap();
        prop_assert_eq!(once, twice);
        Ok(())
    })
}

pub fn quantize_is_monotone(cases: u32) -> Check {
    run(cases, (formats(), -300.0f64..300.0, -300.0f64..300.0), |(spec, a, b)| {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(quantize(lo, spec).unwrap().raw() <= quantize(hi, spec).unwrap().raw());
        Ok(())
    })
}

pub fn quantize_error_is_at_most_half_an_lsb(cases: u32) -> Check {
    run(cases, (formats(), 0.0f64..1.0), |(spec, u)| {
        let x = spec.min_value() + u * (spec.max_value() - spec.min_value());
        let v = quantize(x, spec).unwrap().value();
        prop_assert!((v - x).abs() <= 0.5 * spec.lsb());
        Ok(())
    })
}

/// Nearest raw mantissa of `tanh(x)` in `out`, computed from exponentials
/// with ties to even; `None` when the exact value is too close to a tie to call.
fn tanh_oracle_raw(x: f64, out: QFormatSpec) -> Option<i64> {
    let e = (2.0 * x).exp();
    let t = if e.is_infinite() { 1.0 } else { (e - 1.0) / (e + 1.0) };
    let scaled = t * (out.frac_bits() as f64).exp2();
    let frac = scaled - scaled.floor();
    if (frac - 0.5).abs() < 1e-9 {
        return None;
    }
    Some((scaled.round_ties_even() as i64).clamp(out.min_raw(), out.max_raw()))
}

/// Every input mantissa of `input` against the oracle.
pub fn tanh_table_is_exact(input: &str, output: &str) -> Check {
    let (input, output) = (q(input), q(output));
    let table = TanhTable::new(input, output).map_err(|e| e.to_string())?;
    let mut checked = 0u64;
    for x in input.iter_values() {
        if let Some(raw) = tanh_oracle_raw(x.value(), output) {
            let got = table.lookup(x).raw() as i64;
            if got != raw {
                return Err(format!("tanh({}) gave raw {got}, oracle {raw}", x.value()));
            }
            checked += 1;
        }
    }
    if checked + 16 < input.cardinality() {
        return Err(format!("only {checked} of {} inputs away from ties", input.cardinality()));
    }
    Ok(())
}

/// Mechanical energy above hanging rest: kinetic energy of cart and rod plus
/// the rod's potential energy measured from its lowest point.
fn energy_above_rest(s: &CartpoleState, p: &CartpoleParams) -> f64 {
    let (m, total, l) = (p.pole_mass, p.cart_mass + p.pole_mass, p.com_distance());
    let kinetic = 0.5 * total * s.v * s.v
        + m * l * s.theta.cos() * s.v * s.omega
        + 0.5 * (4.0 / 3.0) * m * l * l * s.omega * s.omega;
    kinetic + m * p.gravity * l * (s.theta.cos() + 1.0)
}

/// 2 s of free motion at 1 ms steps drifts less than 1% of the initial energy.
pub fn frictionless_energy_drift(cases: u32) -> Check {
    run(cases, (0.3f64..3.0, -3.0f64..3.0, -0.5f64..0.5), |(theta, omega, v)| {
        let p = CartpoleParams::default().frictionless();
        let mut s = CartpoleState::new(0.0, v, theta, omega);
        let e0 = energy_above_rest(&s, &p);
        let mut worst: f64 = 0.0;
        for _ in 0..2000 {
            s = step_euler(&s, 0.0, 0.001, 1, &p).unwrap();
            worst = worst.max((energy_above_rest(&s, &p) - e0).abs());
        }
        prop_assert!(worst < 0.01 * e0, "drift {} of {}", worst, e0);
        Ok(())
    })
}

fn cartpole_problem_mpc(horizon: usize) -> CartpoleMpc {
    let cfg = CartpoleMpcConfig {
        horizon,
        ..CartpoleMpcConfig::default()
    };
    CartpoleMpc::new(cfg, CartpoleParams::default()).unwrap()
}

/// Smooth region: the cart stays short of the target and outside the
/// boundary zone, so the absolute-value and zone terms keep one branch.
pub fn rollout_gradient_matches_finite_differences(cases: u32) -> Check {
    let strategy = (
        -0.05f64..0.0,
        -0.2f64..0.2,
        -3.0f64..3.0,
        -2.0f64..2.0,
        prop::collection::vec(-0.3f64..0.3, 10),
    );
    run(cases, strategy, |(x, v, theta, omega, plan)| {
        let mpc = cartpole_problem_mpc(10);
        let pr = mpc.problem(&CartpoleState::new(x, v, theta, omega), CartpoleTarget::up(0.15));
        let plan = ControlPlan::from_flat(1, plan).unwrap();
        let mut grad = vec![0.0; 10];
        pr.cost_grad(&plan, &mut grad);
        let h = 1e-4;
        let fd: Vec<f64> = (0..10)
            .map(|i| {
                let at = |d: f64| {
                    let mut p = plan.clone();
                    p.as_mut_slice()[i] += d;
                    pr.cost(&p)
                };
                (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h)
            })
            .collect();
        let scale = fd.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        for (g, f) in grad.iter().zip(&fd) {
            prop_assert!((g - f).abs() <= 1e-3 * scale + 1e-6, "{:?} vs {:?}", grad, fd);
        }
        Ok(())
    })
}

pub fn elite_cost_is_monotone(cases: u32) -> Check {
    run(cases, (-3.1f64..3.1, -3.0f64..3.0, 0u64..1000), |(theta, omega, seed)| {
        let mpc = cartpole_problem_mpc(35);
        let pr = mpc.problem(&CartpoleState::new(0.0, 0.0, theta, omega), CartpoleTarget::up(0.0));
        let mut solver = Rpgd::new(OptimizerConfig {
            seed,
            ..mpc.config().optimizer.clone()
        })
        .unwrap();
        for _ in 0..3 {
            let sol = solver.solve(&pr);
            prop_assert!(sol.history.windows(2).all(|w| w[1] <= w[0]), "{:?}", sol.history);
            prop_assert_eq!(sol.cost, *sol.history.last().unwrap());
            solver.shift();
        }
        Ok(())
    })
}

/// Summed over 20 seeds, a shifted warm start ends no worse than a cold start.
pub fn warm_start_is_no_worse_than_cold() -> Check {
    let mpc = cartpole_problem_mpc(35);
    let state = CartpoleState::new(0.02, -0.1, 0.4, 0.5);
    let pr = mpc.problem(&state, CartpoleTarget::up(0.0));
    let (mut warm, mut cold) = (0.0, 0.0);
    for seed in 0..20 {
        let cfg = OptimizerConfig {
            seed,
            ..mpc.config().optimizer.clone()
        };
        let mut solver = Rpgd::new(cfg.clone()).unwrap();
        solver.solve(&pr);
        solver.shift();
        warm += solver.solve(&pr).cost;
        let fresh = OptimizerConfig {
            seed: seed + 1000,
            ..cfg
        };
        cold += Rpgd::new(fresh).unwrap().solve(&pr).cost;
    }
    if warm <= cold {
        Ok(())
    } else {
        Err(format!("warm {warm} vs cold {cold}"))
    }
}

fn wavy_loop(seed: u64) -> Raceline {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a2, a3, ph) = (rng.gen_range(0.0..0.15), rng.gen_range(0.0..0.1), rng.gen_range(0.0..6.0));
    let n = 200;
    let pts = (0..n)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / n as f64;
            let r = 6.0 * (1.0 + a2 * (2.0 * t + ph).cos() + a3 * (3.0 * t).sin());
            Waypoint::new(1.5 * r * t.cos(), r * t.sin(), 3.0 + (2.0 * t).sin())
        })
        .collect();
    Raceline::new(pts).unwrap()
}

fn mirrored(line: &Raceline) -> Raceline {
    Raceline::new(line.points().iter().map(|w| Waypoint::new(w.x, -w.y, w.v_x)).collect()).unwrap()
}

/// Reflecting the world across the x axis flips the steering and keeps the speed.
pub fn pure_pursuit_is_mirror_symmetric(cases: u32) -> Check {
    let strategy = (
        0u64..50,
        0.0f64..1.0,
        -0.4f64..0.4,
        -0.5f64..0.5,
        0.5f64..6.0,
        0.3f64..1.5,
    );
    run(cases, strategy, |(seed, s, offset, heading, v, factor)| {
        let line = wavy_loop(seed);
        let mirror = mirrored(&line);
        let p = CarParams::default();
        let here = line.sample(s * line.length());
        let ahead = line.sample(s * line.length() + 0.05);
        let tangent = (ahead.y - here.y).atan2(ahead.x - here.x);
        let (nx, ny) = (-tangent.sin(), tangent.cos());
        let car = CarState::new(here.x + offset * nx, here.y + offset * ny, tangent + heading, v, 0.0, &p);
        let flipped = CarState::new(car.x, -car.y, -car.yaw, v, 0.0, &p);
        let cfg = PurePursuitConfig::default();
        let a = pp_control(&car, &line, factor, &cfg);
        let b = pp_control(&flipped, &mirror, factor, &cfg);
        prop_assert!((a.speed - b.speed).abs() < 1e-9, "{:?} vs {:?}", a, b);
        prop_assert!((a.steer + b.steer).abs() < 1e-9, "{:?} vs {:?}", a, b);
        Ok(())
    })
}

/// A fresh teacher re-derives the first 100 recorded labels exactly.
pub fn dataset_replay_is_exact() -> Check {
    let cfg = CartpoleCollectConfig {
        duration: 4.0,
        episode_duration: 4.0,
        ..CartpoleCollectConfig::default()
    };
    let plant = CartpoleParams::default();
    let ds = collect_cartpole(&cfg, &plant).map_err(|e| e.to_string())?;
    let report = replay_cartpole(&ds, 0, 100, &cfg.mpc, &plant).map_err(|e| e.to_string())?;
    if report.checked == 100 && report.exact() {
        Ok(())
    } else {
        Err(format!("{} labels checked, max diff {}", report.checked, report.max_abs_diff))
    }
}

/// Save and load, then compare both inference paths bit for bit on 1000 inputs.
pub fn model_file_round_trip_is_bit_exact(cases: u32) -> Check {
    run(cases, 0u64..10_000, |seed| {
        let model = QMlpModel::new(&CARTPOLE_LAYERS, QuantConfig::cartpole(), seed).unwrap();
        let back = QMlpModel::from_file_str(&model.to_file_string().unwrap()).unwrap();
        prop_assert_eq!(&back, &model);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.5..1.5)).collect();
            for path in [InferencePath::Float, InferencePath::Fixed] {
                let (a, b) = (model.predict(&x, path).unwrap(), back.predict(&x, path).unwrap());
                prop_assert_eq!(a[0].to_bits(), b[0].to_bits());
            }
        }
        Ok(())
    })
}
