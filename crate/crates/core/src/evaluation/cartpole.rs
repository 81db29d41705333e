use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nmpc::{CartpoleMpc, CartpoleTarget};
use crate::plants::{step_euler, wrap_angle, CartpoleParams, CartpoleSensor, CartpoleState, SensorModel};

/// Pole angle bound (rad) that counts as balanced.
pub const BALANCE_ANGLE: f64 = 0.2;
/// How long (s) the pole must stay balanced for a swing-up to count.
pub const BALANCE_HOLD: f64 = 2.0;

/// Anything that maps an observed cartpole state and a target to a command in `[-1, 1]`.
pub trait CartpoleController {
    fn control(&mut self, observed: &CartpoleState, target: CartpoleTarget) -> Result<f64>;
    fn reset(&mut self) {}
}

impl CartpoleController for CartpoleMpc {
    fn control(&mut self, observed: &CartpoleState, target: CartpoleTarget) -> Result<f64> {
        Ok(self.step(observed, target)?.command)
    }

    fn reset(&mut self) {
        CartpoleMpc::reset(self);
    }
}

/// Piecewise-constant target over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSchedule {
    /// `(start time, target)` with strictly increasing start times, the first at 0.
    pub segments: Vec<(f64, CartpoleTarget)>,
}

impl TargetSchedule {
    pub fn constant(target: CartpoleTarget) -> Self {
        Self {
            segments: vec![(0.0, target)],
        }
    }

    /// The 60 s evaluation script: swing up, step the cart target both ways,
    /// hold the pole down, swing up again and step once more.
    pub fn standard() -> Self {
        Self {
            segments: vec![
                (0.0, CartpoleTarget::up(0.0)),
                (10.0, CartpoleTarget::up(0.1)),
                (20.0, CartpoleTarget::up(-0.1)),
                (30.0, CartpoleTarget::down(0.0)),
                (40.0, CartpoleTarget::up(0.0)),
                (50.0, CartpoleTarget::up(0.05)),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.segments.first().is_some_and(|s| s.0 == 0.0)
            && self.segments.windows(2).all(|w| w[1].0 > w[0].0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config("target schedule must start at 0 with increasing times".into()))
        }
    }

    pub fn at(&self, t: f64) -> CartpoleTarget {
        self.segments
            .iter()
            .take_while(|(start, _)| *start <= t)
            .last()
            .map_or(self.segments[0].1, |s| s.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartpoleRunConfig {
    pub duration: f64,
    /// Controller rate (Hz); commands are held between updates.
    pub control_rate: f64,
    /// Plant integration and sensor sampling step (s).
    pub sim_dt: f64,
    /// Measurement model; `None` lets the controller see the true state.
    pub sensor: Option<SensorModel>,
    pub seed: u64,
    pub initial: CartpoleState,
}

impl Default for CartpoleRunConfig {
    fn default() -> Self {
        Self {
            duration: 60.0,
            control_rate: 50.0,
            sim_dt: 0.001,
            sensor: Some(SensorModel::default()),
            seed: 0,
            initial: CartpoleState::hanging(),
        }
    }
}

impl CartpoleRunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration >= 0.0) || !(self.control_rate > 0.0) || !(self.sim_dt > 0.0) {
            return Err(Error::Config(
                "cartpole run needs duration >= 0, control rate > 0 and sim_dt > 0".into(),
            ));
        }
        let ratio = 1.0 / (self.control_rate * self.sim_dt);
        if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "control period must be a whole number of {} s simulation steps",
                self.sim_dt
            )));
        }
        if let Some(s) = &self.sensor {
            s.validate()?;
        }
        Ok(())
    }

    fn steps_per_control(&self) -> usize {
        (1.0 / (self.control_rate * self.sim_dt)).round() as usize
    }
}

/// One simulation step of a cartpole episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartpoleLogRow {
    pub t: f64,
    pub state: CartpoleState,
    pub target: CartpoleTarget,
    /// Command in effect during the step.
    pub u: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartpoleMetrics {
    /// First time after which the pole stays balanced for the hold period.
    pub swing_up_time: Option<f64>,
    /// Mean wrapped distance of the pole angle to its target (rad).
    pub mean_abs_angle_error: f64,
    pub mean_abs_position_error: f64,
    pub max_abs_position: f64,
    pub left_track: bool,
}

/// Simulate a controller against the cartpole; the log holds the true state
/// after every simulation step.
pub fn run_cartpole(
    controller: &mut dyn CartpoleController,
    plant: &CartpoleParams,
    schedule: &TargetSchedule,
    cfg: &CartpoleRunConfig,
) -> Result<Vec<CartpoleLogRow>> {
    cfg.validate()?;
    schedule.validate()?;
    plant.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sensor = CartpoleSensor::new(
        cfg.sensor.clone().unwrap_or_else(SensorModel::ideal),
        cfg.sim_dt,
    );
    let per_control = cfg.steps_per_control();
    let steps = (cfg.duration / cfg.sim_dt).round() as usize;
    controller.reset();

    let mut state = cfg.initial;
    let mut observed = sensor.measure(&state, &mut rng);
    let mut u = 0.0;
    let mut log = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = k as f64 * cfg.sim_dt;
        let target = schedule.at(t);
        if k % per_control == 0 {
            let seen = if cfg.sensor.is_some() { observed } else { state };
            u = controller.control(&seen, target)?.clamp(-1.0, 1.0);
        }
        state = step_euler(&state, u, cfg.sim_dt, 1, plant)?;
        observed = sensor.measure(&state, &mut rng);
        log.push(CartpoleLogRow {
            t: t + cfg.sim_dt,
            state,
            target,
            u,
        });
    }
    Ok(log)
}

/// First time after which `|angle error| < BALANCE_ANGLE` holds for
/// [`BALANCE_HOLD`] seconds, considering only rows from `from` on.
pub fn swing_up_time(log: &[CartpoleLogRow], from: f64) -> Option<f64> {
    let mut start: Option<f64> = None;
    for row in log.iter().filter(|r| r.t >= from) {
        let err = wrap_angle(row.state.theta - row.target.angle()).abs();
        if err < BALANCE_ANGLE {
            let s = *start.get_or_insert(row.t);
            if row.t - s >= BALANCE_HOLD - 1e-9 {
                return Some(s - from);
            }
        } else {
            start = None;
        }
    }
    None
}

pub fn cartpole_metrics(log: &[CartpoleLogRow], plant: &CartpoleParams) -> CartpoleMetrics {
    let n = log.len().max(1) as f64;
    let mean_abs_angle_error = log
        .iter()
        .map(|r| wrap_angle(r.state.theta - r.target.angle()).abs())
        .sum::<f64>()
        / n;
    let mean_abs_position_error =
        log.iter().map(|r| (r.state.x - r.target.position).abs()).sum::<f64>() / n;
    let max_abs_position = log.iter().map(|r| r.state.x.abs()).fold(0.0, f64::max);
    CartpoleMetrics {
        swing_up_time: swing_up_time(log, 0.0),
        mean_abs_angle_error,
        mean_abs_position_error,
        max_abs_position,
        left_track: max_abs_position > plant.half_track(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Idle;

    impl CartpoleController for Idle {
        fn control(&mut self, _: &CartpoleState, _: CartpoleTarget) -> Result<f64> {
            Ok(0.0)
        }
    }

    #[test]
    fn schedule_lookup() {
        let s = TargetSchedule::standard();
        assert_eq!(s.at(0.0), CartpoleTarget::up(0.0));
        assert_eq!(s.at(19.999), CartpoleTarget::up(0.1));
        assert_eq!(s.at(35.0), CartpoleTarget::down(0.0));
        assert_eq!(s.at(1e6), CartpoleTarget::up(0.05));
    }

    #[test]
    fn idle_controller_never_swings_up() {
        let plant = CartpoleParams::default();
        let cfg = CartpoleRunConfig {
            duration: 3.0,
            ..CartpoleRunConfig::default()
        };
        let log = run_cartpole(&mut Idle, &plant, &TargetSchedule::constant(CartpoleTarget::up(0.0)), &cfg)
            .unwrap();
        assert_eq!(log.len(), 3000);
        let m = cartpole_metrics(&log, &plant);
        assert_eq!(m.swing_up_time, None);
        assert!(!m.left_track);
    }

    #[test]
    fn swing_up_time_requires_continuous_hold() {
        let row = |t: f64, theta: f64| CartpoleLogRow {
            t,
            state: CartpoleState::new(0.0, 0.0, theta, 0.0),
            target: CartpoleTarget::up(0.0),
            u: 0.0,
        };
        let mut log: Vec<_> = (0..100).map(|k| row(k as f64 * 0.1, 1.0)).collect();
        // balanced from 10.0 on, interrupted once at 11.0
        log.extend((100..200).map(|k| {
            let t = k as f64 * 0.1;
            row(t, if k == 110 { 0.3 } else { 0.05 })
        }));
        assert!((swing_up_time(&log, 0.0).unwrap() - 11.1).abs() < 1e-9);
        assert_eq!(swing_up_time(&log[..125], 0.0), None);
    }

    #[test]
    fn rate_must_divide_simulation_step() {
        let cfg = CartpoleRunConfig {
            control_rate: 300.0,
            ..CartpoleRunConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = CartpoleRunConfig {
            control_rate: 1000.0,
            ..CartpoleRunConfig::default()
        };
        assert!(cfg.validate().is_ok());
    }
}
