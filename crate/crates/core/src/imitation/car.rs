use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, EpisodeInfo, PlantKind, Sample};
use super::{episode_rng, ReplayReport, CAR_FEATURES};
use crate::error::{Error, Result};
use crate::evaluation::start_state;
use crate::nmpc::{CarMpc, CarMpcConfig};
use crate::par;
use crate::plants::{CarParams, CarSimulator, CarState};
use crate::raceline::Raceline;

/// Network input: the body-frame waypoint window, then speed, yaw rate,
/// steering angle and slip. Pose never enters.
pub fn car_features(car: &CarState, line: &Raceline, speed_factor: f64) -> Result<Vec<f64>> {
    let mut f = Vec::with_capacity(CAR_FEATURES);
    f.extend(line.window(car, speed_factor)?.flatten());
    f.extend([car.v_x, car.omega_z, car.theta_s, car.beta]);
    Ok(f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarCollectConfig {
    pub speed_factors: Vec<f64>,
    /// Simulated time (s) per speed factor.
    pub duration: f64,
    /// Control period (s) and plant Euler steps per period.
    pub dt: f64,
    pub substeps: usize,
    pub track_half_width: f64,
    pub run_in: f64,
    pub seed: u64,
    /// The teacher; an experiment config fills it from its section.
    #[serde(skip)]
    pub mpc: CarMpcConfig,
    pub parallel: bool,
}

impl Default for CarCollectConfig {
    fn default() -> Self {
        Self {
            speed_factors: vec![0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2],
            duration: 600.0,
            dt: 0.02,
            substeps: 10,
            track_half_width: 0.6,
            run_in: 1.0,
            seed: 0,
            mpc: CarMpcConfig::default(),
            parallel: true,
        }
    }
}

impl CarCollectConfig {
    pub fn validate(&self) -> Result<()> {
        if self.speed_factors.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::Config("speed factors must be positive".into()));
        }
        if !(self.duration >= 0.0) || !(self.dt > 0.0) || self.substeps == 0 {
            return Err(Error::Config("car collection needs duration >= 0, dt > 0, substeps >= 1".into()));
        }
        if !(self.track_half_width > 0.0) || !(self.run_in >= 0.0) {
            return Err(Error::Config("car collection needs a positive track width".into()));
        }
        self.mpc.validate()
    }
}

fn run_episode(
    cfg: &CarCollectConfig,
    line: &Raceline,
    track: &str,
    params: &CarParams,
    slot: usize,
    index: usize,
    quota: usize,
) -> Result<(EpisodeInfo, Vec<Sample>)> {
    let factor = cfg.speed_factors[slot];
    let seed = episode_rng(cfg.seed, slot, index).next_u64();
    let mut mpc_cfg = cfg.mpc.clone();
    mpc_cfg.optimizer.seed = seed;
    let mut mpc = CarMpc::new(mpc_cfg, params.clone())?;
    let start = start_state(line, cfg.run_in, factor, params);
    let mut sim = CarSimulator::new(start, params.clone(), cfg.dt, cfg.substeps)?;
    let mut samples = Vec::with_capacity(quota);
    let mut crashed = false;
    for _ in 0..quota {
        let car = *sim.state();
        let features = car_features(&car, line, factor)?;
        let cmd = mpc.step(&car, line, factor)?.command;
        samples.push(Sample {
            episode: 0,
            t: sim.time(),
            features,
            label: vec![cmd.speed, cmd.steer],
            state: car.to_array().to_vec(),
        });
        let next = sim.advance(cmd)?;
        if line.nearest_progress(next.x, next.y).d > cfg.track_half_width {
            crashed = true;
            break;
        }
    }
    let info = EpisodeInfo {
        id: 0,
        seed,
        start: 0,
        len: samples.len(),
        rate: 1.0 / cfg.dt,
        crashed,
        speed_factor: Some(factor),
        track: Some(track.to_string()),
        augmented_from: None,
    };
    Ok((info, samples))
}

/// Delay-compensated NMPC laps at every speed factor. Labels are the command
/// the teacher issues now, which is its plan entry for the period in which it
/// takes effect. Each factor yields exactly `duration / dt` samples; a crash
/// ends an episode and the factor continues from the start line.
pub fn collect_car(cfg: &CarCollectConfig, line: &Raceline, track: &str, params: &CarParams) -> Result<Dataset> {
    cfg.validate()?;
    params.validate()?;
    let quota = (cfg.duration / cfg.dt).round() as usize;
    let slots = par::map_indexed(cfg.speed_factors.len(), cfg.parallel, |slot| {
        let mut left = quota;
        let mut out = Vec::new();
        while left > 0 {
            let ep = run_episode(cfg, line, track, params, slot, out.len(), left)?;
            left -= ep.1.len();
            out.push(ep);
        }
        Ok::<_, Error>(out)
    });
    let mut ds = Dataset::new(PlantKind::Car);
    for slot in slots {
        for (info, samples) in slot? {
            ds.push_episode(info, samples);
        }
    }
    Ok(ds)
}

/// Re-run a fresh teacher on the first `count` recorded states of an episode
/// and compare its outputs with the stored labels.
pub fn replay_car(
    ds: &Dataset,
    episode: usize,
    count: usize,
    mpc: &CarMpcConfig,
    params: &CarParams,
    line: &Raceline,
) -> Result<ReplayReport> {
    if ds.plant != PlantKind::Car {
        return Err(Error::Dataset("replay_car needs a car dataset".into()));
    }
    let (info, samples) = ds
        .episode(episode)
        .ok_or_else(|| Error::Dataset(format!("no episode {episode}")))?;
    let factor = info
        .speed_factor
        .ok_or_else(|| Error::Dataset(format!("episode {episode} has no speed factor")))?;
    let mut cfg = mpc.clone();
    cfg.optimizer.seed = info.seed;
    let mut teacher = CarMpc::new(cfg, params.clone())?;
    let mut report = ReplayReport {
        checked: 0,
        max_abs_diff: 0.0,
    };
    for s in samples.iter().take(count) {
        let a = &s.state;
        let car = CarState {
            x: a[0],
            y: a[1],
            yaw: a[2],
            v_x: a[3],
            omega_z: a[4],
            theta_s: a[5],
            beta: a[6],
        };
        let cmd = teacher.step(&car, line, factor)?.command;
        let diff = (cmd.speed - s.label[0]).abs().max((cmd.steer - s.label[1]).abs());
        report.max_abs_diff = report.max_abs_diff.max(diff);
        report.checked += 1;
    }
    Ok(report)
}
