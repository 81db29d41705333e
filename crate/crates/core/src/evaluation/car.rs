use serde::{Deserialize, Serialize};

use crate::baseline_pp::{pp_control, PurePursuit};
use crate::error::{Error, Result};
use crate::nmpc::CarMpc;
use crate::plants::{CarCommand, CarParams, CarSimulator, CarState};
use crate::raceline::{Lap, LapTimer, Raceline};

/// Anything that maps a car state and the race line to a command.
pub trait CarController {
    fn control(&mut self, car: &CarState, line: &Raceline, speed_factor: f64) -> Result<CarCommand>;
    fn reset(&mut self) {}
}

impl CarController for CarMpc {
    fn control(&mut self, car: &CarState, line: &Raceline, speed_factor: f64) -> Result<CarCommand> {
        Ok(self.step(car, line, speed_factor)?.command)
    }

    fn reset(&mut self) {
        CarMpc::reset(self);
    }
}

impl CarController for PurePursuit {
    fn control(&mut self, car: &CarState, line: &Raceline, speed_factor: f64) -> Result<CarCommand> {
        Ok(pp_control(car, line, speed_factor, &self.config))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarRunConfig {
    pub laps: usize,
    /// Give up after this much simulated time (s) per requested lap.
    pub max_time_per_lap: f64,
    pub speed_factor: f64,
    /// Control period (s).
    pub dt: f64,
    /// Plant Euler steps per control period.
    pub substeps: usize,
    /// The car crashes once its center is farther than this from the race line (m).
    pub track_half_width: f64,
    /// Start this far (m of arc) before the start line, at the suggested speed.
    pub run_in: f64,
    /// Tolerated backward progress (m) before a lap is marked invalid.
    pub reverse_tolerance: f64,
}

impl Default for CarRunConfig {
    fn default() -> Self {
        Self {
            laps: 10,
            max_time_per_lap: 60.0,
            speed_factor: 1.0,
            dt: 0.02,
            substeps: 10,
            track_half_width: 0.6,
            run_in: 1.0,
            reverse_tolerance: 0.5,
        }
    }
}

impl CarRunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.speed_factor > 0.0) || !(self.dt > 0.0) || self.substeps == 0 {
            return Err(Error::Config(
                "car run needs speed factor > 0, dt > 0 and substeps >= 1".into(),
            ));
        }
        if !(self.track_half_width > 0.0) || !(self.max_time_per_lap > 0.0) || !(self.run_in >= 0.0) {
            return Err(Error::Config(
                "car run needs positive track width and lap time limit".into(),
            ));
        }
        Ok(())
    }
}

/// One control period of a car episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarLogRow {
    pub t: f64,
    pub state: CarState,
    /// Progress along the line and distance to it after the period.
    pub s: f64,
    pub d: f64,
    pub command: CarCommand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarEpisode {
    pub log: Vec<CarLogRow>,
    pub laps: Vec<Lap>,
    pub crashed: bool,
}

/// Pose on the line `run_in` meters before its start, heading along it.
pub fn start_state(line: &Raceline, run_in: f64, speed_factor: f64, params: &CarParams) -> CarState {
    let s = line.length() - run_in;
    let here = line.sample(s);
    let ahead = line.sample(s + 0.05);
    let yaw = (ahead.y - here.y).atan2(ahead.x - here.x);
    CarState::new(here.x, here.y, yaw, here.v_x * speed_factor, 0.0, params)
}

/// Drive until the requested laps are done, the car leaves the track or time runs out.
pub fn run_car(
    controller: &mut dyn CarController,
    line: &Raceline,
    params: &CarParams,
    cfg: &CarRunConfig,
) -> Result<CarEpisode> {
    cfg.validate()?;
    controller.reset();
    let start = start_state(line, cfg.run_in, cfg.speed_factor, params);
    let mut sim = CarSimulator::new(start, params.clone(), cfg.dt, cfg.substeps)?;
    let mut timer = LapTimer::new(line.length(), cfg.reverse_tolerance);
    timer.push(0.0, line.nearest_progress(start.x, start.y).s);
    let max_steps = ((cfg.laps.max(1) as f64 * cfg.max_time_per_lap) / cfg.dt).ceil() as usize;

    let mut log = Vec::new();
    let mut laps = Vec::new();
    let mut crashed = false;
    for _ in 0..max_steps {
        let command = controller.control(sim.state(), line, cfg.speed_factor)?;
        let state = *sim.advance(command)?;
        let t = sim.time();
        let pr = line.nearest_progress(state.x, state.y);
        log.push(CarLogRow {
            t,
            state,
            s: pr.s,
            d: pr.d,
            command,
        });
        if pr.d > cfg.track_half_width {
            crashed = true;
            break;
        }
        if let Some(lap) = timer.push(t, pr.s) {
            laps.push(lap);
            if laps.len() >= cfg.laps {
                break;
            }
        }
    }
    Ok(CarEpisode { log, laps, crashed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarMetrics {
    pub d_max: f64,
    pub d_mean: f64,
    pub lap_times: Vec<f64>,
    pub mean_lap_time: Option<f64>,
    pub crashes: usize,
    /// Requested laps completed, all valid, without a crash.
    pub completed: bool,
}

/// Metrics of an episode, computed from its log alone.
pub fn car_metrics(episode: &CarEpisode, requested_laps: usize) -> CarMetrics {
    let n = episode.log.len();
    let d_max = episode.log.iter().map(|r| r.d).fold(0.0, f64::max);
    let d_mean = if n == 0 {
        0.0
    } else {
        episode.log.iter().map(|r| r.d).sum::<f64>() / n as f64
    };
    let lap_times: Vec<f64> = episode.laps.iter().map(|l| l.time).collect();
    let mean_lap_time = (!lap_times.is_empty()).then(|| lap_times.iter().sum::<f64>() / lap_times.len() as f64);
    CarMetrics {
        d_max,
        d_mean,
        mean_lap_time,
        crashes: usize::from(episode.crashed),
        completed: !episode.crashed
            && episode.laps.len() >= requested_laps
            && episode.laps.iter().all(|l| l.valid),
        lap_times,
    }
}

/// Outcome of a speed-factor search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedFactorSearch {
    /// Largest factor known to succeed, or the floor if none did.
    pub factor: f64,
    pub success: bool,
    pub trials: usize,
}

pub const SEARCH_FLOOR: f64 = 0.3;
pub const SEARCH_CEILING: f64 = 1.5;
pub const SEARCH_RESOLUTION: f64 = 0.01;

/// Grid step of the coarse top-down scan that precedes bisection.
pub const SEARCH_COARSE_STEP: f64 = 0.1;

/// Largest factor in `[lo, hi]` for which `succeeds` holds, to `resolution`.
///
/// A coarse grid is scanned from `hi` downwards until a factor succeeds, then
/// the bracket above it is bisected. Success only has to be monotone within
/// that bracket, so controllers that also fail at very low speeds are handled.
pub fn bisect_speed_factor(
    lo: f64,
    hi: f64,
    resolution: f64,
    mut succeeds: impl FnMut(f64) -> Result<bool>,
) -> Result<SpeedFactorSearch> {
    if !(lo > 0.0 && lo < hi && resolution > 0.0) {
        return Err(Error::Config("speed factor search needs 0 < lo < hi and resolution > 0".into()));
    }
    let snap = |f: f64| (f / resolution).round() * resolution;
    let mut trials = 0;
    let mut check = |f: f64| {
        trials += 1;
        succeeds(f)
    };
    let coarse = SEARCH_COARSE_STEP.max(resolution);
    let mut grid = Vec::new();
    let mut f = hi;
    while f > lo + 1e-9 {
        grid.push(snap(f));
        f -= coarse;
    }
    grid.push(lo);

    let mut found = None;
    for (i, &g) in grid.iter().enumerate() {
        if check(g)? {
            found = Some((g, if i == 0 { g } else { grid[i - 1] }));
            break;
        }
    }
    let Some((mut good, mut bad)) = found else {
        return Ok(SpeedFactorSearch {
            factor: lo,
            success: false,
            trials,
        });
    };
    while bad - good > resolution + 1e-9 {
        let mid = snap(0.5 * (good + bad));
        if mid <= good || mid >= bad {
            break;
        }
        if check(mid)? {
            good = mid;
        } else {
            bad = mid;
        }
    }
    Ok(SpeedFactorSearch {
        factor: good,
        success: true,
        trials,
    })
}

/// Largest speed factor with which `controller` completes `cfg.laps` laps.
pub fn max_speed_factor_search(
    controller: &mut dyn CarController,
    line: &Raceline,
    params: &CarParams,
    cfg: &CarRunConfig,
) -> Result<SpeedFactorSearch> {
    bisect_speed_factor(SEARCH_FLOOR, SEARCH_CEILING, SEARCH_RESOLUTION, |f| {
        let run = CarRunConfig {
            speed_factor: f,
            ..cfg.clone()
        };
        let ep = run_car(controller, line, params, &run)?;
        Ok(car_metrics(&ep, cfg.laps).completed)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline_pp::PurePursuitConfig;
    use crate::raceline::Waypoint;
    use std::f64::consts::PI;

    fn circle(r: f64, v: f64) -> Raceline {
        let n = (2.0 * PI * r / 0.2) as usize;
        Raceline::new(
            (0..n)
                .map(|i| {
                    let a = 2.0 * PI * i as f64 / n as f64;
                    Waypoint::new(r * a.cos(), r * a.sin(), v)
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn bisection_finds_boundary() {
        let r = bisect_speed_factor(0.3, 1.5, 0.01, |f| Ok(f <= 0.873)).unwrap();
        assert!(r.success);
        assert!(r.factor <= 0.873 && 0.873 - r.factor <= 0.01 + 1e-12, "{r:?}");
        // failing near the floor as well does not hide the upper boundary
        let r = bisect_speed_factor(0.3, 1.5, 0.01, |f| Ok(f > 0.45 && f <= 1.234)).unwrap();
        assert!(r.factor <= 1.234 && 1.234 - r.factor <= 0.01 + 1e-12, "{r:?}");
        let never = bisect_speed_factor(0.3, 1.5, 0.01, |_| Ok(false)).unwrap();
        assert_eq!((never.factor, never.success), (0.3, false));
        let always = bisect_speed_factor(0.3, 1.5, 0.01, |_| Ok(true)).unwrap();
        assert_eq!((always.factor, always.trials), (1.5, 1));
    }

    #[test]
    fn pure_pursuit_laps_a_circle_evenly() {
        let line = circle(5.0, 3.0);
        let p = CarParams::default();
        let mut pp = PurePursuit::new(PurePursuitConfig::default()).unwrap();
        let cfg = CarRunConfig {
            laps: 3,
            speed_factor: 0.8,
            ..CarRunConfig::default()
        };
        let ep = run_car(&mut pp, &line, &p, &cfg).unwrap();
        let m = car_metrics(&ep, 3);
        assert!(m.completed, "{m:?}");
        let t0 = m.lap_times[0];
        assert!(m.lap_times.iter().all(|t| (t - t0).abs() / t0 < 0.01), "{:?}", m.lap_times);
        assert!(m.d_mean <= m.d_max && m.d_mean >= 0.0);
    }

    #[test]
    fn runs_are_deterministic() {
        let line = circle(4.0, 3.0);
        let p = CarParams::default();
        let cfg = CarRunConfig {
            laps: 1,
            ..CarRunConfig::default()
        };
        let mut pp = PurePursuit::new(PurePursuitConfig::default()).unwrap();
        let a = run_car(&mut pp, &line, &p, &cfg).unwrap();
        let b = run_car(&mut pp, &line, &p, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
