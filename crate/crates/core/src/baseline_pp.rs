//! Pure-pursuit steering with a speed-proportional lookahead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plants::{CarCommand, CarParams, CarState};
use crate::raceline::Raceline;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PurePursuitConfig {
    /// Lookahead time (s): the goal lies `lookahead_gain * v` meters ahead.
    pub lookahead_gain: f64,
    pub min_lookahead: f64,
    pub max_lookahead: f64,
    pub wheelbase: f64,
    pub max_steer: f64,
}

impl Default for PurePursuitConfig {
    fn default() -> Self {
        let car = CarParams::default();
        Self {
            lookahead_gain: 0.4,
            min_lookahead: 0.5,
            max_lookahead: 3.0,
            wheelbase: car.wheelbase,
            max_steer: car.max_steer,
        }
    }
}

impl PurePursuitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lookahead_gain > 0.0) || !(self.wheelbase > 0.0) || !(self.max_steer > 0.0) {
            return Err(Error::Config(
                "pure pursuit gain, wheelbase and max steer must be positive".into(),
            ));
        }
        if !(self.min_lookahead > 0.0 && self.min_lookahead <= self.max_lookahead) {
            return Err(Error::Config("pure pursuit needs 0 < min lookahead <= max lookahead".into()));
        }
        Ok(())
    }

    pub fn lookahead(&self, speed: f64) -> f64 {
        (self.lookahead_gain * speed.max(0.0)).clamp(self.min_lookahead, self.max_lookahead)
    }
}

/// Steer along the circle through the car and a goal point `d_l` meters of
/// arc ahead on the line; drive at the goal's suggested speed times `speed_factor`.
pub fn pp_control(car: &CarState, line: &Raceline, speed_factor: f64, cfg: &PurePursuitConfig) -> CarCommand {
    let d_l = cfg.lookahead(car.v_x);
    let s0 = line.nearest_progress(car.x, car.y).s;
    let goal = line.sample(s0 + d_l);
    let (dx, dy) = (goal.x - car.x, goal.y - car.y);
    let (sy, cy) = car.yaw.sin_cos();
    let (bx, by) = (cy * dx + sy * dy, -sy * dx + cy * dy);
    let alpha = by.atan2(bx);
    let steer = (2.0 * cfg.wheelbase * alpha.sin() / d_l).atan();
    CarCommand::new(goal.v_x * speed_factor, steer.clamp(-cfg.max_steer, cfg.max_steer))
}

#[derive(Debug, Clone)]
pub struct PurePursuit {
    pub config: PurePursuitConfig,
}

impl PurePursuit {
    pub fn new(config: PurePursuitConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raceline::Waypoint;
    use std::f64::consts::PI;

    fn circle(r: f64) -> Raceline {
        let n = (2.0 * PI * r / 0.1) as usize;
        Raceline::new(
            (0..n)
                .map(|i| {
                    let a = 2.0 * PI * i as f64 / n as f64;
                    Waypoint::new(r * a.cos(), r * a.sin(), 3.0)
                })
                .collect(),
        )
        .unwrap()
    }

    fn straight() -> Raceline {
        let mut pts: Vec<Waypoint> = (0..100).map(|i| Waypoint::new(0.2 * i as f64, 0.0, 4.0)).collect();
        pts.extend((0..100).rev().map(|i| Waypoint::new(0.2 * i as f64, 10.0, 4.0)));
        Raceline::new(pts).unwrap()
    }

    #[test]
    fn goal_dead_ahead_gives_zero_steer() {
        let p = CarParams::default();
        let car = CarState::new(2.0, 0.0, 0.0, 3.0, 0.0, &p);
        let cmd = pp_control(&car, &straight(), 1.0, &PurePursuitConfig::default());
        assert_eq!(cmd.steer, 0.0);
        assert_eq!(cmd.speed, 4.0);
    }

    #[test]
    fn goal_on_the_left_steers_left() {
        let p = CarParams::default();
        let car = CarState::new(2.0, -0.1, 0.0, 3.0, 0.0, &p);
        let cmd = pp_control(&car, &straight(), 1.5, &PurePursuitConfig::default());
        assert!(cmd.steer > 0.0);
        assert!((cmd.speed - 6.0).abs() < 1e-12);
    }

    #[test]
    fn lookahead_is_clamped() {
        let cfg = PurePursuitConfig::default();
        assert_eq!(cfg.lookahead(0.0), 0.5);
        assert_eq!(cfg.lookahead(-3.0), 0.5);
        assert!((cfg.lookahead(5.0) - 2.0).abs() < 1e-12);
        assert_eq!(cfg.lookahead(100.0), 3.0);
    }

    #[test]
    fn steering_on_a_circle_matches_geometry() {
        let r = 5.0;
        let line = circle(r);
        let p = CarParams::default();
        let car = CarState::new(r, 0.0, PI / 2.0, 2.0, 0.0, &p);
        let cmd = pp_control(&car, &line, 1.0, &PurePursuitConfig::default());
        let expected = (p.wheelbase / r).atan();
        assert!((cmd.steer - expected).abs() / expected < 0.05, "{} vs {expected}", cmd.steer);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = PurePursuitConfig {
            min_lookahead: 4.0,
            ..PurePursuitConfig::default()
        };
        assert!(PurePursuit::new(cfg).is_err());
    }
}
