use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{wrap_angle, CartpoleState};
use crate::error::{Error, Result};

/// Encoder and ADC resolution of the cartpole, plus derivative estimation.
///
/// Infinite count rates model an ideal sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorModel {
    /// Cart encoder counts per meter (118.8 counts per cm on the reference cart).
    pub position_counts_per_m: f64,
    /// Pole angle counts per revolution (12-bit ADC).
    pub angle_counts_per_rev: f64,
    /// Span (s) over which velocities are differenced; half of it is the added lag.
    pub velocity_window: f64,
    /// Rolling median over this many angle readings (1 = off).
    pub median_window: usize,
    /// Uniform angle read noise amplitude (rad).
    pub angle_noise: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            position_counts_per_m: 11_880.0,
            angle_counts_per_rev: 4096.0,
            velocity_window: 0.010,
            median_window: 1,
            angle_noise: 0.0,
        }
    }
}

impl SensorModel {
    pub fn ideal() -> Self {
        Self {
            position_counts_per_m: f64::INFINITY,
            angle_counts_per_rev: f64::INFINITY,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.position_counts_per_m > 0.0) || !(self.angle_counts_per_rev > 0.0) {
            return Err(Error::Config("sensor count rates must be positive".into()));
        }
        if !(self.velocity_window > 0.0) || self.median_window == 0 {
            return Err(Error::Config(
                "sensor velocity window and median window must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn position_quantum(&self) -> f64 {
        1.0 / self.position_counts_per_m
    }

    pub fn angle_quantum(&self) -> f64 {
        2.0 * PI / self.angle_counts_per_rev
    }

    pub fn quantize_position(&self, x: f64) -> f64 {
        quantize_to(x, self.position_quantum())
    }

    pub fn quantize_angle(&self, theta: f64) -> f64 {
        wrap_angle(quantize_to(theta, self.angle_quantum()))
    }

    /// Resolution of a velocity differenced over the window.
    pub fn velocity_quantum(&self) -> f64 {
        self.position_quantum() / self.velocity_window
    }

    pub fn angular_velocity_quantum(&self) -> f64 {
        self.angle_quantum() / self.velocity_window
    }
}

pub(crate) fn quantize_to(x: f64, quantum: f64) -> f64 {
    if quantum > 0.0 && quantum.is_finite() {
        (x / quantum).round() * quantum
    } else {
        x
    }
}

/// Stateful measurement pipeline for one cartpole episode.
///
/// Call [`CartpoleSensor::measure`] once per simulation step of `dt` seconds.
#[derive(Debug, Clone)]
pub struct CartpoleSensor {
    model: SensorModel,
    window_steps: usize,
    dt: f64,
    positions: VecDeque<f64>,
    angles: VecDeque<f64>,
    recent_angles: VecDeque<f64>,
    last_wrapped: Option<f64>,
    unwrapped: f64,
}

impl CartpoleSensor {
    pub fn new(model: SensorModel, dt: f64) -> Self {
        let window_steps = ((model.velocity_window / dt).round() as usize).max(1);
        Self {
            model,
            window_steps,
            dt,
            positions: VecDeque::with_capacity(window_steps + 1),
            angles: VecDeque::with_capacity(window_steps + 1),
            recent_angles: VecDeque::new(),
            last_wrapped: None,
            unwrapped: 0.0,
        }
    }

    pub fn model(&self) -> &SensorModel {
        &self.model
    }

    /// Record the true state and return what the controller sees.
    pub fn measure<R: Rng + ?Sized>(&mut self, s: &CartpoleState, rng: &mut R) -> CartpoleState {
        let noise = if self.model.angle_noise > 0.0 {
            rng.gen_range(-self.model.angle_noise..=self.model.angle_noise)
        } else {
            0.0
        };
        let xq = self.model.quantize_position(s.x);
        let thq = self.model.quantize_angle(s.theta + noise);

        // track the angle continuously so differences do not jump at the seam
        match self.last_wrapped {
            None => self.unwrapped = thq,
            Some(prev) => self.unwrapped += wrap_angle(thq - prev),
        }
        self.last_wrapped = Some(thq);

        self.recent_angles.push_back(self.unwrapped);
        if self.recent_angles.len() > self.model.median_window {
            self.recent_angles.pop_front();
        }
        let filtered = median(&self.recent_angles);

        self.positions.push_back(xq);
        self.angles.push_back(filtered);
        if self.positions.len() > self.window_steps + 1 {
            self.positions.pop_front();
            self.angles.pop_front();
        }

        let span = self.positions.len() - 1;
        let (v, omega) = if span == 0 {
            (0.0, 0.0)
        } else {
            let t = span as f64 * self.dt;
            (
                (self.positions[span] - self.positions[0]) / t,
                (self.angles[span] - self.angles[0]) / t,
            )
        };
        CartpoleState::new(xq, v, filtered, omega)
    }
}

fn median(values: &VecDeque<f64>) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
