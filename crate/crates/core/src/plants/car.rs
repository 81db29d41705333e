use serde::{Deserialize, Serialize};

use super::{ensure_finite, wrap_angle, DelayLine};
use crate::autodiff::Real;
use crate::error::{Error, Result};

/// Kinematic single-track car with servo and drivetrain lag.
///
/// The steering servo and the speed controller both track their commands
/// with first-order dynamics and rate limits. Yaw rate follows the kinematic
/// bicycle relation `v tan(steer) / wheelbase` until the lateral acceleration
/// reaches `friction * gravity`; beyond that the car understeers along the
/// largest curvature the tires can hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarParams {
    pub wheelbase: f64,
    /// Distance from the rear axle to the center of mass.
    pub rear_to_cog: f64,
    pub max_steer: f64,
    pub max_steer_rate: f64,
    pub steer_time_constant: f64,
    pub max_speed: f64,
    pub max_accel: f64,
    pub max_brake: f64,
    pub speed_time_constant: f64,
    pub friction: f64,
    pub gravity: f64,
    /// Perception plus actuation latency (s), applied to commands.
    pub delay: f64,
}

impl Default for CarParams {
    fn default() -> Self {
        Self {
            wheelbase: 0.3302,
            rear_to_cog: 0.17145,
            max_steer: 0.4189,
            max_steer_rate: 3.2,
            steer_time_constant: 0.05,
            max_speed: 12.0,
            max_accel: 7.5,
            max_brake: 9.5,
            speed_time_constant: 0.2,
            friction: 1.1,
            gravity: 9.81,
            delay: 0.08,
        }
    }
}

impl CarParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("wheelbase", self.wheelbase),
            ("rear_to_cog", self.rear_to_cog),
            ("max_steer", self.max_steer),
            ("max_steer_rate", self.max_steer_rate),
            ("steer_time_constant", self.steer_time_constant),
            ("max_speed", self.max_speed),
            ("max_accel", self.max_accel),
            ("max_brake", self.max_brake),
            ("speed_time_constant", self.speed_time_constant),
            ("friction", self.friction),
            ("gravity", self.gravity),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("car {name} must be positive, got {v}")));
            }
        }
        if self.rear_to_cog > self.wheelbase {
            return Err(Error::Config("rear_to_cog exceeds wheelbase".into()));
        }
        if !(self.delay >= 0.0) {
            return Err(Error::Config(format!("car delay must be >= 0, got {}", self.delay)));
        }
        Ok(())
    }

    pub fn clamp_command(&self, c: CarCommand) -> CarCommand {
        CarCommand {
            speed: c.speed.clamp(0.0, self.max_speed),
            steer: c.steer.clamp(-self.max_steer, self.max_steer),
        }
    }
}

/// Desired longitudinal speed (m/s) and steering angle (rad).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CarCommand {
    pub speed: f64,
    pub steer: f64,
}

impl CarCommand {
    pub fn new(speed: f64, steer: f64) -> Self {
        Self { speed, steer }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CarState {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub v_x: f64,
    pub omega_z: f64,
    pub theta_s: f64,
    pub beta: f64,
}

impl CarState {
    /// State at rest-consistent yaw rate and slip for the given speed and steer.
    pub fn new(x: f64, y: f64, yaw: f64, v_x: f64, theta_s: f64, p: &CarParams) -> Self {
        let (omega_z, beta) = car_kinematics(v_x, theta_s, p);
        Self {
            x,
            y,
            yaw: wrap_angle(yaw),
            v_x,
            omega_z,
            theta_s,
            beta,
        }
    }

    /// The integrated part `[x, y, yaw, v_x, theta_s]`.
    pub(crate) fn core(&self) -> [f64; 5] {
        [self.x, self.y, self.yaw, self.v_x, self.theta_s]
    }

    pub(crate) fn from_core(c: [f64; 5], p: &CarParams) -> Self {
        Self::new(c[0], c[1], c[2], c[3], c[4], p)
    }

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.x,
            self.y,
            self.yaw,
            self.v_x,
            self.omega_z,
            self.theta_s,
            self.beta,
        ]
    }
}

/// Yaw rate and slip angle implied by speed and steering, friction limited.
#[inline]
pub(crate) fn car_kinematics<T: Real>(v: T, steer: T, p: &CarParams) -> (T, T) {
    let t = steer.tan();
    let yaw_rate = v * t / p.wheelbase;
    let lat = (v * yaw_rate).re().abs();
    let grip = p.friction * p.gravity;
    let (yaw_rate, t_eff) = if lat > grip {
        let limited = (T::cst(grip) / v) * yaw_rate.re().signum();
        (limited, limited * p.wheelbase / v)
    } else {
        (yaw_rate, t)
    };
    let beta = (t_eff * (p.rear_to_cog / p.wheelbase)).atan();
    (yaw_rate, beta)
}

/// Derivative of `[x, y, yaw, v_x, theta_s]` under a command `[speed, steer]`.
#[inline]
pub(crate) fn car_core_derivative<T: Real>(s: [T; 5], cmd: [T; 2], p: &CarParams) -> [T; 5] {
    let [_, _, yaw, v, steer] = s;
    let speed_cmd = cmd[0].clamp_to(0.0, p.max_speed);
    let steer_cmd = cmd[1].clamp_to(-p.max_steer, p.max_steer);

    let steer_rate =
        ((steer_cmd - steer) / p.steer_time_constant).clamp_to(-p.max_steer_rate, p.max_steer_rate);
    let accel = ((speed_cmd - v) / p.speed_time_constant).clamp_to(-p.max_brake, p.max_accel);

    let (yaw_rate, beta) = car_kinematics(v, steer, p);
    let tan_beta = beta.tan();
    let (s_yaw, c_yaw) = (yaw.sin(), yaw.cos());
    // center-of-mass velocity is v_x / cos(beta) along yaw + beta
    let dx = v * (c_yaw - tan_beta * s_yaw);
    let dy = v * (s_yaw + tan_beta * c_yaw);
    [dx, dy, yaw_rate, accel, steer_rate]
}

/// One explicit Euler sub-step; speed never goes negative.
#[inline]
pub(crate) fn car_core_step<T: Real>(s: [T; 5], cmd: [T; 2], h: f64, p: &CarParams) -> [T; 5] {
    let d = car_core_derivative(s, cmd, p);
    let mut n = s;
    for (x, dx) in n.iter_mut().zip(d) {
        *x += dx * h;
    }
    n[3] = n[3].max_cst(0.0);
    n
}

/// Time derivative of the full state for a command; yaw-rate and slip entries
/// hold the rates of the algebraic quantities as zero.
pub fn car_derivative(s: &CarState, cmd: CarCommand, p: &CarParams) -> Result<[f64; 7]> {
    ensure_finite(&s.to_array(), "car state")?;
    let d = car_core_derivative(s.core(), [cmd.speed, cmd.steer], p);
    ensure_finite(&d, "car derivative")?;
    let (yaw_rate, _) = car_kinematics(s.v_x, s.theta_s, p);
    Ok([d[0], d[1], yaw_rate, d[3], 0.0, d[4], 0.0])
}

impl CarState {
    /// Advance `dt` seconds in `substeps` Euler steps with the command held.
    pub fn step(&self, cmd: CarCommand, dt: f64, substeps: usize, p: &CarParams) -> Result<Self> {
        if !(dt > 0.0) || substeps == 0 {
            return Err(Error::Config("car step needs dt > 0 and substeps >= 1".into()));
        }
        let h = dt / substeps as f64;
        let mut c = self.core();
        for _ in 0..substeps {
            c = car_core_step(c, [cmd.speed, cmd.steer], h, p);
        }
        c[2] = wrap_angle(c[2]);
        ensure_finite(&c, "car state")?;
        Ok(CarState::from_core(c, p))
    }
}

/// Car plant with its actuation delay, advanced one control period at a time.
#[derive(Debug, Clone)]
pub struct CarSimulator {
    state: CarState,
    params: CarParams,
    delay: DelayLine<CarCommand>,
    t: f64,
    dt: f64,
    substeps: usize,
}

impl CarSimulator {
    /// `dt` is the control period; `substeps` Euler steps are taken per period.
    pub fn new(state: CarState, params: CarParams, dt: f64, substeps: usize) -> Result<Self> {
        params.validate()?;
        if !(dt > 0.0) || substeps == 0 {
            return Err(Error::Config("car simulator needs dt > 0 and substeps >= 1".into()));
        }
        let hold = CarCommand::new(state.v_x, state.theta_s);
        Ok(Self {
            delay: DelayLine::new(params.delay, hold),
            state,
            params,
            t: 0.0,
            dt,
            substeps,
        })
    }

    pub fn state(&self) -> &CarState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn params(&self) -> &CarParams {
        &self.params
    }

    /// Issue `cmd` now and simulate one period with whatever command is in effect.
    pub fn advance(&mut self, cmd: CarCommand) -> Result<&CarState> {
        self.delay.push(self.t, self.params.clamp_command(cmd));
        let effective = self.delay.at(self.t);
        self.state = self.state.step(effective, self.dt, self.substeps, &self.params)?;
        self.t += self.dt;
        Ok(&self.state)
    }
}
