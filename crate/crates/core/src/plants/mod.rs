//! Plant models: forward dynamics, integration, sensing and actuation delay.

mod car;
mod cartpole;
mod delay;
mod sensor;

use std::f64::consts::PI;

pub use car::{car_derivative, CarCommand, CarParams, CarSimulator, CarState};
pub use cartpole::{cartpole_derivative, step_euler, CartpoleParams, CartpoleState};
pub use delay::DelayLine;
pub use sensor::{CartpoleSensor, SensorModel};

pub(crate) use car::{car_core_step, car_kinematics};
pub(crate) use cartpole::cartpole_core_step;
pub(crate) use sensor::quantize_to;

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> crate::Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(crate::Error::Numeric(format!("{what} became non-finite: {values:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(-7.0) - (-7.0 + 2.0 * PI)).abs() < 1e-12);
        assert_eq!(wrap_angle(0.3), 0.3);
    }
}
