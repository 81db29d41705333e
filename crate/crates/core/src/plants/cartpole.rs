use serde::{Deserialize, Serialize};

use super::{ensure_finite, wrap_angle};
use crate::autodiff::Real;
use crate::error::{Error, Result};

/// Cart on a finite track with a uniform rod pivoting on it.
///
/// `theta = 0` is upright, positive angles lean toward +x. The motor command
/// is a normalized acceleration request `u` in `[-1, 1]`, realized as the
/// force `(cart_mass + pole_mass) * u * u_max` on the cart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartpoleParams {
    /// Full rod length (m); the center of mass sits at half of it.
    pub pole_length: f64,
    pub pole_mass: f64,
    pub cart_mass: f64,
    /// Viscous cart friction (N s / m).
    pub cart_friction: f64,
    /// Viscous joint friction (N m s / rad).
    pub pole_friction: f64,
    /// Usable track length (m), centered on x = 0.
    pub track_length: f64,
    /// Cart acceleration (m/s^2) commanded by |u| = 1.
    pub u_max: f64,
    pub gravity: f64,
}

impl Default for CartpoleParams {
    fn default() -> Self {
        Self {
            pole_length: 0.395,
            pole_mass: 0.087,
            cart_mass: 0.230,
            cart_friction: 0.1,
            pole_friction: 2e-4,
            track_length: 0.44,
            u_max: 12.0,
            gravity: 9.81,
        }
    }
}

impl CartpoleParams {
    pub fn frictionless(mut self) -> Self {
        self.cart_friction = 0.0;
        self.pole_friction = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("pole_length", self.pole_length),
            ("pole_mass", self.pole_mass),
            ("cart_mass", self.cart_mass),
            ("track_length", self.track_length),
            ("u_max", self.u_max),
            ("gravity", self.gravity),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("cartpole {name} must be positive, got {v}")));
            }
        }
        if self.cart_friction < 0.0 || self.pole_friction < 0.0 {
            return Err(Error::Config("cartpole friction must be non-negative".into()));
        }
        Ok(())
    }

    pub fn half_track(&self) -> f64 {
        0.5 * self.track_length
    }

    /// Distance from pivot to the rod's center of mass.
    pub fn com_distance(&self) -> f64 {
        0.5 * self.pole_length
    }

    pub fn out_of_track(&self, s: &CartpoleState) -> bool {
        s.x.abs() > self.half_track()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CartpoleState {
    pub x: f64,
    pub v: f64,
    /// Wrapped to (-pi, pi], 0 = upright.
    pub theta: f64,
    pub omega: f64,
}

impl CartpoleState {
    pub fn new(x: f64, v: f64, theta: f64, omega: f64) -> Self {
        Self {
            x,
            v,
            theta: wrap_angle(theta),
            omega,
        }
    }

    pub fn hanging() -> Self {
        Self::new(0.0, 0.0, std::f64::consts::PI, 0.0)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.v, self.theta, self.omega]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

/// Accelerations `(x'', theta'')` of the coupled cart/rod equations.
#[inline]
fn accelerations<T: Real>(v: T, theta: T, omega: T, u: T, p: &CartpoleParams) -> (T, T) {
    let m = p.pole_mass;
    let total = p.cart_mass + m;
    let l = p.com_distance();
    let (s, c) = (theta.sin(), theta.cos());

    let force = u * (p.u_max * total) - v * p.cart_friction;
    // mass matrix [[total, m l c], [m l c, 4/3 m l^2]]
    let a11 = total;
    let a12 = c * (m * l);
    let a22 = 4.0 / 3.0 * m * l * l;
    let det = -(a12 * a12) + a11 * a22;
    let r1 = force + s * omega * omega * (m * l);
    let r2 = s * (m * p.gravity * l) - omega * p.pole_friction;
    let xdd = (r1 * a22 - a12 * r2) / det;
    let thdd = (r2 * a11 - a12 * r1) / det;
    (xdd, thdd)
}

/// Time derivative `(dx, dv, dtheta, domega)` for a normalized control `u`.
pub fn cartpole_derivative(s: &CartpoleState, u: f64, p: &CartpoleParams) -> Result<[f64; 4]> {
    ensure_finite(&s.to_array(), "cartpole state")?;
    let u = u.clamp(-1.0, 1.0);
    let (xdd, thdd) = accelerations(s.v, s.theta, s.omega, u, p);
    let d = [s.v, xdd, s.omega, thdd];
    ensure_finite(&d, "cartpole derivative")?;
    Ok(d)
}

/// One semi-implicit Euler sub-step on raw `[x, v, theta, omega]` (no wrapping).
#[inline]
pub(crate) fn cartpole_core_step<T: Real>(s: [T; 4], u: T, h: f64, p: &CartpoleParams) -> [T; 4] {
    let [x, v, theta, omega] = s;
    let (xdd, thdd) = accelerations(v, theta, omega, u, p);
    let v = v + xdd * h;
    let omega = omega + thdd * h;
    [x + v * h, v, theta + omega * h, omega]
}

/// Advance `dt` seconds in `substeps` equal Euler steps with the control held.
///
/// Velocities are updated before positions (semi-implicit Euler), which keeps
/// the energy error of the frictionless pendulum bounded instead of growing.
pub fn step_euler(
    s: &CartpoleState,
    u: f64,
    dt: f64,
    substeps: usize,
    p: &CartpoleParams,
) -> Result<CartpoleState> {
    if !(dt > 0.0) || substeps == 0 {
        return Err(Error::Config(format!(
            "step_euler needs dt > 0 and substeps >= 1 (dt = {dt}, substeps = {substeps})"
        )));
    }
    let u = u.clamp(-1.0, 1.0);
    let h = dt / substeps as f64;
    let mut a = s.to_array();
    for _ in 0..substeps {
        a = cartpole_core_step(a, u, h, p);
        a[2] = wrap_angle(a[2]);
    }
    ensure_finite(&a, "cartpole state")?;
    Ok(CartpoleState::from_array(a))
}
