use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::plan::{ControlPlan, PlanProblem};
use super::rollout::{rollout_cost, rollout_cost_grad, StageModel};
use super::rpgd::{OptimizerConfig, Rpgd, SolveStatus};
use super::MpcStep;
use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::plants::{cartpole_core_step, CartpoleParams, CartpoleState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartpoleCostWeights {
    /// On `(1 - cos(theta - theta_target))^2`.
    pub angle: f64,
    pub angular_velocity: f64,
    pub control: f64,
    /// On the squared track-normalized intrusion into the edge zones.
    pub boundary: f64,
    /// Width of each edge zone as a fraction of the track length.
    pub boundary_fraction: f64,
    /// On `|x - x_target| / track_length`.
    pub position: f64,
}

impl Default for CartpoleCostWeights {
    fn default() -> Self {
        Self {
            angle: 200.0,
            angular_velocity: 13.0,
            control: 10.0,
            boundary: 100_000.0,
            boundary_fraction: 0.15,
            position: 80.0,
        }
    }
}

impl CartpoleCostWeights {
    pub fn zero() -> Self {
        Self {
            angle: 0.0,
            angular_velocity: 0.0,
            control: 0.0,
            boundary: 0.0,
            position: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.angle,
            self.angular_velocity,
            self.control,
            self.boundary,
            self.position,
        ];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("cartpole cost weights must be finite and >= 0".into()));
        }
        if !(0.0..=0.5).contains(&self.boundary_fraction) {
            return Err(Error::Config("boundary fraction must be in [0, 0.5]".into()));
        }
        Ok(())
    }
}

/// Target cart position and which equilibrium to hold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartpoleTarget {
    pub position: f64,
    pub up: bool,
}

impl CartpoleTarget {
    pub fn up(position: f64) -> Self {
        Self { position, up: true }
    }

    pub fn down(position: f64) -> Self {
        Self { position, up: false }
    }

    pub fn angle(&self) -> f64 {
        if self.up {
            0.0
        } else {
            PI
        }
    }
}

/// Horizon sums of each weighted cost term.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CartpoleCostTerms {
    pub angle: f64,
    pub angular_velocity: f64,
    pub control: f64,
    pub boundary: f64,
    pub position: f64,
}

impl CartpoleCostTerms {
    pub fn total(&self) -> f64 {
        self.angle + self.angular_velocity + self.control + self.boundary + self.position
    }
}

/// Weighted terms charged for reaching `x = [x, v, theta, omega]` with `u`.
fn stage_terms<T: Real>(
    x: &[T; 4],
    u: T,
    target: &CartpoleTarget,
    w: &CartpoleCostWeights,
    p: &CartpoleParams,
) -> [T; 5] {
    let len = p.track_length;
    let zone_start = p.half_track() - w.boundary_fraction * len;
    // (2 - cos)^2 less its upright value of 1
    let c = (x[2] - target.angle()).cos();
    let angle = (-c + 1.0) * (-c + 3.0) * w.angle;
    let angular_velocity = x[3].sq() * w.angular_velocity;
    let control = u.sq() * w.control;
    let intrusion = (x[0].abs() - zone_start).max_cst(0.0) / len;
    let boundary = intrusion.sq() * w.boundary;
    let position = (x[0] - target.position).abs() * (w.position / len);
    [angle, angular_velocity, control, boundary, position]
}

/// Cost terms of a given trajectory; `traj[i]` is the state after `plan` step `i`.
pub fn cartpole_cost_terms(
    traj: &[CartpoleState],
    plan: &ControlPlan,
    target: &CartpoleTarget,
    weights: &CartpoleCostWeights,
    params: &CartpoleParams,
) -> Result<CartpoleCostTerms> {
    if traj.len() != plan.horizon() || plan.dim() != 1 {
        return Err(Error::Config(format!(
            "trajectory of {} states does not match a plan of {} scalar steps",
            traj.len(),
            plan.horizon()
        )));
    }
    let mut t = CartpoleCostTerms::default();
    for (s, u) in traj.iter().zip(plan.as_slice()) {
        let [a, w, c, b, p] = stage_terms(&s.to_array(), *u, target, weights, params);
        t.angle += a;
        t.angular_velocity += w;
        t.control += c;
        t.boundary += b;
        t.position += p;
    }
    Ok(t)
}

/// Receding-horizon problem for one control period of the cartpole.
#[derive(Debug, Clone)]
pub struct CartpoleProblem<'a> {
    pub x0: CartpoleState,
    pub target: CartpoleTarget,
    pub weights: &'a CartpoleCostWeights,
    pub model: &'a CartpoleParams,
    pub horizon: usize,
    pub dt: f64,
    pub substeps: usize,
}

impl StageModel<4, 1, 5> for CartpoleProblem<'_> {
    fn step<T: Real>(&self, x: [T; 4], u: [T; 1]) -> [T; 4] {
        let h = self.dt / self.substeps as f64;
        let mut x = x;
        for _ in 0..self.substeps {
            x = cartpole_core_step(x, u[0], h, self.model);
        }
        x
    }

    fn stage<T: Real>(&self, _: usize, x: &[T; 4], u: &[T; 1]) -> T {
        let [a, b, c, d, e] = stage_terms(x, u[0], &self.target, self.weights, self.model);
        a + b + c + d + e
    }
}

impl CartpoleProblem<'_> {
    /// Predicted states after each plan step.
    pub fn trajectory(&self, plan: &ControlPlan) -> Vec<CartpoleState> {
        let mut x = self.x0.to_array();
        plan.as_slice()
            .iter()
            .map(|&u| {
                x = self.step(x, [u]);
                CartpoleState::from_array(x)
            })
            .collect()
    }

    pub fn cost_terms(&self, plan: &ControlPlan) -> Result<CartpoleCostTerms> {
        cartpole_cost_terms(
            &self.trajectory(plan),
            plan,
            &self.target,
            self.weights,
            self.model,
        )
    }
}

impl PlanProblem for CartpoleProblem<'_> {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn lower(&self) -> &[f64] {
        &[-1.0]
    }

    fn upper(&self) -> &[f64] {
        &[1.0]
    }

    fn cost(&self, plan: &ControlPlan) -> f64 {
        rollout_cost(self, self.x0.to_array(), plan.as_slice())
    }

    fn cost_grad(&self, plan: &ControlPlan, grad: &mut [f64]) -> f64 {
        rollout_cost_grad(self, self.x0.to_array(), plan.as_slice(), grad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartpoleMpcConfig {
    pub horizon: usize,
    /// Control period (s).
    pub dt: f64,
    /// Euler sub-steps of the prediction model per period.
    pub substeps: usize,
    pub weights: CartpoleCostWeights,
    pub optimizer: OptimizerConfig,
}

impl Default for CartpoleMpcConfig {
    fn default() -> Self {
        Self {
            horizon: 35,
            dt: 0.02,
            substeps: 4,
            weights: CartpoleCostWeights::default(),
            // few members with many small steps converge far enough that the
            // first action varies smoothly with the state
            optimizer: OptimizerConfig {
                population: 8,
                steps: 20,
                learning_rate: 0.02,
                ..OptimizerConfig::default()
            },
        }
    }
}

impl CartpoleMpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.substeps == 0 || !(self.dt > 0.0) {
            return Err(Error::Config(
                "cartpole MPC needs horizon >= 1, substeps >= 1 and dt > 0".into(),
            ));
        }
        self.weights.validate()?;
        self.optimizer.validate()
    }
}

/// Cartpole NMPC; executes the first element of each optimized plan.
#[derive(Debug, Clone)]
pub struct CartpoleMpc {
    config: CartpoleMpcConfig,
    model: CartpoleParams,
    solver: Rpgd,
}

impl CartpoleMpc {
    pub fn new(config: CartpoleMpcConfig, model: CartpoleParams) -> Result<Self> {
        config.validate()?;
        model.validate()?;
        let solver = Rpgd::new(config.optimizer.clone())?;
        Ok(Self {
            config,
            model,
            solver,
        })
    }

    pub fn config(&self) -> &CartpoleMpcConfig {
        &self.config
    }

    pub fn reset(&mut self) {
        self.solver.reset();
    }

    pub fn problem(&self, state: &CartpoleState, target: CartpoleTarget) -> CartpoleProblem<'_> {
        CartpoleProblem {
            x0: *state,
            target,
            weights: &self.config.weights,
            model: &self.model,
            horizon: self.config.horizon,
            dt: self.config.dt,
            substeps: self.config.substeps,
        }
    }

    pub fn step(&mut self, state: &CartpoleState, target: CartpoleTarget) -> Result<MpcStep<f64>> {
        if !state.to_array().iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("cartpole MPC got a non-finite state".into()));
        }
        let problem = CartpoleProblem {
            x0: *state,
            target,
            weights: &self.config.weights,
            model: &self.model,
            horizon: self.config.horizon,
            dt: self.config.dt,
            substeps: self.config.substeps,
        };
        let sol = self.solver.solve(&problem);
        self.solver.shift();
        Ok(MpcStep {
            command: sol.plan.step(0)[0],
            cost: sol.cost,
            fallback: sol.status == SolveStatus::Fallback,
            plan: sol.plan,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem<'a>(
        x0: CartpoleState,
        w: &'a CartpoleCostWeights,
        p: &'a CartpoleParams,
    ) -> CartpoleProblem<'a> {
        CartpoleProblem {
            x0,
            target: CartpoleTarget::up(0.0),
            weights: w,
            model: p,
            horizon: 35,
            dt: 0.02,
            substeps: 4,
        }
    }

    #[test]
    fn zero_weights_give_zero_cost() {
        let w = CartpoleCostWeights::zero();
        let p = CartpoleParams::default();
        let pr = problem(CartpoleState::new(0.1, 0.2, 1.0, -0.5), &w, &p);
        let plan = ControlPlan::from_flat(1, (0..35).map(|i| (i as f64).sin()).collect()).unwrap();
        assert_eq!(pr.cost(&plan), 0.0);
    }

    #[test]
    fn upright_rest_at_target_costs_nothing() {
        let w = CartpoleCostWeights::default();
        let p = CartpoleParams::default();
        let pr = problem(CartpoleState::default(), &w, &p);
        assert_eq!(pr.cost(&ControlPlan::zeros(35, 1)), 0.0);
    }

    #[test]
    fn hanging_at_rest_in_down_mode() {
        let w = CartpoleCostWeights::default();
        let p = CartpoleParams::default();
        let traj = vec![CartpoleState::hanging(); 3];
        let t = cartpole_cost_terms(
            &traj,
            &ControlPlan::zeros(3, 1),
            &CartpoleTarget::down(0.0),
            &w,
            &p,
        )
        .unwrap();
        assert_eq!(t.angle, 0.0);
        assert_eq!(t.angular_velocity, 0.0);
    }

    #[test]
    fn track_edge_gets_full_boundary_penalty() {
        let w = CartpoleCostWeights::default();
        let p = CartpoleParams::default();
        let edge = CartpoleState::new(p.half_track(), 0.0, 0.0, 0.0);
        let t = cartpole_cost_terms(
            &[edge],
            &ControlPlan::zeros(1, 1),
            &CartpoleTarget::up(p.half_track()),
            &w,
            &p,
        )
        .unwrap();
        assert!((t.boundary - w.boundary * 0.15 * 0.15).abs() < 1e-9);
    }

    #[test]
    fn angle_term_is_two_minus_cosine_squared_less_one() {
        let w = CartpoleCostWeights::default();
        let p = CartpoleParams::default();
        let tgt = CartpoleTarget::up(0.0);
        let at = |theta: f64| {
            cartpole_cost_terms(
                &[CartpoleState::new(0.0, 0.0, theta, 0.0)],
                &ControlPlan::zeros(1, 1),
                &tgt,
                &w,
                &p,
            )
            .unwrap()
            .angle
        };
        assert!((at(std::f64::consts::FRAC_PI_2) - 3.0 * w.angle).abs() < 1e-9);
        assert!((at(std::f64::consts::PI) - 8.0 * w.angle).abs() < 1e-9);
        // quadratic near upright: (2 - cos t)^2 - 1 ~ t^2
        let small = 1e-3;
        assert!((at(small) / (w.angle * small * small) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn control_term_is_quadratic() {
        let w = CartpoleCostWeights::default();
        let p = CartpoleParams::default();
        let traj = [CartpoleState::default()];
        let tgt = CartpoleTarget::up(0.0);
        let a = cartpole_cost_terms(&traj, &ControlPlan::from_flat(1, vec![0.3]).unwrap(), &tgt, &w, &p)
            .unwrap();
        let b = cartpole_cost_terms(&traj, &ControlPlan::from_flat(1, vec![-0.6]).unwrap(), &tgt, &w, &p)
            .unwrap();
        assert!((b.control - 4.0 * a.control).abs() < 1e-12);
    }

    #[test]
    fn terms_sum_to_rollout_cost() {
        let w = CartpoleCostWeights::default();
        let p = CartpoleParams::default();
        let pr = CartpoleProblem {
            target: CartpoleTarget::up(0.1),
            ..problem(CartpoleState::new(0.15, -0.3, 2.5, 1.0), &w, &p)
        };
        let plan =
            ControlPlan::from_flat(1, (0..35).map(|i| (0.3 * i as f64).cos()).collect()).unwrap();
        let j = pr.cost(&plan);
        let t = pr.cost_terms(&plan).unwrap();
        assert!((t.total() - j).abs() <= 1e-9 * j.abs());
        assert!(t.boundary > 0.0);
    }
}
