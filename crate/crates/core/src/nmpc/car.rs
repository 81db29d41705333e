use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::plan::{ControlPlan, PlanProblem};
use super::rollout::{rollout_cost, rollout_cost_grad, StageModel};
use super::rpgd::{OptimizerConfig, Rpgd, SolveStatus};
use super::MpcStep;
use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::plants::{car_core_step, car_kinematics, CarCommand, CarParams, CarState};
use crate::raceline::Raceline;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarCostWeights {
    /// On squared distance to the reference polyline.
    pub position: f64,
    /// On squared deviation from the reference speed at the closest point.
    pub speed: f64,
    pub steering: f64,
    pub slip: f64,
    /// On squared first differences of the planned steering commands.
    pub steer_rate: f64,
    /// On squared second differences of the planned steering commands.
    pub steer_accel: f64,
}

impl Default for CarCostWeights {
    fn default() -> Self {
        Self {
            position: 20.0,
            speed: 0.1,
            steering: 30.0,
            slip: 0.01,
            steer_rate: 0.4,
            steer_accel: 10.0,
        }
    }
}

impl CarCostWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.position,
            self.speed,
            self.steering,
            self.slip,
            self.steer_rate,
            self.steer_accel,
        ];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("car cost weights must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CarCostTerms {
    pub position: f64,
    pub speed: f64,
    pub steering: f64,
    pub slip: f64,
    pub steer_rate: f64,
    pub steer_accel: f64,
}

impl CarCostTerms {
    pub fn total(&self) -> f64 {
        self.position + self.speed + self.steering + self.slip + self.steer_rate + self.steer_accel
    }
}

/// Reference polyline `(x, y, v)` in the frame of the car at plan start.
#[derive(Debug, Clone, PartialEq)]
pub struct CarReference {
    points: Vec<[f64; 3]>,
}

impl CarReference {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Config("car reference needs at least 2 points".into()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("car reference has non-finite entries".into()));
        }
        Ok(Self { points })
    }

    /// `count` points every `spacing` meters of arc from the car's closest point.
    pub fn from_raceline(
        line: &Raceline,
        car: &CarState,
        count: usize,
        spacing: f64,
        speed_factor: f64,
    ) -> Result<Self> {
        let s0 = line.nearest_progress(car.x, car.y).s;
        let pts = line.body_frame_samples(car, s0, (0..count).map(|k| k as f64 * spacing), speed_factor);
        Self::new(pts)
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    /// Squared distance to the polyline and the reference speed at the closest point.
    fn closest<T: Real>(&self, x: T, y: T) -> (T, T) {
        let (px, py) = (x.re(), y.re());
        let mut best = (f64::INFINITY, 0, 0.0);
        for (i, w) in self.points.windows(2).enumerate() {
            let (ex, ey) = (w[1][0] - w[0][0], w[1][1] - w[0][1]);
            let len2 = ex * ex + ey * ey;
            let t = if len2 > 0.0 {
                (((px - w[0][0]) * ex + (py - w[0][1]) * ey) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let d2 = (px - w[0][0] - t * ex).powi(2) + (py - w[0][1] - t * ey).powi(2);
            if d2 < best.0 {
                best = (d2, i, t);
            }
        }
        let (_, i, t_re) = best;
        let (a, b) = (self.points[i], self.points[i + 1]);
        let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
        let len2 = ex * ex + ey * ey;
        let t = if t_re > 0.0 && t_re < 1.0 {
            ((x - a[0]) * ex + (y - a[1]) * ey) / len2
        } else {
            T::cst(t_re)
        };
        let d2 = (x - (t * ex + a[0])).sq() + (y - (t * ey + a[1])).sq();
        let v = t * (b[2] - a[2]) + a[2];
        (d2, v)
    }
}

/// Per-step weighted terms for state `[x, y, yaw, v, steer]`.
fn stage_terms<T: Real>(
    x: &[T; 5],
    reference: &CarReference,
    w: &CarCostWeights,
    p: &CarParams,
) -> [T; 4] {
    let (d2, v_ref) = reference.closest(x[0], x[1]);
    let (_, beta) = car_kinematics(x[3], x[4], p);
    [
        d2 * w.position,
        (x[3] - v_ref).sq() * w.speed,
        x[4].sq() * w.steering,
        beta.sq() * w.slip,
    ]
}

/// Steering smoothness terms over the plan, with their gradient added to `grad`.
fn smoothness(plan: &[f64], w: &CarCostWeights, grad: Option<&mut [f64]>) -> (f64, f64) {
    let steer = |i: usize| plan[2 * i + 1];
    let n = plan.len() / 2;
    let mut rate = 0.0;
    let mut accel = 0.0;
    let mut g = vec![0.0; n];
    for i in 1..n {
        let d = steer(i) - steer(i - 1);
        rate += w.steer_rate * d * d;
        g[i] += 2.0 * w.steer_rate * d;
        g[i - 1] -= 2.0 * w.steer_rate * d;
    }
    for i in 2..n {
        let d = steer(i) - 2.0 * steer(i - 1) + steer(i - 2);
        accel += w.steer_accel * d * d;
        g[i] += 2.0 * w.steer_accel * d;
        g[i - 1] -= 4.0 * w.steer_accel * d;
        g[i - 2] += 2.0 * w.steer_accel * d;
    }
    if let Some(grad) = grad {
        for (i, gi) in g.into_iter().enumerate() {
            grad[2 * i + 1] += gi;
        }
    }
    (rate, accel)
}

/// Cost terms of a given trajectory; `traj[i]` is the state after `plan` step `i`.
pub fn car_cost_terms(
    traj: &[CarState],
    plan: &ControlPlan,
    reference: &CarReference,
    weights: &CarCostWeights,
    params: &CarParams,
) -> Result<CarCostTerms> {
    if traj.len() != plan.horizon() || plan.dim() != 2 {
        return Err(Error::Config(format!(
            "trajectory of {} states does not match a plan of {} two-component steps",
            traj.len(),
            plan.horizon()
        )));
    }
    let mut t = CarCostTerms::default();
    for s in traj {
        let x = [s.x, s.y, s.yaw, s.v_x, s.theta_s];
        let [a, b, c, d] = stage_terms(&x, reference, weights, params);
        t.position += a;
        t.speed += b;
        t.steering += c;
        t.slip += d;
    }
    (t.steer_rate, t.steer_accel) = smoothness(plan.as_slice(), weights, None);
    Ok(t)
}

/// Receding-horizon problem for one control period of the car, posed in the
/// car's own frame (start pose at the origin facing +x).
#[derive(Debug, Clone)]
pub struct CarProblem<'a> {
    pub speed: f64,
    pub steer: f64,
    pub reference: &'a CarReference,
    pub weights: &'a CarCostWeights,
    pub model: &'a CarParams,
    pub horizon: usize,
    pub dt: f64,
    pub substeps: usize,
    /// Commands already issued that take effect during the first plan steps;
    /// those plan entries are replaced by them and get zero gradient.
    pub committed: Vec<[f64; 2]>,
    lower: [f64; 2],
    upper: [f64; 2],
}

impl<'a> CarProblem<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        speed: f64,
        steer: f64,
        reference: &'a CarReference,
        weights: &'a CarCostWeights,
        model: &'a CarParams,
        horizon: usize,
        dt: f64,
        substeps: usize,
    ) -> Self {
        Self {
            speed,
            steer,
            reference,
            weights,
            model,
            horizon,
            dt,
            substeps,
            committed: Vec::new(),
            lower: [0.0, -model.max_steer],
            upper: [model.max_speed, model.max_steer],
        }
    }

    fn effective(&self, plan: &ControlPlan) -> ControlPlan {
        let mut p = plan.clone();
        let n = self.committed.len().min(p.horizon());
        for (dst, c) in p.as_mut_slice()[..2 * n].chunks_mut(2).zip(&self.committed) {
            dst.copy_from_slice(c);
        }
        p
    }

    fn x0(&self) -> [f64; 5] {
        [0.0, 0.0, 0.0, self.speed, self.steer]
    }

    pub fn trajectory(&self, plan: &ControlPlan) -> Vec<CarState> {
        let plan = &self.effective(plan);
        let mut x = self.x0();
        (0..plan.horizon())
            .map(|i| {
                let u = plan.step(i);
                x = self.step(x, [u[0], u[1]]);
                CarState::new(x[0], x[1], x[2], x[3], x[4], self.model)
            })
            .collect()
    }

    pub fn cost_terms(&self, plan: &ControlPlan) -> Result<CarCostTerms> {
        let plan = self.effective(plan);
        car_cost_terms(&self.trajectory(&plan), &plan, self.reference, self.weights, self.model)
    }
}

impl StageModel<5, 2, 7> for CarProblem<'_> {
    fn step<T: Real>(&self, x: [T; 5], u: [T; 2]) -> [T; 5] {
        let h = self.dt / self.substeps as f64;
        let mut x = x;
        for _ in 0..self.substeps {
            x = car_core_step(x, u, h, self.model);
        }
        x
    }

    fn stage<T: Real>(&self, _: usize, x: &[T; 5], _: &[T; 2]) -> T {
        let [a, b, c, d] = stage_terms(x, self.reference, self.weights, self.model);
        a + b + c + d
    }
}

impl PlanProblem for CarProblem<'_> {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn lower(&self) -> &[f64] {
        &self.lower
    }

    fn upper(&self) -> &[f64] {
        &self.upper
    }

    fn cost(&self, plan: &ControlPlan) -> f64 {
        let plan = self.effective(plan);
        let j = rollout_cost(self, self.x0(), plan.as_slice());
        let (r, a) = smoothness(plan.as_slice(), self.weights, None);
        j + r + a
    }

    fn cost_grad(&self, plan: &ControlPlan, grad: &mut [f64]) -> f64 {
        let plan = self.effective(plan);
        let j = rollout_cost_grad(self, self.x0(), plan.as_slice(), grad);
        if !j.is_finite() {
            return j;
        }
        let (r, a) = smoothness(plan.as_slice(), self.weights, Some(grad));
        let n = self.committed.len().min(plan.horizon());
        grad[..2 * n].fill(0.0);
        j + r + a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarMpcConfig {
    pub horizon: usize,
    pub dt: f64,
    pub substeps: usize,
    /// Plan index executed to compensate actuation latency.
    pub delay_steps: usize,
    pub reference_points: usize,
    /// Arc-length spacing of reference points (m).
    pub reference_spacing: f64,
    pub weights: CarCostWeights,
    pub optimizer: OptimizerConfig,
}

impl Default for CarMpcConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            dt: 0.02,
            substeps: 2,
            delay_steps: 4,
            reference_points: 21,
            reference_spacing: 0.4,
            weights: CarCostWeights::default(),
            // a smaller population with more, finer steps tracks the line more tightly
            optimizer: OptimizerConfig {
                population: 16,
                steps: 10,
                learning_rate: 0.02,
                ..OptimizerConfig::default()
            },
        }
    }
}

impl CarMpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.substeps == 0 || !(self.dt > 0.0) {
            return Err(Error::Config("car MPC needs horizon >= 1, substeps >= 1 and dt > 0".into()));
        }
        if self.delay_steps >= self.horizon {
            return Err(Error::Config(format!(
                "delay of {} steps does not fit a horizon of {}",
                self.delay_steps, self.horizon
            )));
        }
        if self.reference_points < 2 || !(self.reference_spacing > 0.0) {
            return Err(Error::Config("car reference needs >= 2 points and positive spacing".into()));
        }
        self.weights.validate()?;
        self.optimizer.validate()
    }
}

/// Car NMPC; executes plan element `delay_steps` so the command matches the
/// state the car will be in when it takes effect.
#[derive(Debug, Clone)]
pub struct CarMpc {
    config: CarMpcConfig,
    model: CarParams,
    solver: Rpgd,
    /// The last `delay_steps` issued commands, oldest first.
    in_flight: VecDeque<[f64; 2]>,
}

impl CarMpc {
    pub fn new(config: CarMpcConfig, model: CarParams) -> Result<Self> {
        config.validate()?;
        model.validate()?;
        let solver = Rpgd::new(config.optimizer.clone())?;
        Ok(Self {
            config,
            model,
            solver,
            in_flight: VecDeque::new(),
        })
    }

    pub fn config(&self) -> &CarMpcConfig {
        &self.config
    }

    pub fn reset(&mut self) {
        self.solver.reset();
        self.in_flight.clear();
    }

    pub fn step(&mut self, car: &CarState, line: &Raceline, speed_factor: f64) -> Result<MpcStep<CarCommand>> {
        if !car.to_array().iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("car MPC got a non-finite state".into()));
        }
        let reference = CarReference::from_raceline(
            line,
            car,
            self.config.reference_points,
            self.config.reference_spacing,
            speed_factor,
        )?;
        if self.in_flight.len() != self.config.delay_steps {
            // a fresh start holds the current speed and steering
            self.in_flight = std::iter::repeat_n([car.v_x, car.theta_s], self.config.delay_steps).collect();
        }
        let mut problem = CarProblem::new(
            car.v_x,
            car.theta_s,
            &reference,
            &self.config.weights,
            &self.model,
            self.config.horizon,
            self.config.dt,
            self.config.substeps,
        );
        problem.committed = self.in_flight.iter().copied().collect();
        let sol = self.solver.solve(&problem);
        self.solver.shift();
        let plan = problem.effective(&sol.plan);
        let d = self.config.delay_steps;
        let u = [plan.step(d)[0], plan.step(d)[1]];
        if d > 0 {
            self.in_flight.pop_front();
            self.in_flight.push_back(u);
        }
        Ok(MpcStep {
            command: CarCommand::new(u[0], u[1]),
            cost: sol.cost,
            fallback: sol.status == SolveStatus::Fallback,
            plan,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(v: f64) -> CarReference {
        CarReference::new((0..21).map(|k| [0.4 * k as f64, 0.0, v]).collect()).unwrap()
    }

    #[test]
    fn on_line_at_speed_costs_nothing() {
        let w = CarCostWeights::default();
        let p = CarParams::default();
        let r = straight(3.0);
        let pr = CarProblem::new(3.0, 0.0, &r, &w, &p, 20, 0.02, 2);
        let plan = ControlPlan::from_flat(2, [3.0, 0.0].repeat(20)).unwrap();
        assert!(pr.cost(&plan) < 1e-20);
    }

    #[test]
    fn constant_steering_has_no_smoothness_cost() {
        let w = CarCostWeights::default();
        let plan = [2.0, 0.2].repeat(10);
        assert_eq!(smoothness(&plan, &w, None), (0.0, 0.0));
    }

    #[test]
    fn lateral_offset_term() {
        let w = CarCostWeights::default();
        let p = CarParams::default();
        let r = straight(3.0);
        let s = CarState::new(1.0, 0.1, 0.0, 3.0, 0.0, &p);
        let t = car_cost_terms(&[s], &ControlPlan::from_flat(2, vec![3.0, 0.0]).unwrap(), &r, &w, &p)
            .unwrap();
        assert!((t.position - 0.2).abs() < 1e-12);
        assert_eq!(t.speed, 0.0);
    }

    #[test]
    fn smoothness_gradient_matches_differences() {
        let w = CarCostWeights::default();
        let plan: Vec<f64> = (0..16).map(|i| (0.9 * i as f64).sin() * 0.3).collect();
        let mut g = vec![0.0; 16];
        smoothness(&plan, &w, Some(&mut g));
        let f = |p: &[f64]| {
            let (a, b) = smoothness(p, &w, None);
            a + b
        };
        for k in 0..16 {
            let mut p = plan.clone();
            p[k] += 1e-6;
            let up = f(&p);
            p[k] -= 2e-6;
            let fd = (up - f(&p)) / 2e-6;
            assert!((g[k] - fd).abs() < 1e-6, "{k}");
        }
    }

    #[test]
    fn terms_sum_to_cost() {
        let w = CarCostWeights::default();
        let p = CarParams::default();
        let r = CarReference::new(
            (0..21).map(|k| {
                let a = 0.1 * k as f64;
                [3.0 * a.sin(), 3.0 * (1.0 - a.cos()), 4.0 + a]
            })
            .collect(),
        )
        .unwrap();
        let pr = CarProblem::new(3.5, 0.05, &r, &w, &p, 20, 0.02, 2);
        let plan = ControlPlan::from_flat(
            2,
            (0..20).flat_map(|i| [4.0 + 0.1 * i as f64, 0.2 * (0.5 * i as f64).cos()]).collect(),
        )
        .unwrap();
        let j = pr.cost(&plan);
        let t = pr.cost_terms(&plan).unwrap();
        assert!((t.total() - j).abs() <= 1e-9 * j);
        assert!(t.steer_rate > 0.0 && t.steer_accel > 0.0 && t.position > 0.0);
    }
}
