//! Resampling parallel gradient descent over a population of control plans.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::plan::{ControlPlan, PlanProblem};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub population: usize,
    /// Adam steps per plan and control period.
    pub steps: usize,
    /// Step size as a fraction of each control component's range.
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Share of the population (worst first) replaced by random plans after each solve.
    pub resample_fraction: f64,
    /// Keep the population between periods, shifted one step; otherwise start cold.
    pub warm_start: bool,
    pub seed: u64,
    /// Evaluate population members on the rayon pool.
    pub parallel: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            population: 32,
            steps: 5,
            learning_rate: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            resample_fraction: 0.5,
            warm_start: true,
            seed: 0,
            parallel: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population == 0 {
            return Err(Error::Config("optimizer population must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.resample_fraction) {
            return Err(Error::Config(format!(
                "resample fraction must be in [0, 1], got {}",
                self.resample_fraction
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Ok,
    /// Every rollout diverged; the plan is the zero plan clamped into bounds.
    Fallback,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub plan: ControlPlan,
    pub cost: f64,
    pub status: SolveStatus,
    /// Best population cost after the initial evaluation and after each step.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Member {
    plan: ControlPlan,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    grad: Vec<f64>,
    best_plan: ControlPlan,
    best_cost: f64,
}

impl Member {
    fn fresh(plan: ControlPlan) -> Self {
        let n = plan.as_slice().len();
        Self {
            best_plan: plan.clone(),
            plan,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            grad: vec![0.0; n],
            best_cost: f64::INFINITY,
        }
    }

    fn adam_step(&mut self, cfg: &OptimizerConfig, scale: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        let dim = scale.len();
        for (k, x) in self.plan.as_mut_slice().iter_mut().enumerate() {
            let g = self.grad[k];
            self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * g;
            self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * g * g;
            let mh = self.m[k] / bc1;
            let vh = self.v[k] / bc2;
            *x -= scale[k % dim] * mh / (vh.sqrt() + 1e-12);
        }
    }

    fn record(&mut self, cost: f64) {
        if cost < self.best_cost {
            self.best_cost = cost;
            self.best_plan.clone_from(&self.plan);
        }
    }
}

/// Population optimizer. Keeps its population across calls for warm starts.
#[derive(Debug, Clone)]
pub struct Rpgd {
    config: OptimizerConfig,
    members: Vec<Member>,
    round: u64,
}

fn member_rng(seed: u64, round: u64, member: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&round.to_le_bytes());
    key[16..24].copy_from_slice(&(member as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn random_plan(rng: &mut ChaCha8Rng, horizon: usize, lower: &[f64], upper: &[f64]) -> ControlPlan {
    let dim = lower.len();
    let data = (0..horizon * dim)
        .map(|k| {
            let (lo, hi) = (lower[k % dim], upper[k % dim]);
            if hi > lo {
                rng.gen_range(lo..=hi)
            } else {
                lo
            }
        })
        .collect();
    ControlPlan::from_flat(dim, data).expect("dim is positive")
}

impl Rpgd {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            members: Vec::new(),
            round: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Forget the population; the next solve starts from random plans.
    pub fn reset(&mut self) {
        self.members.clear();
    }

    /// Advance every plan one control period. Without warm starts this is a reset.
    pub fn shift(&mut self) {
        if !self.config.warm_start {
            self.reset();
            return;
        }
        for mem in &mut self.members {
            mem.plan.clone_from(&mem.best_plan);
            mem.plan.shift();
            mem.m.fill(0.0);
            mem.v.fill(0.0);
            mem.t = 0;
        }
    }

    fn compatible<P: PlanProblem>(&self, problem: &P) -> bool {
        self.members.len() == self.config.population
            && self.members.iter().all(|m| {
                m.plan.horizon() == problem.horizon() && m.plan.dim() == problem.control_dim()
            })
    }

    pub fn solve<P: PlanProblem>(&mut self, problem: &P) -> Solution {
        let cfg = self.config.clone();
        let (lower, upper) = (problem.lower().to_vec(), problem.upper().to_vec());
        let horizon = problem.horizon();
        let round = self.round;
        self.round += 1;

        if !self.compatible(problem) {
            self.members = par::map_indexed(cfg.population, cfg.parallel, |i| {
                let mut rng = member_rng(cfg.seed, round, i);
                Member::fresh(random_plan(&mut rng, horizon, &lower, &upper))
            });
        }
        let scale: Vec<f64> = lower
            .iter()
            .zip(&upper)
            .map(|(lo, hi)| cfg.learning_rate * (hi - lo))
            .collect();

        let mut history = Vec::with_capacity(cfg.steps + 1);
        // costs and gradients of a different problem are stale
        par::for_each_mut(&mut self.members, cfg.parallel, |_, mem| {
            mem.plan.project(&lower, &upper);
            mem.best_cost = f64::INFINITY;
            let c = problem.cost_grad(&mem.plan, &mut mem.grad);
            mem.record(c);
        });
        history.push(self.best_cost());

        for step in 0..cfg.steps {
            let last = step + 1 == cfg.steps;
            par::for_each_mut(&mut self.members, cfg.parallel, |_, mem| {
                if !mem.best_cost.is_finite() {
                    return;
                }
                mem.adam_step(&cfg, &scale);
                mem.plan.project(&lower, &upper);
                let c = if last {
                    problem.cost(&mem.plan)
                } else {
                    problem.cost_grad(&mem.plan, &mut mem.grad)
                };
                mem.record(c);
            });
            history.push(self.best_cost());
        }

        let order = self.ranking();
        let elite = &self.members[order[0]];
        let solution = if elite.best_cost.is_finite() {
            Solution {
                plan: elite.best_plan.clone(),
                cost: elite.best_cost,
                status: SolveStatus::Ok,
                history,
            }
        } else {
            let mut plan = ControlPlan::zeros(horizon, lower.len());
            plan.project(&lower, &upper);
            Solution {
                cost: problem.cost(&plan),
                plan,
                status: SolveStatus::Fallback,
                history,
            }
        };

        // elites continue from their best plan, the tail restarts at random
        let n_resample = (cfg.resample_fraction * cfg.population as f64).floor() as usize;
        let mut replace = vec![false; self.members.len()];
        for &i in order.iter().rev().take(n_resample) {
            replace[i] = true;
        }
        par::for_each_mut(&mut self.members, cfg.parallel, |i, mem| {
            if replace[i] {
                let mut rng = member_rng(cfg.seed, round, cfg.population + i);
                *mem = Member::fresh(random_plan(&mut rng, horizon, &lower, &upper));
            } else {
                mem.plan.clone_from(&mem.best_plan);
            }
        });
        solution
    }

    fn best_cost(&self) -> f64 {
        self.members
            .iter()
            .map(|m| m.best_cost)
            .fold(f64::INFINITY, f64::min)
    }

    /// Member indices from best to worst; ties keep index order.
    fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.members.len()).collect();
        order.sort_by(|&a, &b| self.members[a].best_cost.total_cmp(&self.members[b].best_cost));
        order
    }
}
