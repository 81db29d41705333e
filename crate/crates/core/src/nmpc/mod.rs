//! Receding-horizon control by population-based gradient descent on plans.

mod car;
mod cartpole;
mod plan;
mod rollout;
mod rpgd;

pub use car::{car_cost_terms, CarCostTerms, CarCostWeights, CarMpc, CarMpcConfig, CarProblem, CarReference};
pub use cartpole::{
    cartpole_cost_terms, CartpoleCostTerms, CartpoleCostWeights, CartpoleMpc, CartpoleMpcConfig,
    CartpoleProblem, CartpoleTarget,
};
pub use plan::{ControlPlan, PlanProblem};
pub use rpgd::{OptimizerConfig, Rpgd, Solution, SolveStatus};

/// Result of one controller period.
#[derive(Debug, Clone)]
pub struct MpcStep<C> {
    /// The command to apply now.
    pub command: C,
    /// Best plan cost.
    pub cost: f64,
    /// The optimizer found no finite-cost plan and returned the fallback.
    pub fallback: bool,
    pub plan: ControlPlan,
}
