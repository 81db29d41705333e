use crate::error::{Error, Result};

/// `horizon` control vectors of `dim` entries each, stored step-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPlan {
    dim: usize,
    data: Vec<f64>,
}

impl ControlPlan {
    pub fn zeros(horizon: usize, dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; horizon * dim],
        }
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::Config(format!(
                "plan of {} entries does not split into steps of {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn horizon(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Drop the first step and repeat the last one.
    pub fn shift(&mut self) {
        let d = self.dim;
        let n = self.data.len();
        self.data.copy_within(d.., 0);
        if n > d {
            let (head, tail) = self.data.split_at_mut(n - d);
            tail.copy_from_slice(&head[n - 2 * d..]);
        }
    }

    /// Clamp each entry into `[lower[j], upper[j]]` for its component `j`.
    pub fn project(&mut self, lower: &[f64], upper: &[f64]) {
        for step in self.data.chunks_mut(self.dim) {
            for ((v, &lo), &hi) in step.iter_mut().zip(lower).zip(upper) {
                *v = v.clamp(lo, hi);
            }
        }
    }

    pub fn within(&self, lower: &[f64], upper: &[f64]) -> bool {
        self.data.chunks(self.dim).all(|step| {
            step.iter()
                .zip(lower)
                .zip(upper)
                .all(|((v, lo), hi)| v >= lo && v <= hi)
        })
    }
}

/// A box-constrained plan optimization problem.
pub trait PlanProblem: Sync {
    fn horizon(&self) -> usize;
    /// Per-component lower bounds of one control vector.
    fn lower(&self) -> &[f64];
    fn upper(&self) -> &[f64];

    fn control_dim(&self) -> usize {
        self.lower().len()
    }

    /// Total cost; `+inf` if the rollout diverges.
    fn cost(&self, plan: &ControlPlan) -> f64;

    /// Total cost, writing `dJ/dplan` into `grad` (zeros when the cost is infinite).
    fn cost_grad(&self, plan: &ControlPlan, grad: &mut [f64]) -> f64;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_repeats_last_step() {
        let mut p = ControlPlan::from_flat(2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        p.shift();
        assert_eq!(p.as_slice(), &[3.0, 4.0, 5.0, 6.0, 5.0, 6.0]);
        let mut one = ControlPlan::from_flat(1, vec![7.0]).unwrap();
        one.shift();
        assert_eq!(one.as_slice(), &[7.0]);
    }

    #[test]
    fn projection_is_per_component() {
        let mut p = ControlPlan::from_flat(2, vec![-5.0, 5.0, 0.5, -0.5]).unwrap();
        p.project(&[0.0, -1.0], &[1.0, 1.0]);
        assert_eq!(p.as_slice(), &[0.0, 1.0, 0.5, -0.5]);
        assert!(p.within(&[0.0, -1.0], &[1.0, 1.0]));
    }

    #[test]
    fn shape_errors() {
        assert!(ControlPlan::from_flat(2, vec![1.0; 3]).is_err());
        assert!(ControlPlan::from_flat(0, vec![]).is_err());
    }
}
