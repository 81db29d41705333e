//! Horizon rollouts and their exact plan gradients.
//!
//! The cost of a plan is `sum_i l_i(x_{i+1}, u_i)` with `x_{i+1} = F(x_i, u_i)`.
//! One forward pass in [`Dual`] arithmetic yields each step's Jacobians
//! `A_i = dF/dx_i`, `B_i = dF/du_i` and the stage derivatives; a backward
//! sweep of the adjoint `lambda_i = dl_i/dx_i + A_i^T lambda_{i+1}` gives
//! `dJ/du_i = dl_i/du_i + B_i^T lambda_{i+1}`.

use crate::autodiff::{Dual, Real};

/// Discrete model plus per-step stage cost, generic over the scalar type.
///
/// `K` must equal `NX + NU`; it is the dual width used for Jacobians.
pub(crate) trait StageModel<const NX: usize, const NU: usize, const K: usize>: Sync {
    fn step<T: Real>(&self, x: [T; NX], u: [T; NU]) -> [T; NX];
    /// Cost charged for reaching `x_next` with `u` at horizon index `i`.
    fn stage<T: Real>(&self, i: usize, x_next: &[T; NX], u: &[T; NU]) -> T;
}

fn read_u<const NU: usize>(plan: &[f64], i: usize) -> [f64; NU] {
    let mut u = [0.0; NU];
    u.copy_from_slice(&plan[i * NU..(i + 1) * NU]);
    u
}

/// Total cost of a flattened plan; `+inf` if anything turns non-finite.
pub(crate) fn rollout_cost<M, const NX: usize, const NU: usize, const K: usize>(
    model: &M,
    x0: [f64; NX],
    plan: &[f64],
) -> f64
where
    M: StageModel<NX, NU, K>,
{
    let n = plan.len() / NU;
    let mut x = x0;
    let mut j = 0.0;
    for i in 0..n {
        let u = read_u::<NU>(plan, i);
        x = model.step(x, u);
        j += model.stage(i, &x, &u);
        if !j.is_finite() {
            return f64::INFINITY;
        }
    }
    if x.iter().all(|v| v.is_finite()) {
        j
    } else {
        f64::INFINITY
    }
}

/// Cost and gradient with respect to every plan element.
pub(crate) fn rollout_cost_grad<M, const NX: usize, const NU: usize, const K: usize>(
    model: &M,
    x0: [f64; NX],
    plan: &[f64],
    grad: &mut [f64],
) -> f64
where
    M: StageModel<NX, NU, K>,
{
    assert_eq!(K, NX + NU, "dual width must cover state and control");
    let n = plan.len() / NU;
    // per step: A (NX x NX), B (NX x NU), dl/dx, dl/du
    let mut jac_x = vec![[[0.0; NX]; NX]; n];
    let mut jac_u = vec![[[0.0; NU]; NX]; n];
    let mut dl_x = vec![[0.0; NX]; n];
    let mut dl_u = vec![[0.0; NU]; n];

    let mut x = x0;
    let mut j = 0.0;
    for i in 0..n {
        let u = read_u::<NU>(plan, i);
        let xd: [Dual<K>; NX] = std::array::from_fn(|r| Dual::var(x[r], r));
        let ud: [Dual<K>; NU] = std::array::from_fn(|c| Dual::var(u[c], NX + c));
        let next = model.step(xd, ud);
        let l = model.stage(i, &next, &ud);
        for r in 0..NX {
            for c in 0..NX {
                jac_x[i][r][c] = next[r].d[c];
            }
            for c in 0..NU {
                jac_u[i][r][c] = next[r].d[NX + c];
            }
        }
        dl_x[i].copy_from_slice(&l.d[..NX]);
        dl_u[i].copy_from_slice(&l.d[NX..]);
        x = std::array::from_fn(|r| next[r].v);
        j += l.v;
        if !j.is_finite() {
            grad.fill(0.0);
            return f64::INFINITY;
        }
    }

    let mut lambda = [0.0; NX];
    for i in (0..n).rev() {
        for c in 0..NU {
            let mut g = dl_u[i][c];
            for r in 0..NX {
                g += jac_u[i][r][c] * lambda[r];
            }
            grad[i * NU + c] = g;
        }
        let mut next_lambda = dl_x[i];
        for (c, nl) in next_lambda.iter_mut().enumerate() {
            for r in 0..NX {
                *nl += jac_x[i][r][c] * lambda[r];
            }
        }
        lambda = next_lambda;
    }
    if grad.iter().all(|g| g.is_finite()) {
        j
    } else {
        grad.fill(0.0);
        f64::INFINITY
    }
}
