//! Exact expectations under the stationary behavior chain: the TD fixed point,
//! the fast-timescale attractor `λ(θ)`, and the MSPBE.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::{induced_chain, ChainStep, FiniteMdp, StochasticPolicy, Transition};
use crate::spectral::{
    inverse, min_norm_solve, norm_inf, pseudo_inverse, solve_linear, stationary, Matrix,
};
use crate::td::update::TdState;

const CONSISTENCY_TOL: f64 = 1e-9;

/// `A = E[ρφ(φ − γφ')ᵀ]`, `b = E[ρRφ]`, `C = E[φφᵀ]` and
/// `cross = E[ρφ'φᵀ]` under the stationary behavior distribution `nu`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointSystem {
    pub a: Matrix,
    pub b: Vec<f64>,
    pub c: Matrix,
    pub cross: Matrix,
    pub nu: Vec<f64>,
    pub gamma: f64,
    /// `C⁻¹`, or the pseudo-inverse when the features are linearly dependent.
    #[serde(skip)]
    c_inv: Matrix,
    pub c_singular: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPoint {
    pub system: FixedPointSystem,
    pub theta_star: Vec<f64>,
    /// Whether `A` was singular and `θ*` is the minimum-norm solution.
    pub min_norm: bool,
}

/// Calls `f(weight, step)` for every `(s, a, s')` with positive stationary
/// probability `ν(s) π_b(a|s) p(s'|s, a)`.
pub fn for_each_outcome(
    mdp: &FiniteMdp,
    behavior: &StochasticPolicy,
    target: &StochasticPolicy,
    nu: &[f64],
    mut f: impl FnMut(f64, &ChainStep),
) {
    let n = mdp.n_states();
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            let pb = behavior.prob(s, a);
            let head = nu[s] * pb;
            if head == 0.0 {
                continue;
            }
            let rho = target.prob(s, a) / pb;
            let on_target = target.is_greedy(s, a);
            for next in 0..n {
                let weight = head * mdp.transition_prob(s, a, next);
                if weight == 0.0 {
                    continue;
                }
                let step = ChainStep {
                    transition: Transition {
                        state: s,
                        action: a,
                        reward: mdp.reward(s, a, next),
                        next_state: next,
                    },
                    rho,
                    on_target,
                };
                f(weight, &step);
            }
        }
    }
}

/// Stationary distribution of the behavior chain.
pub fn behavior_stationary(mdp: &FiniteMdp, behavior: &StochasticPolicy) -> Result<Vec<f64>> {
    let (p, _) = induced_chain(mdp, behavior)?;
    stationary(&p)
}

impl FixedPointSystem {
    pub fn assemble(
        mdp: &FiniteMdp,
        behavior: &StochasticPolicy,
        target: &StochasticPolicy,
        phi: &Matrix,
        gamma: f64,
    ) -> Result<Self> {
        if phi.rows() != mdp.n_states() {
            return Err(Error::Shape(format!(
                "feature matrix has {} rows for {} states",
                phi.rows(),
                mdp.n_states()
            )));
        }
        let nu = behavior_stationary(mdp, behavior)?;
        let m = phi.cols();
        let mut a = Matrix::zeros(m, m);
        let mut b = vec![0.0; m];
        let mut c = Matrix::zeros(m, m);
        let mut cross = Matrix::zeros(m, m);
        for_each_outcome(mdp, behavior, target, &nu, |wt, step| {
            let t = &step.transition;
            let f = phi.row(t.state);
            let g = phi.row(t.next_state);
            let wr = wt * step.rho;
            for i in 0..m {
                b[i] += wr * t.reward * f[i];
                for j in 0..m {
                    a[(i, j)] += wr * f[i] * (f[j] - gamma * g[j]);
                    c[(i, j)] += wt * f[i] * f[j];
                    cross[(i, j)] += wr * g[i] * f[j];
                }
            }
        });
        let (c_inv, c_singular) = match inverse(&c) {
            Ok(inv) => (inv, false),
            Err(Error::Singular { .. }) if c.max_abs() > 0.0 => (pseudo_inverse(&c), true),
            Err(Error::Singular { .. }) => return Err(Error::SingularC),
            Err(e) => return Err(e),
        };
        Ok(FixedPointSystem { a, b, c, cross, nu, gamma, c_inv, c_singular })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn c_inverse(&self) -> &Matrix {
        &self.c_inv
    }

    /// `E[ρδ(θ)φ] = b − Aθ`
    pub fn expected_td_update(&self, theta: &[f64]) -> Vec<f64> {
        let at = self.a.matvec(theta);
        self.b.iter().zip(&at).map(|(b, a)| b - a).collect()
    }

    /// Fast-timescale attractor `λ(θ) = C⁻¹ E[ρδ(θ)φ]`.
    pub fn lambda(&self, theta: &[f64]) -> Vec<f64> {
        self.c_inv.matvec(&self.expected_td_update(theta))
    }

    /// `J(θ) = (b − Aθ)ᵀ C⁻¹ (b − Aθ)`
    pub fn mspbe(&self, theta: &[f64]) -> f64 {
        let g = self.expected_td_update(theta);
        crate::spectral::dot(&g, &self.c_inv.matvec(&g)).max(0.0)
    }

    /// `−½∇J(θ) = E[ρδφ] − γ E[ρφ'φᵀ] λ(θ)`
    pub fn mspbe_neg_half_gradient(&self, theta: &[f64]) -> Vec<f64> {
        let g = self.expected_td_update(theta);
        let corr = self.cross.matvec(&self.c_inv.matvec(&g));
        g.iter().zip(&corr).map(|(gi, ci)| gi - self.gamma * ci).collect()
    }

    pub fn mspbe_gradient(&self, theta: &[f64]) -> Vec<f64> {
        self.mspbe_neg_half_gradient(theta).iter().map(|v| -2.0 * v).collect()
    }

    /// Solves `Aθ = b`; a singular but consistent system yields the
    /// minimum-norm solution.
    pub fn solve(self) -> Result<FixedPoint> {
        let scale = 1.0 + norm_inf(&self.b);
        let (theta_star, min_norm) = match solve_linear(&self.a, &self.b) {
            Ok(t) => (t, false),
            Err(Error::Singular { .. }) => {
                let t = min_norm_solve(&self.a, &self.b);
                let resid = norm_inf(&self.expected_td_update(&t));
                if resid > CONSISTENCY_TOL * scale {
                    return Err(Error::SingularA);
                }
                (t, true)
            }
            Err(e) => return Err(e),
        };
        Ok(FixedPoint { system: self, theta_star, min_norm })
    }
}

pub fn fixed_point(
    mdp: &FiniteMdp,
    behavior: &StochasticPolicy,
    target: &StochasticPolicy,
    phi: &Matrix,
    gamma: f64,
) -> Result<FixedPoint> {
    FixedPointSystem::assemble(mdp, behavior, target, phi, gamma)?.solve()
}

/// Expected change of `(θ, w)` after one application of `update`, computed by
/// exact summation over `(s, a, s')`.
pub fn expected_increment(
    mdp: &FiniteMdp,
    behavior: &StochasticPolicy,
    target: &StochasticPolicy,
    nu: &[f64],
    state: &TdState,
    mut update: impl FnMut(&mut TdState, &ChainStep),
) -> (Vec<f64>, Vec<f64>) {
    let mut d_theta = vec![0.0; state.theta.len()];
    let mut d_w = vec![0.0; state.w.len()];
    for_each_outcome(mdp, behavior, target, nu, |wt, step| {
        let mut next = state.clone();
        update(&mut next, step);
        for (d, (new, old)) in d_theta.iter_mut().zip(next.theta.iter().zip(&state.theta)) {
            *d += wt * (new - old);
        }
        for (d, (new, old)) in d_w.iter_mut().zip(next.w.iter().zip(&state.w)) {
            *d += wt * (new - old);
        }
    });
    (d_theta, d_w)
}

/// `√(Σ_s w_s (φ(s)ᵀθ − V(s))²)` with uniform weights unless `weights` is
/// given.
pub fn rmse(theta: &[f64], phi: &Matrix, v_true: &[f64], weights: Option<&[f64]>) -> f64 {
    let v = phi.matvec(theta);
    let n = v.len();
    let uniform = 1.0 / n as f64;
    let total: f64 = (0..n)
        .map(|s| {
            let w = weights.map_or(uniform, |w| w[s]);
            w * (v[s] - v_true[s]).powi(2)
        })
        .sum();
    total.sqrt()
}
