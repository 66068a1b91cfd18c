//! Single-step TD-family updates.
//!
//! Every two-timescale rule is simultaneous: both the slow iterate `θ` and the
//! fast iterate `w` are updated from their values at the start of the step.

use serde::{Deserialize, Serialize};

use crate::mdp::{ChainStep, Transition};
use crate::spectral::{dot, Matrix};

/// Magnitude beyond which a run is declared diverged.
pub const DIVERGENCE_GUARD: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdState {
    pub theta: Vec<f64>,
    pub w: Vec<f64>,
    pub trace: Vec<f64>,
    pub step_index: u64,
}

impl TdState {
    pub fn new(theta: Vec<f64>, w: Vec<f64>) -> Self {
        let trace = vec![0.0; theta.len()];
        TdState { theta, w, trace, step_index: 0 }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// True once any parameter is non-finite or larger than the guard.
    pub fn diverged(&self) -> bool {
        self.theta
            .iter()
            .chain(&self.w)
            .chain(&self.trace)
            .any(|v| !v.is_finite() || v.abs() > DIVERGENCE_GUARD)
    }

    /// `ρ`-weighted linear TD(0): `θ ← θ + α ρ δ φ`.
    pub fn td0(&mut self, step: &ChainStep, phi: &Matrix, alpha: f64, gamma: f64) {
        let (f, f_next) = features(phi, &step.transition);
        let delta = td_error(&self.theta, &step.transition, f, f_next, gamma);
        axpy(&mut self.theta, alpha * step.rho * delta, f);
        self.step_index += 1;
    }

    pub fn ontdc(&mut self, step: &ChainStep, phi: &Matrix, a: f64, b: f64, gamma: f64) {
        self.tdc(step, phi, a, b, gamma, step.rho);
    }

    /// Sub-sampled TDC: the update runs only on steps whose action is greedy
    /// for the target policy, with unit weight.
    pub fn offtdc(&mut self, step: &ChainStep, phi: &Matrix, a: f64, b: f64, gamma: f64) {
        if step.on_target {
            self.tdc(step, phi, a, b, gamma, 1.0);
        } else {
            self.step_index += 1;
        }
    }

    fn tdc(&mut self, step: &ChainStep, phi: &Matrix, a: f64, b: f64, gamma: f64, rho: f64) {
        let (f, f_next) = features(phi, &step.transition);
        let delta = td_error(&self.theta, &step.transition, f, f_next, gamma);
        let fw = dot(f, &self.w);
        if rho != 0.0 {
            for ((t, fi), fni) in self.theta.iter_mut().zip(f).zip(f_next) {
                *t += a * rho * (delta * fi - gamma * fni * fw);
            }
        }
        axpy(&mut self.w, b * (rho * delta - fw), f);
        self.step_index += 1;
    }

    /// GTD(λ) with the trace `e ← ρ(γλe + φ)`.
    pub fn gtd_lambda(
        &mut self,
        step: &ChainStep,
        phi: &Matrix,
        a: f64,
        b: f64,
        gamma: f64,
        trace_lambda: f64,
    ) {
        let (f, f_next) = features(phi, &step.transition);
        let delta = td_error(&self.theta, &step.transition, f, f_next, gamma);
        let rho = step.rho;
        for (e, fi) in self.trace.iter_mut().zip(f) {
            *e = rho * (gamma * trace_lambda * *e + fi);
        }
        let ew = dot(&self.trace, &self.w);
        let fw = dot(f, &self.w);
        let corr = gamma * (1.0 - trace_lambda) * ew;
        for ((t, e), fni) in self.theta.iter_mut().zip(&self.trace).zip(f_next) {
            *t += a * (delta * e - corr * fni);
        }
        for ((wi, e), fi) in self.w.iter_mut().zip(&self.trace).zip(f) {
            *wi += b * (delta * e - fw * fi);
        }
        self.step_index += 1;
    }
}

fn features<'a>(phi: &'a Matrix, t: &Transition) -> (&'a [f64], &'a [f64]) {
    (phi.row(t.state), phi.row(t.next_state))
}

fn axpy(y: &mut [f64], c: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += c * xi;
    }
}

/// `δ = r + γ φ'ᵀθ − φᵀθ`
pub fn td_error(theta: &[f64], t: &Transition, f: &[f64], f_next: &[f64], gamma: f64) -> f64 {
    t.reward + gamma * dot(f_next, theta) - dot(f, theta)
}

/// Tabular TD(0): only `V(s)` moves, by `α(r + γV(s') − V(s))`.
pub fn td0_tabular_step(v: &[f64], t: &Transition, alpha: f64, gamma: f64) -> Vec<f64> {
    let mut out = v.to_vec();
    out[t.state] += alpha * (t.reward + gamma * v[t.next_state] - v[t.state]);
    out
}

pub fn linear_td0_step(
    state: &TdState,
    step: &ChainStep,
    phi: &Matrix,
    alpha: f64,
    gamma: f64,
) -> TdState {
    let mut next = state.clone();
    next.td0(step, phi, alpha, gamma);
    next
}

pub fn ontdc_step(
    state: &TdState,
    step: &ChainStep,
    phi: &Matrix,
    a: f64,
    b: f64,
    gamma: f64,
) -> TdState {
    let mut next = state.clone();
    next.ontdc(step, phi, a, b, gamma);
    next
}

pub fn offtdc_step(
    state: &TdState,
    step: &ChainStep,
    phi: &Matrix,
    a: f64,
    b: f64,
    gamma: f64,
) -> TdState {
    let mut next = state.clone();
    next.offtdc(step, phi, a, b, gamma);
    next
}

pub fn gtd_lambda_step(
    state: &TdState,
    step: &ChainStep,
    phi: &Matrix,
    a: f64,
    b: f64,
    gamma: f64,
    trace_lambda: f64,
) -> TdState {
    let mut next = state.clone();
    next.gtd_lambda(step, phi, a, b, gamma, trace_lambda);
    next
}
