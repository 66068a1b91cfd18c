//! Simulation-based estimates of `λ` and `μ`: the LSPE recursion and risk TD.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::sample_index;
use crate::risk::RiskModel;
use crate::spectral::{dot, inverse, Matrix};
use crate::td::schedule::StepSchedule;
use crate::td::update::DIVERGENCE_GUARD;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskTrace {
    /// Steps at which `φ(i0)ᵀr` was recorded; the last entry is the final step.
    pub steps: Vec<u64>,
    pub values: Vec<f64>,
    pub params: Vec<f64>,
    /// Steps skipped while the LSPE matrix `B_n` was singular.
    pub warmup: u64,
}

impl RiskTrace {
    pub fn last(&self) -> f64 {
        *self.values.last().expect("a trace always has its initial value")
    }
}

fn check_params(model: &RiskModel, params: &[f64], eps_floor: f64) -> Result<()> {
    if params.len() != model.features().cols() {
        return Err(Error::Shape(format!(
            "{} parameters for {} features",
            params.len(),
            model.features().cols()
        )));
    }
    if !(eps_floor > 0.0) {
        return Err(Error::BadModel(format!("floor {eps_floor} must be positive")));
    }
    let anchor = dot(model.features().row(model.i0()), params);
    if !(anchor > 0.0) {
        return Err(Error::BadModel(format!("φ(i0)ᵀr₀ = {anchor} must be positive")));
    }
    Ok(())
}

fn guard(params: &[f64], n: u64) -> Result<()> {
    if params.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_GUARD) {
        return Err(Error::Diverged(n));
    }
    Ok(())
}

/// Samples the chain `P` from `i0`.
struct Chain<'a> {
    p: &'a Matrix,
    state: usize,
    rng: ChaCha8Rng,
}

impl Iterator for Chain<'_> {
    type Item = (usize, usize);

    fn next(&mut self) -> Option<(usize, usize)> {
        let from = self.state;
        self.state = sample_index(&mut self.rng, self.p.row(from));
        Some((from, self.state))
    }
}

fn chain(model: &RiskModel, seed: u64) -> Chain<'_> {
    Chain { p: model.p(), state: model.i0(), rng: ChaCha8Rng::seed_from_u64(seed) }
}

struct Recorder {
    every: u64,
    steps: Vec<u64>,
    values: Vec<f64>,
}

impl Recorder {
    fn new(every: u64, initial: f64) -> Self {
        Recorder { every: every.max(1), steps: vec![0], values: vec![initial] }
    }

    fn push(&mut self, n: u64, last: u64, value: f64) {
        if n.is_multiple_of(self.every) || n == last {
            self.steps.push(n);
            self.values.push(value);
        }
    }
}

/// `r ← r + a(n)(B_n⁻¹A_n / max(φ(i0)ᵀr, ε) − I) r` with
/// `A_n = Σ e^{c(X_m, X_{m+1})} φ(X_m) φ(X_{m+1})ᵀ` and `B_n = Σ φ(X_m) φ(X_m)ᵀ`.
///
/// Updates start once `B_n` is invertible.
#[allow(clippy::too_many_arguments)]
pub fn lspe_iterate(
    model: &RiskModel,
    r0: &[f64],
    eps_floor: f64,
    schedule: &StepSchedule,
    steps: u64,
    seed: u64,
    record_every: u64,
) -> Result<RiskTrace> {
    check_params(model, r0, eps_floor)?;
    let phi = model.features();
    let m = phi.cols();
    let anchor_row = phi.row(model.i0());
    let mut r = r0.to_vec();
    let mut a_acc = Matrix::zeros(m, m);
    let mut b_acc = Matrix::zeros(m, m);
    let mut rec = Recorder::new(record_every, dot(anchor_row, &r));
    let mut warmup = 0u64;
    let mut k = 0u64;
    for (n, (i, j)) in (1..=steps).zip(chain(model, seed)) {
        let (fi, fj) = (phi.row(i), phi.row(j));
        let e = model.cost()[(i, j)].exp();
        for p in 0..m {
            for q in 0..m {
                a_acc[(p, q)] += e * fi[p] * fj[q];
                b_acc[(p, q)] += fi[p] * fi[q];
            }
        }
        match inverse(&b_acc) {
            Ok(b_inv) => {
                k += 1;
                let a_n = schedule.value(k)?;
                let denom = dot(anchor_row, &r).max(eps_floor);
                let target = b_inv.matmul(&a_acc).matvec(&r);
                for (rv, t) in r.iter_mut().zip(&target) {
                    *rv += a_n * (t / denom - *rv);
                }
                guard(&r, n)?;
            }
            Err(Error::Singular { .. }) => warmup += 1,
            Err(e) => return Err(e),
        }
        rec.push(n, steps, dot(anchor_row, &r));
    }
    if k == 0 && steps > 0 {
        return Err(Error::SingularB);
    }
    Ok(RiskTrace { steps: rec.steps, values: rec.values, params: r, warmup })
}

/// One risk-TD step on the transition `i → j`:
/// `θ ← θ + a [e^{c(i,j)} φ(j)ᵀθ / max(φ(i0)ᵀθ, ε) − φ(i)ᵀθ] φ(i)`.
pub fn risk_td_step(theta: &[f64], i: usize, j: usize, model: &RiskModel, a: f64, eps_floor: f64) -> Vec<f64> {
    let mut next = theta.to_vec();
    risk_td_update(&mut next, i, j, model, a, eps_floor);
    next
}

fn risk_td_update(theta: &mut [f64], i: usize, j: usize, model: &RiskModel, a: f64, eps_floor: f64) {
    let phi = model.features();
    let fi = phi.row(i);
    let denom = dot(phi.row(model.i0()), theta).max(eps_floor);
    let td = model.cost()[(i, j)].exp() * dot(phi.row(j), theta) / denom - dot(fi, theta);
    for (t, f) in theta.iter_mut().zip(fi) {
        *t += a * td * f;
    }
}

/// Expected risk-TD increment per unit step under the stationary chain.
pub fn risk_td_expected_increment(model: &RiskModel, theta: &[f64], eps_floor: f64) -> Vec<f64> {
    let s = model.n_states();
    let mut total = vec![0.0; theta.len()];
    for i in 0..s {
        for j in 0..s {
            let w = model.pi()[i] * model.p()[(i, j)];
            if w == 0.0 {
                continue;
            }
            let next = risk_td_step(theta, i, j, model, 1.0, eps_floor);
            for ((t, n), o) in total.iter_mut().zip(&next).zip(theta) {
                *t += w * (n - o);
            }
        }
    }
    total
}

pub fn risk_td_run(
    model: &RiskModel,
    theta0: &[f64],
    eps_floor: f64,
    schedule: &StepSchedule,
    steps: u64,
    seed: u64,
    record_every: u64,
) -> Result<RiskTrace> {
    check_params(model, theta0, eps_floor)?;
    let anchor_row = model.features().row(model.i0());
    let mut theta = theta0.to_vec();
    let mut rec = Recorder::new(record_every, dot(anchor_row, &theta));
    for (n, (i, j)) in (1..=steps).zip(chain(model, seed)) {
        risk_td_update(&mut theta, i, j, model, schedule.value(n)?, eps_floor);
        guard(&theta, n)?;
        rec.push(n, steps, dot(anchor_row, &theta));
    }
    Ok(RiskTrace { steps: rec.steps, values: rec.values, params: theta, warmup: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk::{doubly_stochastic_features, risk_cost, DEFAULT_EPS_FLOOR};
    use approx::assert_abs_diff_eq;

    fn single_state(kappa: f64) -> RiskModel {
        let one = Matrix::filled(1, 1, 1.0);
        RiskModel::new(one.clone(), Matrix::filled(1, 1, kappa), one, 0).unwrap()
    }

    #[test]
    fn lspe_single_state_converges_to_exp_cost() {
        let model = single_state(0.3);
        let t = lspe_iterate(&model, &[1.0], DEFAULT_EPS_FLOOR, &StepSchedule::constant(0.5), 200, 1, 1).unwrap();
        assert_abs_diff_eq!(t.last(), 0.3f64.exp(), epsilon = 1e-12);
        assert_eq!(t.warmup, 0);
        assert_eq!(t.steps.len(), 201);
    }

    #[test]
    fn lspe_floor_never_binds_from_above() {
        let p = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.2, 0.8]]).unwrap();
        let model = RiskModel::new(p, Matrix::filled(2, 2, 0.2), Matrix::identity(2), 0).unwrap();
        let lambda = risk_cost(&model).unwrap().lambda;
        let t = lspe_iterate(&model, &[2.0, 2.0], 1e-6, &StepSchedule::constant(0.2), 2_000, 3, 1).unwrap();
        assert!(t.values.iter().all(|&v| v >= 1e-6));
        assert!((t.last() - lambda).abs() < 0.02 * lambda);
    }

    #[test]
    fn lspe_reports_singular_b_when_warmup_never_ends() {
        // one step only ever visits i0, so B_n stays rank one
        let model = RiskModel::new(
            Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(),
            Matrix::zeros(2, 2),
            Matrix::identity(2),
            0,
        )
        .unwrap();
        let t = lspe_iterate(&model, &[1.0, 1.0], 1e-6, &StepSchedule::constant(0.1), 1, 1, 1);
        assert!(matches!(t, Err(Error::SingularB)));
    }

    #[test]
    fn risk_td_examples() {
        let model = single_state(0.4);
        let theta = risk_td_step(&[0.4f64.exp()], 0, 0, &model, 0.3, 1e-6);
        assert_abs_diff_eq!(theta[0], 0.4f64.exp(), epsilon = 1e-12);
        let two = RiskModel::new(Matrix::filled(2, 2, 0.5), Matrix::zeros(2, 2), Matrix::identity(2), 0).unwrap();
        assert_eq!(risk_td_step(&[0.3, 0.7], 0, 1, &two, 0.0, 1e-6), vec![0.3, 0.7]);
    }

    #[test]
    fn risk_td_mean_field_vanishes_at_scaled_perron_vector() {
        let p = Matrix::from_rows(&[
            vec![0.1, 0.2, 0.3, 0.4],
            vec![0.4, 0.1, 0.2, 0.3],
            vec![0.3, 0.4, 0.1, 0.2],
            vec![0.2, 0.3, 0.4, 0.1],
        ])
        .unwrap();
        let cost = Matrix::from_fn(4, 4, |i, j| 0.1 * (i as f64) - 0.05 * (j as f64));
        let phi = doubly_stochastic_features(&p).unwrap();
        let model = RiskModel::new(p, cost, phi.clone(), 2).unwrap();
        let rc = risk_cost(&model).unwrap();
        // Φθ = κV with φ(i0)ᵀθ = λ; Φ = 2I here so θ = κV/2
        let kappa = rc.lambda / rc.v[2];
        let theta: Vec<f64> = rc.v.iter().map(|v| kappa * v / 2.0).collect();
        let h = risk_td_expected_increment(&model, &theta, 1e-6);
        assert!(h.iter().all(|v| v.abs() <= 1e-10), "{h:?}");
    }

    #[test]
    fn risk_td_rejects_bad_start() {
        let model = single_state(0.0);
        assert!(risk_td_run(&model, &[-1.0], 1e-6, &StepSchedule::power(0.75), 10, 1, 1).is_err());
    }
}
