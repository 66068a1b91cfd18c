//! Zero-error conditions and the sufficient-condition probes on `M = C∘P`
//! (entries `γᵢⱼ`) and `Q = ΠM` (entries `δᵢⱼ`).

use serde::Serialize;

use crate::error::Result;
use crate::risk::bounds::bapat_l;
use crate::risk::{projected_mu, risk_cost, RiskModel};
use crate::spectral::{min_norm_solve, Matrix};

const ZERO_ERROR_TOL: f64 = 1e-8;
const EQUALITY_TOL: f64 = 1e-10;

/// Truth value of one condition with its numeric margin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Probe {
    pub holds: bool,
    /// Margin (for inequalities) or largest mismatch (for equalities).
    pub residual: Option<f64>,
    pub note: Option<String>,
}

impl Probe {
    fn new(holds: bool, residual: f64) -> Self {
        Probe { holds, residual: Some(residual), note: None }
    }

    fn unavailable(note: impl Into<String>) -> Self {
        Probe { holds: false, residual: None, note: Some(note.into()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Condition1 {
    pub single_column: bool,
    /// Largest relative deviation of `φ` from a positive multiple of `x/π`.
    pub deviation: Option<f64>,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Condition2 {
    /// Largest misfit of `δᵢⱼ = λ₀ γᵢⱼ βᵢ/βⱼ` in log scale.
    pub similarity_residual: f64,
    pub lambda0: f64,
    /// `|Σ γᵢⱼ xᵢ yⱼ ln(δᵢⱼ/γᵢⱼ)|`
    pub log_product_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub lambda: f64,
    pub mu: f64,
    pub zero_error: bool,
    pub star: bool,
    pub condition1: Condition1,
    pub condition2: Option<Condition2>,
    pub as1: Probe,
    pub as2: Probe,
    pub as3: Probe,
    pub as5: Probe,
    pub as6: Probe,
}

pub fn zero_error_conditions(model: &RiskModel) -> Result<ConditionReport> {
    let rc = risk_cost(model)?;
    let proj = projected_mu(model)?;
    let gamma = model.m();
    let delta = &proj.q;
    let s = model.n_states();
    let pi = model.pi();

    let phi = model.features();
    let condition1 = if phi.cols() == 1 {
        let ratios: Vec<f64> = (0..s).map(|i| phi[(i, 0)] * pi[i] / rc.x[i]).collect();
        let mean = ratios.iter().sum::<f64>() / s as f64;
        let deviation = ratios.iter().map(|r| (r / mean - 1.0).abs()).fold(0.0, f64::max);
        Condition1 {
            single_column: true,
            deviation: Some(deviation),
            holds: mean > 0.0 && deviation <= ZERO_ERROR_TOL,
        }
    } else {
        Condition1 { single_column: false, deviation: None, holds: false }
    };

    let condition2 = model
        .star()
        .then(|| condition2(gamma, delta, &rc.x, &rc.v));

    let min_row = gamma.row_sums().into_iter().fold(f64::INFINITY, f64::min);
    let as1 = match bapat_l(gamma, delta, &rc.x, &rc.v) {
        Ok(l) => Probe::new(min_row > l, min_row - l),
        Err(e) => Probe::unavailable(e.to_string()),
    };

    let (as2, as3) = if model.star() {
        let (diag, off) = displayed_equalities(model);
        let scale = 1.0 + gamma.max_abs();
        (
            Probe::new(diag <= EQUALITY_TOL * scale, diag),
            Probe::new(off <= EQUALITY_TOL * scale, off),
        )
    } else {
        (
            Probe::unavailable("features have a row without exactly one positive entry"),
            Probe::unavailable("features have a row without exactly one positive entry"),
        )
    };

    let (mut best5, mut best6) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for i in 0..s {
        let others = (0..s).filter(|&l| l != i).map(|l| gamma[(l, i)]);
        let (lo, hi) = others.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        best5 = best5.max(gamma[(i, i)] - hi);
        best6 = best6.max(lo - gamma[(i, i)]);
    }
    let (as5, as6) = if s > 1 {
        (Probe::new(best5 > 0.0, best5), Probe::new(best6 > 0.0, best6))
    } else {
        (Probe::unavailable("needs two states"), Probe::unavailable("needs two states"))
    };

    Ok(ConditionReport {
        lambda: rc.lambda,
        mu: proj.mu,
        zero_error: (rc.lambda - proj.mu).abs() <= ZERO_ERROR_TOL * rc.lambda.max(1.0),
        star: model.star(),
        condition1,
        condition2,
        as1,
        as2,
        as3,
        as5,
        as6,
    })
}

/// Largest mismatches of the diagonal and off-diagonal displayed equalities
/// `γᵢⱼ(Sᵢ − φ(i)²πᵢ) = φ(i) Σ_{l≠i} φ(l) π_l γ_lj`, where `φ` is column
/// `k(i)` of the features and `Sᵢ = Σ_m φ(m)² π_m`.
fn displayed_equalities(model: &RiskModel) -> (f64, f64) {
    let gamma = model.m();
    let phi = model.features();
    let pi = model.pi();
    let s = model.n_states();
    let (mut diag, mut off) = (0.0f64, 0.0f64);
    for i in 0..s {
        let k = model.k(i);
        let col = |m: usize| phi[(m, k)];
        let s_i: f64 = (0..s).map(|m| col(m).powi(2) * pi[m]).sum();
        let own = col(i).powi(2) * pi[i];
        for j in 0..s {
            let lhs = gamma[(i, j)] * (s_i - own);
            let rhs = col(i)
                * (0..s)
                    .filter(|&l| l != i)
                    .map(|l| col(l) * pi[l] * gamma[(l, j)])
                    .sum::<f64>();
            let gap = (lhs - rhs).abs();
            if i == j {
                diag = diag.max(gap);
            } else {
                off = off.max(gap);
            }
        }
    }
    (diag, off)
}

fn condition2(gamma: &Matrix, delta: &Matrix, x: &[f64], y: &[f64]) -> Condition2 {
    let s = gamma.rows();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    let mut mismatch = false;
    let mut log_sum = 0.0;
    for i in 0..s {
        for j in 0..s {
            let (g, d) = (gamma[(i, j)], delta[(i, j)]);
            match (g > 0.0, d > 0.0) {
                (true, true) => {
                    let lr = (d / g).ln();
                    log_sum += g * x[i] * y[j] * lr;
                    // unknowns: ln λ₀, then ln βᵢ for i ≥ 1 (β₀ = 1)
                    let mut row = vec![0.0; s];
                    row[0] = 1.0;
                    if i > 0 {
                        row[i] += 1.0;
                    }
                    if j > 0 {
                        row[j] -= 1.0;
                    }
                    rows.push(row);
                    rhs.push(lr);
                }
                (false, false) => {}
                _ => mismatch = true,
            }
        }
    }
    if mismatch || rows.is_empty() {
        return Condition2 {
            similarity_residual: f64::INFINITY,
            lambda0: f64::NAN,
            log_product_residual: if mismatch { f64::INFINITY } else { log_sum.abs() },
        };
    }
    let design = Matrix::from_rows(&rows).expect("rows share a width");
    let z = min_norm_solve(&design, &rhs);
    let fit = design.matvec(&z);
    let similarity_residual = fit.iter().zip(&rhs).map(|(f, r)| (f - r).abs()).fold(0.0, f64::max);
    Condition2 { similarity_residual, lambda0: z[0].exp(), log_product_residual: log_sum.abs() }
}
