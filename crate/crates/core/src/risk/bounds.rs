//! Upper bounds on `ln λ − ln μ` for a pair of nonnegative matrices `A`, `B`
//! with dominant eigenvalues `λ = r(A)` and `μ = r(B)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::risk::conditions::{zero_error_conditions, ConditionReport};
use crate::risk::{projected_mu, risk_cost, RiskModel};
use crate::spectral::{
    determinant, operator_norm_l1, perron_default, spectral_radius_nonneg,
    symmetric_part_min_eigenvalue, PerronPair, Matrix,
};

const PSD_FLOOR: f64 = -1e-10;

/// A bound value, or the reason it does not apply.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bound {
    pub value: Option<f64>,
    pub reason: Option<String>,
}

impl Bound {
    pub fn valid(value: f64) -> Self {
        Bound { value: Some(value), reason: None }
    }

    pub fn invalid(reason: impl Into<String>) -> Self {
        Bound { value: None, reason: Some(reason.into()) }
    }

    pub fn is_valid(&self) -> bool {
        self.value.is_some()
    }
}

/// `ln(1 + (‖A‖+‖B‖)^{1−1/s} ‖A−B‖^{1/s} / μ)` in the induced l1 norm.
pub fn bound_spectral(a: &Matrix, b: &Matrix, mu: f64) -> f64 {
    let s = a.rows() as f64;
    let sum = operator_norm_l1(a) + operator_norm_l1(b);
    let diff = operator_norm_l1(&a.sub(b));
    (1.0 + sum.powf(1.0 - 1.0 / s) * diff.powf(1.0 / s) / mu).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BapatBounds {
    pub b1: f64,
    pub b2: Bound,
    pub b3: Bound,
    /// `L = Σ xᵢyᵢ(aᵢᵢ − bᵢᵢ) + Σ_{i≠j} aᵢⱼxᵢyⱼ ln(aᵢⱼ/bᵢⱼ)`
    pub l: f64,
    /// Whether `r(A) > L`, which the second bound needs.
    pub condn_holds: bool,
}

fn log_ratio(a: &Matrix, b: &Matrix, i: usize, j: usize) -> Result<f64> {
    let (aij, bij) = (a[(i, j)], b[(i, j)]);
    if bij <= 0.0 {
        return Err(Error::UndefinedLog { row: i, col: j, a: aij, b: bij });
    }
    Ok((aij / bij).ln())
}

/// `Σ_{i≠j} aᵢⱼxᵢyⱼ ln(aᵢⱼ/bᵢⱼ)` skipping zero `aᵢⱼ`.
fn off_diagonal_log_sum(a: &Matrix, b: &Matrix, x: &[f64], y: &[f64]) -> Result<f64> {
    let s = a.rows();
    let mut total = 0.0;
    for i in 0..s {
        for j in 0..s {
            if i != j && a[(i, j)] > 0.0 {
                total += a[(i, j)] * x[i] * y[j] * log_ratio(a, b, i, j)?;
            }
        }
    }
    Ok(total)
}

/// `L` from the three-bound family; `x` and `y` are the left and right
/// Perron vectors of `A` with `Σ xᵢyᵢ = 1`.
pub fn bapat_l(a: &Matrix, b: &Matrix, x: &[f64], y: &[f64]) -> Result<f64> {
    let diag: f64 = (0..a.rows()).map(|i| x[i] * y[i] * (a[(i, i)] - b[(i, i)])).sum();
    Ok(diag + off_diagonal_log_sum(a, b, x, y)?)
}

/// The three bounds built on the Perron pair of `A`; `mu = r(B)`.
pub fn bound_bapat(a: &Matrix, b: &Matrix, pa: &PerronPair, mu: f64) -> Result<BapatBounds> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::Shape("A and B differ in shape".into()));
    }
    let (x, y, r) = (&pa.left, &pa.right, pa.value);
    let s = a.rows();
    let mut weighted = 0.0;
    for i in 0..s {
        for j in 0..s {
            if a[(i, j)] > 0.0 {
                weighted += a[(i, j)] * x[i] * y[j] * log_ratio(a, b, i, j)?;
            }
        }
    }
    let b1 = weighted / r;
    let l = bapat_l(a, b, x, y)?;
    let condn_holds = r > l;
    let b2 = if condn_holds {
        Bound::valid((r / (r - l)).ln())
    } else {
        Bound::invalid(format!("r(A) = {r} does not exceed L = {l}"))
    };
    let b3 = if mu > 0.0 && 1.0 + l / mu > 0.0 {
        Bound::valid((1.0 + l / mu).ln())
    } else {
        Bound::invalid(format!("1 + L/r(B) is not positive (L = {l}, r(B) = {mu})"))
    };
    Ok(BapatBounds { b1, b2, b3, l, condn_holds })
}

/// `ln(det A / (μ(μ − α(A)‖A−B‖)))` with `α(A) = maxᵢ 1/xᵢ` over the
/// l1-normalized right Perron vector `x` of `A`.
pub fn bound_invert(a: &Matrix, b: &Matrix, mu: f64) -> Bound {
    let det = match determinant(a) {
        Ok(d) => d,
        Err(e) => return Bound::invalid(e.to_string()),
    };
    if det == 0.0 {
        return Bound::invalid("A is singular");
    }
    match symmetric_part_min_eigenvalue(a) {
        Ok(min) if min >= PSD_FLOOR => {}
        Ok(min) => return Bound::invalid(format!("A is not positive semidefinite (eigenvalue {min})")),
        Err(e) => return Bound::invalid(e.to_string()),
    }
    if det < 0.0 {
        return Bound::invalid(format!("det A = {det} is negative"));
    }
    let pair = match perron_default(a) {
        Ok(p) => p,
        Err(e) => return Bound::invalid(format!("no positive Perron vector: {e}")),
    };
    let alpha = pair.right.iter().map(|v| 1.0 / v).fold(0.0, f64::max);
    let gap = mu - alpha * operator_norm_l1(&a.sub(b));
    if !(mu > 0.0 && gap > 0.0) {
        return Bound::invalid(format!("μ − α(A)‖A−B‖ = {gap} is not positive"));
    }
    Bound::valid((det / (mu * gap)).ln())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub lambda: f64,
    pub mu: f64,
    /// `ln(λ/μ)`
    pub actual_error: f64,
    pub lambda_exceeds_mu: bool,
    pub spect: Bound,
    pub bapat1: Bound,
    pub bapat2: Bound,
    pub bapat3: Bound,
    pub l: Option<f64>,
    pub invert: Bound,
    pub conditions: Option<ConditionReport>,
}

impl BoundReport {
    /// Valid bounds by name.
    pub fn valid_bounds(&self) -> Vec<(&'static str, f64)> {
        [
            ("spect", &self.spect),
            ("bapat1", &self.bapat1),
            ("bapat2", &self.bapat2),
            ("bapat3", &self.bapat3),
            ("invert", &self.invert),
        ]
        .into_iter()
        .filter_map(|(name, b)| b.value.map(|v| (name, v)))
        .collect()
    }
}

fn report_for(a: &Matrix, b: &Matrix, pa: &PerronPair, mu: f64) -> BoundReport {
    let lambda = pa.value;
    let spect = if mu > 0.0 {
        Bound::valid(bound_spectral(a, b, mu))
    } else {
        Bound::invalid("μ is not positive")
    };
    let (bapat1, bapat2, bapat3, l) = match bound_bapat(a, b, pa, mu) {
        Ok(bb) => (Bound::valid(bb.b1), bb.b2, bb.b3, Some(bb.l)),
        Err(e) => {
            let msg = e.to_string();
            (Bound::invalid(&msg), Bound::invalid(&msg), Bound::invalid(&msg), None)
        }
    };
    BoundReport {
        lambda,
        mu,
        actual_error: (lambda / mu).ln(),
        lambda_exceeds_mu: lambda > mu,
        spect,
        bapat1,
        bapat2,
        bapat3,
        l,
        invert: bound_invert(a, b, mu),
        conditions: None,
    }
}

/// All bounds for a raw pair: `A` must be irreducible, `B` may be reducible.
pub fn bound_report(a: &Matrix, b: &Matrix) -> Result<BoundReport> {
    let pa = perron_default(a)?;
    let mu = spectral_radius_nonneg(b)?;
    Ok(report_for(a, b, &pa, mu))
}

/// All bounds with `A = M`, `B = ΠM`, plus the zero-error conditions.
pub fn model_report(model: &RiskModel) -> Result<BoundReport> {
    let rc = risk_cost(model)?;
    let proj = projected_mu(model)?;
    let a = model.m();
    let pa = PerronPair { value: rc.lambda, right: rc.v.clone(), left: rc.x.clone(), residual: rc.poisson_residual };
    let mut report = report_for(a, &proj.q, &pa, proj.mu);
    report.conditions = Some(zero_error_conditions(model)?);
    Ok(report)
}
