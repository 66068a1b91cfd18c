//! Risk-sensitive policy evaluation on a finite chain.
//!
//! The risk-sensitive cost of a chain `P` with running cost `c` is `ln λ`,
//! where `λ` is the Perron root of `M = [e^{c(i,j)} p(j|i)]`. Linear function
//! approximation replaces `M` by `Q = ΠM` with
//! `Π = Φ(ΦᵀDΦ)⁻¹ΦᵀD`, whose dominant eigenvalue `μ` gives `ln μ`.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{inverse, perron_default, spectral_radius_nonneg, stationary, Matrix};

pub mod bounds;
pub mod conditions;
pub mod learning;

pub use bounds::{bound_bapat, bound_invert, bound_report, bound_spectral, BapatBounds, Bound, BoundReport};
pub use conditions::{zero_error_conditions, ConditionReport};
pub use learning::{lspe_iterate, risk_td_expected_increment, risk_td_run, risk_td_step, RiskTrace};

/// Entries of `ΠM` above `-NEGATIVE_Q_TOL` are treated as round-off.
pub const NEGATIVE_Q_TOL: f64 = 1e-12;
/// Default floor `ε` in the learning recursions.
pub const DEFAULT_EPS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskModel {
    p: Matrix,
    cost: Matrix,
    features: Matrix,
    i0: usize,
    pi: Vec<f64>,
    m: Matrix,
    star: bool,
}

/// JSON form of a model: `P`, `c`, `Φ` and the reference state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskModelSpec {
    pub p: Matrix,
    pub cost: Matrix,
    pub features: Matrix,
    #[serde(default)]
    pub i0: usize,
}

impl RiskModelSpec {
    pub fn build(&self) -> Result<RiskModel> {
        RiskModel::new(self.p.clone(), self.cost.clone(), self.features.clone(), self.i0)
    }
}

impl RiskModel {
    pub fn new(p: Matrix, cost: Matrix, features: Matrix, i0: usize) -> Result<Self> {
        let s = p.rows();
        if cost.rows() != s || cost.cols() != p.cols() {
            return Err(Error::Shape(format!(
                "cost is {}x{}, kernel is {}x{}",
                cost.rows(),
                cost.cols(),
                s,
                p.cols()
            )));
        }
        if features.rows() != s {
            return Err(Error::Shape(format!("features have {} rows for {s} states", features.rows())));
        }
        if !features.is_nonnegative() {
            return Err(Error::BadModel("features must be nonnegative".into()));
        }
        if i0 >= s {
            return Err(Error::BadStart(i0));
        }
        let pi = stationary(&p)?;
        let m = cost.map(f64::exp).hadamard(&p);
        let star = has_single_positive_per_row(&features);
        Ok(RiskModel { p, cost, features, i0, pi, m, star })
    }

    pub fn n_states(&self) -> usize {
        self.p.rows()
    }

    pub fn p(&self) -> &Matrix {
        &self.p
    }

    pub fn cost(&self) -> &Matrix {
        &self.cost
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn i0(&self) -> usize {
        self.i0
    }

    /// Stationary distribution of `P`.
    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn d(&self) -> Matrix {
        Matrix::diagonal(&self.pi)
    }

    /// `M = C∘P`
    pub fn m(&self) -> &Matrix {
        &self.m
    }

    /// Whether every feature row has exactly one positive entry.
    pub fn star(&self) -> bool {
        self.star
    }

    /// Column holding the positive entry of row `i`; meaningful under
    /// [`RiskModel::star`].
    pub fn k(&self, i: usize) -> usize {
        self.features.row(i).iter().position(|&v| v > 0.0).unwrap_or(0)
    }

    pub fn with_features(&self, features: Matrix) -> Result<RiskModel> {
        RiskModel::new(self.p.clone(), self.cost.clone(), features, self.i0)
    }
}

fn has_single_positive_per_row(phi: &Matrix) -> bool {
    (0..phi.rows()).all(|i| phi.row(i).iter().filter(|&&v| v > 0.0).count() == 1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskCost {
    pub lambda: f64,
    /// Right Perron vector of `M`, unit l1 norm.
    pub v: Vec<f64>,
    /// Left Perron vector, scaled so that `Σ xᵢ vᵢ = 1`.
    pub x: Vec<f64>,
    /// `maxᵢ |V(i) − Σⱼ p(j|i) e^{c(i,j)} V(j) / λ|`
    pub poisson_residual: f64,
}

impl RiskCost {
    pub fn cost(&self) -> f64 {
        self.lambda.ln()
    }
}

static RESIDUAL_CALLS: AtomicU64 = AtomicU64::new(0);
static MAX_RESIDUAL_BITS: AtomicU64 = AtomicU64::new(0);

/// Number of [`risk_cost`] calls in this process and the largest Poisson
/// residual any of them returned.
pub fn poisson_residual_stats() -> (u64, f64) {
    (
        RESIDUAL_CALLS.load(Ordering::Relaxed),
        f64::from_bits(MAX_RESIDUAL_BITS.load(Ordering::Relaxed)),
    )
}

pub fn risk_cost(model: &RiskModel) -> Result<RiskCost> {
    let pair = perron_default(&model.m)?;
    let mv = model.m.matvec(&pair.right);
    let residual = pair
        .right
        .iter()
        .zip(&mv)
        .fold(0.0, |acc, (v, m)| f64::max(acc, (v - m / pair.value).abs()));
    RESIDUAL_CALLS.fetch_add(1, Ordering::Relaxed);
    // nonnegative floats order the same way as their bit patterns
    MAX_RESIDUAL_BITS.fetch_max(residual.to_bits(), Ordering::Relaxed);
    Ok(RiskCost { lambda: pair.value, v: pair.right, x: pair.left, poisson_residual: residual })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Projection {
    pub mu: f64,
    pub q: Matrix,
    pub projector: Matrix,
}

/// `Π = Φ(ΦᵀDΦ)⁻¹ΦᵀD`
pub fn projector(phi: &Matrix, pi: &[f64]) -> Result<Matrix> {
    let d = Matrix::diagonal(pi);
    let phit_d = phi.transpose().matmul(&d);
    let gram = phit_d.matmul(phi);
    let gram_inv = inverse(&gram).map_err(|e| match e {
        Error::Singular { .. } => Error::SingularGram,
        other => other,
    })?;
    Ok(phi.matmul(&gram_inv).matmul(&phit_d))
}

pub fn projected_mu(model: &RiskModel) -> Result<Projection> {
    let proj = projector(&model.features, &model.pi)?;
    let mut q = proj.matmul(&model.m);
    for i in 0..q.rows() {
        for j in 0..q.cols() {
            let v = q[(i, j)];
            if v < -NEGATIVE_Q_TOL {
                return Err(Error::NegativeQ { row: i, col: j, value: v });
            }
            if v < 0.0 {
                q[(i, j)] = 0.0;
            }
        }
    }
    let mu = spectral_radius_nonneg(&q)?;
    Ok(Projection { mu, q, projector: proj })
}

/// Single-column features `φᵢ = xᵢ/πᵢ` with `x` the left Perron vector of
/// `M`; with these `μ = λ`.
pub fn condition1_features(p: &Matrix, cost: &Matrix) -> Result<Matrix> {
    let pi = stationary(p)?;
    let m = cost.map(f64::exp).hadamard(p);
    let pair = perron_default(&m)?;
    let phi: Vec<f64> = pair.left.iter().zip(&pi).map(|(x, p)| x / p).collect();
    Ok(Matrix::column(&phi))
}

/// Whether every row and every column of `p` sums to 1 within `1e-10`.
pub fn is_doubly_stochastic(p: &Matrix) -> bool {
    p.is_square()
        && p.is_nonnegative()
        && p.row_sums().iter().chain(&p.col_sums()).all(|s| (s - 1.0).abs() <= 1e-10)
}

/// `Φ = √s·I`, which satisfies `ΦΦᵀ = D⁻¹` for a doubly stochastic `P`.
pub fn doubly_stochastic_features(p: &Matrix) -> Result<Matrix> {
    if !is_doubly_stochastic(p) {
        return Err(Error::BadModel("kernel is not doubly stochastic".into()));
    }
    let s = p.rows();
    Ok(Matrix::identity(s).scale((s as f64).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn uniform(s: usize) -> Matrix {
        Matrix::filled(s, s, 1.0 / s as f64)
    }

    #[test]
    fn single_state_cost() {
        let one = Matrix::filled(1, 1, 1.0);
        let model = RiskModel::new(one.clone(), Matrix::filled(1, 1, 0.7), one, 0).unwrap();
        let rc = risk_cost(&model).unwrap();
        assert_abs_diff_eq!(rc.lambda, 0.7f64.exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(rc.cost(), 0.7, epsilon = 1e-12);
    }

    #[test]
    fn constant_cost_scales_stochastic_matrix() {
        let p = Matrix::from_rows(&[vec![0.2, 0.8, 0.0], vec![0.5, 0.0, 0.5], vec![0.3, 0.3, 0.4]]).unwrap();
        let model = RiskModel::new(p, Matrix::filled(3, 3, -0.4), Matrix::identity(3), 0).unwrap();
        let rc = risk_cost(&model).unwrap();
        assert_abs_diff_eq!(rc.lambda, (-0.4f64).exp(), epsilon = 1e-12);
        assert!(rc.poisson_residual <= 1e-10);
    }

    #[test]
    fn two_state_symmetric_cost() {
        let cost = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let model = RiskModel::new(uniform(2), cost, Matrix::identity(2), 0).unwrap();
        let rc = risk_cost(&model).unwrap();
        // symmetric [[a, b], [b, a]] has Perron root a + b
        assert_abs_diff_eq!(rc.lambda, 0.5 * (1.0 + 1f64.exp()), epsilon = 1e-12);
    }

    #[test]
    fn identity_features_reproduce_lambda() {
        let p = Matrix::from_rows(&[vec![0.1, 0.9], vec![0.6, 0.4]]).unwrap();
        let cost = Matrix::from_rows(&[vec![0.3, -0.2], vec![0.5, 0.1]]).unwrap();
        let model = RiskModel::new(p, cost, Matrix::identity(2), 1).unwrap();
        let proj = projected_mu(&model).unwrap();
        assert_abs_diff_eq!(proj.mu, risk_cost(&model).unwrap().lambda, epsilon = 1e-10);
    }

    #[test]
    fn condition1_features_give_zero_error() {
        let p = Matrix::from_rows(&[vec![0.1, 0.6, 0.3], vec![0.5, 0.2, 0.3], vec![0.3, 0.3, 0.4]]).unwrap();
        let cost = Matrix::from_rows(&[vec![0.1, 0.4, -0.3], vec![0.0, 0.2, 0.5], vec![-0.1, 0.3, 0.2]]).unwrap();
        let phi = condition1_features(&p, &cost).unwrap();
        let model = RiskModel::new(p, cost, phi, 0).unwrap();
        let lambda = risk_cost(&model).unwrap().lambda;
        assert_abs_diff_eq!(projected_mu(&model).unwrap().mu, lambda, epsilon = 1e-10);
    }

    #[test]
    fn ones_column_on_doubly_stochastic_model() {
        let p = Matrix::from_rows(&[vec![0.2, 0.5, 0.3], vec![0.3, 0.2, 0.5], vec![0.5, 0.3, 0.2]]).unwrap();
        let cost = Matrix::from_rows(&[vec![0.1, 0.4, -0.3], vec![0.0, 0.2, 0.5], vec![-0.1, 0.3, 0.2]]).unwrap();
        let model = RiskModel::new(p, cost, Matrix::filled(3, 1, 1.0), 0).unwrap();
        let gamma = model.m();
        let oracle = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| gamma[(i, j)]).sum::<f64>() / 3.0;
        assert_abs_diff_eq!(projected_mu(&model).unwrap().mu, oracle, epsilon = 1e-12);
    }

    #[test]
    fn singular_gram_is_reported() {
        let phi = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        let model = RiskModel::new(uniform(2), Matrix::zeros(2, 2), phi, 0).unwrap();
        assert_eq!(projected_mu(&model).err(), Some(Error::SingularGram));
    }

    #[test]
    fn model_validation() {
        let bad_p = Matrix::from_rows(&[vec![0.5, 0.4], vec![0.5, 0.5]]).unwrap();
        assert!(matches!(
            RiskModel::new(bad_p, Matrix::zeros(2, 2), Matrix::identity(2), 0),
            Err(Error::NotStochastic(_))
        ));
        let neg = Matrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap();
        assert!(RiskModel::new(uniform(2), Matrix::zeros(2, 2), neg, 0).is_err());
        assert_eq!(
            RiskModel::new(uniform(2), Matrix::zeros(2, 2), Matrix::identity(2), 5).err(),
            Some(Error::BadStart(5))
        );
        let model = RiskModel::new(uniform(2), Matrix::zeros(2, 2), Matrix::identity(2), 0).unwrap();
        assert!(model.star());
        assert!(!model.with_features(Matrix::filled(2, 2, 1.0)).unwrap().star());
    }

    #[test]
    fn doubly_stochastic_feature_constructor() {
        let phi = doubly_stochastic_features(&uniform(4)).unwrap();
        let model = RiskModel::new(uniform(4), Matrix::zeros(4, 4), phi.clone(), 0).unwrap();
        let d_inv = Matrix::diagonal(&model.pi().iter().map(|p| 1.0 / p).collect::<Vec<_>>());
        let ppt = phi.matmul(&phi.transpose());
        assert!(ppt.sub(&d_inv).max_abs() <= 1e-12);
        let p = Matrix::from_rows(&[vec![0.1, 0.9], vec![0.6, 0.4]]).unwrap();
        assert!(doubly_stochastic_features(&p).is_err());
    }
}
