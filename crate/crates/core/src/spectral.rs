//! Dense small-matrix numerics.
//!
//! Everything here works on [`Matrix`], a row-major `f64` matrix sized for
//! desk-scale problems (a few hundred rows at most). The centerpiece is
//! [`perron`], which returns the Perron root of an irreducible nonnegative
//! matrix together with strictly positive left and right eigenvectors.
//! Periodic matrices are handled by iterating on `A + cI` with
//! `c = 1 + max_i a_ii`, which leaves the eigenvectors unchanged and makes
//! the shifted Perron root strictly dominant.

use std::collections::VecDeque;
use std::fmt;
use std::ops::{Index, IndexMut};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITERS: usize = 100_000;
pub const PIVOT_FLOOR: f64 = 1e-12;

#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Matrix::from_rows(&rows)
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        m.to_rows()
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("{rows}x{cols} has no entries")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!(
                "non-finite entry at ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Matrix::new(n, m, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "empty matrix");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix::from_fn(rows, cols, |_, _| 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix::from_fn(rows, cols, |_, _| value)
    }

    pub fn identity(n: usize) -> Self {
        Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn diagonal(d: &[f64]) -> Self {
        Matrix::from_fn(d.len(), d.len(), |i, j| if i == j { d[i] } else { 0.0 })
    }

    pub fn column(v: &[f64]) -> Self {
        Matrix::from_fn(v.len(), 1, |i, _| v[i])
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    /// `A v`
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `vᵀ A`
    pub fn vecmat(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len(), "vecmat shape mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += vi * a;
            }
        }
        out
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|v| c * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, |a, b| a - b)
    }

    /// Entrywise product `A ∘ B`.
    pub fn hadamard(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        self.vecmat(&vec![1.0; self.rows])
    }

    pub fn is_nonnegative(&self) -> bool {
        self.data.iter().all(|&v| v >= 0.0)
    }

    pub(crate) fn check_nonnegative(&self) -> Result<()> {
        match self.data.iter().position(|&v| v < 0.0) {
            Some(pos) => Err(Error::Negative {
                row: pos / self.cols,
                col: pos % self.cols,
                value: self.data[pos],
            }),
            None => Ok(()),
        }
    }

    pub(crate) fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub(crate) fn from_dmatrix(m: &DMatrix<f64>) -> Matrix {
        Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn norm_l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Induced norm for `‖v‖ = Σ|vᵢ|`: the largest absolute column sum.
pub fn operator_norm_l1(a: &Matrix) -> f64 {
    (0..a.cols())
        .map(|j| (0..a.rows()).map(|i| a[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn ensure_square(a: &Matrix) -> Result<()> {
    if a.is_square() {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "expected a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )))
    }
}

/// Gaussian elimination with partial pivoting.
pub fn solve_linear(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    ensure_square(a)?;
    let n = a.rows();
    if b.len() != n {
        return Err(Error::Shape(format!("rhs has length {}, expected {n}", b.len())));
    }
    let mut m = a.clone();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let (piv, pmax) = (col..n)
            .map(|r| (r, m[(r, col)].abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pmax < PIVOT_FLOOR {
            return Err(Error::Singular { pivot: pmax, column: col });
        }
        if piv != col {
            for j in 0..n {
                m.data.swap(col * n + j, piv * n + j);
            }
            rhs.swap(col, piv);
        }
        let p = m[(col, col)];
        for r in col + 1..n {
            let f = m[(r, col)] / p;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m[(r, j)] -= f * m[(col, j)];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| m[(i, j)] * x[j]).sum();
        x[i] = (rhs[i] - s) / m[(i, i)];
    }
    Ok(x)
}

pub fn inverse(a: &Matrix) -> Result<Matrix> {
    ensure_square(a)?;
    let n = a.rows();
    let mut out = Matrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = solve_linear(a, &e)?;
        for i in 0..n {
            out[(i, j)] = col[i];
        }
    }
    Ok(out)
}

/// Determinant from the pivoted elimination, tracking row-swap signs.
pub fn determinant(a: &Matrix) -> Result<f64> {
    ensure_square(a)?;
    let n = a.rows();
    let mut m = a.clone();
    let mut det = 1.0;
    for col in 0..n {
        let (piv, pmax) = (col..n)
            .map(|r| (r, m[(r, col)].abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pmax == 0.0 {
            return Ok(0.0);
        }
        if piv != col {
            for j in 0..n {
                m.data.swap(col * n + j, piv * n + j);
            }
            det = -det;
        }
        let p = m[(col, col)];
        det *= p;
        for r in col + 1..n {
            let f = m[(r, col)] / p;
            for j in col..n {
                m[(r, j)] -= f * m[(col, j)];
            }
        }
    }
    Ok(det)
}

/// Minimum-norm least-squares solution via SVD; used when `A` is rank deficient.
pub fn min_norm_solve(a: &Matrix, b: &[f64]) -> Vec<f64> {
    let svd = a.to_dmatrix().svd(true, true);
    let eps = 1e-10 * svd.singular_values.max().max(1.0);
    let rhs = nalgebra::DVector::from_column_slice(b);
    let x = svd.solve(&rhs, eps).expect("both factors were requested");
    x.iter().copied().collect()
}

/// Moore-Penrose pseudo-inverse.
pub fn pseudo_inverse(a: &Matrix) -> Matrix {
    let svd = a.to_dmatrix().svd(true, true);
    let eps = 1e-10 * svd.singular_values.max().max(1.0);
    Matrix::from_dmatrix(&svd.pseudo_inverse(eps).expect("eps is nonnegative"))
}

/// Ratio of the largest to the smallest singular value; infinite when
/// numerically rank deficient.
pub fn condition_number(a: &Matrix) -> f64 {
    let sv = a.to_dmatrix().singular_values();
    let (hi, lo) = (sv.max(), sv.min());
    let rank_tol = hi * f64::EPSILON * a.rows().max(a.cols()) as f64;
    if lo <= rank_tol {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Smallest eigenvalue of the symmetric part `(A + Aᵀ)/2`.
pub fn symmetric_part_min_eigenvalue(a: &Matrix) -> Result<f64> {
    ensure_square(a)?;
    let sym = a.add(&a.transpose()).scale(0.5).to_dmatrix();
    let eig = nalgebra::SymmetricEigen::new(sym);
    Ok(eig.eigenvalues.min())
}

fn reachable_from_zero(a: &Matrix, transpose: bool) -> usize {
    let n = a.rows();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(i) = queue.pop_front() {
        for j in 0..n {
            let w = if transpose { a[(j, i)] } else { a[(i, j)] };
            if w != 0.0 && !seen[j] {
                seen[j] = true;
                count += 1;
                queue.push_back(j);
            }
        }
    }
    count
}

/// Strong connectivity of the nonzero-pattern digraph, by breadth-first
/// search from node 0 forwards and backwards.
pub fn is_irreducible(a: &Matrix) -> bool {
    a.is_square()
        && reachable_from_zero(a, false) == a.rows()
        && reachable_from_zero(a, true) == a.rows()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerronPair {
    pub value: f64,
    pub right: Vec<f64>,
    pub left: Vec<f64>,
    pub residual: f64,
}

struct PowerResult {
    value: f64,
    vector: Vec<f64>,
}

/// Power iteration on `A + shift·I` from the uniform vector; `v` stays
/// l1-normalized. `accept(residual, value, v)` decides convergence.
fn shifted_power(
    a: &Matrix,
    transpose: bool,
    shift: f64,
    max_iters: usize,
    accept: impl Fn(f64, f64, &[f64]) -> bool,
) -> std::result::Result<PowerResult, (f64, usize)> {
    let n = a.rows();
    let mut v = vec![1.0 / n as f64; n];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let mut u = if transpose { a.vecmat(&v) } else { a.matvec(&v) };
        for (ui, vi) in u.iter_mut().zip(&v) {
            *ui += shift * vi;
        }
        let shifted: f64 = u.iter().sum();
        if shifted <= 0.0 || !shifted.is_finite() {
            return Err((f64::INFINITY, 0));
        }
        residual = u
            .iter()
            .zip(&v)
            .fold(0.0, |m, (ui, vi)| f64::max(m, (ui - shifted * vi).abs()));
        let value = shifted - shift;
        for (vi, ui) in v.iter_mut().zip(&u) {
            *vi = ui / shifted;
        }
        if accept(residual, value, &v) {
            return Ok(PowerResult { value, vector: v });
        }
    }
    Err((residual, max_iters))
}

pub fn perron_default(a: &Matrix) -> Result<PerronPair> {
    perron(a, DEFAULT_TOL, DEFAULT_MAX_ITERS)
}

/// Perron root and positive eigenvectors of an irreducible nonnegative matrix.
///
/// The right vector has unit l1 norm and the left vector is scaled so that
/// `Σ leftᵢ·rightᵢ = 1`. Convergence is declared once the residual drops to
/// `tol · max(1, r(A))`.
pub fn perron(a: &Matrix, tol: f64, max_iters: usize) -> Result<PerronPair> {
    ensure_square(a)?;
    a.check_nonnegative()?;
    if !is_irreducible(a) {
        return Err(Error::NotIrreducible);
    }
    let n = a.rows();
    let shift = 1.0 + (0..n).map(|i| a[(i, i)]).fold(0.0, f64::max);
    let scaled_tol = |value: f64| tol * value.abs().max(1.0);

    let right = shifted_power(a, false, shift, max_iters, |res, value, _| {
        res <= scaled_tol(value)
    })
    .map_err(|(residual, iters)| Error::NoConvergence { residual, iters })?;

    // The left residual is reported after rescaling by 1/Σxᵢyᵢ, so the
    // stopping rule accounts for that factor up front.
    let y = right.vector.clone();
    let left = shifted_power(a, true, shift, max_iters, |res, value, x| {
        res / dot(x, &y) <= scaled_tol(value)
    })
    .map_err(|(residual, iters)| Error::NoConvergence { residual, iters })?;

    let scale = 1.0 / dot(&left.vector, &right.vector);
    let left_vec: Vec<f64> = left.vector.iter().map(|x| x * scale).collect();
    let value = right.value;

    let ry = a.matvec(&right.vector);
    let res_r = ry
        .iter()
        .zip(&right.vector)
        .fold(0.0, |m, (u, v)| f64::max(m, (u - value * v).abs()));
    let lx = a.vecmat(&left_vec);
    let res_l = lx
        .iter()
        .zip(&left_vec)
        .fold(0.0, |m, (u, v)| f64::max(m, (u - value * v).abs()));

    Ok(PerronPair {
        value,
        right: right.vector,
        left: left_vec,
        residual: res_r.max(res_l),
    })
}

/// Dominant eigenvalue of a nonnegative matrix that may be reducible (for
/// example a projected matrix with zero rows).
///
/// Shifted power iteration from a positive start vector; if that stalls
/// (Jordan structure at the spectral radius converges only algebraically) the
/// eigenvalues are taken from a real Schur decomposition instead.
pub fn spectral_radius_nonneg(a: &Matrix) -> Result<f64> {
    ensure_square(a)?;
    a.check_nonnegative()?;
    let n = a.rows();
    let shift = 1.0 + (0..n).map(|i| a[(i, i)]).fold(0.0, f64::max);
    match shifted_power(a, false, shift, 20_000, |res, value, _| {
        res <= DEFAULT_TOL * value.abs().max(1.0)
    }) {
        Ok(r) => Ok(r.value.max(0.0)),
        Err(_) => {
            let eig = a.to_dmatrix().complex_eigenvalues();
            Ok(eig.iter().map(|z| z.norm()).fold(0.0, f64::max))
        }
    }
}

/// Stationary distribution of an irreducible row-stochastic matrix, from the
/// linear system `πᵀ(P − I) = 0` with one equation replaced by `Σπ = 1`.
pub fn stationary(p: &Matrix) -> Result<Vec<f64>> {
    ensure_square(p)?;
    p.check_nonnegative()
        .map_err(|e| Error::NotStochastic(e.to_string()))?;
    for (i, s) in p.row_sums().iter().enumerate() {
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::NotStochastic(format!("row {i} sums to {s}")));
        }
    }
    if !is_irreducible(p) {
        return Err(Error::NotIrreducible);
    }
    let n = p.rows();
    let mut sys = Matrix::from_fn(n, n, |i, j| p[(j, i)] - if i == j { 1.0 } else { 0.0 });
    let mut rhs = vec![0.0; n];
    for j in 0..n {
        sys[(n - 1, j)] = 1.0;
    }
    rhs[n - 1] = 1.0;
    let mut pi = solve_linear(&sys, &rhs)?;
    // Irreducibility makes every component positive; clear round-off signs.
    for v in &mut pi {
        *v = v.max(0.0);
    }
    let total: f64 = pi.iter().sum();
    for v in &mut pi {
        *v /= total;
    }
    Ok(pi)
}
