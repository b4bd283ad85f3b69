//! Small dense linear algebra on `f64`.
//!
//! Everything here works at the fixed feature dimension of a run (tens to a
//! few hundred). Inverses of SPD matrices are never formed: every `Q⁻¹`
//! application goes through the triangular solves of an [`SpdFactor`].

use std::ops::{Deref, Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Jitter values tried in order by [`spd_factorize`] when the caller has no
/// preference.
pub const DEFAULT_JITTER: [f64; 4] = [0.0, 1e-8, 1e-6, 1e-4];

/// Absolute tolerance of the symmetry precondition of [`spd_factorize`].
pub const SYMMETRY_TOL: f64 = 1e-8;

/// A dense feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.dim(), other.dim());
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &Vector) {
        debug_assert_eq!(self.dim(), x.dim());
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            *s += alpha * v;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for s in &mut self.0 {
            *s *= alpha;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl Index<usize> for Vector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// A square dense matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    dim: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(dim: usize) -> Self {
        Matrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Matrix::zeros(dim);
        m.add_diagonal(1.0);
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Matrix::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from row-major entries; `data.len()` must be `dim²`.
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: data.len(),
            });
        }
        Ok(Matrix { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn add_diagonal(&mut self, value: f64) {
        for i in 0..self.dim {
            self.data[i * self.dim + i] += value;
        }
    }

    /// `self += weight * x xᵀ`
    pub fn add_outer(&mut self, weight: f64, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim);
        for (i, &xi) in x.iter().enumerate() {
            let wi = weight * xi;
            let row = &mut self.data[i * self.dim..(i + 1) * self.dim];
            for (r, &xj) in row.iter_mut().zip(x) {
                *r += wi * xj;
            }
        }
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &Matrix) {
        debug_assert_eq!(self.dim, other.dim);
        for (s, o) in self.data.iter_mut().zip(&other.data) {
            *s += alpha * o;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for s in &mut self.data {
            *s *= alpha;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vector {
        debug_assert_eq!(x.len(), self.dim);
        (0..self.dim)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect::<Vec<f64>>()
            .into()
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.dim, other.dim);
        let n = self.dim;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let n = self.dim;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.data[j * n + i] = self.data[i * n + j];
            }
        }
        out
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        let n = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..i {
                worst = worst.max((self.data[i * n + j] - self.data[j * n + i]).abs());
            }
        }
        worst
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.dim + j]
    }
}

/// Cholesky factor `L` of `Q + εI`, with `ε` the jitter that made the
/// factorization succeed.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdFactor {
    lower: Matrix,
    logdet: f64,
    jitter: f64,
}

impl SpdFactor {
    pub fn dim(&self) -> usize {
        self.lower.dim()
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    /// `ln |Q + εI|`, cached as `2 Σ ln L_ii`.
    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Solves `L y = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vector {
        let n = self.dim();
        let l = &self.lower;
        let mut y = vec![0.0; n];
        for i in 0..n {
            let row = l.row(i);
            let s: f64 = row[..i].iter().zip(&y[..i]).map(|(a, b)| a * b).sum();
            y[i] = (b[i] - s) / row[i];
        }
        y.into()
    }

    /// Solves `Lᵀ x = y`.
    pub fn solve_upper(&self, y: &[f64]) -> Vector {
        let n = self.dim();
        let l = &self.lower;
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        x.into()
    }

    /// `Q⁻¹ b` through a forward and a backward triangular solve.
    pub fn solve(&self, b: &[f64]) -> Result<Vector> {
        self.check_dim(b.len())?;
        let y = self.solve_lower(b);
        Ok(self.solve_upper(&y))
    }

    /// `xᵀ Q⁻¹ x = ‖L⁻¹ x‖²`; never negative.
    pub fn quad_form(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        let y = self.solve_lower(x);
        Ok(y.iter().map(|v| v * v).sum())
    }

    /// `L Lᵀ`, i.e. the factorized matrix including jitter.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.dim();
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let s: f64 = (0..=j).map(|k| self.lower[(i, k)] * self.lower[(j, k)]).sum();
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }
}

/// Cholesky-factorizes `q + εI` for the first `ε` in `jitter_schedule` that
/// gives strictly positive pivots.
pub fn spd_factorize(q: &Matrix, jitter_schedule: &[f64]) -> Result<SpdFactor> {
    if jitter_schedule.is_empty() {
        return Err(Error::InvalidConfig("jitter schedule is empty".into()));
    }
    if !q.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    let max_asym = q.max_asymmetry();
    if max_asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { max_asym });
    }
    let mut last = jitter_schedule[0];
    for &eps in jitter_schedule {
        last = eps;
        if let Some(lower) = cholesky(q, eps) {
            let logdet = 2.0 * (0..lower.dim()).map(|i| lower[(i, i)].ln()).sum::<f64>();
            return Ok(SpdFactor {
                lower,
                logdet,
                jitter: eps,
            });
        }
    }
    Err(Error::FactorizationFailed { last_jitter: last })
}

/// Lower Cholesky factor of `q + eps I` from its lower triangle, or `None`
/// when a pivot is not safely positive.
fn cholesky(q: &Matrix, eps: f64) -> Option<Matrix> {
    let n = q.dim();
    let scale = (0..n).map(|i| (q[(i, i)] + eps).abs()).fold(0.0, f64::max);
    let pivot_floor = scale * n as f64 * f64::EPSILON;
    let mut l = Matrix::zeros(n);
    for j in 0..n {
        let mut d = q[(j, j)] + eps;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > pivot_floor) || !d.is_finite() {
            return None;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = q[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Some(l)
}

/// `(a - b)ᵀ Q⁻¹ (a - b)`.
pub fn mahalanobis_sq(f: &SpdFactor, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    f.quad_form(&diff)
}

/// Softmax with max-subtraction.
pub fn stable_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::EmptyInput);
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}
