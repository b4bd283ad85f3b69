//! Class mean and shrinkage-regularized covariance estimation.
//!
//! Every class covariance is blended with the task covariance,
//! `Q_k = λ_k Σ_k + (1 - λ_k) Σ + βI` with `λ_k = n_k / (n_k + 1)`, so that a
//! class with a single example still gets a usable metric. The weighted
//! variants take soft counts `n'_k = Σ_j w_jk` over support and query rows.
//! All covariances use the population divisor.

use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Error, Result};
use crate::numerics::{spd_factorize, Matrix, SpdFactor, Vector, DEFAULT_JITTER};

/// Soft class counts below this are treated as a collapsed cluster.
pub const MIN_SOFT_COUNT: f64 = 1e-8;

/// Row-sum tolerance of a [`Responsibilities`] matrix.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Default ridge `β` added to every class covariance.
pub const DEFAULT_BETA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassParams {
    pub mu: Vector,
    /// Class-conditional covariance before shrinkage.
    pub sigma: Matrix,
    /// Regularized covariance used by the metric.
    pub q: Matrix,
    pub q_factor: SpdFactor,
    /// `n_k`, or the soft count `n'_k` for weighted estimates.
    pub count: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStats {
    pub mu: Vector,
    pub sigma: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Support,
    Query,
}

/// `(n + m) × K` assignment weights over support rows followed by query rows.
/// Support rows are one-hot on their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    w: Vec<Vec<f64>>,
    n_support: usize,
}

impl Responsibilities {
    /// Validates shape, range, row sums and the one-hot support rows.
    pub fn new(task: &Task, w: Vec<Vec<f64>>) -> Result<Self> {
        let rows = task.n_support() + task.n_query();
        if w.len() != rows {
            return Err(Error::DimensionMismatch {
                expected: rows,
                got: w.len(),
            });
        }
        for (j, row) in w.iter().enumerate() {
            if row.len() != task.way() {
                return Err(Error::DimensionMismatch {
                    expected: task.way(),
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidResponsibilities(format!(
                    "row {j} has entries outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidResponsibilities(format!(
                    "row {j} sums to {sum}"
                )));
            }
        }
        for (s, row) in task.support().iter().zip(&w) {
            let one_hot = row
                .iter()
                .enumerate()
                .all(|(k, &v)| v == if k == s.y { 1.0 } else { 0.0 });
            if !one_hot {
                return Err(Error::InvalidResponsibilities(
                    "support row is not one-hot on its label".into(),
                ));
            }
        }
        Ok(Responsibilities {
            w,
            n_support: task.n_support(),
        })
    }

    /// One-hot support rows followed by the given query rows.
    pub fn from_query_rows(task: &Task, query_rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut w = Vec::with_capacity(task.n_support() + query_rows.len());
        for s in task.support() {
            let mut row = vec![0.0; task.way()];
            row[s.y] = 1.0;
            w.push(row);
        }
        w.extend(query_rows);
        Responsibilities::new(task, w)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.w
    }

    pub fn query_rows(&self) -> &[Vec<f64>] {
        &self.w[self.n_support..]
    }

    pub fn row_kind(&self, j: usize) -> RowKind {
        if j < self.n_support {
            RowKind::Support
        } else {
            RowKind::Query
        }
    }

    pub fn way(&self) -> usize {
        self.w.first().map_or(0, Vec::len)
    }
}

/// Class-balanced support pooling `e_s` and query mean pooling `e_q`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskEmbedding {
    pub e_s: Vector,
    pub e_q: Vector,
}

fn check_beta(beta: f64) -> Result<()> {
    if beta >= 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("beta must be finite and >= 0, got {beta}")))
    }
}

fn shrink(mu: Vector, sigma: Matrix, task_sigma: &Matrix, count: f64, beta: f64) -> Result<ClassParams> {
    let lambda = count / (count + 1.0);
    let mut q = Matrix::zeros(sigma.dim());
    q.add_scaled(lambda, &sigma);
    q.add_scaled(1.0 - lambda, task_sigma);
    q.add_diagonal(beta);
    let q_factor = spd_factorize(&q, &DEFAULT_JITTER)?;
    Ok(ClassParams {
        mu,
        sigma,
        q,
        q_factor,
        count,
        lambda,
    })
}

/// Support-only estimates.
pub fn estimate_unweighted(task: &Task, beta: f64) -> Result<(Vec<ClassParams>, TaskStats)> {
    check_beta(beta)?;
    let d = task.dim();
    let n = task.n_support() as f64;

    let mut mu = Vector::zeros(d);
    for s in task.support() {
        mu.axpy(1.0, &s.z);
    }
    mu.scale(1.0 / n);
    let mut sigma = Matrix::zeros(d);
    for s in task.support() {
        sigma.add_outer(1.0, &s.z.sub(&mu));
    }
    sigma.scale(1.0 / n);

    let counts = task.class_counts();
    let mut params = Vec::with_capacity(task.way());
    for (k, &n_k) in counts.iter().enumerate() {
        let members = || task.support().iter().filter(move |s| s.y == k);
        let mut mu_k = Vector::zeros(d);
        for s in members() {
            mu_k.axpy(1.0, &s.z);
        }
        mu_k.scale(1.0 / n_k as f64);
        let mut sigma_k = Matrix::zeros(d);
        for s in members() {
            sigma_k.add_outer(1.0, &s.z.sub(&mu_k));
        }
        sigma_k.scale(1.0 / n_k as f64);
        params.push(shrink(mu_k, sigma_k, &sigma, n_k as f64, beta)?);
    }
    Ok((params, TaskStats { mu, sigma }))
}

/// Responsibility-weighted estimates over the union of support and query.
///
/// Fails with [`Error::DegenerateClass`] when a soft count drops below
/// [`MIN_SOFT_COUNT`].
pub fn estimate_weighted(
    task: &Task,
    resp: &Responsibilities,
    beta: f64,
) -> Result<(Vec<ClassParams>, TaskStats)> {
    check_beta(beta)?;
    let rows = task.n_support() + task.n_query();
    if resp.rows().len() != rows {
        return Err(Error::DimensionMismatch {
            expected: rows,
            got: resp.rows().len(),
        });
    }
    if resp.way() != task.way() {
        return Err(Error::DimensionMismatch {
            expected: task.way(),
            got: resp.way(),
        });
    }
    let d = task.dim();
    let way = task.way();
    let points: Vec<&Vector> = task
        .support()
        .iter()
        .map(|s| &s.z)
        .chain(task.query())
        .collect();
    let w = resp.rows();

    let mut counts = vec![0.0; way];
    for row in w {
        for (c, v) in counts.iter_mut().zip(row) {
            *c += v;
        }
    }
    if let Some((class, &count)) = counts
        .iter()
        .enumerate()
        .find(|(_, &c)| c < MIN_SOFT_COUNT)
    {
        return Err(Error::DegenerateClass { class, count });
    }
    let total: f64 = counts.iter().sum();

    // Σ_jk w_jk (...) collapses to the row mass Σ_k w_jk per point.
    let row_mass: Vec<f64> = w.iter().map(|row| row.iter().sum()).collect();
    let mut mu = Vector::zeros(d);
    for (z, &m) in points.iter().zip(&row_mass) {
        mu.axpy(m, z);
    }
    mu.scale(1.0 / total);
    let mut sigma = Matrix::zeros(d);
    for (z, &m) in points.iter().zip(&row_mass) {
        sigma.add_outer(m, &z.sub(&mu));
    }
    sigma.scale(1.0 / total);

    let mut params = Vec::with_capacity(way);
    for (k, &n_k) in counts.iter().enumerate() {
        let mut mu_k = Vector::zeros(d);
        for (z, row) in points.iter().zip(w) {
            if row[k] != 0.0 {
                mu_k.axpy(row[k], z);
            }
        }
        mu_k.scale(1.0 / n_k);
        let mut sigma_k = Matrix::zeros(d);
        for (z, row) in points.iter().zip(w) {
            if row[k] != 0.0 {
                sigma_k.add_outer(row[k], &z.sub(&mu_k));
            }
        }
        sigma_k.scale(1.0 / n_k);
        params.push(shrink(mu_k, sigma_k, &sigma, n_k, beta)?);
    }
    Ok((params, TaskStats { mu, sigma }))
}

pub fn pool_task_embedding(task: &Task) -> Result<TaskEmbedding> {
    if task.n_query() == 0 {
        return Err(Error::EmptyQuery);
    }
    let d = task.dim();
    let counts = task.class_counts();
    let mut class_sums = vec![Vector::zeros(d); task.way()];
    for s in task.support() {
        class_sums[s.y].axpy(1.0, &s.z);
    }
    let mut e_s = Vector::zeros(d);
    for (sum, &n_k) in class_sums.iter().zip(&counts) {
        e_s.axpy(1.0 / n_k as f64, sum);
    }
    e_s.scale(1.0 / task.way() as f64);
    let mut e_q = Vector::zeros(d);
    for z in task.query() {
        e_q.axpy(1.0, z);
    }
    e_q.scale(1.0 / task.n_query() as f64);
    Ok(TaskEmbedding { e_s, e_q })
}
