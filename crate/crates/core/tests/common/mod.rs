//! Test-only oracles and fixtures.
//!
//! The oracles here are written against `nalgebra` with literal summation
//! loops so they share no code path with the crate's estimators.

#![allow(dead_code)]

use fewshot_transduct::numerics::{Matrix, Vector};
use fewshot_transduct::{LabeledEmbedding, Task};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.dim(), m.dim(), m.as_slice())
}

pub fn from_na(m: &DMatrix<f64>) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect();
    Matrix::from_rows(&rows).unwrap()
}

pub fn vec_na(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Random SPD matrix `A Aᵀ + shift I`.
pub fn random_spd(rng: &mut ChaCha8Rng, d: usize, shift: f64) -> DMatrix<f64> {
    let a = DMatrix::from_row_slice(d, d, &normal_vec(rng, d * d));
    &a * a.transpose() + DMatrix::identity(d, d) * shift
}

pub fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

pub fn max_abs_vec(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Random task with class counts in `1..=max_shot`, clustered around
/// random class centers.
pub fn random_task(
    rng: &mut ChaCha8Rng,
    d: usize,
    way: usize,
    max_shot: usize,
    n_query: usize,
) -> Task {
    let centers: Vec<Vec<f64>> = (0..way)
        .map(|_| normal_vec(rng, d).iter().map(|v| 2.0 * v).collect())
        .collect();
    let mut support = Vec::new();
    for (k, c) in centers.iter().enumerate() {
        let shots = rng.random_range(1..=max_shot);
        for _ in 0..shots {
            let z: Vec<f64> = c.iter().zip(normal_vec(rng, d)).map(|(a, e)| a + e).collect();
            support.push(LabeledEmbedding::new(z, k));
        }
    }
    let query = (0..n_query)
        .map(|_| {
            let k = rng.random_range(0..way);
            let z: Vec<f64> = centers[k]
                .iter()
                .zip(normal_vec(rng, d))
                .map(|(a, e)| a + e)
                .collect();
            Vector::from(z)
        })
        .collect();
    Task::new(support, query, way).unwrap()
}

/// Random row-stochastic query rows.
pub fn random_query_rows(rng: &mut ChaCha8Rng, m: usize, way: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|_| {
            let raw: Vec<f64> = (0..way).map(|_| rng.random_range(0.01..1.0)).collect();
            let total: f64 = raw.iter().sum();
            raw.iter().map(|v| v / total).collect()
        })
        .collect()
}

#[derive(Debug)]
pub struct OracleEstimates {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub mu_k: Vec<DVector<f64>>,
    pub sigma_k: Vec<DMatrix<f64>>,
    pub q_k: Vec<DMatrix<f64>>,
}

/// Weighted estimates by direct summation over every `(j, k)` pair.
pub fn oracle_weighted(points: &[Vec<f64>], w: &[Vec<f64>], beta: f64) -> OracleEstimates {
    let d = points[0].len();
    let way = w[0].len();
    let zs: Vec<DVector<f64>> = points.iter().map(|p| vec_na(p)).collect();

    let mut n_k = vec![0.0; way];
    for row in w {
        for k in 0..way {
            n_k[k] += row[k];
        }
    }
    let total: f64 = n_k.iter().sum();

    let mut mu = DVector::zeros(d);
    for (j, z) in zs.iter().enumerate() {
        for k in 0..way {
            mu += z * w[j][k];
        }
    }
    mu /= total;
    let mut sigma = DMatrix::zeros(d, d);
    for (j, z) in zs.iter().enumerate() {
        for k in 0..way {
            let c = z - &mu;
            sigma += (&c * c.transpose()) * w[j][k];
        }
    }
    sigma /= total;

    let mut mu_k = Vec::new();
    let mut sigma_k = Vec::new();
    let mut q_k = Vec::new();
    for k in 0..way {
        let mut m = DVector::zeros(d);
        for (j, z) in zs.iter().enumerate() {
            m += z * w[j][k];
        }
        m /= n_k[k];
        let mut s = DMatrix::zeros(d, d);
        for (j, z) in zs.iter().enumerate() {
            let c = z - &m;
            s += (&c * c.transpose()) * w[j][k];
        }
        s /= n_k[k];
        let lambda = n_k[k] / (n_k[k] + 1.0);
        let q = &s * lambda + &sigma * (1.0 - lambda) + DMatrix::identity(d, d) * beta;
        mu_k.push(m);
        sigma_k.push(s);
        q_k.push(q);
    }
    OracleEstimates {
        mu,
        sigma,
        mu_k,
        sigma_k,
        q_k,
    }
}

/// Support-only estimates with indicator weights.
pub fn oracle_unweighted(task: &Task, beta: f64) -> OracleEstimates {
    let points: Vec<Vec<f64>> = task.support().iter().map(|s| s.z.to_vec()).collect();
    let w: Vec<Vec<f64>> = task
        .support()
        .iter()
        .map(|s| (0..task.way()).map(|k| if k == s.y { 1.0 } else { 0.0 }).collect())
        .collect();
    oracle_weighted(&points, &w, beta)
}

/// Class probabilities from explicit inverses and determinants.
pub fn oracle_classify(est: &OracleEstimates, z: &[f64], gmm: bool) -> Vec<f64> {
    let z = vec_na(z);
    let logits: Vec<f64> = est
        .mu_k
        .iter()
        .zip(&est.q_k)
        .map(|(m, q)| {
            let inv = q.clone().try_inverse().expect("invertible");
            let c = &z - m;
            let d2 = (c.transpose() * inv * &c)[(0, 0)];
            if gmm {
                -(est.mu_k.len() as f64).ln() - 0.5 * d2 - 0.5 * q.determinant().ln()
            } else {
                -d2
            }
        })
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}
