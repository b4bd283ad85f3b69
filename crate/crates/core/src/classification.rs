//! Assignment rules over estimated class parameters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::ClassParams;
use crate::numerics::{mahalanobis_sq, stable_softmax, SpdFactor};

/// Class prior of the GMM rule.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prior {
    /// `π_k = 1/K`
    #[default]
    Uniform,
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum AssignmentRule {
    /// Softmax over negative squared Mahalanobis distances.
    #[default]
    MahalanobisSoftmax,
    /// Gaussian mixture posterior: `ln π_k - ½ d²_k - ½ ln|Q_k|`.
    Gmm { prior: Prior },
}

impl AssignmentRule {
    pub fn gmm() -> Self {
        AssignmentRule::Gmm {
            prior: Prior::Uniform,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            AssignmentRule::MahalanobisSoftmax => "mahalanobis-softmax",
            AssignmentRule::Gmm { .. } => "gmm",
        }
    }

    fn log_prior(&self, way: usize) -> Result<Option<Vec<f64>>> {
        match self {
            AssignmentRule::MahalanobisSoftmax => Ok(None),
            AssignmentRule::Gmm {
                prior: Prior::Uniform,
            } => Ok(Some(vec![-(way as f64).ln(); way])),
            AssignmentRule::Gmm {
                prior: Prior::Explicit(p),
            } => {
                if p.len() != way {
                    return Err(Error::DimensionMismatch {
                        expected: way,
                        got: p.len(),
                    });
                }
                let total: f64 = p.iter().sum();
                if p.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidConfig(
                        "GMM prior must be a strictly positive simplex vector".into(),
                    ));
                }
                Ok(Some(p.iter().map(|v| v.ln()).collect()))
            }
        }
    }
}

impl FromStr for AssignmentRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mahalanobis-softmax" | "softmax" | "mahalanobis" => Ok(AssignmentRule::MahalanobisSoftmax),
            "gmm" => Ok(AssignmentRule::gmm()),
            other => Err(Error::InvalidConfig(format!("unknown assignment rule `{other}`"))),
        }
    }
}

impl fmt::Display for AssignmentRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Class probabilities of `z` under `rule`.
pub fn classify(rule: &AssignmentRule, params: &[ClassParams], z: &[f64]) -> Result<Vec<f64>> {
    if params.is_empty() {
        return Err(Error::EmptyInput);
    }
    let log_prior = rule.log_prior(params.len())?;
    let mut logits = Vec::with_capacity(params.len());
    for (k, p) in params.iter().enumerate() {
        let d2 = mahalanobis_sq(&p.q_factor, z, &p.mu)?;
        let logit = match &log_prior {
            None => -d2,
            Some(lp) => lp[k] - 0.5 * d2 - 0.5 * p.q_factor.logdet(),
        };
        logits.push(logit);
    }
    stable_softmax(&logits)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Bregman divergence generated by `F(z) = zᵀ Q⁻¹ z`:
/// `F(z) - F(z') - ∇F(z')ᵀ (z - z')` with `∇F(z') = 2 Q⁻¹ z'`.
///
/// Algebraically equal to the squared Mahalanobis distance; evaluated here
/// term by term so the two can be checked against each other.
pub fn bregman_divergence(f: &SpdFactor, z: &[f64], z_prime: &[f64]) -> Result<f64> {
    if z.len() != z_prime.len() {
        return Err(Error::DimensionMismatch {
            expected: z.len(),
            got: z_prime.len(),
        });
    }
    let f_z = f.quad_form(z)?;
    let f_zp = f.quad_form(z_prime)?;
    let grad = f.solve(z_prime)?;
    let inner: f64 = grad
        .iter()
        .zip(z.iter().zip(z_prime))
        .map(|(g, (a, b))| 2.0 * g * (a - b))
        .sum();
    Ok(f_z - f_zp - inner)
}
