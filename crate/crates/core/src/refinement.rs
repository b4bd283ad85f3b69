//! Transductive soft k-means refinement of class parameters.
//!
//! Iteration 1 estimates from the support set alone and assigns the query
//! set, which is exactly the non-transductive Mahalanobis classifier. Every
//! later iteration re-estimates from support plus soft-labelled query rows
//! and re-assigns the query rows. Support rows stay one-hot throughout.

use serde::{Deserialize, Serialize};

use crate::classification::{argmax, classify, AssignmentRule};
use crate::data::Task;
use crate::error::{Error, Result};
use crate::estimation::{
    estimate_unweighted, estimate_weighted, ClassParams, Responsibilities, DEFAULT_BETA,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    /// Label stability is not checked before this many iterations.
    pub min_steps: usize,
    pub max_steps: usize,
    pub rule: AssignmentRule,
    pub beta: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            min_steps: 2,
            max_steps: 4,
            rule: AssignmentRule::MahalanobisSoftmax,
            beta: DEFAULT_BETA,
        }
    }
}

impl RefineConfig {
    /// One support-only pass, no refinement.
    pub fn baseline() -> Self {
        RefineConfig {
            min_steps: 0,
            max_steps: 1,
            ..RefineConfig::default()
        }
    }

    pub fn with_steps(min_steps: usize, max_steps: usize) -> Self {
        RefineConfig {
            min_steps,
            max_steps,
            ..RefineConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be at least 1".into()));
        }
        if self.min_steps > self.max_steps {
            return Err(Error::InvalidConfig(format!(
                "min_steps {} exceeds max_steps {}",
                self.min_steps, self.max_steps
            )));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidConfig("beta must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineTrace {
    pub iterations_run: usize,
    /// Query argmax labels after each iteration.
    pub labels: Vec<Vec<usize>>,
    /// Stopped on label stability before reaching `max_steps`.
    pub converged_early: bool,
    pub final_resp: Responsibilities,
    pub final_params: Vec<ClassParams>,
}

impl RefineTrace {
    pub fn query_probabilities(&self) -> &[Vec<f64>] {
        self.final_resp.query_rows()
    }

    pub fn final_labels(&self) -> &[usize] {
        self.labels.last().map_or(&[], Vec::as_slice)
    }
}

fn assign(task: &Task, params: &[ClassParams], rule: &AssignmentRule) -> Result<Responsibilities> {
    let rows = task
        .query()
        .iter()
        .map(|z| classify(rule, params, z))
        .collect::<Result<Vec<_>>>()?;
    Responsibilities::from_query_rows(task, rows)
}

fn query_argmax(resp: &Responsibilities) -> Vec<usize> {
    resp.query_rows().iter().map(|row| argmax(row)).collect()
}

/// Runs the refinement loop.
///
/// Stops after iteration `t` when `t >= min_steps` and no query argmax
/// changed since iteration `t - 1`, or when `t == max_steps`. A collapsed
/// soft class count ends the loop and keeps the previous iteration. A task
/// without query examples stops after the first iteration.
pub fn refine(task: &Task, cfg: &RefineConfig) -> Result<RefineTrace> {
    cfg.validate()?;
    let (mut params, _) = estimate_unweighted(task, cfg.beta)?;
    let mut resp = assign(task, &params, &cfg.rule)?;
    let mut labels = vec![query_argmax(&resp)];
    let mut iterations = 1;
    let mut converged_early = false;

    while iterations < cfg.max_steps && task.n_query() > 0 {
        let next_params = match estimate_weighted(task, &resp, cfg.beta) {
            Ok((p, _)) => p,
            Err(Error::DegenerateClass { .. }) => break,
            Err(e) => return Err(e),
        };
        let next_resp = assign(task, &next_params, &cfg.rule)?;
        let next_labels = query_argmax(&next_resp);
        iterations += 1;
        let unchanged = labels.last() == Some(&next_labels);
        params = next_params;
        resp = next_resp;
        labels.push(next_labels);
        if unchanged && iterations >= cfg.min_steps && iterations < cfg.max_steps {
            converged_early = true;
            break;
        }
    }

    Ok(RefineTrace {
        iterations_run: iterations,
        labels,
        converged_early,
        final_resp: resp,
        final_params: params,
    })
}

/// Final query labels of [`refine`].
pub fn classify_task(task: &Task, cfg: &RefineConfig) -> Result<Vec<usize>> {
    refine(task, cfg).map(|t| t.final_labels().to_vec())
}
