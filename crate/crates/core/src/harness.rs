//! Episodic evaluation and paired ablation sweeps.
//!
//! Episodes are evaluated independently on a worker pool and written into
//! index-addressed slots; all statistics are reduced afterwards in episode
//! order, so reports do not depend on the pool width.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classification::AssignmentRule;
use crate::data::{EmbeddingDataset, Episode};
use crate::error::{Error, Result};
use crate::refinement::{refine, RefineConfig};
use crate::sampler::SamplerConfig;

/// Shots `1..=DEFAULT_SHOT_BINS` get their own recall bin, larger shots share one.
pub const DEFAULT_SHOT_BINS: usize = 10;

/// Repeats per ablation cell.
pub const DEFAULT_REPEATS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallBin {
    /// `"1"` … `"10"`, or `">10"`.
    pub bin: String,
    /// Mean per-class recall over all (episode, class) pairs in the bin.
    pub recall_mean: f64,
    /// Number of (episode, class) pairs.
    pub count: usize,
    /// Query predictions made for those classes.
    pub queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfigEcho {
    pub sampler: SamplerConfig,
    pub refine: RefineConfig,
    pub episodes: usize,
    pub shot_bins: usize,
}

/// Result of evaluating one method configuration over a stream of episodes.
/// `ci95` is computed over per-episode accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub per_episode_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub ci95: f64,
    pub recall_bins: Vec<RecallBin>,
    pub iteration_histogram: BTreeMap<usize, usize>,
    pub converged_early_rate: f64,
    pub method: String,
    pub config: EvalConfigEcho,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub episodes: usize,
    /// Worker threads; 0 uses all available cores.
    pub parallelism: usize,
    pub shot_bins: usize,
}

impl EvalOptions {
    pub fn new(episodes: usize) -> Self {
        EvalOptions {
            episodes,
            parallelism: 1,
            shot_bins: DEFAULT_SHOT_BINS,
        }
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism;
        self
    }
}

/// Per-episode outcome of a refinement run.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub accuracy: f64,
    pub iterations: usize,
    pub converged_early: bool,
    /// `(support shot, correct, query count)` per task-local class.
    pub class_recall: Vec<(usize, usize, usize)>,
}

pub fn method_label(cfg: &RefineConfig) -> String {
    let kind = if cfg.max_steps == 1 {
        "support-only"
    } else {
        "transductive"
    };
    format!(
        "{kind} rule={} min={} max={} beta={}",
        cfg.rule, cfg.min_steps, cfg.max_steps, cfg.beta
    )
}

/// Sample mean and 95% half-width `1.96 s / √N` (sample standard deviation).
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * var.sqrt() / (n as f64).sqrt())
}

pub fn evaluate_episode(episode: &Episode, cfg: &RefineConfig) -> Result<EpisodeOutcome> {
    let trace = refine(&episode.task, cfg)?;
    let labels = trace.final_labels();
    let way = episode.task.way();
    let mut correct = vec![0usize; way];
    let mut totals = vec![0usize; way];
    for (&pred, &truth) in labels.iter().zip(&episode.truth) {
        totals[truth] += 1;
        if pred == truth {
            correct[truth] += 1;
        }
    }
    let m = labels.len();
    let hits: usize = correct.iter().sum();
    let shots = episode.task.class_counts();
    let class_recall = (0..way).map(|k| (shots[k], correct[k], totals[k])).collect();
    Ok(EpisodeOutcome {
        accuracy: if m == 0 { 0.0 } else { hits as f64 / m as f64 },
        iterations: trace.iterations_run,
        converged_early: trace.converged_early,
        class_recall,
    })
}

fn run_pool<T: Send>(parallelism: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(job))
}

pub fn evaluate(
    ds: &EmbeddingDataset,
    sampler: &SamplerConfig,
    refine_cfg: &RefineConfig,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if opts.episodes == 0 {
        return Err(Error::InvalidConfig("need at least one episode".into()));
    }
    if opts.shot_bins == 0 {
        return Err(Error::InvalidConfig("need at least one shot bin".into()));
    }
    if sampler.query_per_class() == 0 {
        return Err(Error::InvalidConfig(
            "evaluation needs query_per_class >= 1".into(),
        ));
    }
    sampler.validate()?;
    refine_cfg.validate()?;

    let slots: Vec<Result<EpisodeOutcome>> = run_pool(opts.parallelism, || {
        (0..opts.episodes as u64)
            .into_par_iter()
            .map(|i| {
                sampler
                    .sample(ds, i)
                    .and_then(|ep| evaluate_episode(&ep, refine_cfg))
                    .map_err(|e| Error::Episode {
                        index: i,
                        source: Box::new(e),
                    })
            })
            .collect()
    })?;
    let outcomes = slots.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(reduce(outcomes, sampler, refine_cfg, opts))
}

fn reduce(
    outcomes: Vec<EpisodeOutcome>,
    sampler: &SamplerConfig,
    refine_cfg: &RefineConfig,
    opts: &EvalOptions,
) -> EvalReport {
    let per_episode_accuracy: Vec<f64> = outcomes.iter().map(|o| o.accuracy).collect();
    let (mean_accuracy, ci95) = mean_ci95(&per_episode_accuracy);

    let mut iteration_histogram = BTreeMap::new();
    let mut early = 0usize;
    // bin index -> (recall sum, pairs, queries); last index is the overflow bin
    let mut bins = vec![(0.0f64, 0usize, 0usize); opts.shot_bins + 1];
    for o in &outcomes {
        *iteration_histogram.entry(o.iterations).or_insert(0) += 1;
        early += usize::from(o.converged_early);
        for &(shot, correct, total) in &o.class_recall {
            if total == 0 {
                continue;
            }
            let b = shot.clamp(1, opts.shot_bins + 1) - 1;
            bins[b].0 += correct as f64 / total as f64;
            bins[b].1 += 1;
            bins[b].2 += total;
        }
    }
    let recall_bins = bins
        .into_iter()
        .enumerate()
        .filter(|(_, (_, count, _))| *count > 0)
        .map(|(b, (sum, count, queries))| RecallBin {
            bin: if b < opts.shot_bins {
                (b + 1).to_string()
            } else {
                format!(">{}", opts.shot_bins)
            },
            recall_mean: sum / count as f64,
            count,
            queries,
        })
        .collect();

    EvalReport {
        episodes: outcomes.len(),
        per_episode_accuracy,
        mean_accuracy,
        ci95,
        recall_bins,
        iteration_histogram,
        converged_early_rate: early as f64 / outcomes.len() as f64,
        method: method_label(refine_cfg),
        config: EvalConfigEcho {
            sampler: sampler.clone(),
            refine: refine_cfg.clone(),
            episodes: opts.episodes,
            shot_bins: opts.shot_bins,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxes {
    pub min_steps: Vec<usize>,
    pub max_steps: Vec<usize>,
    pub rules: Vec<AssignmentRule>,
    pub query_per_class: Vec<usize>,
}

impl GridAxes {
    /// Number of axis combinations, including `min > max` ones that are skipped.
    pub fn combinations(&self) -> usize {
        self.min_steps.len() * self.max_steps.len() * self.rules.len() * self.query_per_class.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub sampler: SamplerConfig,
    /// Source of `beta`; steps and rule come from the axes.
    pub base: RefineConfig,
    pub axes: GridAxes,
    pub episodes: usize,
    pub repeats: usize,
    pub parallelism: usize,
    pub shot_bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub min_steps: usize,
    pub max_steps: usize,
    pub rule: AssignmentRule,
    pub query_per_class: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub axes: GridAxes,
    pub episodes: usize,
    pub repeats: usize,
    /// Axis combinations with `min_steps > max_steps`, not evaluated.
    pub skipped: usize,
    pub cells: Vec<GridCell>,
}

/// Evaluates every valid axis combination on the same episode indices.
///
/// Each cell pools `repeats` consecutive blocks of `episodes` episodes, so
/// its mean accuracy is the average of the per-repeat means.
pub fn run_ablation(ds: &EmbeddingDataset, spec: &GridSpec) -> Result<AblationGrid> {
    if spec.repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be at least 1".into()));
    }
    let opts = EvalOptions {
        episodes: spec.episodes * spec.repeats,
        parallelism: spec.parallelism,
        shot_bins: spec.shot_bins,
    };
    let mut cells = Vec::new();
    let mut skipped = 0;
    for &min_steps in &spec.axes.min_steps {
        for &max_steps in &spec.axes.max_steps {
            for rule in &spec.axes.rules {
                for &q in &spec.axes.query_per_class {
                    if min_steps > max_steps {
                        skipped += 1;
                        continue;
                    }
                    let refine_cfg = RefineConfig {
                        min_steps,
                        max_steps,
                        rule: rule.clone(),
                        beta: spec.base.beta,
                    };
                    let sampler = spec.sampler.with_query_per_class(q);
                    let report = evaluate(ds, &sampler, &refine_cfg, &opts)?;
                    cells.push(GridCell {
                        min_steps,
                        max_steps,
                        rule: rule.clone(),
                        query_per_class: q,
                        report,
                    });
                }
            }
        }
    }
    Ok(AblationGrid {
        axes: spec.axes.clone(),
        episodes: spec.episodes,
        repeats: spec.repeats,
        skipped,
        cells,
    })
}
