//! Transductive few-shot classification with class-adaptive Mahalanobis
//! metrics.
//!
//! Class means and shrinkage-regularized covariances are estimated from a
//! labelled support set, then refined by soft k-means over the unlabelled
//! query set. The crate also contains an episodic task sampler, an
//! evaluation harness for paired ablations, and the `fewshot` CLI.

pub mod classification;
pub mod data;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod numerics;
pub mod refinement;
pub mod report;
pub mod sampler;
pub mod selftest;

pub use classification::{argmax, bregman_divergence, classify, AssignmentRule, Prior};
pub use data::{
    generate_synthetic, load_dataset, write_dataset, DatasetFormat, EmbeddingDataset, Episode,
    LabeledEmbedding, SyntheticSpec, Task,
};
pub use error::{Error, Result};
pub use estimation::{
    estimate_unweighted, estimate_weighted, pool_task_embedding, ClassParams, Responsibilities,
    TaskEmbedding, TaskStats,
};
pub use harness::{evaluate, run_ablation, AblationGrid, EvalOptions, EvalReport, GridAxes, GridSpec};
pub use numerics::{mahalanobis_sq, spd_factorize, stable_softmax, Matrix, SpdFactor, Vector};
pub use refinement::{classify_task, refine, RefineConfig, RefineTrace};
pub use report::{emit_report, ReportFormat, ReportRef};
pub use sampler::{
    sample_fixed, sample_variable, EpisodeStream, FixedSamplerConfig, SamplerConfig,
    VariableSamplerConfig,
};
