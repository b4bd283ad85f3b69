//! Seeded episodic task sampling.
//!
//! Episode `i` of a stream depends only on `(dataset, config, i)`: its RNG is
//! a ChaCha8 generator keyed by the config seed with the episode index as
//! the stream id, so episodes can be generated in any order or in parallel.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingDataset, EmbeddingRef, Episode, LabeledEmbedding, Task};
use crate::error::{Error, Result};

/// Independent RNG for episode `index` under `seed`.
pub fn episode_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Variable-way, variable-shot protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSamplerConfig {
    pub way_min: usize,
    pub way_max: usize,
    pub shot_min: usize,
    pub shot_max: usize,
    pub query_per_class: usize,
    pub support_cap: usize,
    pub seed: u64,
}

impl Default for VariableSamplerConfig {
    fn default() -> Self {
        VariableSamplerConfig {
            way_min: 5,
            way_max: 50,
            shot_min: 1,
            shot_max: 100,
            query_per_class: 10,
            support_cap: 500,
            seed: 0,
        }
    }
}

impl VariableSamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.way_min == 0 || self.way_min > self.way_max {
            return Err(Error::InvalidConfig("need 1 <= way_min <= way_max".into()));
        }
        if self.shot_min == 0 || self.shot_min > self.shot_max {
            return Err(Error::InvalidConfig("need 1 <= shot_min <= shot_max".into()));
        }
        if self.query_per_class == 0 || self.support_cap == 0 {
            return Err(Error::InvalidConfig(
                "query_per_class and support_cap must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Fixed `K`-way `L`-shot protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedSamplerConfig {
    pub way: usize,
    pub shot: usize,
    pub query_per_class: usize,
    pub seed: u64,
}

impl FixedSamplerConfig {
    pub fn new(way: usize, shot: usize) -> Self {
        FixedSamplerConfig {
            way,
            shot,
            query_per_class: 10,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.way < 2 {
            return Err(Error::InvalidConfig("fixed sampler needs way >= 2".into()));
        }
        if self.shot == 0 {
            return Err(Error::InvalidConfig("fixed sampler needs shot >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "lowercase")]
pub enum SamplerConfig {
    Variable(VariableSamplerConfig),
    Fixed(FixedSamplerConfig),
}

impl SamplerConfig {
    pub fn seed(&self) -> u64 {
        match self {
            SamplerConfig::Variable(c) => c.seed,
            SamplerConfig::Fixed(c) => c.seed,
        }
    }

    pub fn query_per_class(&self) -> usize {
        match self {
            SamplerConfig::Variable(c) => c.query_per_class,
            SamplerConfig::Fixed(c) => c.query_per_class,
        }
    }

    pub fn with_query_per_class(&self, q: usize) -> SamplerConfig {
        let mut out = self.clone();
        match &mut out {
            SamplerConfig::Variable(c) => c.query_per_class = q,
            SamplerConfig::Fixed(c) => c.query_per_class = q,
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SamplerConfig::Variable(c) => c.validate(),
            SamplerConfig::Fixed(c) => c.validate(),
        }
    }

    pub fn sample(&self, ds: &EmbeddingDataset, index: u64) -> Result<Episode> {
        match self {
            SamplerConfig::Variable(c) => sample_variable(ds, c, index),
            SamplerConfig::Fixed(c) => sample_fixed(ds, c, index),
        }
    }
}

/// Restartable iterator over the episodes of one sampler configuration.
pub struct EpisodeStream<'a> {
    config: SamplerConfig,
    dataset: &'a EmbeddingDataset,
    next: u64,
}

impl<'a> EpisodeStream<'a> {
    pub fn new(dataset: &'a EmbeddingDataset, config: SamplerConfig) -> Self {
        EpisodeStream {
            config,
            dataset,
            next: 0,
        }
    }

    pub fn episode(&self, index: u64) -> Result<Episode> {
        self.config.sample(self.dataset, index)
    }

    pub fn seek(&mut self, index: u64) {
        self.next = index;
    }
}

impl Iterator for EpisodeStream<'_> {
    type Item = Result<Episode>;

    fn next(&mut self) -> Option<Self::Item> {
        let out = self.episode(self.next);
        self.next += 1;
        Some(out)
    }
}

/// Per-class selection: rows used as support and as query.
struct ClassDraw {
    class: usize,
    support: Vec<usize>,
    query: Vec<usize>,
}

fn assemble(ds: &EmbeddingDataset, index: u64, draws: Vec<ClassDraw>) -> Result<Episode> {
    let mut support = Vec::new();
    let mut query = Vec::new();
    let mut truth = Vec::new();
    let mut support_refs = Vec::new();
    let mut query_refs = Vec::new();
    let mut class_names = Vec::with_capacity(draws.len());
    for (local, draw) in draws.iter().enumerate() {
        let rows = ds.class_rows(draw.class);
        class_names.push(ds.class_name(draw.class).to_string());
        for &r in &draw.support {
            support.push(LabeledEmbedding {
                z: rows[r].clone(),
                y: local,
            });
            support_refs.push(EmbeddingRef {
                class: draw.class,
                row: r,
            });
        }
        for &r in &draw.query {
            query.push(rows[r].clone());
            truth.push(local);
            query_refs.push(EmbeddingRef {
                class: draw.class,
                row: r,
            });
        }
    }
    let task = Task::new(support, query, draws.len())?;
    Episode::new(index, task, truth, class_names, support_refs, query_refs)
}

/// Scales shots down proportionally so their sum fits `cap`, keeping every
/// class at one shot or more.
pub fn fit_support_cap(shots: &mut [usize], cap: usize) -> Result<()> {
    if shots.len() > cap {
        return Err(Error::InvalidConfig(format!(
            "support cap {cap} is smaller than the way {}",
            shots.len()
        )));
    }
    let total: usize = shots.iter().sum();
    if total <= cap {
        return Ok(());
    }
    for s in shots.iter_mut() {
        *s = ((*s as u128 * cap as u128) / total as u128).max(1) as usize;
    }
    while shots.iter().sum::<usize>() > cap {
        // largest shot, lowest index on ties; some shot > 1 exists since len <= cap
        let mut big = 0;
        for (i, &s) in shots.iter().enumerate() {
            if s > shots[big] {
                big = i;
            }
        }
        shots[big] -= 1;
    }
    Ok(())
}

pub fn sample_variable(
    ds: &EmbeddingDataset,
    cfg: &VariableSamplerConfig,
    index: u64,
) -> Result<Episode> {
    cfg.validate()?;
    let n_classes = ds.n_classes();
    if n_classes < cfg.way_min {
        return Err(Error::InsufficientClasses {
            required: cfg.way_min,
            available: n_classes,
        });
    }
    if let Some((name, rows)) = ds.classes().find(|(_, rows)| rows.len() < 2) {
        return Err(Error::InsufficientExamples {
            class: name.to_string(),
            required: 2,
            available: rows.len(),
        });
    }

    let mut rng = episode_rng(cfg.seed, index);
    let way = rng.random_range(cfg.way_min..=cfg.way_max.min(n_classes));
    let classes = index::sample(&mut rng, n_classes, way).into_vec();

    let mut perms = Vec::with_capacity(way);
    let mut shots = Vec::with_capacity(way);
    let mut queries = Vec::with_capacity(way);
    for &class in &classes {
        let available = ds.class_rows(class).len();
        let mut perm: Vec<usize> = (0..available).collect();
        perm.shuffle(&mut rng);
        // query first: it only shrinks when the class is too small
        let q = cfg.query_per_class.min(available - 1);
        let remaining = available - q;
        let hi = cfg.shot_max.min(remaining);
        let lo = cfg.shot_min.min(hi);
        shots.push(rng.random_range(lo..=hi));
        queries.push(q);
        perms.push(perm);
    }
    fit_support_cap(&mut shots, cfg.support_cap)?;

    let draws = classes
        .iter()
        .zip(perms)
        .zip(shots.iter().zip(&queries))
        .map(|((&class, perm), (&shot, &q))| ClassDraw {
            class,
            query: perm[..q].to_vec(),
            support: perm[q..q + shot].to_vec(),
        })
        .collect();
    assemble(ds, index, draws)
}

pub fn sample_fixed(ds: &EmbeddingDataset, cfg: &FixedSamplerConfig, index: u64) -> Result<Episode> {
    cfg.validate()?;
    let n_classes = ds.n_classes();
    if n_classes < cfg.way {
        return Err(Error::InsufficientClasses {
            required: cfg.way,
            available: n_classes,
        });
    }
    let need = cfg.shot + cfg.query_per_class;
    if let Some((name, rows)) = ds.classes().find(|(_, rows)| rows.len() < need) {
        return Err(Error::InsufficientExamples {
            class: name.to_string(),
            required: need,
            available: rows.len(),
        });
    }

    let mut rng = episode_rng(cfg.seed, index);
    let classes = index::sample(&mut rng, n_classes, cfg.way).into_vec();
    let draws = classes
        .into_iter()
        .map(|class| {
            let rows = index::sample(&mut rng, ds.class_rows(class).len(), need).into_vec();
            ClassDraw {
                class,
                support: rows[..cfg.shot].to_vec(),
                query: rows[cfg.shot..].to_vec(),
            }
        })
        .collect();
    assemble(ds, index, draws)
}
