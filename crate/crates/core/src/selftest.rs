//! Fast invariant checks behind the `selftest` subcommand.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::classification::{argmax, bregman_divergence, classify, AssignmentRule};
use crate::data::{generate_synthetic, SyntheticSpec};
use crate::error::Result;
use crate::estimation::{estimate_unweighted, estimate_weighted, Responsibilities};
use crate::numerics::{mahalanobis_sq, spd_factorize, stable_softmax, Matrix, DEFAULT_JITTER};
use crate::refinement::{refine, RefineConfig};
use crate::sampler::{sample_fixed, sample_variable, FixedSamplerConfig, VariableSamplerConfig};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> Matrix {
    let a = Matrix::from_row_major(d, normal_vec(rng, d * d)).expect("square");
    let mut q = a.matmul(&a.transpose());
    q.add_diagonal(0.5);
    q
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    match f() {
        Ok((passed, detail)) => CheckResult {
            name,
            passed,
            detail,
        },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

pub fn run_selftest(seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = SyntheticSpec {
        n_classes: 12,
        dim: 6,
        mean_scale: 1.5,
        shared_scale: 1.0,
        perturbation: 0.2,
        per_class: 40,
        seed,
    };
    let ds = generate_synthetic(&spec);
    let mut out = Vec::new();

    out.push(check("softmax shift invariance", || {
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let x = normal_vec(&mut rng, 7);
            let c: f64 = rng.random_range(-500.0..500.0);
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let a = stable_softmax(&x)?;
            let b = stable_softmax(&shifted)?;
            for (p, q) in a.iter().zip(&b) {
                worst = worst.max((p - q).abs());
            }
        }
        Ok((worst <= 1e-12, format!("max deviation {worst:e}")))
    }));

    out.push(check("bregman equals mahalanobis", || {
        let mut worst: f64 = 0.0;
        for _ in 0..500 {
            let d = rng.random_range(1..=8);
            let f = spd_factorize(&random_spd(&mut rng, d), &DEFAULT_JITTER)?;
            let z = normal_vec(&mut rng, d);
            let zp = normal_vec(&mut rng, d);
            let gap = (bregman_divergence(&f, &z, &zp)? - mahalanobis_sq(&f, &z, &zp)?).abs();
            worst = worst.max(gap);
        }
        Ok((worst <= 1e-9, format!("max gap {worst:e}")))
    }));

    out.push(check("single pass equals support-only classifier", || {
        let ds = ds.as_ref().map_err(|e| crate::Error::InvalidSpec(e.to_string()))?;
        let cfg = FixedSamplerConfig {
            seed,
            ..FixedSamplerConfig::new(5, 2)
        };
        let mut worst: f64 = 0.0;
        for i in 0..50 {
            let ep = sample_fixed(ds, &cfg, i)?;
            let trace = refine(&ep.task, &RefineConfig::baseline())?;
            let (params, _) = estimate_unweighted(&ep.task, 1.0)?;
            for (z, row) in ep.task.query().iter().zip(trace.query_probabilities()) {
                let direct = classify(&AssignmentRule::MahalanobisSoftmax, &params, z)?;
                for (a, b) in direct.iter().zip(row) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        Ok((worst <= 1e-12, format!("max deviation {worst:e}")))
    }));

    out.push(check("empty query weighted equals unweighted", || {
        let ds = ds.as_ref().map_err(|e| crate::Error::InvalidSpec(e.to_string()))?;
        let cfg = FixedSamplerConfig {
            seed,
            query_per_class: 0,
            ..FixedSamplerConfig::new(4, 3)
        };
        let mut equal = true;
        for i in 0..50 {
            let task = sample_fixed(ds, &cfg, i)?.task;
            let resp = Responsibilities::from_query_rows(&task, vec![])?;
            let (pw, sw) = estimate_weighted(&task, &resp, 1.0)?;
            let (pu, su) = estimate_unweighted(&task, 1.0)?;
            equal &= pw == pu && sw == su;
        }
        Ok((equal, "50 episodes".into()))
    }));

    out.push(check("gmm argmax reduces to softmax argmax", || {
        let ds = ds.as_ref().map_err(|e| crate::Error::InvalidSpec(e.to_string()))?;
        let cfg = FixedSamplerConfig {
            seed,
            ..FixedSamplerConfig::new(5, 3)
        };
        let mut disagreements = 0;
        let mut total = 0;
        for i in 0..20 {
            let ep = sample_fixed(ds, &cfg, i)?;
            let (mut params, _) = estimate_unweighted(&ep.task, 1.0)?;
            let shared = params[0].clone();
            for p in params.iter_mut().skip(1) {
                p.q = shared.q.clone();
                p.q_factor = shared.q_factor.clone();
            }
            for _ in 0..25 {
                let z = normal_vec(&mut rng, ep.task.dim());
                let a = argmax(&classify(&AssignmentRule::gmm(), &params, &z)?);
                let b = argmax(&classify(&AssignmentRule::MahalanobisSoftmax, &params, &z)?);
                disagreements += usize::from(a != b);
                total += 1;
            }
        }
        Ok((disagreements == 0, format!("{disagreements}/{total} disagreements")))
    }));

    out.push(check("sampler determinism and disjointness", || {
        let ds = ds.as_ref().map_err(|e| crate::Error::InvalidSpec(e.to_string()))?;
        let cfg = VariableSamplerConfig {
            seed,
            ..VariableSamplerConfig::default()
        };
        let mut ok = true;
        for i in 0..100 {
            let ep = sample_variable(ds, &cfg, i)?;
            ok &= ep == sample_variable(ds, &cfg, i)?;
            let support: HashSet<_> = ep.support_refs.iter().collect();
            ok &= ep.query_refs.iter().all(|r| !support.contains(r));
            ok &= ep.task.n_support() <= cfg.support_cap;
        }
        Ok((ok, "100 episodes".into()))
    }));

    out
}
