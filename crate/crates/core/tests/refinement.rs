mod common;

use common::*;
use fewshot_transduct::classification::{argmax, classify, AssignmentRule};
use fewshot_transduct::numerics::Vector;
use fewshot_transduct::{estimate_unweighted, refine, Error, LabeledEmbedding, RefineConfig, Task};
use proptest::prelude::*;
use rand::Rng;

struct OracleTrace {
    iterations: usize,
    converged: bool,
    labels: Vec<Vec<usize>>,
    probs: Vec<Vec<f64>>,
}

/// Straight-line soft k-means over support plus query, built on the
/// nalgebra oracles.
fn oracle_refine(task: &Task, min_steps: usize, max_steps: usize, gmm: bool, beta: f64) -> OracleTrace {
    let way = task.way();
    let mut points: Vec<Vec<f64>> = task.support().iter().map(|s| s.z.to_vec()).collect();
    points.extend(task.query().iter().map(|z| z.to_vec()));
    let support_w: Vec<Vec<f64>> = task
        .support()
        .iter()
        .map(|s| (0..way).map(|k| f64::from(u8::from(k == s.y))).collect())
        .collect();

    let est = oracle_unweighted(task, beta);
    let mut probs: Vec<Vec<f64>> = task.query().iter().map(|z| oracle_classify(&est, z, gmm)).collect();
    let mut labels = vec![probs.iter().map(|p| argmax(p)).collect::<Vec<_>>()];
    let mut t = 1;
    let mut converged = false;
    while t < max_steps && task.n_query() > 0 {
        let mut w = support_w.clone();
        w.extend(probs.iter().cloned());
        let est = oracle_weighted(&points, &w, beta);
        probs = task.query().iter().map(|z| oracle_classify(&est, z, gmm)).collect();
        let next: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
        t += 1;
        let same = labels.last() == Some(&next);
        labels.push(next);
        if same && t >= min_steps {
            converged = t < max_steps;
            break;
        }
    }
    OracleTrace {
        iterations: t,
        converged,
        labels,
        probs,
    }
}

#[test]
fn refine_matches_second_implementation() {
    let mut r = rng(31);
    for case in 0..100 {
        let d = r.random_range(1..=6);
        let way = r.random_range(2..=5);
        let m = r.random_range(0..15);
        let task = random_task(&mut r, d, way, 3, m);
        let min = r.random_range(0..=4);
        let max = r.random_range(min.max(1)..=6);
        let gmm = case % 2 == 1;
        let rule = if gmm {
            AssignmentRule::gmm()
        } else {
            AssignmentRule::MahalanobisSoftmax
        };
        let cfg = RefineConfig {
            min_steps: min,
            max_steps: max,
            rule,
            beta: 1.0,
        };
        let trace = refine(&task, &cfg).unwrap();
        let o = oracle_refine(&task, min, max, gmm, 1.0);
        assert_eq!(trace.iterations_run, o.iterations, "case {case}");
        assert_eq!(trace.labels, o.labels, "case {case}");
        for (a, b) in trace.query_probabilities().iter().zip(&o.probs) {
            assert!(max_abs_vec(a, b) < 1e-8, "case {case}");
        }
        assert_eq!(trace.converged_early, o.converged, "case {case}");
    }
}

#[test]
fn baseline_equals_support_only_classifier() {
    let mut r = rng(32);
    for _ in 0..50 {
        let task = random_task(&mut r, 4, 3, 3, 8);
        let trace = refine(&task, &RefineConfig::baseline()).unwrap();
        assert_eq!(trace.iterations_run, 1);
        let (params, _) = estimate_unweighted(&task, 1.0).unwrap();
        for (z, row) in task.query().iter().zip(trace.query_probabilities()) {
            let p = classify(&AssignmentRule::MahalanobisSoftmax, &params, z).unwrap();
            assert!(max_abs_vec(&p, row) < 1e-12);
        }
    }
}

#[test]
fn empty_query_stops_after_one_iteration() {
    let mut r = rng(33);
    let task = random_task(&mut r, 3, 3, 2, 0);
    let trace = refine(&task, &RefineConfig::with_steps(3, 7)).unwrap();
    assert_eq!(trace.iterations_run, 1);
    assert!(trace.final_labels().is_empty());
}

#[test]
fn separated_blobs_are_recovered() {
    let support = vec![
        LabeledEmbedding::new(vec![-5.0, 0.0], 0),
        LabeledEmbedding::new(vec![5.0, 0.0], 1),
    ];
    let query: Vec<Vector> = [[-4.5, 0.3], [-5.2, -0.4], [4.8, 0.1], [5.3, -0.2]]
        .iter()
        .map(|p| Vector::from(p.to_vec()))
        .collect();
    let task = Task::new(support, query, 2).unwrap();
    let trace = refine(&task, &RefineConfig::default()).unwrap();
    assert_eq!(trace.final_labels(), &[0, 0, 1, 1]);
    assert_eq!(trace.iterations_run, 2);
    assert!(trace.converged_early);
}

#[test]
fn rejects_invalid_step_limits() {
    let mut r = rng(34);
    let task = random_task(&mut r, 2, 2, 2, 2);
    for (min, max) in [(3, 2), (0, 0)] {
        let err = refine(&task, &RefineConfig::with_steps(min, max)).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)), "{err:?}");
    }
    let cfg = RefineConfig {
        beta: -1.0,
        ..RefineConfig::default()
    };
    assert!(refine(&task, &cfg).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn iteration_bounds_hold(seed: u64, min in 0usize..5, extra in 0usize..4) {
        let mut r = rng(seed);
        let task = random_task(&mut r, 3, 3, 3, 6);
        let max = min.max(1) + extra;
        let trace = refine(&task, &RefineConfig::with_steps(min, max)).unwrap();
        prop_assert!(trace.iterations_run >= min.max(1));
        prop_assert!(trace.iterations_run <= max);
        prop_assert_eq!(trace.labels.len(), trace.iterations_run);
        if min == max {
            prop_assert_eq!(trace.iterations_run, max);
        }
    }

    #[test]
    fn support_rows_stay_one_hot(seed: u64) {
        let mut r = rng(seed);
        let task = random_task(&mut r, 3, 4, 3, 5);
        let trace = refine(&task, &RefineConfig::default()).unwrap();
        for (row, s) in trace.final_resp.rows().iter().zip(task.support()) {
            for (k, v) in row.iter().enumerate() {
                prop_assert_eq!(*v, f64::from(u8::from(k == s.y)));
            }
        }
        for row in trace.query_probabilities() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn refine_is_deterministic(seed: u64) {
        let mut r = rng(seed);
        let task = random_task(&mut r, 4, 3, 2, 7);
        let a = refine(&task, &RefineConfig::default()).unwrap();
        let b = refine(&task, &RefineConfig::default()).unwrap();
        prop_assert_eq!(&a.labels, &b.labels);
        prop_assert_eq!(a.query_probabilities(), b.query_probabilities());
    }
}
