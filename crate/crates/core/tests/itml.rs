use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tmc_adapt::itml::{
    build_constraints, fit_itml, logdet_divergence, mahalanobis_distance, match_source_to_target,
    slack_divergence, ConstraintConfig, ConstraintSet, ItmlConfig, MetricMatrix, PairKind,
};
use tmc_adapt::FeatureMatrix;

mod common;

use common::itml::*;

#[test]
fn distance_examples() {
    let id = MetricMatrix::identity(2);
    assert_eq!(mahalanobis_distance(&id, &[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
    assert_eq!(mahalanobis_distance(&id, &[3.0, 4.0], &[0.0, 0.0]).unwrap(), 25.0);
    let diag = MetricMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0])).unwrap();
    assert_eq!(mahalanobis_distance(&diag, &[2.0, 3.0], &[1.0, 2.0]).unwrap(), 3.0);
}

#[test]
fn divergence_examples() {
    let a = MetricMatrix::new(DMatrix::from_element(1, 1, 2.0)).unwrap();
    let a0 = MetricMatrix::identity(1);
    let d = logdet_divergence(&a, &a0).unwrap();
    assert!((d - (2.0 - 2f64.ln() - 1.0)).abs() < 1e-12);
    assert!((d - 0.30685).abs() < 1e-5);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = MetricMatrix::new(random_spd(&mut rng, 4)).unwrap();
    assert!(logdet_divergence(&m, &m).unwrap().abs() < 1e-12);
}

#[test]
fn divergence_is_invariant_under_congruence() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let n = rng.gen_range(1..6);
        let a = random_spd(&mut rng, n);
        let a0 = random_spd(&mut rng, n);
        let s = loop {
            let s = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
            if s.determinant().abs() > 0.1 {
                break s;
            }
        };
        let sym = |m: DMatrix<f64>| (&m + m.transpose()) * 0.5;
        let ta = sym(s.transpose() * &a * &s);
        let ta0 = sym(s.transpose() * &a0 * &s);
        let lhs = logdet_divergence(&MetricMatrix::new(ta.clone()).unwrap(), &MetricMatrix::new(ta0.clone()).unwrap()).unwrap();
        let rhs = logdet_divergence(&MetricMatrix::new(a.clone()).unwrap(), &MetricMatrix::new(a0.clone()).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-8 * rhs.max(1.0), "{lhs} vs {rhs}");
        assert!((rhs - divergence_oracle(&a, &a0)).abs() < 1e-8 * rhs.max(1.0));
        assert!((lhs - divergence_oracle(&ta, &ta0)).abs() < 1e-8 * rhs.max(1.0));
    }
}

#[test]
fn identical_labels_form_a_similar_pair() {
    let x = FeatureMatrix::from_rows(2, &[[0.0, 1.0], [1.0, 3.0]]).unwrap();
    let c = build_constraints(&x, &[5.0, 5.0], &MetricMatrix::identity(2), &ConstraintConfig::default(), 0).unwrap();
    assert_eq!(c.similar, vec![(0, 1)]);
    assert!(c.dissimilar.is_empty());
    assert!(c.upper < c.lower);
}

#[test]
fn distant_labels_form_a_dissimilar_pair() {
    let x = FeatureMatrix::from_rows(2, &[[0.0, 1.0], [1.0, 3.0]]).unwrap();
    let c = build_constraints(&x, &[0.0, 100.0], &MetricMatrix::identity(2), &ConstraintConfig::default(), 0).unwrap();
    assert_eq!(c.dissimilar, vec![(0, 1)]);
    assert!(c.similar.is_empty());
}

#[test]
fn thresholds_match_full_sort_percentiles() {
    let (x, y) = labeled(4, 100, 3);
    let config = ConstraintConfig {
        candidate_pairs: 10_000,
        max_per_set: usize::MAX,
        ..ConstraintConfig::default()
    };
    let c = build_constraints(&x, &y, &MetricMatrix::identity(3), &config, 9).unwrap();
    let pct = |mut v: Vec<f64>, q: f64| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pos = q / 100.0 * (v.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    let mut dists = Vec::new();
    let mut label_diffs = Vec::new();
    for i in 0..100 {
        for j in i + 1..100 {
            dists.push(diff(&x, i, j).norm_squared());
            label_diffs.push((y[i] - y[j]).abs());
        }
    }
    assert!((c.upper - pct(dists.clone(), 5.0)).abs() < 1e-12);
    assert!((c.lower - pct(dists, 95.0)).abs() < 1e-12);
    let low = pct(label_diffs.clone(), 10.0);
    let high = pct(label_diffs.clone(), 90.0);
    assert_eq!(c.similar.len(), label_diffs.iter().filter(|d| **d <= low).count());
    assert_eq!(c.dissimilar.len(), label_diffs.iter().filter(|d| **d >= high).count());
    assert!(c.similar.iter().all(|&(i, j)| (y[i] - y[j]).abs() <= low));
    assert!(c.dissimilar.iter().all(|&(i, j)| (y[i] - y[j]).abs() >= high));
}

#[test]
fn constraint_sets_are_capped_and_disjoint() {
    let (x, y) = labeled(5, 120, 3);
    let c = build_constraints(&x, &y, &MetricMatrix::identity(3), &ConstraintConfig::default(), 1).unwrap();
    assert_eq!(c.similar.len(), 200);
    assert_eq!(c.dissimilar.len(), 200);
    assert!(c.similar.iter().all(|p| !c.dissimilar.contains(p)));
    assert!(c.validate(120).is_ok());
}

#[test]
fn empty_constraints_return_prior() {
    let (x, _) = labeled(6, 10, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a0 = MetricMatrix::new(random_spd(&mut rng, 3)).unwrap();
    let fit = fit_itml(&x, &ConstraintSet::empty(1.0, 2.0), &a0, &ItmlConfig::default()).unwrap();
    assert_eq!(fit.metric, a0);
    assert_eq!(fit.passes, 0);
}

#[test]
fn satisfied_constraint_leaves_metric_unchanged() {
    let x = FeatureMatrix::from_rows(1, &[[0.0], [0.01]]).unwrap();
    let constraints = ConstraintSet {
        similar: vec![(0, 1)],
        dissimilar: vec![],
        upper: 1.0,
        lower: 4.0,
    };
    let config = ItmlConfig {
        gamma_slack: 1000.0,
        max_passes: 1,
        ..ItmlConfig::default()
    };
    let fit = fit_itml(&x, &constraints, &MetricMatrix::identity(1), &config).unwrap();
    assert_eq!(fit.metric, MetricMatrix::identity(1));
    assert_eq!(fit.duals, vec![0.0]);
    assert_eq!(fit.slacks, vec![1.0]);
}

/// Step-by-step scalar run of the projection loop for one similar pair.
fn scalar_trace(gap: f64, u: f64, gamma: f64, tol: f64, max_passes: usize) -> (f64, f64, f64, usize) {
    let (mut a, mut xi, mut lambda) = (1.0_f64, u, 0.0_f64);
    let v2 = gap * gap;
    for pass in 1..=max_passes {
        let p = a * v2;
        let alpha = lambda.min(0.5 * (1.0 / p - gamma / xi));
        let beta = alpha / (1.0 - alpha * p);
        xi = gamma * xi / (gamma + alpha * xi);
        lambda -= alpha;
        a += beta * a * v2 * a;
        if alpha.abs() < tol {
            return (a, xi, lambda, pass);
        }
    }
    (a, xi, lambda, max_passes)
}

#[test]
fn scalar_violated_similar_pair_follows_hand_trace() {
    let x = FeatureMatrix::from_rows(1, &[[0.0], [2.0]]).unwrap();
    let constraints = ConstraintSet {
        similar: vec![(0, 1)],
        dissimilar: vec![],
        upper: 1.0,
        lower: 9.0,
    };
    for (gamma, passes) in [(1e4, 1), (1e4, 3), (1e4, 500)] {
        let config = ItmlConfig {
            gamma_slack: gamma,
            max_passes: passes,
            tol: 1e-12,
            check_every_update: true,
        };
        let fit = fit_itml(&x, &constraints, &MetricMatrix::identity(1), &config).unwrap();
        let (a, xi, lambda, n) = scalar_trace(2.0, 1.0, gamma, 1e-12, passes);
        assert_eq!(fit.passes, n);
        assert!((fit.metric.matrix()[(0, 0)] - a).abs() < 1e-12 * a.max(1e-300));
        assert!((fit.slacks[0] - xi).abs() < 1e-12);
        assert!((fit.duals[0] - lambda).abs() < 1e-9 * lambda.abs().max(1.0));
        let d = mahalanobis_distance(&fit.metric, &[0.0], &[2.0]).unwrap();
        if fit.converged {
            assert!(d <= 1.0 * (1.0 + 1e-6));
        }
    }
}

#[test]
fn single_update_matches_explicit_rank_one_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..30 {
        let x = gaussian_matrix(&mut rng, 2, 3);
        let a0 = random_spd(&mut rng, 3);
        let v = diff(&x, 0, 1);
        let p = (v.transpose() * &a0 * &v)[(0, 0)];
        let similar = case % 2 == 0;
        // thresholds on either side of p so the constraint is violated
        let (upper, lower) = if similar { (0.3 * p, 4.0 * p) } else { (0.1 * p, 2.5 * p) };
        let constraints = ConstraintSet {
            similar: if similar { vec![(0, 1)] } else { vec![] },
            dissimilar: if similar { vec![] } else { vec![(0, 1)] },
            upper,
            lower,
        };
        let gamma = 1.0;
        let config = ItmlConfig {
            gamma_slack: gamma,
            max_passes: 1,
            ..ItmlConfig::default()
        };
        let fit = fit_itml(&x, &constraints, &MetricMatrix::new(a0.clone()).unwrap(), &config).unwrap();

        let (delta, xi) = if similar { (1.0, upper) } else { (-1.0, lower) };
        let alpha = 0.0_f64.min(delta / 2.0 * (1.0 / p - gamma / xi));
        let beta = delta * alpha / (1.0 - delta * alpha * p);
        let expected = &a0 + (&a0 * &v * v.transpose() * &a0) * beta;
        let err = (fit.metric.matrix() - &expected).amax();
        assert!(err < 1e-10 * expected.amax(), "case {case}: {err:e}");
        assert!((fit.slacks[0] - gamma * xi / (gamma + delta * alpha * xi)).abs() < 1e-12 * xi);
    }
}

#[test]
fn converged_metric_respects_slack_bounds() {
    for seed in 0..20 {
        let (x, c) = random_instance(seed);
        let config = ItmlConfig {
            max_passes: 10_000,
            tol: 1e-9,
            check_every_update: true,
            ..ItmlConfig::default()
        };
        let fit = fit_itml(&x, &c, &MetricMatrix::identity(x.n_cols()), &config).unwrap();
        assert!(fit.converged, "seed {seed}");
        let a = fit.metric.matrix();
        assert!((a - a.transpose()).amax() < 1e-10);
        assert!(a.clone().symmetric_eigen().eigenvalues.min() > 0.0);
        for (k, ((i, j), kind)) in c.iter().enumerate() {
            let d = mahalanobis_distance(&fit.metric, x.row(i), x.row(j)).unwrap();
            match kind {
                PairKind::Similar => assert!(d <= fit.slacks[k] * (1.0 + 1e-3), "seed {seed} S{k}: {d} > {}", fit.slacks[k]),
                PairKind::Dissimilar => assert!(d >= fit.slacks[k] * (1.0 - 1e-3), "seed {seed} D{k}: {d} < {}", fit.slacks[k]),
            }
        }
        assert!(logdet_divergence(&fit.metric, &MetricMatrix::identity(x.n_cols())).unwrap().is_finite());
    }
}

#[test]
fn trace_objective_matches_recomputation() {
    let (x, c) = random_instance(3);
    let fit = fit_itml(&x, &c, &MetricMatrix::identity(x.n_cols()), &ItmlConfig::default()).unwrap();
    let last = fit.trace.last().unwrap();
    let xi0: Vec<f64> = c
        .iter()
        .map(|(_, kind)| if kind == PairKind::Similar { c.upper } else { c.lower })
        .collect();
    let expected = divergence_oracle(fit.metric.matrix(), &DMatrix::identity(x.n_cols(), x.n_cols())) + slack_divergence(&fit.slacks, &xi0);
    assert!((last.objective - expected).abs() < 1e-8 * expected.max(1.0));
    assert_eq!(fit.trace_csv().lines().count(), fit.trace.len() + 1);
}

#[test]
fn matching_finds_identical_instances() {
    let (source, labels) = labeled(8, 20, 3);
    let target = source.select_rows(&[4, 17, 0]);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = MetricMatrix::new(random_spd(&mut rng, 3)).unwrap();
    let m = match_source_to_target(&a, &target, &source, &labels).unwrap();
    assert_eq!(m.source_indices, vec![4, 17, 0]);
    assert!(m.distances.iter().all(|d| d.abs() < 1e-12));
    assert_eq!(m.labels, vec![labels[4], labels[17], labels[0]]);
}

#[test]
fn matching_ties_go_to_lowest_index_and_duplicates_are_kept() {
    let source = FeatureMatrix::from_rows(1, &[[1.0], [-1.0], [5.0]]).unwrap();
    let target = FeatureMatrix::from_rows(1, &[[0.0], [4.9], [5.2]]).unwrap();
    let m = match_source_to_target(&MetricMatrix::identity(1), &target, &source, &[1.0, 2.0, 3.0]).unwrap();
    assert_eq!(m.source_indices, vec![0, 2, 2]);
    assert_eq!(m.features.n_rows(), 3);
}

#[test]
fn matching_equals_brute_force_argmin() {
    for seed in 0..10 {
        let (x, c) = random_instance(seed);
        let fit = fit_itml(&x, &c, &MetricMatrix::identity(x.n_cols()), &ItmlConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let q = x.n_cols();
        let source = gaussian_matrix(&mut rng, 20, q);
        let labels: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let target = gaussian_matrix(&mut rng, 5, q);
        let a = fit.metric.matrix();
        let m = match_source_to_target(&fit.metric, &target, &source, &labels).unwrap();
        for t in 0..5 {
            let dists: Vec<f64> = (0..20)
                .map(|s| {
                    let v = DVector::from_iterator(q, target.row(t).iter().zip(source.row(s)).map(|(a, b)| a - b));
                    (v.transpose() * a * &v)[(0, 0)]
                })
                .collect();
            let best = (0..20).fold(0, |b, s| if dists[s] < dists[b] { s } else { b });
            assert_eq!(m.source_indices[t], best);
            assert!((m.distances[t] - dists[best]).abs() < 1e-9 * dists[best].max(1.0));
        }
        let euclid = match_source_to_target(&MetricMatrix::identity(q), &target, &source, &labels).unwrap();
        for t in 0..5 {
            let best = (0..20)
                .map(|s| (s, target.row(t).iter().zip(source.row(s)).map(|(a, b)| (a - b).powi(2)).sum::<f64>()))
                .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b });
            assert_eq!(euclid.source_indices[t], best.0);
        }
    }
}

#[test]
fn matching_rejects_empty_source() {
    let source = FeatureMatrix::zeros(0, 2);
    let target = FeatureMatrix::from_rows(2, &[[0.0, 0.0]]).unwrap();
    assert!(match_source_to_target(&MetricMatrix::identity(2), &target, &source, &[]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn distance_is_symmetric_and_nonnegative(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = MetricMatrix::new(random_spd(&mut rng, 3)).unwrap();
        let x: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
        let d1 = mahalanobis_distance(&a, &x, &y).unwrap();
        let d2 = mahalanobis_distance(&a, &y, &x).unwrap();
        prop_assert!(d1 > 0.0);
        prop_assert!((d1 - d2).abs() <= 1e-12 * d1);
    }

    #[test]
    fn metric_stays_positive_definite(seed in 0u64..10_000, gamma in 0.1f64..10.0) {
        let (x, c) = random_instance(seed);
        let config = ItmlConfig { gamma_slack: gamma, max_passes: 20, check_every_update: true, ..ItmlConfig::default() };
        let fit = fit_itml(&x, &c, &MetricMatrix::identity(x.n_cols()), &config).unwrap();
        prop_assert!(fit.metric.matrix().clone().cholesky().is_some());
        prop_assert!(fit.slacks.iter().all(|s| *s > 0.0));
    }

    #[test]
    fn matching_ignores_metric_scale(seed in 0u64..10_000, c in 0.001f64..1000.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = MetricMatrix::new(random_spd(&mut rng, 3)).unwrap();
        let source = gaussian_matrix(&mut rng, 15, 3);
        let target = gaussian_matrix(&mut rng, 6, 3);
        let labels = vec![0.0; 15];
        let m1 = match_source_to_target(&a, &target, &source, &labels).unwrap();
        let m2 = match_source_to_target(&a.scaled(c).unwrap(), &target, &source, &labels).unwrap();
        prop_assert_eq!(m1.source_indices, m2.source_indices);
    }
}
