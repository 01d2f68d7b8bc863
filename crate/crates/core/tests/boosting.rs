use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tmc_adapt::boosting::{
    compute_gamma, fit_gbbw, fit_gradient_boosting, fit_tree, predict, pseudo_residuals, read_model, write_model,
    BoostedModel, BoostingError, LabeledSet, Loss, Node, RegressionTree, Stage, TrainConfig, TreeConfig,
};
use tmc_adapt::FeatureMatrix;

mod common;

use common::boosting::*;

#[test]
fn matches_straight_line_reimplementation() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for case in 0..20 {
        let (xs, ys) = random_set(&mut rng, 12, 3);
        let (xt, yt) = random_set(&mut rng, 4, 3);
        let config = TrainConfig {
            n_stages: 3,
            shrinkage: 1.0,
            alpha: 0.5,
            ..TrainConfig::default()
        };
        let model = fit_gbbw(LabeledSet::new(&xs, &ys).unwrap(), LabeledSet::new(&xt, &yt).unwrap(), &config).unwrap();
        let eval = xs.vstack(&xt).unwrap();
        let (expected, losses) = oracle_gbbw(
            (&rows_of(&xs), &ys),
            (&rows_of(&xt), &yt),
            0.5,
            3,
            1.0,
            TreeConfig::default(),
            &rows_of(&eval),
        );
        let got = model.predict(&eval, false).unwrap();
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-10, "case {case}: {g} vs {e}");
        }
        for (a, b) in model.loss_trace[1..].iter().zip(&losses) {
            assert!((a - b).abs() < 1e-9 * b.max(1.0));
        }
        for pair in model.loss_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12 * pair[0]);
        }
    }
}

#[test]
fn initial_value_is_weighted_label_mean() {
    let xs = FeatureMatrix::from_rows(1, &[[0.0], [1.0], [2.0]]).unwrap();
    let xt = FeatureMatrix::from_rows(1, &[[3.0]]).unwrap();
    let config = TrainConfig {
        n_stages: 0,
        alpha: 0.25,
        ..TrainConfig::default()
    };
    let model = fit_gbbw(
        LabeledSet::new(&xs, &[1.0, 2.0, 3.0]).unwrap(),
        LabeledSet::new(&xt, &[10.0]).unwrap(),
        &config,
    )
    .unwrap();
    let expected = (0.75 * 6.0 + 0.25 * 10.0) / (0.75 * 3.0 + 0.25);
    assert!((model.initial - expected).abs() < 1e-15);
    assert_eq!(model.predict(&xs, false).unwrap(), vec![model.initial; 3]);
    assert_eq!(model.n_stages(), 0);
}

#[test]
fn gamma_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let y: Vec<f64> = (0..8).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let f: Vec<f64> = (0..8).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let h: Vec<f64> = (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let w: Vec<f64> = (0..8).map(|_| rng.gen_range(0.1..2.0)).collect();
        let objective = |g: f64| -> f64 { (0..8).map(|i| w[i] * 0.5 * (y[i] - f[i] - g * h[i]).powi(2)).sum() };
        // coarse pass, then a fine pass around the coarse minimum
        let argmin = |lo: f64, hi: f64, step: f64| {
            let n = ((hi - lo) / step) as usize;
            (0..=n).map(|k| lo + k as f64 * step).fold(lo, |b, g| if objective(g) < objective(b) { g } else { b })
        };
        let coarse = argmin(-20.0, 20.0, 1e-2);
        let fine = argmin(coarse - 0.02, coarse + 0.02, 1e-6);
        let gamma = compute_gamma(&f, &h, &y, &w).unwrap();
        assert!((gamma - fine).abs() < 1e-4, "{gamma} vs {fine}");
    }
}

#[test]
fn gamma_examples() {
    let y = [4.0, 0.0, 2.5];
    let f = [1.0, 1.0, 1.0];
    let r: Vec<f64> = y.iter().zip(&f).map(|(a, b)| a - b).collect();
    assert_eq!(compute_gamma(&f, &r, &y, &[1.0, 2.0, 0.5]).unwrap(), 1.0);
    assert_eq!(compute_gamma(&f, &[0.0; 3], &y, &[1.0; 3]).unwrap(), 0.0);
}

#[test]
fn residual_examples() {
    assert_eq!(pseudo_residuals(Loss::SquaredError, &[3.0, 1.0], &[1.0, 1.0]).unwrap(), vec![2.0, 0.0]);
    let y = [1.5, -2.0, 7.0];
    assert_eq!(pseudo_residuals(Loss::SquaredError, &y, &y).unwrap(), vec![0.0; 3]);
    assert!("absolute".parse::<Loss>().is_err());
    assert!(pseudo_residuals(Loss::SquaredError, &[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn depth_zero_tree_is_weighted_mean() {
    let x = FeatureMatrix::from_rows(1, &[[0.0], [1.0], [2.0]]).unwrap();
    let tree = fit_tree(&x, &[1.0, 2.0, 6.0], &[1.0, 1.0, 2.0], &TreeConfig { max_depth: 0, min_samples_leaf: 1 }).unwrap();
    assert_eq!(tree.n_leaves(), 1);
    assert!((tree.predict_row(&[5.0]) - 15.0 / 4.0).abs() < 1e-15);
}

#[test]
fn step_data_splits_at_the_step() {
    let rows: Vec<[f64; 1]> = (0..10).map(|i| [i as f64]).collect();
    let x = FeatureMatrix::from_rows(1, &rows).unwrap();
    let r: Vec<f64> = (0..10).map(|i| if i < 6 { -1.0 } else { 4.0 }).collect();
    let tree = fit_tree(&x, &r, &[1.0; 10], &TreeConfig { max_depth: 1, min_samples_leaf: 1 }).unwrap();
    match &tree.nodes()[0] {
        Node::Split { feature, threshold, .. } => {
            assert_eq!(*feature, 0);
            assert_eq!(*threshold, 5.5);
        }
        Node::Leaf { .. } => panic!("expected a split"),
    }
    assert_eq!(tree.predict_row(&[2.0]), -1.0);
    assert_eq!(tree.predict_row(&[8.0]), 4.0);
}

#[test]
fn zero_weight_rows_are_ignored() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (x, y) = random_set(&mut rng, 30, 3);
    let (junk, _) = random_set(&mut rng, 10, 3);
    let wild: Vec<f64> = (0..10).map(|i| 1e6 * (i as f64 - 5.0)).collect();
    let xa = x.vstack(&junk).unwrap();
    let mut ya = y.clone();
    ya.extend(&wild);
    let mut w = vec![1.0; 30];
    w.extend(vec![0.0; 10]);
    let config = TreeConfig::default();
    assert_eq!(fit_tree(&x, &y, &[1.0; 30], &config).unwrap(), fit_tree(&xa, &ya, &w, &config).unwrap());
    assert!(matches!(fit_tree(&x, &y, &[0.0; 30], &config), Err(BoostingError::ZeroWeights)));
    let mut neg = vec![1.0; 30];
    neg[3] = -1.0;
    assert!(matches!(fit_tree(&x, &y, &neg, &config), Err(BoostingError::NegativeWeight)));
}

#[test]
fn alpha_zero_is_source_only_boosting() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (xs, ys) = random_set(&mut rng, 60, 4);
    let (xt, yt) = random_set(&mut rng, 20, 4);
    let config = TrainConfig {
        n_stages: 50,
        alpha: 0.0,
        ..TrainConfig::default()
    };
    let gbbw = fit_gbbw(LabeledSet::new(&xs, &ys).unwrap(), LabeledSet::new(&xt, &yt).unwrap(), &config).unwrap();
    let plain = fit_gradient_boosting(LabeledSet::new(&xs, &ys).unwrap(), &config).unwrap();
    assert_eq!(gbbw.stages, plain.stages);
    assert_eq!(gbbw.initial.to_bits(), plain.initial.to_bits());
    let eval = xs.vstack(&xt).unwrap();
    let a: Vec<u64> = gbbw.predict(&eval, false).unwrap().iter().map(|v| v.to_bits()).collect();
    let b: Vec<u64> = plain.predict(&eval, false).unwrap().iter().map(|v| v.to_bits()).collect();
    assert_eq!(a, b);

    let empty = FeatureMatrix::zeros(0, 4);
    let none = fit_gbbw(LabeledSet::new(&xs, &ys).unwrap(), LabeledSet::new(&empty, &[]).unwrap(), &config).unwrap();
    assert_eq!(none.stages, plain.stages);
}

#[test]
fn boundary_weights_ignore_the_excluded_set() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (xs, ys) = random_set(&mut rng, 40, 3);
    let (xs2, ys2) = random_set(&mut rng, 25, 3);
    let (xt, yt) = random_set(&mut rng, 15, 3);
    let (xt2, yt2) = random_set(&mut rng, 9, 3);
    let run = |xs: &FeatureMatrix, ys: &[f64], xt: &FeatureMatrix, yt: &[f64], alpha: f64| {
        let config = TrainConfig {
            n_stages: 30,
            alpha,
            ..TrainConfig::default()
        };
        fit_gbbw(LabeledSet::new(xs, ys).unwrap(), LabeledSet::new(xt, yt).unwrap(), &config).unwrap()
    };
    assert_eq!(run(&xs, &ys, &xt, &yt, 0.0).stages, run(&xs, &ys, &xt2, &yt2, 0.0).stages);
    let a = run(&xs, &ys, &xt, &yt, 1.0);
    let b = run(&xs2, &ys2, &xt, &yt, 1.0);
    assert_eq!(a.stages, b.stages);
    assert_eq!(a.initial, b.initial);
}

#[test]
fn invalid_configurations_are_rejected() {
    let x = FeatureMatrix::from_rows(1, &[[0.0], [1.0]]).unwrap();
    let y = [1.0, 2.0];
    let empty = FeatureMatrix::zeros(0, 1);
    let with = |alpha: f64| TrainConfig {
        alpha,
        ..TrainConfig::default()
    };
    let src = LabeledSet::new(&x, &y).unwrap();
    assert!(matches!(
        fit_gbbw(src, LabeledSet::new(&empty, &[]).unwrap(), &with(1.0)),
        Err(BoostingError::EmptyPseudoTarget)
    ));
    assert!(fit_gbbw(src, src, &with(1.5)).is_err());
    assert!(fit_gbbw(src, src, &with(-0.1)).is_err());
    let wide = FeatureMatrix::from_rows(2, &[[0.0, 1.0]]).unwrap();
    assert!(fit_gbbw(src, LabeledSet::new(&wide, &[1.0]).unwrap(), &with(0.5)).is_err());
    let model = fit_gradient_boosting(src, &TrainConfig::default()).unwrap();
    assert!(matches!(model.predict(&wide, false), Err(BoostingError::DimensionMismatch { .. })));
}

#[test]
fn stump_model_is_hand_computable() {
    let tree = RegressionTree::from_nodes(
        vec![
            Node::Split {
                feature: 1,
                threshold: 2.0,
                left: 1,
                right: 2,
            },
            Node::Leaf { value: -3.0 },
            Node::Leaf { value: 5.0 },
        ],
        2,
    )
    .unwrap();
    let model = BoostedModel {
        initial: 10.0,
        stages: vec![Stage { gamma: 0.8, tree }],
        shrinkage: 0.5,
        alpha: 0.0,
        loss: Loss::SquaredError,
        n_features: 2,
        loss_trace: vec![],
    };
    let x = FeatureMatrix::from_rows(2, &[[9.0, 1.0], [0.0, 2.0], [0.0, 2.5]]).unwrap();
    assert_eq!(predict(&model, &x, false).unwrap(), vec![10.0 - 1.2, 10.0 - 1.2, 12.0]);
    let low = BoostedModel { initial: 0.5, ..model };
    assert_eq!(low.predict(&x, true).unwrap(), vec![0.0, 0.0, 2.5]);
}

#[test]
fn stages_are_additive() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (x, y) = random_set(&mut rng, 50, 3);
    let config = TrainConfig {
        n_stages: 25,
        ..TrainConfig::default()
    };
    let model = fit_gradient_boosting(LabeledSet::new(&x, &y).unwrap(), &config).unwrap();
    for m in 1..=25 {
        let full = model.truncated(m).predict(&x, false).unwrap();
        let prev = model.truncated(m - 1).predict(&x, false).unwrap();
        let stage = &model.stages[m - 1];
        for (i, row) in x.rows().enumerate() {
            let expected = prev[i] + model.shrinkage * stage.gamma * stage.tree.predict_row(row);
            assert!((full[i] - expected).abs() < 1e-12 * expected.abs().max(1.0));
        }
    }
}

#[test]
fn serialized_model_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (xs, ys) = random_set(&mut rng, 40, 3);
    let (xt, yt) = random_set(&mut rng, 10, 3);
    let config = TrainConfig {
        n_stages: 20,
        ..TrainConfig::default()
    };
    let model = fit_gbbw(LabeledSet::new(&xs, &ys).unwrap(), LabeledSet::new(&xt, &yt).unwrap(), &config).unwrap();
    let text = write_model(&model);
    let back = read_model(&text).unwrap();
    assert_eq!(back.predict(&xs, false).unwrap(), model.predict(&xs, false).unwrap());
    assert!(read_model(&text.replace("stages 20", "stages 21")).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn unit_stage_loss_never_increases(seed in 0u64..10_000, alpha in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (xs, ys) = random_set(&mut rng, 30, 3);
        let (xt, yt) = random_set(&mut rng, 10, 3);
        let config = TrainConfig { n_stages: 15, shrinkage: 1.0, alpha, ..TrainConfig::default() };
        let model = fit_gbbw(LabeledSet::new(&xs, &ys).unwrap(), LabeledSet::new(&xt, &yt).unwrap(), &config).unwrap();
        for pair in model.loss_trace.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-12 * pair[0].max(1.0));
        }
    }

    #[test]
    fn label_scaling_is_equivariant(seed in 0u64..10_000, k in -8i32..8) {
        // a power of two scales every intermediate exactly, so split choices cannot flip
        let c = 2f64.powi(k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y) = random_set(&mut rng, 40, 3);
        let scaled: Vec<f64> = y.iter().map(|v| v * c).collect();
        let config = TrainConfig { n_stages: 20, ..TrainConfig::default() };
        let a = fit_gradient_boosting(LabeledSet::new(&x, &y).unwrap(), &config).unwrap();
        let b = fit_gradient_boosting(LabeledSet::new(&x, &scaled).unwrap(), &config).unwrap();
        prop_assert_eq!(b.initial, c * a.initial);
        for (sa, sb) in a.stages.iter().zip(&b.stages) {
            prop_assert_eq!(sa.gamma, sb.gamma);
            for (na, nb) in sa.tree.nodes().iter().zip(sb.tree.nodes()) {
                match (na, nb) {
                    (Node::Leaf { value: va }, Node::Leaf { value: vb }) => prop_assert_eq!(*vb, c * va),
                    (Node::Split { feature: fa, threshold: ta, .. }, Node::Split { feature: fb, threshold: tb, .. }) => {
                        prop_assert_eq!(fa, fb);
                        prop_assert_eq!(ta, tb);
                    }
                    _ => prop_assert!(false, "tree shapes differ"),
                }
            }
        }
        let pa = a.predict(&x, false).unwrap();
        let pb = b.predict(&x, false).unwrap();
        for (u, v) in pa.iter().zip(&pb) {
            prop_assert!((v - c * u).abs() <= 1e-12 * (c * u).abs().max(c));
        }
    }

    #[test]
    fn first_stage_scales_with_labels(seed in 0u64..10_000, c in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y) = random_set(&mut rng, 40, 3);
        let scaled: Vec<f64> = y.iter().map(|v| v * c).collect();
        let config = TrainConfig { n_stages: 1, ..TrainConfig::default() };
        let a = fit_gradient_boosting(LabeledSet::new(&x, &y).unwrap(), &config).unwrap();
        let b = fit_gradient_boosting(LabeledSet::new(&x, &scaled).unwrap(), &config).unwrap();
        prop_assert!((b.initial - c * a.initial).abs() < 1e-9 * (c * a.initial).abs().max(1.0));
        let pa = a.predict(&x, false).unwrap();
        let pb = b.predict(&x, false).unwrap();
        for (u, v) in pa.iter().zip(&pb) {
            prop_assert!((v - c * u).abs() < 1e-9 * (c * u).abs().max(c));
        }
    }

    #[test]
    fn uniform_weights_match_unweighted_fit(seed in 0u64..10_000, w in 0.01f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y) = random_set(&mut rng, 30, 3);
        let config = TreeConfig::default();
        let weighted = fit_tree(&x, &y, &vec![w; 30], &config).unwrap();
        let unit = fit_tree(&x, &y, &[1.0; 30], &config).unwrap();
        let oracle = grow(&rows_of(&x), &y, &[1.0; 30], (0..30).collect(), config.max_depth, config.min_samples_leaf);
        for row in x.rows() {
            prop_assert!((weighted.predict_row(row) - unit.predict_row(row)).abs() < 1e-9);
            prop_assert!((unit.predict_row(row) - oracle.eval(row)).abs() < 1e-9);
        }
        prop_assert!(weighted.depth() <= 3);
    }
}
