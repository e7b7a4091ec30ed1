use coexec_core::gbdt::{
    fit_gbdt, mape, tune, GbdtModel, HyperparameterSpace, Hyperparams, TrainingSet,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn set_from(f: impl Fn(&[f64]) -> f64, n: usize, dims: usize, seed: u64) -> TrainingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dims).map(|_| rng.random_range(1.0..100.0)).collect())
        .collect();
    let y = rows.iter().map(|r| f(r)).collect();
    let names = (0..dims).map(|d| format!("x{}", d + 1)).collect();
    TrainingSet::new(names, rows, y).unwrap()
}

fn exact() -> Hyperparams {
    Hyperparams {
        subsample: 1.0,
        ..Hyperparams::default()
    }
}

#[test]
fn constant_target_is_reproduced() {
    let set = set_from(|_| 42.0, 200, 3, 0);
    let m = fit_gbdt(&set, &exact(), 0).unwrap();
    let err = mape(&m.predict_all(&set.rows), &set.latency_us).unwrap();
    assert!(err < 1e-9, "{err}");
    assert!(m.gain.iter().all(|&g| g == 0.0));
}

#[test]
fn linear_function_generalizes() {
    let train = set_from(|r| 3.0 * r[0], 1000, 2, 1);
    let test = set_from(|r| 3.0 * r[0], 300, 2, 2);
    let hp = Hyperparams {
        n_estimators: 300,
        max_depth: 4,
        num_leaves: 16,
        ..Hyperparams::default()
    };
    let m = fit_gbdt(&train, &hp, 0).unwrap();
    let err = mape(&m.predict_all(&test.rows), &test.latency_us).unwrap();
    assert!(err <= 5.0, "test MAPE {err}");
}

#[test]
fn overfit_config_interpolates_training_set() {
    let set = set_from(|r| r[0] * r[1] + (r[2] * 7.0).sin() * 10.0 + 20.0, 300, 3, 3);
    let hp = Hyperparams {
        learning_rate: 0.5,
        n_estimators: 200,
        max_depth: 20,
        num_leaves: 512,
        l1: 0.0,
        l2: 0.0,
        subsample: 1.0,
        min_samples_leaf: 1,
    };
    let m = fit_gbdt(&set, &hp, 0).unwrap();
    let err = mape(&m.predict_all(&set.rows), &set.latency_us).unwrap();
    assert!(err <= 1.0, "training MAPE {err}");
}

#[test]
fn irrelevant_feature_has_zero_gain() {
    // x2 takes a single value, so it can never separate samples.
    let mut set = set_from(|r| 5.0 + r[0] * r[0], 400, 2, 4);
    for r in &mut set.rows {
        r[1] = 3.0;
    }
    let m = fit_gbdt(&set, &Hyperparams::default(), 0).unwrap();
    let gains = m.gain_importance();
    assert_eq!(gains[1], ("x2".to_string(), 0.0));
    assert!(gains[0].1 > 0.0);
}

/// Replays the boosting and measures each tree's squared-error reduction on
/// its own residuals by routing samples to leaves.
fn replayed_loss_reduction(m: &GbdtModel, set: &TrainingSet) -> f64 {
    let target: Vec<f64> = set.latency_us.iter().map(|y| y.ln()).collect();
    let mut total = 0.0;
    for (t, tree) in m.trees.iter().enumerate() {
        let residual: Vec<f64> = set
            .rows
            .iter()
            .zip(&target)
            .map(|(r, y)| y - m.predict_log_prefix(r, t))
            .collect();
        let mut groups: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
        for (r, e) in set.rows.iter().zip(&residual) {
            groups.entry(tree.leaf_index(r)).or_default().push(*e);
        }
        let sse = |v: &[f64], c: f64| v.iter().map(|e| (e - c) * (e - c)).sum::<f64>();
        let mean = residual.iter().sum::<f64>() / residual.len() as f64;
        let after: f64 = groups
            .values()
            .map(|g| sse(g, g.iter().sum::<f64>() / g.len() as f64))
            .sum();
        // Splits are measured against the root's own mean.
        total += sse(&residual, mean) - after;
    }
    total
}

#[test]
fn gains_sum_to_loss_reduction() {
    let set = set_from(|r| 10.0 + r[0] + (r[1] / 10.0).floor() * 30.0, 300, 3, 5);
    let hp = Hyperparams {
        n_estimators: 25,
        ..exact()
    };
    let m = fit_gbdt(&set, &hp, 0).unwrap();
    let total: f64 = m.gain.iter().sum();
    let replay = replayed_loss_reduction(&m, &set);
    assert!((total - replay).abs() <= 1e-9 * replay.max(1.0), "{total} vs {replay}");
}

#[test]
fn training_mape_non_increasing_in_trees() {
    let set = set_from(|r| 10.0 + r[0] + (r[1] / 10.0).floor() * 30.0, 400, 3, 6);
    let m = fit_gbdt(&set, &Hyperparams { n_estimators: 150, ..exact() }, 0).unwrap();
    let mut prev = f64::INFINITY;
    for n in 0..=m.trees.len() {
        let pred: Vec<f64> = set.rows.iter().map(|r| m.predict_log_prefix(r, n).exp()).collect();
        let err = mape(&pred, &set.latency_us).unwrap();
        assert!(err <= prev + 1e-9, "MAPE rose from {prev} to {err} at {n} trees");
        prev = err;
    }
}

#[test]
fn tuning_single_trial_and_point_space() {
    let set = set_from(|r| 3.0 * r[0] + r[1], 200, 2, 7);
    let space = HyperparameterSpace {
        n_estimators: (20, 60),
        ..HyperparameterSpace::default()
    };
    let one = tune(&set, &space, 1, 3).unwrap();
    assert_eq!(one.trials.len(), 1);
    assert_eq!(one.params, one.trials[0].params);

    let hp = Hyperparams {
        n_estimators: 30,
        ..Hyperparams::default()
    };
    let point = tune(&set, &HyperparameterSpace::point(&hp), 4, 3).unwrap();
    assert_eq!(point.params, hp);
}

#[test]
fn tuning_beats_median_trial() {
    let set = set_from(|r| 20.0 + ((r[0] / 8.0).ceil() * 8.0) * r[1] / 10.0, 600, 2, 8);
    let space = HyperparameterSpace {
        n_estimators: (20, 120),
        ..HyperparameterSpace::default()
    };
    let res = tune(&set, &space, 50, 1).unwrap();
    let mut errs: Vec<f64> = res.trials.iter().map(|t| t.validation_mape).collect();
    errs.sort_by(f64::total_cmp);
    assert!(res.validation_mape <= errs[errs.len() / 2]);
    assert_eq!(res.validation_mape, errs[0]);
}

#[test]
fn reproducible_bit_for_bit() {
    let set = set_from(|r| 1.0 + r[0] * r[1], 300, 3, 9);
    let a = fit_gbdt(&set, &Hyperparams::default(), 17).unwrap();
    let b = fit_gbdt(&set, &Hyperparams::default(), 17).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    let c = fit_gbdt(&set, &Hyperparams::default(), 18).unwrap();
    assert_ne!(a.to_json(), c.to_json());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_configs_lie_in_space(seed in any::<u64>()) {
        let space = HyperparameterSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let hp = space.sample(&mut rng);
            prop_assert!(space.contains(&hp), "{:?}", hp);
        }
    }

    #[test]
    fn predictions_positive(seed in 0u64..1000, x in prop::collection::vec(-1e6f64..1e6, 2)) {
        let set = set_from(|r| 0.5 + r[0] / 3.0, 60, 2, seed);
        let m = fit_gbdt(&set, &Hyperparams { n_estimators: 10, ..Hyperparams::default() }, seed).unwrap();
        prop_assert!(m.predict(&x) > 0.0);
    }
}
