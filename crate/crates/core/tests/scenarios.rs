use ehshare_core::scenarios::{self, GainModel, GenConfig, PerNode};
use proptest::prelude::*;

/// `E[max(0, X)]` for `X ~ Normal(mean, sd^2)` by composite Simpson on
/// `[0, mean + 12 sd]`.
fn clipped_normal_mean(mean: f64, sd: f64) -> f64 {
    let steps = 20_000;
    let hi = mean + 12.0 * sd;
    let h = hi / steps as f64;
    let f = |x: f64| {
        let z = (x - mean) / sd;
        x * (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
    };
    let inner: f64 = (1..steps)
        .map(|i| if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h))
        .sum();
    (f(0.0) + inner + f(hi)) * h / 3.0
}

fn big_sample(delta: f64, variance: f64, gain_model: GainModel) -> GenConfig {
    GenConfig {
        n_users: 1,
        n_slots: 100_000,
        delta: delta.into(),
        harvest_variance: variance,
        gain_model,
        repeats: 1,
        ..Default::default()
    }
}

#[test]
fn clipped_harvest_mean() {
    let want = clipped_normal_mean(5.0, 2.0);
    // 5 Phi(2.5) + 2 phi(2.5) in 50-digit arithmetic
    assert!((want - 5.004_008_274).abs() < 1e-8, "quadrature {want}");
    let sc = scenarios::generate(&big_sample(5.0, 4.0, GainModel::ExponentialUnit)).unwrap();
    let got = sc.harvest.sum() / sc.harvest.as_slice().len() as f64;
    assert!((got / want - 1.0).abs() < 0.01, "sample mean {got} vs {want}");
}

#[test]
fn clipping_matters_near_zero() {
    let want = clipped_normal_mean(1.0, 2.0);
    let sc = scenarios::generate(&big_sample(1.0, 4.0, GainModel::ExponentialUnit)).unwrap();
    assert!(sc.harvest.iter().all(|&e| e >= 0.0));
    let got = sc.harvest.sum() / sc.harvest.as_slice().len() as f64;
    assert!((got / want - 1.0).abs() < 0.01, "sample mean {got} vs {want}");
}

#[test]
fn exponential_gain_mean() {
    let sc = scenarios::generate(&big_sample(5.0, 4.0, GainModel::ExponentialUnit)).unwrap();
    let got = sc.gain.sum() / sc.gain.as_slice().len() as f64;
    assert!((got - 1.0).abs() < 0.01, "sample mean {got}");
    assert!(sc.gain.iter().all(|&h| h >= 0.0));
}

#[test]
fn per_node_means_are_respected() {
    let cfg = GenConfig {
        n_users: 3,
        n_slots: 20_000,
        delta: PerNode::Each(vec![5.0, 10.0, 15.0]),
        repeats: 1,
        ..Default::default()
    };
    let sc = scenarios::generate(&cfg).unwrap();
    for (n, want) in [5.0, 10.0, 15.0].into_iter().enumerate() {
        let got = sc.harvest.row_sum(n) / 20_000.0;
        let want = clipped_normal_mean(want, 2.0);
        assert!((got / want - 1.0).abs() < 0.02, "node {n}: {got} vs {want}");
    }
}

#[test]
fn file_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sc.json");
    for sc in scenarios::generate_all(&GenConfig { repeats: 3, ..Default::default() }).unwrap() {
        scenarios::save(&sc, &path).unwrap();
        assert_eq!(scenarios::load(&path).unwrap(), sc);
    }
}

#[test]
fn missing_file_is_an_io_error() {
    let err = scenarios::load("/nonexistent/dir/sc.json").unwrap_err();
    assert!(err.to_string().contains("/nonexistent/dir/sc.json"), "{err}");
}

#[test]
fn repeats_are_distinct_and_reproducible() {
    let cfg = GenConfig { repeats: 4, ..Default::default() };
    let all = scenarios::generate_all(&cfg).unwrap();
    assert_eq!(all.len(), 4);
    for (r, sc) in all.iter().enumerate() {
        assert_eq!(sc, &scenarios::generate_repeat(&cfg, r as u64).unwrap());
    }
    assert_ne!(all[0].harvest, all[1].harvest);
    let other_seed = GenConfig { seed: 2, ..cfg };
    assert_ne!(scenarios::generate(&other_seed).unwrap().harvest, all[0].harvest);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn generated_scenarios_are_valid(
        n in 1usize..6, k in 1usize..6, seed in any::<u64>(),
        delta in 0.0..30.0, variance in 0.0..50.0, lambda in 0.0..2.0, mu in 0.0..2.0,
    ) {
        let cfg = GenConfig {
            n_users: n, n_slots: k, seed, delta: PerNode::Same(delta), harvest_variance: variance,
            grid_cost: lambda, coop_cost: mu, ..Default::default()
        };
        let sc = scenarios::generate(&cfg).unwrap();
        prop_assert!(sc.validate().is_ok());
        prop_assert_eq!(sc.harvest.shape(), (n, k));
        prop_assert_eq!(scenarios::from_json(&scenarios::to_json(&sc).unwrap()).unwrap(), sc);
    }
}
