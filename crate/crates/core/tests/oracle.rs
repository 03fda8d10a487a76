use swingstop::driver::Driver;
use swingstop::engine::{solve_multiple_auxiliary, MultiStopConfig};
use swingstop::lattice::{Lattice, TimeGrid};
use swingstop::oracle::{
    closed_form_deterministic, distorted_up_probability, drift_shift_value, enumerate_multiple_stopping,
    stopping_rule_count, PathTree,
};
use swingstop::rewards::{evaluate_reward, RewardSpec, RewardSurface};
use swingstop::Error;

fn bump_tree() -> PathTree {
    let grid = TimeGrid::new(1.0, 2).unwrap();
    PathTree::from_fn(&grid, |s, p| match s {
        0 => 0.0,
        1 => 2.0 * p as f64,
        _ => 1.0,
    })
    .unwrap()
}

#[test]
fn rule_counts() {
    let counts: Vec<u128> = (0..5).map(stopping_rule_count).collect();
    assert_eq!(counts, vec![1, 2, 5, 26, 677]);
}

#[test]
fn depth_two_instance() {
    let best = enumerate_multiple_stopping(&Driver::zero(), &bump_tree(), 1, 0).unwrap();
    assert_eq!(best.value, 1.5);
    assert_eq!(best.count, 5);
}

#[test]
fn zero_reward_enumerates_to_zero() {
    let grid = TimeGrid::new(1.0, 3).unwrap();
    let tree = PathTree::from_fn(&grid, |_, _| 0.0).unwrap();
    for d in [Driver::zero(), Driver::sup_kappa(0.5).unwrap(), Driver::inf_kappa(0.5).unwrap()] {
        assert_eq!(enumerate_multiple_stopping(&d, &tree, 2, 1).unwrap().value, 0.0);
    }
}

#[test]
fn deep_trees_are_refused() {
    let grid = TimeGrid::new(1.0, 6).unwrap();
    let tree = PathTree::from_fn(&grid, |_, _| 1.0);
    let err = tree.and_then(|t| enumerate_multiple_stopping(&Driver::zero(), &t, 1, 0));
    assert!(matches!(err, Err(Error::Capacity(_))));
}

#[test]
fn enumeration_matches_engine_on_depth_three() {
    let lat = Lattice::new(TimeGrid::new(1.0, 3).unwrap(), 1.0, 0.0, 0.4).unwrap();
    let reward = evaluate_reward(&RewardSpec::put(1.1), &lat).unwrap();
    let tree = PathTree::from_surface(&reward, lat.grid()).unwrap();
    for d in [Driver::zero(), Driver::sup_kappa(0.5).unwrap(), Driver::inf_kappa(0.5).unwrap()] {
        for delta in 0..=2 {
            let cfg = MultiStopConfig::new(2, delta, lat.grid()).unwrap();
            let engine = solve_multiple_auxiliary(&d, &lat, &reward, &cfg).unwrap().price();
            let best = enumerate_multiple_stopping(&d, &tree, 2, delta).unwrap().value;
            assert!((engine - best).abs() <= 1e-12 * (1.0 + best.abs()), "{d} delta {delta}: {engine} vs {best}");
        }
    }
}

#[test]
fn distorted_probability() {
    assert!((distorted_up_probability(0.5, 0.04) - 0.45).abs() < 1e-15);
    assert_eq!(distorted_up_probability(0.0, 0.04), 0.5);
}

#[test]
fn drift_shift_with_no_ambiguity_is_classical() {
    let lat = Lattice::new(TimeGrid::new(1.0, 128).unwrap(), 1.0, 0.05, 0.2).unwrap();
    let reward = evaluate_reward(&RewardSpec::call(1.0), &lat).unwrap();
    let cfg = MultiStopConfig::new(2, 16, lat.grid()).unwrap();
    let shifted = drift_shift_value(&lat, &reward, 0.0, &cfg).unwrap();
    let classical = solve_multiple_auxiliary(&Driver::zero(), &lat, &reward, &cfg).unwrap();
    assert!(shifted.value(2).max_rel_diff(classical.values(2)) <= 1e-13);
}

#[test]
fn closed_form_examples() {
    let profile = [0.0, 1.0, 2.0];
    assert_eq!(closed_form_deterministic(&profile, 2, 2, 0), 2.0);
    assert_eq!(closed_form_deterministic(&profile, 1, 1, 0), 2.0);
    assert_eq!(closed_form_deterministic(&[3.0; 9], 2, 3, 0), 9.0);
    assert_eq!(closed_form_deterministic(&[3.0; 9], 4, 5, 0), 9.0);
}

#[test]
fn closed_form_agrees_with_engine() {
    let profile: Vec<f64> = (0..=20).map(|n| (n as f64).sqrt()).collect();
    let lat = Lattice::new(TimeGrid::new(1.0, 20).unwrap(), 1.0, 0.0, 0.3).unwrap();
    let reward = RewardSurface::deterministic(&profile).unwrap();
    let cfg = MultiStopConfig::new(3, 6, lat.grid()).unwrap();
    let stack = solve_multiple_auxiliary(&Driver::inf_kappa(0.5).unwrap(), &lat, &reward, &cfg).unwrap();
    for t in 0..=20 {
        let want = closed_form_deterministic(&profile, 6, 3, t);
        assert!((stack.values(3).get(t, 0) - want).abs() <= 1e-13 * (1.0 + want));
    }
}
