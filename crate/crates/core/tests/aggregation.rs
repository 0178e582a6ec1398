#[path = "support/oracles.rs"]
mod oracles;

use dnt_core::fedsync::{
    aggregate_fltrust, aggregate_mean, aggregate_median, aggregate_tid, AggregationRule, ClientUpdate,
};
use dnt_core::forecast::TrainingConfig;
use dnt_core::params::ParamVec;
use dnt_core::rng::stream;
use oracles::*;
use proptest::prelude::*;
use rand::Rng;

const TOL: f64 = 1e-9;

#[test]
fn mean_matches_oracle() {
    let mut rng = stream(101, "agg-mean");
    for _ in 0..200 {
        let inst = random_instance(&mut rng, 1, 20, 50);
        let got = aggregate_mean(&inst.updates()).unwrap();
        assert!(all_close(&got.0, &mean_oracle(&inst), TOL), "{inst:?}");
    }
}

#[test]
fn median_matches_oracle() {
    let mut rng = stream(102, "agg-median");
    for _ in 0..200 {
        let inst = random_instance(&mut rng, 1, 20, 50);
        let got = aggregate_median(&inst.updates()).unwrap();
        assert!(all_close(&got.0, &median_oracle(&inst), TOL), "{inst:?}");
    }
}

#[test]
fn fltrust_matches_oracle() {
    let mut rng = stream(103, "agg-fltrust");
    for _ in 0..200 {
        let inst = random_instance(&mut rng, 1, 20, 50);
        let dim = inst.dim();
        let global: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let server: Vec<f64> = global.iter().map(|g| g + rng.random_range(-1.0..1.0)).collect();
        let got = aggregate_fltrust(&inst.updates(), &ParamVec(server.clone()), &ParamVec(global.clone())).unwrap();
        assert!(all_close(&got.0, &fltrust_oracle(&inst, &server, &global), TOL));
    }
}

#[test]
fn tid_matches_oracle() {
    let mut rng = stream(104, "agg-tid");
    for _ in 0..200 {
        let inst = random_instance(&mut rng, 3, 20, 50);
        let tau = rng.random_range(0.5..4.0);
        let got = aggregate_tid(&inst.updates(), tau).unwrap();
        assert!(all_close(&got.0, &tid_oracle(&inst, tau), TOL), "tau {tau} {inst:?}");
    }
}

#[test]
fn tid_identical_bloc_is_trimmed() {
    let mut updates: Vec<ClientUpdate<f64>> = (0..4)
        .map(|i| ClientUpdate::new(i, ParamVec(vec![i as f64 * 0.1]), 10, 0))
        .collect();
    for i in 0..5 {
        updates.push(ClientUpdate::new(100 + i, ParamVec(vec![50.0]), 10, 0));
    }
    let got = aggregate_tid(&updates, 3.0).unwrap();
    assert!(got.0[0] < 1.0, "{got:?}");
}

#[test]
fn aggregate_dispatch_uses_rule() {
    let updates: Vec<ClientUpdate<f64>> = (0..3)
        .map(|i| ClientUpdate::new(i, ParamVec(vec![i as f64, 1.0]), 1, 0))
        .collect();
    let cfg = TrainingConfig::default();
    let global = ParamVec(vec![0.0, 0.0]);
    assert_eq!(
        AggregationRule::Mean.aggregate(&updates, &global, &cfg).unwrap().0,
        vec![1.0, 1.0]
    );
    assert_eq!(
        AggregationRule::Median.aggregate(&updates, &global, &cfg).unwrap().0,
        vec![1.0, 1.0]
    );
}

fn instance_strategy(min_clients: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<u64>)> {
    (min_clients..12usize, 1..8usize).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(prop::collection::vec(-50.0..50.0f64, d), n),
            prop::collection::vec(1..100u64, n),
        )
    })
}

fn to_updates(params: &[Vec<f64>], counts: &[u64]) -> Vec<ClientUpdate<f64>> {
    params
        .iter()
        .zip(counts)
        .enumerate()
        .map(|(i, (p, &c))| ClientUpdate::new(i as u32, ParamVec(p.clone()), c, 0))
        .collect()
}

proptest! {
    #[test]
    fn rules_are_permutation_invariant((params, counts) in instance_strategy(3), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let updates = to_updates(&params, &counts);
        let mut shuffled = updates.clone();
        shuffled.shuffle(&mut stream(seed, "perm"));
        let dim = params[0].len();
        let global = ParamVec(vec![0.0; dim]);
        let server = ParamVec(vec![1.0; dim]);
        prop_assert_eq!(aggregate_mean(&updates).unwrap(), aggregate_mean(&shuffled).unwrap());
        prop_assert_eq!(aggregate_median(&updates).unwrap(), aggregate_median(&shuffled).unwrap());
        prop_assert_eq!(
            aggregate_fltrust(&updates, &server, &global).unwrap(),
            aggregate_fltrust(&shuffled, &server, &global).unwrap()
        );
        prop_assert_eq!(aggregate_tid(&updates, 2.0).unwrap(), aggregate_tid(&shuffled, 2.0).unwrap());
    }

    #[test]
    fn mean_and_median_are_translation_equivariant((params, counts) in instance_strategy(1), shift in -10.0..10.0f64) {
        let updates = to_updates(&params, &counts);
        let moved: Vec<Vec<f64>> = params.iter().map(|p| p.iter().map(|x| x + shift).collect()).collect();
        let moved = to_updates(&moved, &counts);
        for (a, b) in aggregate_mean(&updates).unwrap().iter().zip(aggregate_mean(&moved).unwrap().iter()) {
            prop_assert!((a + shift - b).abs() < 1e-9);
        }
        for (a, b) in aggregate_median(&updates).unwrap().iter().zip(aggregate_median(&moved).unwrap().iter()) {
            prop_assert!((a + shift - b).abs() < 1e-9);
        }
    }

    #[test]
    fn median_and_tid_stay_within_client_range((params, counts) in instance_strategy(3), tau in 0.5..5.0f64) {
        let updates = to_updates(&params, &counts);
        let med = aggregate_median(&updates).unwrap();
        let tid = aggregate_tid(&updates, tau).unwrap();
        for d in 0..params[0].len() {
            let lo = params.iter().map(|p| p[d]).fold(f64::MAX, f64::min);
            let hi = params.iter().map(|p| p[d]).fold(f64::MIN, f64::max);
            prop_assert!(med.0[d] >= lo - 1e-9 && med.0[d] <= hi + 1e-9);
            prop_assert!(tid.0[d] >= lo - 1e-9 && tid.0[d] <= hi + 1e-9);
        }
    }

    #[test]
    fn tid_with_huge_tau_is_weighted_mean((params, counts) in instance_strategy(3)) {
        let updates = to_updates(&params, &counts);
        let tid = aggregate_tid(&updates, 1e9).unwrap();
        let mean = aggregate_mean(&updates).unwrap();
        for (a, b) in tid.iter().zip(mean.iter()) {
            prop_assert!(close(*a, *b, 1e-12));
        }
    }
}
