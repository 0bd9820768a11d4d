use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sar_damage::forest::{self, ForestConfig, ForestModel, TreeNode};
use sar_damage::FeatureVector;

fn rows(seed: u64, n: usize, signal: bool) -> Vec<(FeatureVector, u8)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut f = [0.0; 28];
            f.iter_mut().for_each(|v| *v = rng.random_range(-20.0..5.0));
            let y = if signal { (f[9] + 0.3 * f[20] > -8.0) as u8 } else { rng.random_range(0..2) };
            (FeatureVector(f), y)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, .. ProptestConfig::default() })]

    #[test]
    fn probabilities_stay_in_unit_interval(seed in any::<u64>(), x in prop::collection::vec(-100.0f64..100.0, 28)) {
        let m = forest::train(&rows(seed, 120, false), &ForestConfig { seed, n_trees: 5, ..Default::default() }).unwrap();
        let p = m.predict_proba(&x).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn node_budget_and_leaf_size(seed in any::<u64>(), max_nodes in 1usize..60, min_leaf in 1usize..12) {
        let cfg = ForestConfig { seed, n_trees: 4, max_nodes, min_leaf, ..Default::default() };
        let m = forest::train(&rows(seed, 150, false), &cfg).unwrap();
        for t in &m.trees {
            prop_assert!(t.len() <= max_nodes);
            for node in t {
                if let TreeNode::Leaf { n, .. } = node {
                    prop_assert!(*n as usize >= min_leaf);
                }
            }
        }
    }
}

#[test]
fn three_node_budget_grows_stumps() {
    let m = forest::train(&rows(3, 200, true), &ForestConfig { seed: 3, n_trees: 10, max_nodes: 3, ..Default::default() }).unwrap();
    for t in &m.trees {
        assert_eq!(t.len(), 3);
        assert!(matches!(t[0], TreeNode::Split { .. }));
        assert!(matches!(t[1], TreeNode::Leaf { .. }) && matches!(t[2], TreeNode::Leaf { .. }));
    }
}

#[test]
fn thread_count_does_not_change_the_model() {
    let data = rows(8, 300, true);
    let a = forest::train(&data, &ForestConfig { seed: 5, threads: 1, ..Default::default() }).unwrap();
    let b = forest::train(&data, &ForestConfig { seed: 5, threads: 4, ..Default::default() }).unwrap();
    assert_eq!(a.to_json(), b.to_json());
}

fn shape(m: &ForestModel) -> Vec<Vec<(Option<u16>, u64)>> {
    m.trees
        .iter()
        .map(|t| {
            t.iter()
                .map(|n| match n {
                    TreeNode::Split { feature, left, right, .. } => (Some(*feature), ((*left as u64) << 32) | *right as u64),
                    TreeNode::Leaf { p1, .. } => (None, p1.to_bits()),
                })
                .collect()
        })
        .collect()
}

#[test]
fn monotone_transform_keeps_every_decision() {
    let data = rows(12, 250, true);
    let warp = |v: f64| (v / 7.0).exp() + v * v * v * 1e-3;
    let warped: Vec<(FeatureVector, u8)> = data.iter().map(|(f, y)| (FeatureVector(f.0.map(warp)), *y)).collect();
    let cfg = ForestConfig { seed: 21, n_trees: 15, bootstrap: false, balance: false, ..Default::default() };
    let a = forest::train(&data, &cfg).unwrap();
    let b = forest::train(&warped, &cfg).unwrap();
    assert_eq!(shape(&a), shape(&b));
    // thresholds are midpoints, so routing is only preserved for observed values
    for ((f, _), (g, _)) in data.iter().zip(&warped) {
        assert_eq!(a.predict(f), b.predict(g));
    }
}

#[test]
fn json_round_trip_and_tag_check() {
    let m = forest::train(&rows(1, 100, true), &ForestConfig { seed: 1, n_trees: 3, ..Default::default() }).unwrap();
    let text = m.to_json();
    let back = ForestModel::from_json(&text).unwrap();
    assert_eq!(back.trees, m.trees);
    assert_eq!(back.to_json(), text);
    let tampered = text.replace(&m.feature_order_tag, "vv_only;v0");
    assert!(ForestModel::from_json(&tampered).is_err());
}

#[test]
fn learns_a_noisy_boundary() {
    let m = forest::train(&rows(4, 800, true), &ForestConfig { seed: 4, ..Default::default() }).unwrap();
    let test = rows(5, 400, true);
    let correct = test.iter().filter(|(f, y)| (m.predict(f) >= 0.5) as u8 == *y).count();
    assert!(correct as f64 / test.len() as f64 > 0.85, "accuracy {correct}/400");
}
