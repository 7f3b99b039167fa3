use std::io::Write;

use cubeshap::counterfactual::{
    genetic_cf, growing_spheres_cf, nn_pairing, patch_budget_test, random_ranking_band,
    random_search_cf, ranking_by, CfTarget, Distance, GeneticConfig, SearchSpace,
};
use cubeshap::explain::{explain_local, ExplainConfig, Resolution, Rule};
use cubeshap::model::{ThresholdModel, TreeNode};
use cubeshap::{load_dataset, CounterfactualPair, Dataset, FeatureKind, Model, ModelSpec, Predictor};

fn unit(d: usize) -> SearchSpace {
    SearchSpace::unit(vec![FeatureKind::Continuous; d])
}

fn step_model() -> Model {
    // 1 when feature 0 reaches 0.15, whatever feature 1 does.
    Model::new(ModelSpec::Threshold(ThresholdModel {
        d: 2,
        trees: vec![TreeNode::Split {
            feature: 0,
            cutpoint: 0.15,
            left: Box::new(TreeNode::Leaf { leaf: 0.0 }),
            right: Box::new(TreeNode::Leaf { leaf: 1.0 }),
        }],
        bias: 0.0,
    }))
    .unwrap()
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for (i, &x) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

#[test]
fn returned_counterfactuals_meet_their_target() {
    let model = Model::linear(vec![0.5, 0.4, -0.2], 0.0).unwrap();
    let x0 = [0.1, 0.1, 0.5];
    let target = CfTarget::new(0.6).unwrap();
    let space = unit(3);
    let outcomes = [
        random_search_cf(&model, &x0, &space, target, 5000, 1).unwrap(),
        growing_spheres_cf(&model, &x0, &space, target, &[0.2, 0.5, 1.0, 1.5], 300, 1).unwrap(),
        genetic_cf(&model, &x0, &space, target, &GeneticConfig::default(), 1).unwrap(),
    ];
    for out in outcomes {
        assert!(out.success);
        // Re-score independently of the generator.
        assert!(target.met(model.predict(&out.x1).unwrap()));
        assert_eq!(out.score, model.predict(&out.x1).unwrap());
        assert!(out.x1.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn generators_are_deterministic_per_seed() {
    let model = Model::multilinear(3, vec![(vec![0, 1], 2.0), (vec![2], 0.5)]).unwrap();
    let x0 = [0.0; 3];
    let t = CfTarget::default();
    let s = unit(3);
    let g = GeneticConfig::default();
    for seed in [0, 5] {
        assert_eq!(random_search_cf(&model, &x0, &s, t, 500, seed).unwrap(), random_search_cf(&model, &x0, &s, t, 500, seed).unwrap());
        assert_eq!(
            growing_spheres_cf(&model, &x0, &s, t, &[0.3, 0.6, 1.0], 50, seed).unwrap(),
            growing_spheres_cf(&model, &x0, &s, t, &[0.3, 0.6, 1.0], 50, seed).unwrap()
        );
        assert_eq!(genetic_cf(&model, &x0, &s, t, &g, seed).unwrap(), genetic_cf(&model, &x0, &s, t, &g, seed).unwrap());
    }
}

#[test]
fn spheres_succeed_in_the_first_shell() {
    let model = step_model();
    let out = growing_spheres_cf(&model, &[0.1, 0.5], &unit(2), CfTarget::new(0.5).unwrap(), &[0.2, 0.5], 100, 3).unwrap();
    assert!(out.success);
    // Baseline plus one shell scored.
    assert_eq!(out.history.len(), 2);
    let dist = ((out.x1[0] - 0.1f64).powi(2) + (out.x1[1] - 0.5f64).powi(2)).sqrt();
    assert!(dist <= 0.2 + 1e-12);
}

#[test]
fn genetic_search_converges_on_a_toy_model() {
    let model = Model::multilinear(2, vec![(vec![0, 1], 1.0)]).unwrap();
    let cfg = GeneticConfig {
        generations: 50,
        ..Default::default()
    };
    let out = genetic_cf(&model, &[0.1, 0.1], &unit(2), CfTarget::new(0.8).unwrap(), &cfg, 42).unwrap();
    assert!(out.success);
    assert!(out.history.len() <= 51);
    for w in out.history.windows(2) {
        assert!(w[1] >= w[0], "elitism keeps the best score");
    }
    assert!(out.history.iter().all(|h| out.score >= *h));
}

#[test]
fn genetic_search_with_a_satisfying_start_stops_immediately() {
    let model = Model::linear(vec![1.0, 1.0], 0.9).unwrap();
    let out = genetic_cf(&model, &[0.0, 0.0], &unit(2), CfTarget::default(), &GeneticConfig::default(), 0).unwrap();
    assert!(out.success);
    assert_eq!(out.history.len(), 1);
}

fn toy_dataset() -> Dataset {
    Dataset::new(
        vec!["a".into(), "b".into()],
        vec![vec![0.0, 0.0], vec![1.0, 0.02], vec![0.3, 0.9], vec![0.9, 0.0], vec![0.05, 0.01]],
        vec!["3".into(), "7".into(), "7".into(), "7".into(), "3".into()],
    )
    .unwrap()
}

#[test]
fn nearest_neighbours_match_a_brute_force_scan() {
    let ds = toy_dataset();
    let pairs = nn_pairing(&ds, "3", "7", None, Distance::Euclidean, 0.05, 0).unwrap();
    assert_eq!(pairs.len(), 2);
    for (pair, &b) in pairs.iter().zip(&[0usize, 4]) {
        let mut best = (f64::INFINITY, 0);
        for t in [1usize, 2, 3] {
            let d: f64 = ds.rows()[b].iter().zip(&ds.rows()[t]).map(|(x, y)| (x - y) * (x - y)).sum();
            if d < best.0 {
                best = (d, t);
            }
        }
        assert_eq!(pair.x1(), &ds.rows()[best.1][..]);
        assert_eq!(pair.x0(), &ds.rows()[b][..]);
    }
    // Row 0 -> row 3: only feature a moves by more than 0.05.
    assert_eq!(pairs[0].changed(), &[0]);
}

#[test]
fn pairing_edge_cases() {
    let ds = toy_dataset();
    assert!(nn_pairing(&ds, "3", "9", None, Distance::Euclidean, 0.05, 0).is_err());
    assert!(nn_pairing(&ds, "9", "7", None, Distance::Euclidean, 0.05, 0).is_err());
    let same = Dataset::new(vec!["a".into(), "b".into()], vec![vec![0.5, 0.5], vec![0.5, 0.5]], vec!["x".into(), "y".into()]).unwrap();
    let p = nn_pairing(&same, "x", "y", None, Distance::Euclidean, 0.05, 0).unwrap();
    assert!(p[0].changed().is_empty());
    let wide = nn_pairing(&ds, "3", "7", None, Distance::Euclidean, 5.0, 0).unwrap();
    assert!(wide.iter().all(|p| p.changed().is_empty()));
    let sampled = nn_pairing(&ds, "7", "3", Some(2), Distance::Manhattan, 0.05, 9).unwrap();
    assert_eq!(sampled.len(), 2);
}

#[test]
fn dataset_round_trip_through_csv() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "digit,a,b\n3,0,0\n7,1,0.02").unwrap();
    let ds = load_dataset(f.path(), "digit").unwrap();
    assert_eq!(ds.class("7"), vec![1]);
    assert_eq!(ds.rows()[1], vec![1.0, 0.02]);
}

#[test]
fn attribution_ranking_dominates_on_additive_models() {
    let w = [0.05, 0.3, -0.1, 0.2];
    let model = Model::linear(w.to_vec(), 0.1).unwrap();
    let pair = CounterfactualPair::new(vec![0.0; 4], vec![1.0, 0.8, 0.5, 1.0], 0.0).unwrap();
    let cfg = ExplainConfig {
        resolution: Resolution::Uniform(3),
        rules: vec![Rule::MicroShapley],
        ..Default::default()
    };
    let rep = explain_local(&model, &pair, &model.feature_kinds(), &cfg).unwrap();
    let ranking = ranking_by(rep.locals_of(Rule::MicroShapley).unwrap(), pair.changed());
    let best = patch_budget_test(&model, &pair, &ranking).unwrap();
    let all: Vec<Vec<f64>> = permutations(pair.changed())
        .iter()
        .map(|r| patch_budget_test(&model, &pair, r).unwrap().scores)
        .collect();
    assert_eq!(all.len(), 24);
    for scores in &all {
        for k in 0..=4 {
            assert!(best.scores[k] >= scores[k] - 1e-12, "K={k}");
        }
    }
    assert_eq!(best.scores[0], model.predict(pair.x0()).unwrap());
    assert_eq!(best.scores[4] - best.scores[0], rep.delta_y);
    assert_eq!(best.scores[4], model.predict(pair.x1()).unwrap());

    let band = random_ranking_band(&model, &pair, &(0..10).collect::<Vec<_>>()).unwrap();
    for k in 0..=4 {
        let lo = all.iter().map(|s| s[k]).fold(f64::INFINITY, f64::min);
        let hi = all.iter().map(|s| s[k]).fold(f64::NEG_INFINITY, f64::max);
        assert!(band.mean[k] >= lo - 1e-12 && band.mean[k] <= hi + 1e-12);
        assert!(band.lo[k] <= band.hi[k]);
    }
}

#[test]
fn unreached_thresholds_have_no_budget() {
    let model = Model::linear(vec![0.1, 0.1], 0.0).unwrap();
    let pair = CounterfactualPair::new(vec![0.0; 2], vec![1.0; 2], 0.0).unwrap();
    let c = patch_budget_test(&model, &pair, &[1, 0]).unwrap();
    assert_eq!(c.k_at_05, None);
    assert_eq!(c.k_at_09, None);
    assert_eq!(c.to_csv().lines().count(), 4);
}
