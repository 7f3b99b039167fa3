use cubeshap::explain::micro_shapley_locals;
use cubeshap::zoo::random_multilinear;
use cubeshap::{mc_macro_shapley, mc_micro_shapley, CounterfactualPair, FeatureKind, McConfig, Model, Predictor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Exact Shapley values of the full micro-game, from `2^(k m)` direct model
/// evaluations at `x0 + (steps / m) * delta`.
fn full_micro_shapley(model: &Model, pair: &CounterfactualPair, m: usize) -> Vec<f64> {
    let ch = pair.changed();
    let k = ch.len();
    let n = k * m;
    let mut v = vec![0.0; 1 << n];
    let g0 = model.predict(pair.x0()).unwrap();
    for a in 0..1usize << n {
        let mut x = pair.x0().to_vec();
        for (j, &i) in ch.iter().enumerate() {
            let steps = (0..m).filter(|s| a >> (j * m + s) & 1 == 1).count();
            x[i] += steps as f64 / m as f64 * pair.delta()[i];
        }
        v[a] = model.predict(&x).unwrap() - g0;
    }
    let mut fact = vec![1.0f64; n + 1];
    for i in 1..=n {
        fact[i] = fact[i - 1] * i as f64;
    }
    let mut out = vec![0.0; k];
    for p in 0..n {
        for a in 0..1usize << n {
            if a >> p & 1 == 0 {
                let s = a.count_ones() as usize;
                let w = fact[s] * fact[n - s - 1] / fact[n];
                out[p / m] += w * (v[a | 1 << p] - v[a]);
            }
        }
    }
    out
}

fn unit_pair(d: usize) -> CounterfactualPair {
    CounterfactualPair::new(vec![0.0; d], vec![1.0; d], 0.0).unwrap()
}

fn cfg(permutations: usize, seed: u64) -> McConfig {
    McConfig {
        permutations,
        seed,
        ..Default::default()
    }
}

#[test]
fn full_game_equals_pot_aggregation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (k, m) in [(2, 3), (3, 2), (4, 1), (3, 3)] {
        let model = random_multilinear(k, k, &mut rng);
        let pair = CounterfactualPair::new(vec![0.2; k], (0..k).map(|i| 1.0 - 0.3 * i as f64).collect(), 0.0).unwrap();
        let direct = full_micro_shapley(&model, &pair, m);
        let (pots, _) = micro_shapley_locals(&model, &pair, &model.feature_kinds(), m).unwrap();
        for (a, b) in direct.iter().zip(&pots) {
            assert!((a - b).abs() < 1e-10, "k={k} m={m}: {direct:?} vs {pots:?}");
        }
    }
}

#[test]
fn macro_estimates_land_near_exact_shapley() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = random_multilinear(3, 3, &mut rng);
    let pair = unit_pair(3);
    let exact = full_micro_shapley(&model, &pair, 1);
    let est = mc_macro_shapley(&model, &pair, &[FeatureKind::Continuous; 3], &cfg(20_000, 5)).unwrap();
    for (e, x) in est.mean.iter().zip(&exact) {
        assert!((e - x).abs() < 0.01, "{e} vs {x}");
    }
}

#[test]
fn estimates_stay_within_four_standard_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut cells = 0;
    let mut inside = 0;
    for (k, m) in [(2, 3), (3, 2), (4, 1), (3, 3)] {
        let model = random_multilinear(k, k, &mut rng);
        let pair = unit_pair(k);
        let exact = full_micro_shapley(&model, &pair, m);
        for seed in 0..20 {
            let est = mc_micro_shapley(&model, &pair, &vec![FeatureKind::Continuous; k], m, &cfg(400, seed)).unwrap();
            for j in 0..k {
                cells += 1;
                if (est.mean[j] - exact[j]).abs() <= 4.0 * est.stderr[j] + 1e-12 {
                    inside += 1;
                }
            }
        }
    }
    assert!(inside as f64 >= 0.95 * cells as f64, "{inside}/{cells}");
}

#[test]
fn per_run_estimates_telescope() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..10 {
        let model = random_multilinear(5, 3, &mut rng);
        let pair = CounterfactualPair::new(vec![0.5; 5], vec![0.1, 0.9, 0.3, 1.2, -0.4], 0.0).unwrap();
        let est = mc_micro_shapley(&model, &pair, &[FeatureKind::Continuous; 5], 3, &cfg(37, seed)).unwrap();
        assert!((est.mean.iter().sum::<f64>() - est.delta_y).abs() < 1e-12);
    }
}

#[test]
fn unit_resolution_agrees_with_macro_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = random_multilinear(4, 4, &mut rng);
    let pair = unit_pair(4);
    let kinds = [FeatureKind::Continuous; 4];
    let micro = mc_micro_shapley(&model, &pair, &kinds, 1, &cfg(10_000, 1)).unwrap();
    let macro_ = mc_macro_shapley(&model, &pair, &kinds, &cfg(10_000, 2)).unwrap();
    for j in 0..4 {
        let se = (micro.stderr[j].powi(2) + macro_.stderr[j].powi(2)).sqrt();
        assert!((micro.mean[j] - macro_.mean[j]).abs() <= 3.0 * se, "feature {j}");
    }
}

#[test]
fn antithetic_sampling_is_not_worse_on_symmetric_games() {
    let model = Model::multilinear(
        3,
        vec![
            (vec![0, 1, 2], 1.0),
            (vec![0, 1], 0.5),
            (vec![0, 2], 0.5),
            (vec![1, 2], 0.5),
        ],
    )
    .unwrap();
    let pair = unit_pair(3);
    let kinds = [FeatureKind::Continuous; 3];
    for m in [1, 2] {
        let plain = mc_micro_shapley(&model, &pair, &kinds, m, &cfg(4000, 9)).unwrap();
        let anti = mc_micro_shapley(
            &model,
            &pair,
            &kinds,
            m,
            &McConfig {
                antithetic: true,
                ..cfg(4000, 9)
            },
        )
        .unwrap();
        for j in 0..3 {
            assert!(anti.stderr[j].powi(2) <= 1.05 * plain.stderr[j].powi(2), "m={m} feature {j}");
        }
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = random_multilinear(4, 2, &mut rng);
    let pair = unit_pair(4);
    let kinds = [FeatureKind::Continuous; 4];
    let c = McConfig {
        batch_size: 64,
        ..cfg(3000, 77)
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| mc_micro_shapley(&model, &pair, &kinds, 3, &c).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(1));
}
