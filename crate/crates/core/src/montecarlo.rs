//! Permutation-sampling estimators for when exhaustive enumeration is out
//! of reach.
//!
//! Sample `j` draws its permutation from the ChaCha stream `j` of the
//! configured seed, so results do not depend on how samples are spread
//! over worker threads. Blocks of samples are merged in index order.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::coalition::CounterfactualPair;
use crate::cube::MixtureBatch;
use crate::error::{Error, Result};
use crate::format::fmt_num;
use crate::model::{FeatureKind, Predictor};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McConfig {
    pub permutations: usize,
    pub seed: u64,
    /// Pair every sampled permutation with its reversal.
    pub antithetic: bool,
    /// Upper bound on rows per model call.
    pub batch_size: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            permutations: 1000,
            seed: 0,
            antithetic: false,
            batch_size: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McEstimate {
    /// Changed features, ascending.
    pub features: Vec<usize>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub permutations: usize,
    pub seed: u64,
    pub delta_y: f64,
}

impl McEstimate {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature,estimate,stderr\n");
        for ((f, m), s) in self.features.iter().zip(&self.mean).zip(&self.stderr) {
            writeln!(out, "{f},{},{}", fmt_num(*m), fmt_num(*s)).unwrap();
        }
        out
    }
}

fn permutation(seed: u64, sample: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample as u64);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    perm
}

/// Shapley attribution of the macro game by permutation sampling.
pub fn mc_macro_shapley<P: Predictor + ?Sized>(
    model: &P,
    pair: &CounterfactualPair,
    kinds: &[FeatureKind],
    cfg: &McConfig,
) -> Result<McEstimate> {
    mc_micro_shapley(model, pair, kinds, 1, cfg)
}

/// Shapley attribution of the full micro-game with `m` steps per changed
/// feature. The game value of a micro-coalition is the (mixture-extended)
/// model at its grid state minus `g(x0)`. With `m = 1` this is the macro
/// game, drawn from the same permutation streams.
pub fn mc_micro_shapley<P: Predictor + ?Sized>(
    model: &P,
    pair: &CounterfactualPair,
    kinds: &[FeatureKind],
    m: usize,
    cfg: &McConfig,
) -> Result<McEstimate> {
    let support = pair.changed();
    let k = support.len();
    if k == 0 {
        return Err(Error::input("the changed set is empty"));
    }
    if m == 0 {
        return Err(Error::input("grid resolution must be >= 1"));
    }
    if cfg.permutations == 0 {
        return Err(Error::input("at least one permutation is required"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::input("batch size must be positive"));
    }
    if model.dim() != pair.dim() {
        return Err(Error::input("pair and model dimensions differ"));
    }
    let n = k * m;
    let endpoints = model.predict_rows(&[pair.x0(), &pair.x1_effective()[..]].concat())?;
    let (g0, g1) = (endpoints[0], endpoints[1]);

    let samples = if cfg.antithetic {
        cfg.permutations.div_ceil(2)
    } else {
        cfg.permutations
    };
    let walks_per_sample = if cfg.antithetic { 2 } else { 1 };
    let states_per_walk = n.saturating_sub(1).max(1);
    let per_block = (cfg.batch_size / (states_per_walk * walks_per_sample)).max(1);

    let blocks: Vec<(usize, usize)> = (0..samples)
        .step_by(per_block)
        .map(|s| (s, (s + per_block).min(samples)))
        .collect();

    let totals: Vec<Vec<Vec<f64>>> = blocks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut walks = Vec::with_capacity((hi - lo) * walks_per_sample);
            for j in lo..hi {
                let perm = permutation(cfg.seed, j, n);
                if cfg.antithetic {
                    let rev: Vec<usize> = perm.iter().rev().copied().collect();
                    walks.push(perm);
                    walks.push(rev);
                } else {
                    walks.push(perm);
                }
            }
            let mut sliders = Vec::with_capacity(walks.len() * n.saturating_sub(1));
            for walk in &walks {
                let mut counts = vec![0usize; k];
                for &player in &walk[..n - 1] {
                    counts[player / m] += 1;
                    sliders.push(counts.iter().map(|&c| c as f64 / m as f64).collect());
                }
            }
            let inner = if sliders.is_empty() {
                Vec::new()
            } else {
                MixtureBatch::build(pair, kinds, support, sliders).evaluate(model)?
            };
            let mut out = Vec::with_capacity(hi - lo);
            for (w, pair_walks) in walks.chunks(walks_per_sample).enumerate() {
                let mut acc = vec![0.0; k];
                for (s, walk) in pair_walks.iter().enumerate() {
                    let base = (w * walks_per_sample + s) * (n - 1);
                    let mut prev = g0;
                    for (step, &player) in walk.iter().enumerate() {
                        let y = if step + 1 == n { g1 } else { inner[base + step] };
                        acc[player / m] += y - prev;
                        prev = y;
                    }
                }
                if walks_per_sample == 2 {
                    acc.iter_mut().for_each(|v| *v *= 0.5);
                }
                out.push(acc);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut sum = vec![0.0; k];
    let mut count = 0usize;
    for t in totals.iter().flatten() {
        sum.iter_mut().zip(t).for_each(|(s, v)| *s += v);
        count += 1;
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0; k];
    for t in totals.iter().flatten() {
        for ((q, v), mu) in sq.iter_mut().zip(t).zip(&mean) {
            *q += (v - mu) * (v - mu);
        }
    }
    let stderr = sq
        .iter()
        .map(|q| {
            if count > 1 {
                (q / (count - 1) as f64 / count as f64).sqrt()
            } else {
                f64::NAN
            }
        })
        .collect();
    Ok(McEstimate {
        features: support.to_vec(),
        mean,
        stderr,
        permutations: count * walks_per_sample,
        seed: cfg.seed,
        delta_y: g1 - g0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Model;

    fn cfg(perms: usize, seed: u64) -> McConfig {
        McConfig {
            permutations: perms,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn linear_model_is_exact_after_one_permutation() {
        let w = [0.5, -1.5, 2.0];
        let m = Model::linear(w.to_vec(), 0.3).unwrap();
        let pair = CounterfactualPair::new(vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 2.5], 0.0).unwrap();
        let kinds = [FeatureKind::Continuous; 3];
        for micro in [1, 4] {
            let est = mc_micro_shapley(&m, &pair, &kinds, micro, &cfg(1, 9)).unwrap();
            for (j, &i) in est.features.iter().enumerate() {
                assert!((est.mean[j] - w[i] * pair.delta()[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn estimates_telescope_to_total_change() {
        let m = Model::multilinear(3, vec![(vec![0, 1, 2], 3.0), (vec![0, 1], -1.0)]).unwrap();
        let pair = CounterfactualPair::new(vec![0.1, 0.2, 0.3], vec![0.9, 0.7, 1.0], 0.0).unwrap();
        let est = mc_micro_shapley(&m, &pair, &[FeatureKind::Continuous; 3], 3, &cfg(57, 2)).unwrap();
        let total: f64 = est.mean.iter().sum();
        assert!((total - est.delta_y).abs() < 1e-12);
    }

    #[test]
    fn seed_determinism_and_thread_independence() {
        let m = Model::multilinear(3, vec![(vec![0, 2], 1.0), (vec![1], 0.5)]).unwrap();
        let pair = CounterfactualPair::new(vec![0.0; 3], vec![1.0; 3], 0.0).unwrap();
        let kinds = [FeatureKind::Continuous; 3];
        let c = McConfig {
            permutations: 300,
            seed: 4,
            antithetic: false,
            batch_size: 16,
        };
        let a = mc_micro_shapley(&m, &pair, &kinds, 2, &c).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| mc_micro_shapley(&m, &pair, &kinds, 2, &c)).unwrap();
        assert_eq!(a, b);
        let wide = McConfig { batch_size: 4096, ..c };
        let c2 = mc_micro_shapley(&m, &pair, &kinds, 2, &wide).unwrap();
        // Block layout changes only the merge grouping, never the samples.
        for (x, y) in a.mean.iter().zip(&c2.mean) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_resolution_is_the_macro_estimator() {
        let m = Model::multilinear(4, vec![(vec![0, 1], 1.0), (vec![2, 3], 2.0), (vec![0, 3], -1.0)]).unwrap();
        let pair = CounterfactualPair::new(vec![0.0; 4], vec![1.0; 4], 0.0).unwrap();
        let kinds = [FeatureKind::Continuous; 4];
        let a = mc_macro_shapley(&m, &pair, &kinds, &cfg(200, 7)).unwrap();
        let b = mc_micro_shapley(&m, &pair, &kinds, 1, &cfg(200, 7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_changed_set_rejected() {
        let m = Model::linear(vec![1.0, 1.0], 0.0).unwrap();
        let pair = CounterfactualPair::new(vec![0.0; 2], vec![0.0; 2], 0.0).unwrap();
        assert!(mc_macro_shapley(&m, &pair, &[FeatureKind::Continuous; 2], &cfg(5, 0)).is_err());
    }

    #[test]
    fn antithetic_counts_both_directions() {
        let m = Model::multilinear(2, vec![(vec![0, 1], 1.0)]).unwrap();
        let pair = CounterfactualPair::new(vec![0.0; 2], vec![1.0; 2], 0.0).unwrap();
        let c = McConfig { antithetic: true, ..cfg(10, 1) };
        let est = mc_macro_shapley(&m, &pair, &[FeatureKind::Continuous; 2], &c).unwrap();
        assert_eq!(est.permutations, 10);
        // A permutation and its reversal cover both orders of two players.
        assert_eq!(est.mean, vec![0.5, 0.5]);
        assert_eq!(est.stderr, vec![0.0, 0.0]);
    }
}
