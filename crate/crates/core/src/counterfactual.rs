//! Counterfactual generators and evaluation harnesses.
//!
//! Generators draw candidates uniformly from per-feature ranges and score
//! them in batches. A binary categorical feature only ever takes one of its
//! range endpoints. Every generator is deterministic given its seed.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use statrs::statistics::{Data, OrderStatistics};

use crate::coalition::CounterfactualPair;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::format::fmt_num;
use crate::model::{FeatureKind, Instance, Predictor};

pub const DEFAULT_THRESHOLD: f64 = 0.8;
pub const DEFAULT_PAIR_EPSILON: f64 = 0.05;
const SCORE_BATCH: usize = 256;

/// Success means the aggregated score reaches `threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CfTarget {
    pub threshold: f64,
}

impl Default for CfTarget {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl CfTarget {
    pub fn new(threshold: f64) -> Result<Self> {
        if !threshold.is_finite() {
            return Err(Error::input("target threshold must be finite"));
        }
        Ok(Self { threshold })
    }

    pub fn met(&self, score: f64) -> bool {
        score >= self.threshold
    }
}

/// Scores an instance by the minimum over several models.
pub struct MinScore<'a> {
    models: Vec<&'a dyn Predictor>,
}

impl<'a> MinScore<'a> {
    pub fn new(models: Vec<&'a dyn Predictor>) -> Result<Self> {
        let Some(first) = models.first() else {
            return Err(Error::input("score aggregator needs at least one model"));
        };
        let d = first.dim();
        if models.iter().any(|m| m.dim() != d) {
            return Err(Error::input("aggregated models disagree on dimension"));
        }
        Ok(Self { models })
    }
}

impl Predictor for MinScore<'_> {
    fn dim(&self) -> usize {
        self.models[0].dim()
    }

    fn predict_rows(&self, rows: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.models[0].predict_rows(rows)?;
        for m in &self.models[1..] {
            for (o, v) in out.iter_mut().zip(m.predict_rows(rows)?) {
                *o = o.min(v);
            }
        }
        Ok(out)
    }

    fn is_smooth(&self) -> bool {
        false
    }
}

/// Where candidates may be drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub ranges: Vec<(f64, f64)>,
    pub kinds: Vec<FeatureKind>,
}

impl SearchSpace {
    pub fn new(ranges: Vec<(f64, f64)>, kinds: Vec<FeatureKind>) -> Result<Self> {
        if ranges.len() != kinds.len() {
            return Err(Error::input(format!(
                "{} ranges for {} feature kinds",
                ranges.len(),
                kinds.len()
            )));
        }
        if let Some((i, r)) = ranges
            .iter()
            .enumerate()
            .find(|(_, r)| !(r.0.is_finite() && r.1.is_finite() && r.0 <= r.1))
        {
            return Err(Error::input(format!("feature {i} has invalid range {r:?}")));
        }
        Ok(Self { ranges, kinds })
    }

    /// `[0, 1]` for every feature, as for pixel data.
    pub fn unit(kinds: Vec<FeatureKind>) -> Self {
        Self {
            ranges: vec![(0.0, 1.0); kinds.len()],
            kinds,
        }
    }

    pub fn from_dataset(ds: &Dataset, kinds: Vec<FeatureKind>) -> Result<Self> {
        Self::new(ds.ranges()?, kinds)
    }

    pub fn dim(&self) -> usize {
        self.ranges.len()
    }

    fn draw(&self, i: usize, rng: &mut ChaCha8Rng) -> f64 {
        let (lo, hi) = self.ranges[i];
        if self.kinds[i] == FeatureKind::CategoricalBinary {
            if rng.random_bool(0.5) {
                hi
            } else {
                lo
            }
        } else if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        }
    }

    /// Clamps into range; categorical values snap to the nearer endpoint.
    fn project(&self, i: usize, v: f64) -> f64 {
        let (lo, hi) = self.ranges[i];
        if self.kinds[i] == FeatureKind::CategoricalBinary {
            if (v - lo).abs() <= (hi - v).abs() {
                lo
            } else {
                hi
            }
        } else {
            v.clamp(lo, hi)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CfOutcome {
    pub success: bool,
    /// The returned point: the first success, or the best candidate seen.
    pub x1: Instance,
    pub score: f64,
    /// Model rows scored, including the baseline.
    pub evaluations: usize,
    /// Best score after each round (shell, generation or batch).
    pub history: Vec<f64>,
}

impl CfOutcome {
    pub fn pair(&self, x0: &[f64], epsilon: f64) -> Result<Option<CounterfactualPair>> {
        if !self.success {
            return Ok(None);
        }
        CounterfactualPair::new(x0.to_vec(), self.x1.clone(), epsilon).map(Some)
    }
}

fn check_start<P: Predictor + ?Sized>(model: &P, x0: &[f64], space: &SearchSpace) -> Result<()> {
    if x0.len() != model.dim() || space.dim() != model.dim() {
        return Err(Error::input(format!(
            "baseline has {} features, search space {}, model {}",
            x0.len(),
            space.dim(),
            model.dim()
        )));
    }
    Ok(())
}

fn flatten(rows: &[Instance]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

/// Replaces a random nonempty feature subset with uniform draws, until the
/// target is met or `budget` candidates have been scored.
pub fn random_search_cf<P: Predictor + ?Sized>(
    model: &P,
    x0: &[f64],
    space: &SearchSpace,
    target: CfTarget,
    budget: usize,
    seed: u64,
) -> Result<CfOutcome> {
    check_start(model, x0, space)?;
    if budget == 0 {
        return Err(Error::input("search budget must be >= 1"));
    }
    let base = model.predict(x0)?;
    let mut best = CfOutcome {
        success: target.met(base),
        x1: x0.to_vec(),
        score: base,
        evaluations: 1,
        history: vec![base],
    };
    if best.success {
        return Ok(best);
    }
    let d = x0.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drawn = 0;
    while drawn < budget {
        let take = SCORE_BATCH.min(budget - drawn);
        let cands: Vec<Instance> = (0..take)
            .map(|_| {
                let size = rng.random_range(1..=d);
                let mut x = x0.to_vec();
                for i in sample(&mut rng, d, size) {
                    x[i] = space.draw(i, &mut rng);
                }
                x
            })
            .collect();
        let scores = model.predict_rows(&flatten(&cands))?;
        drawn += take;
        for (x, s) in cands.into_iter().zip(scores) {
            best.evaluations += 1;
            if target.met(s) {
                best.success = true;
                best.x1 = x;
                best.score = s;
                best.history.push(s);
                return Ok(best);
            }
            if s > best.score {
                best.score = s;
                best.x1 = x;
            }
        }
        best.history.push(best.score);
    }
    Ok(best)
}

/// Samples shells `radii[j-1] <= |z| <= radii[j]` around the baseline in
/// range-normalised coordinates, inner to outer, and returns the first
/// sample meeting the target.
pub fn growing_spheres_cf<P: Predictor + ?Sized>(
    model: &P,
    x0: &[f64],
    space: &SearchSpace,
    target: CfTarget,
    radii: &[f64],
    per_shell: usize,
    seed: u64,
) -> Result<CfOutcome> {
    check_start(model, x0, space)?;
    if radii.is_empty()
        || !(radii[0] > 0.0)
        || radii.windows(2).any(|w| !(w[0] < w[1]))
        || radii.iter().any(|r| !r.is_finite())
    {
        return Err(Error::input(format!(
            "radius schedule must be positive and strictly increasing, got {radii:?}"
        )));
    }
    if per_shell == 0 {
        return Err(Error::input("samples per shell must be >= 1"));
    }
    let base = model.predict(x0)?;
    let mut best = CfOutcome {
        success: target.met(base),
        x1: x0.to_vec(),
        score: base,
        evaluations: 1,
        history: vec![base],
    };
    if best.success {
        return Ok(best);
    }
    let d = x0.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inner = 0.0;
    for &outer in radii {
        let cands: Vec<Instance> = (0..per_shell)
            .map(|_| {
                let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                let radius = rng.random_range(inner..=outer);
                (0..d)
                    .map(|i| {
                        let width = space.ranges[i].1 - space.ranges[i].0;
                        space.project(i, x0[i] + radius * width * dir[i] / norm)
                    })
                    .collect()
            })
            .collect();
        let scores = model.predict_rows(&flatten(&cands))?;
        for (x, s) in cands.into_iter().zip(scores) {
            best.evaluations += 1;
            if target.met(s) {
                best.success = true;
                best.x1 = x;
                best.score = s;
                best.history.push(s);
                return Ok(best);
            }
            if s > best.score {
                best.score = s;
                best.x1 = x;
            }
        }
        best.history.push(best.score);
        inner = outer;
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneticConfig {
    pub population: usize,
    pub generations: usize,
    pub tournament: usize,
    /// Per-feature probability of a fresh uniform draw.
    pub mutation_rate: f64,
    /// Per-feature probability of reverting to the baseline value.
    pub revert_rate: f64,
    pub elites: usize,
}

impl Default for GeneticConfig {
    fn default() -> Self {
        Self {
            population: 40,
            generations: 50,
            tournament: 3,
            mutation_rate: 0.1,
            revert_rate: 0.05,
            elites: 2,
        }
    }
}

impl GeneticConfig {
    fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::input("population must be >= 2"));
        }
        if self.tournament == 0 || self.tournament > self.population {
            return Err(Error::input("tournament size must lie in 1..=population"));
        }
        if self.elites >= self.population {
            return Err(Error::input("elites must be fewer than the population"));
        }
        for (name, p) in [("mutation", self.mutation_rate), ("revert", self.revert_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::input(format!("{name} rate must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Tournament selection, uniform crossover, per-feature mutation and
/// elitism on the aggregated score. Generation 0 perturbs the baseline like
/// [`random_search_cf`]. The search stops at the first generation holding a
/// success and returns its best-scoring member.
pub fn genetic_cf<P: Predictor + ?Sized>(
    model: &P,
    x0: &[f64],
    space: &SearchSpace,
    target: CfTarget,
    cfg: &GeneticConfig,
    seed: u64,
) -> Result<CfOutcome> {
    check_start(model, x0, space)?;
    cfg.validate()?;
    let d = x0.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pop: Vec<Instance> = vec![x0.to_vec()];
    while pop.len() < cfg.population {
        let size = rng.random_range(1..=d);
        let mut x = x0.to_vec();
        for i in sample(&mut rng, d, size) {
            x[i] = space.draw(i, &mut rng);
        }
        pop.push(x);
    }
    let mut scores = model.predict_rows(&flatten(&pop))?;
    let mut evaluations = pop.len();
    let mut history = Vec::new();
    for generation in 0..=cfg.generations {
        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let top = order[0];
        history.push(scores[top]);
        if target.met(scores[top]) || generation == cfg.generations {
            return Ok(CfOutcome {
                success: target.met(scores[top]),
                x1: pop[top].clone(),
                score: scores[top],
                evaluations,
                history,
            });
        }
        let mut next: Vec<Instance> = order[..cfg.elites].iter().map(|&i| pop[i].clone()).collect();
        let mut next_scores: Vec<f64> = order[..cfg.elites].iter().map(|&i| scores[i]).collect();
        let mut children = Vec::with_capacity(cfg.population - cfg.elites);
        while next.len() + children.len() < cfg.population {
            let a = tournament(&scores, cfg.tournament, &mut rng);
            let b = tournament(&scores, cfg.tournament, &mut rng);
            let child: Instance = (0..d)
                .map(|i| {
                    let gene = if rng.random_bool(0.5) { pop[a][i] } else { pop[b][i] };
                    let u: f64 = rng.random();
                    if u < cfg.revert_rate {
                        x0[i]
                    } else if u < cfg.revert_rate + cfg.mutation_rate {
                        space.draw(i, &mut rng)
                    } else {
                        gene
                    }
                })
                .collect();
            children.push(child);
        }
        let child_scores = model.predict_rows(&flatten(&children))?;
        evaluations += children.len();
        next.extend(children);
        next_scores.extend(child_scores);
        pop = next;
        scores = next_scores;
    }
    unreachable!("the final generation always returns")
}

fn tournament(scores: &[f64], size: usize, rng: &mut ChaCha8Rng) -> usize {
    (0..size)
        .map(|_| rng.random_range(0..scores.len()))
        .reduce(|a, b| if scores[b] > scores[a] || (scores[b] == scores[a] && b < a) { b } else { a })
        .expect("tournament size >= 1")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Distance {
    #[default]
    Euclidean,
    Manhattan,
}

impl Distance {
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Distance::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Distance::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        }
    }
}

/// Pairs baselines of one class with their nearest row of another.
///
/// With `count` below the class size, baselines are a seeded sample kept in
/// file order. Ties go to the earliest target row.
pub fn nn_pairing(
    ds: &Dataset,
    baseline_class: &str,
    target_class: &str,
    count: Option<usize>,
    distance: Distance,
    epsilon: f64,
    seed: u64,
) -> Result<Vec<CounterfactualPair>> {
    let base = ds.class(baseline_class);
    let tgt = ds.class(target_class);
    if base.is_empty() {
        return Err(Error::input(format!("no rows labelled '{baseline_class}'")));
    }
    if tgt.is_empty() {
        return Err(Error::input(format!("no rows labelled '{target_class}'")));
    }
    let chosen: Vec<usize> = match count {
        Some(c) if c < base.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx: Vec<usize> = sample(&mut rng, base.len(), c).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|j| base[j]).collect()
        }
        _ => base,
    };
    let rows = ds.rows();
    chosen
        .par_iter()
        .map(|&b| {
            let nearest = tgt
                .iter()
                .copied()
                .map(|t| (distance.eval(&rows[b], &rows[t]), t))
                .reduce(|x, y| if y.0 < x.0 { y } else { x })
                .expect("nonempty class")
                .1;
            CounterfactualPair::new(rows[b].clone(), rows[nearest].clone(), epsilon)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatchCurve {
    pub ranking: Vec<usize>,
    /// `scores[K]`: model at `x0` with the top-`K` features patched.
    pub scores: Vec<f64>,
    pub k_at_05: Option<usize>,
    pub k_at_09: Option<usize>,
}

impl PatchCurve {
    /// Smallest budget whose score reaches `tau`.
    pub fn k_at(&self, tau: f64) -> Option<usize> {
        self.scores.iter().position(|&s| s >= tau)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,feature,score\n");
        for (k, s) in self.scores.iter().enumerate() {
            let f = if k == 0 { String::new() } else { self.ranking[k - 1].to_string() };
            writeln!(out, "{k},{f},{}", fmt_num(*s)).unwrap();
        }
        out
    }
}

/// Scores the partial counterfactuals along `ranking`, which must be a
/// permutation of the changed set.
pub fn patch_budget_test<P: Predictor + ?Sized>(
    model: &P,
    pair: &CounterfactualPair,
    ranking: &[usize],
) -> Result<PatchCurve> {
    let mut sorted = ranking.to_vec();
    sorted.sort_unstable();
    if sorted != pair.changed() {
        return Err(Error::input(format!(
            "ranking {ranking:?} is not a permutation of the changed set {:?}",
            pair.changed()
        )));
    }
    let mut rows = Vec::with_capacity((ranking.len() + 1) * pair.dim());
    for k in 0..=ranking.len() {
        rows.extend(pair.mixed_input(&ranking[..k])?);
    }
    let scores = model.predict_rows(&rows)?;
    let mut curve = PatchCurve {
        ranking: ranking.to_vec(),
        scores,
        k_at_05: None,
        k_at_09: None,
    };
    curve.k_at_05 = curve.k_at(0.5);
    curve.k_at_09 = curve.k_at(0.9);
    Ok(curve)
}

/// Changed features by attribution, largest first; ties by index.
pub fn ranking_by(attribution: &[f64], changed: &[usize]) -> Vec<usize> {
    let mut r = changed.to_vec();
    r.sort_by(|&a, &b| attribution[b].total_cmp(&attribution[a]).then(a.cmp(&b)));
    r
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandomBand {
    pub seeds: Vec<u64>,
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl RandomBand {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,mean,q10,q90\n");
        for k in 0..self.mean.len() {
            writeln!(out, "{k},{},{},{}", fmt_num(self.mean[k]), fmt_num(self.lo[k]), fmt_num(self.hi[k])).unwrap();
        }
        out
    }
}

/// Patch curves of uniformly random rankings: per-budget mean with a
/// 10-90% quantile band.
pub fn random_ranking_band<P: Predictor + ?Sized>(
    model: &P,
    pair: &CounterfactualPair,
    seeds: &[u64],
) -> Result<RandomBand> {
    if seeds.is_empty() {
        return Err(Error::input("random baseline needs at least one seed"));
    }
    let curves: Vec<PatchCurve> = seeds
        .iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let mut r = pair.changed().to_vec();
            rand::seq::SliceRandom::shuffle(r.as_mut_slice(), &mut rng);
            patch_budget_test(model, pair, &r)
        })
        .collect::<Result<_>>()?;
    let len = curves[0].scores.len();
    let mut band = RandomBand {
        seeds: seeds.to_vec(),
        mean: Vec::with_capacity(len),
        lo: Vec::with_capacity(len),
        hi: Vec::with_capacity(len),
    };
    for k in 0..len {
        let col: Vec<f64> = curves.iter().map(|c| c.scores[k]).collect();
        band.mean.push(col.iter().sum::<f64>() / col.len() as f64);
        let mut data = Data::new(col);
        band.lo.push(data.quantile(0.1));
        band.hi.push(data.quantile(0.9));
    }
    Ok(band)
}
