//! Timing of the grid-state closed form against brute-force enumeration.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cube::{residual_grid, CubeTable, GridSpec, ResidualGrid};
use crate::error::{Error, Result};
use crate::format::fmt_num;
use crate::microgame::{
    enumerate_les, equal_surplus_shares, grid_state_shares, les_preset, LesRule, MicroGame,
    ENUMERATION_CAP,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchConfig {
    pub ks: Vec<usize>,
    pub ms: Vec<usize>,
    /// Timed repetitions after one discarded warm-up.
    pub repetitions: usize,
    /// Enumeration is skipped above this many micro-players.
    pub enumeration_cap: usize,
    /// A timed sample repeats the call until at least this long has passed.
    pub min_sample: Duration,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            ks: vec![2, 3],
            ms: (2..=10).collect(),
            repetitions: 5,
            enumeration_cap: 20,
            min_sample: Duration::from_millis(2),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub k: usize,
    pub m: usize,
    pub n: usize,
    /// Seconds per call, median over repetitions.
    pub grid_state: f64,
    /// Absent when `n` exceeds the enumeration cap.
    pub enumeration: Option<f64>,
    pub equal_surplus: f64,
}

/// Least-squares line `ln t = ln c + slope * ln form`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit {
    pub c: f64,
    pub slope: f64,
    pub r_squared: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub rows: Vec<BenchRow>,
    /// Against `k (m+1)^k`.
    pub grid_fit: Option<ScalingFit>,
    /// Against `n 2^n`.
    pub enumeration_fit: Option<ScalingFit>,
}

impl BenchResult {
    pub fn row(&self, k: usize, m: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.k == k && r.m == m)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,m,n,grid_state_s,enumeration_s,equal_surplus_s\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.k,
                r.m,
                r.n,
                fmt_num(r.grid_state),
                r.enumeration.map(fmt_num).unwrap_or_default(),
                fmt_num(r.equal_surplus)
            )
            .unwrap();
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for (name, fit) in [("grid-state ~ c k(m+1)^k", &self.grid_fit), ("enumeration ~ c n 2^n", &self.enumeration_fit)] {
            match fit {
                Some(f) => writeln!(
                    out,
                    "{name}: c = {}, slope = {}, R^2 = {} over {} points",
                    fmt_num(f.c),
                    fmt_num(f.slope),
                    fmt_num(f.r_squared),
                    f.points
                )
                .unwrap(),
                None => writeln!(out, "{name}: not enough points").unwrap(),
            }
        }
        out
    }
}

/// A residual grid from uniform noise in `[-1, 1]`.
pub fn random_residual(k: usize, m: usize, rng: &mut impl Rng) -> Result<ResidualGrid<f64>> {
    let spec = GridSpec::uniform((0..k).collect(), m)?;
    let len = spec.shape().len();
    let values = (0..len).map(|_| rng.random_range(-1.0..=1.0)).collect();
    Ok(residual_grid(&CubeTable::from_values(spec, values)?))
}

/// Median seconds per call of `f`.
pub fn time_per_call(repetitions: usize, min_sample: Duration, mut f: impl FnMut()) -> f64 {
    let start = Instant::now();
    f();
    let once = start.elapsed().max(Duration::from_nanos(1));
    let iters = (min_sample.as_secs_f64() / once.as_secs_f64()).ceil().max(1.0) as u32;
    let mut samples: Vec<f64> = (0..repetitions.max(1))
        .map(|_| {
            let t = Instant::now();
            for _ in 0..iters {
                f();
            }
            t.elapsed().as_secs_f64() / iters as f64
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    let mid = samples.len() / 2;
    if samples.len() % 2 == 1 {
        samples[mid]
    } else {
        0.5 * (samples[mid - 1] + samples[mid])
    }
}

pub fn bench_scaling(cfg: &BenchConfig) -> Result<BenchResult> {
    if cfg.ks.is_empty() || cfg.ms.is_empty() {
        return Err(Error::input("benchmark ranges must be nonempty"));
    }
    if cfg.ks.iter().any(|&k| k < 2) || cfg.ms.contains(&0) {
        return Err(Error::input("benchmark needs k >= 2 and m >= 1"));
    }
    if cfg.repetitions == 0 {
        return Err(Error::input("at least one repetition is required"));
    }
    let cap = cfg.enumeration_cap.min(ENUMERATION_CAP);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    for &k in &cfg.ks {
        for &m in &cfg.ms {
            let grid = random_residual(k, m, &mut rng)?;
            let mg = MicroGame::new(&grid);
            let n = mg.players();
            let b = les_preset::<f64>(LesRule::Shapley, n)?;
            let grid_state = time_per_call(cfg.repetitions, cfg.min_sample, || {
                black_box(grid_state_shares(black_box(&mg), &b).expect("valid weights"));
            });
            let enumeration = (n <= cap).then(|| {
                time_per_call(cfg.repetitions, cfg.min_sample, || {
                    black_box(enumerate_les(black_box(&mg), &b).expect("within cap"));
                })
            });
            let equal_surplus = time_per_call(cfg.repetitions, cfg.min_sample, || {
                black_box(equal_surplus_shares(black_box(&mg)));
            });
            rows.push(BenchRow {
                k,
                m,
                n,
                grid_state,
                enumeration,
                equal_surplus,
            });
        }
    }
    let grid_fit = log_fit(rows.iter().map(|r| {
        let form = r.k as f64 * ((r.m + 1) as f64).powi(r.k as i32);
        (form, r.grid_state)
    }));
    let enumeration_fit = log_fit(rows.iter().filter_map(|r| {
        r.enumeration.map(|t| (r.n as f64 * 2f64.powi(r.n as i32), t))
    }));
    Ok(BenchResult {
        rows,
        grid_fit,
        enumeration_fit,
    })
}

/// Ordinary least squares on `(ln form, ln t)`; `None` below two distinct
/// forms.
pub fn log_fit(points: impl Iterator<Item = (f64, f64)>) -> Option<ScalingFit> {
    let pts: Vec<(f64, f64)> = points.map(|(f, t)| (f.ln(), t.ln())).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    Some(ScalingFit {
        c: intercept.exp(),
        slope,
        r_squared: if syy == 0.0 { 1.0 } else { 1.0 - sse / syy },
        points: pts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law_fits_perfectly() {
        let f = log_fit((1..6).map(|x| (x as f64, 3.0 * (x as f64).powi(2)))).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.c - 3.0).abs() < 1e-9);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!(log_fit(std::iter::once((1.0, 1.0))).is_none());
    }

    #[test]
    fn random_residuals_vanish_on_the_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_residual(3, 2, &mut rng).unwrap();
        g.shape().for_each_state(|idx, p| {
            if p.contains(&0) {
                assert_eq!(g.values()[idx], 0.0);
            }
        });
    }

    #[test]
    fn enumeration_omitted_above_cap() {
        let cfg = BenchConfig {
            ks: vec![2],
            ms: vec![1, 6],
            repetitions: 1,
            enumeration_cap: 4,
            min_sample: Duration::from_micros(10),
            seed: 1,
        };
        let r = bench_scaling(&cfg).unwrap();
        assert!(r.row(2, 1).unwrap().enumeration.is_some());
        assert!(r.row(2, 6).unwrap().enumeration.is_none());
        assert!(r.rows.iter().all(|r| r.grid_state > 0.0 && r.equal_surplus > 0.0));
    }
}
