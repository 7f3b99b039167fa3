//! Reference limits for refining grids: diagonal path integrals of the
//! residual, convergence traces and the resolution saturation rule.

use std::fmt::Write as _;

use serde::Serialize;

use crate::coalition::CounterfactualPair;
use crate::cube::{eval_cube, residual_at, residual_grid, GridSpec, ResidualGrid};
use crate::error::{Error, Result};
use crate::format::fmt_num;
use crate::microgame::{grid_state_shares, les_preset, LesRule, MicroGame};
use crate::model::{FeatureKind, Predictor};

pub const DEFAULT_NODES: usize = 257;
pub const DEFAULT_FD_STEP: f64 = 1e-4;
pub const DEFAULT_SCHEDULE: [usize; 10] = [1, 2, 3, 4, 5, 6, 8, 10, 12, 15];

/// `int_0^1 d r_u / d t_i (tau 1_k) d tau` for each pot feature.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagonalIgResult {
    pub pot: Vec<usize>,
    pub integrals: Vec<f64>,
    pub nodes: usize,
    pub fd_step: f64,
    /// `r_u(1_k)`.
    pub phi: f64,
    /// False for models where the limit is not expected to be approached.
    pub smooth: bool,
}

impl DiagonalIgResult {
    pub fn total(&self) -> f64 {
        self.integrals.iter().sum()
    }
}

/// Trapezoid rule over `nodes` equispaced points of the diagonal, with
/// central differences of a batch residual evaluator. Differences near the
/// cube boundary are clamped into `[0, 1]` and become one-sided.
///
/// Returns the integrals and `r(1_k)`.
pub fn diagonal_ig_with(
    k: usize,
    nodes: usize,
    fd_step: f64,
    mut residual: impl FnMut(&[Vec<f64>]) -> Result<Vec<f64>>,
) -> Result<(Vec<f64>, f64)> {
    if nodes < 2 {
        return Err(Error::input("quadrature needs at least two nodes"));
    }
    if !(fd_step > 0.0 && fd_step < 0.5) {
        return Err(Error::input("finite-difference step must lie in (0, 0.5)"));
    }
    let mut points = Vec::with_capacity(nodes * k * 2 + 1);
    let mut spans = Vec::with_capacity(nodes * k);
    for j in 0..nodes {
        let tau = j as f64 / (nodes - 1) as f64;
        for i in 0..k {
            let lo = (tau - fd_step).max(0.0);
            let hi = (tau + fd_step).min(1.0);
            let mut a = vec![tau; k];
            let mut b = vec![tau; k];
            a[i] = lo;
            b[i] = hi;
            points.push(a);
            points.push(b);
            spans.push(hi - lo);
        }
    }
    points.push(vec![1.0; k]);
    let r = residual(&points)?;
    let h = 1.0 / (nodes - 1) as f64;
    let mut integrals = vec![0.0; k];
    for j in 0..nodes {
        let w = if j == 0 || j == nodes - 1 { 0.5 * h } else { h };
        for (i, acc) in integrals.iter_mut().enumerate() {
            let c = j * k + i;
            *acc += w * (r[2 * c + 1] - r[2 * c]) / spans[c];
        }
    }
    Ok((integrals, r[r.len() - 1]))
}

pub fn diagonal_ig<P: Predictor + ?Sized>(
    model: &P,
    pair: &CounterfactualPair,
    kinds: &[FeatureKind],
    pot: &[usize],
    nodes: usize,
    fd_step: f64,
) -> Result<DiagonalIgResult> {
    let (integrals, phi) = diagonal_ig_with(pot.len(), nodes, fd_step, |pts| {
        residual_at(model, pair, kinds, pot, pts)
    })?;
    Ok(DiagonalIgResult {
        pot: pot.to_vec(),
        integrals,
        nodes,
        fd_step,
        phi,
        smooth: model.is_smooth(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub m: usize,
    pub feature: usize,
    pub share: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTrace {
    pub rows: Vec<ConvergenceRow>,
    pub limit: Vec<f64>,
    pub smooth: bool,
}

impl ConvergenceTrace {
    /// Gaps of one pot feature (by position), in schedule order.
    pub fn gaps(&self, feature: usize) -> Vec<f64> {
        self.rows.iter().filter(|r| r.feature == feature).map(|r| r.gap).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("m,feature,share,gap\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.m, r.feature, fmt_num(r.share), fmt_num(r.gap)).unwrap();
        }
        out
    }
}

fn check_schedule(schedule: &[usize]) -> Result<()> {
    if schedule.is_empty() || schedule[0] == 0 || schedule.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::input(format!(
            "refinement schedule must be positive and strictly increasing, got {schedule:?}"
        )));
    }
    Ok(())
}

fn shapley_shares(grid: &ResidualGrid<f64>) -> Result<Vec<f64>> {
    let mg = MicroGame::new(grid);
    grid_state_shares(&mg, &les_preset(LesRule::Shapley, mg.players())?)
}

/// Micro-Shapley shares of an analytic residual over a schedule of uniform
/// resolutions, with gaps to `limit`. `features` labels the pot axes.
pub fn convergence_curve_fn(
    features: &[usize],
    schedule: &[usize],
    limit: &[f64],
    residual: impl Fn(&[f64]) -> f64,
) -> Result<ConvergenceTrace> {
    check_schedule(schedule)?;
    let mut rows = Vec::new();
    for &m in schedule {
        let grid = ResidualGrid::from_fn(GridSpec::uniform(features.to_vec(), m)?, &residual);
        for (a, share) in shapley_shares(&grid)?.into_iter().enumerate() {
            rows.push(ConvergenceRow {
                m,
                feature: features[a],
                share,
                gap: (share - limit[a]).abs(),
            });
        }
    }
    Ok(ConvergenceTrace {
        rows,
        limit: limit.to_vec(),
        smooth: true,
    })
}

pub fn convergence_curve<P: Predictor + ?Sized>(
    model: &P,
    pair: &CounterfactualPair,
    kinds: &[FeatureKind],
    pot: &[usize],
    schedule: &[usize],
) -> Result<ConvergenceTrace> {
    check_schedule(schedule)?;
    let limit = diagonal_ig(model, pair, kinds, pot, DEFAULT_NODES, DEFAULT_FD_STEP)?;
    let mut rows = Vec::new();
    for &m in schedule {
        let spec = GridSpec::uniform(pot.to_vec(), m)?;
        let grid = residual_grid(&eval_cube(model, pair, kinds, &spec)?);
        for (a, share) in shapley_shares(&grid)?.into_iter().enumerate() {
            rows.push(ConvergenceRow {
                m,
                feature: pot[a],
                share,
                gap: (share - limit.integrals[a]).abs(),
            });
        }
    }
    Ok(ConvergenceTrace {
        rows,
        limit: limit.integrals,
        smooth: limit.smooth,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub enum ShareUnits {
    /// Shares divided by the total change.
    #[default]
    FractionOfDelta,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaturationPolicy {
    pub tolerance: f64,
    pub consecutive: usize,
    pub schedule: Vec<usize>,
    pub units: ShareUnits,
}

impl Default for SaturationPolicy {
    fn default() -> Self {
        Self {
            tolerance: 1e-3,
            consecutive: 3,
            schedule: DEFAULT_SCHEDULE.to_vec(),
            units: ShareUnits::FractionOfDelta,
        }
    }
}

impl SaturationPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::input("saturation tolerance must be positive"));
        }
        if self.consecutive == 0 {
            return Err(Error::input("saturation needs at least one stable refinement"));
        }
        check_schedule(&self.schedule)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaturationResult {
    /// First resolution from which shares stayed stable.
    pub m: usize,
    pub saturated: bool,
    /// `(m, shares)` for every resolution evaluated.
    pub trace: Vec<(usize, Vec<f64>)>,
}

/// Walks the schedule until `consecutive` successive refinements each move
/// no share by `tolerance` or more.
pub fn saturate_with(
    policy: &SaturationPolicy,
    mut shares_at: impl FnMut(usize) -> Result<Vec<f64>>,
) -> Result<SaturationResult> {
    policy.validate()?;
    let mut trace: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut stable_run = 0;
    for &m in &policy.schedule {
        let shares = shares_at(m)?;
        if let Some((_, prev)) = trace.last() {
            let change = prev
                .iter()
                .zip(&shares)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            stable_run = if change < policy.tolerance { stable_run + 1 } else { 0 };
        }
        trace.push((m, shares));
        if stable_run == policy.consecutive {
            let start = trace.len() - 1 - policy.consecutive;
            return Ok(SaturationResult {
                m: trace[start].0,
                saturated: true,
                trace,
            });
        }
    }
    Ok(SaturationResult {
        m: trace.last().map(|t| t.0).unwrap_or(0),
        saturated: false,
        trace,
    })
}

/// Saturation on the per-feature local micro-Shapley attributions.
pub fn saturate_m<P: Predictor + ?Sized>(
    model: &P,
    pair: &CounterfactualPair,
    kinds: &[FeatureKind],
    policy: &SaturationPolicy,
) -> Result<SaturationResult> {
    saturate_with(policy, |m| {
        let (locals, delta_y) = crate::explain::micro_shapley_locals(model, pair, kinds, m)?;
        Ok(match policy.units {
            ShareUnits::FractionOfDelta if delta_y != 0.0 => {
                locals.iter().map(|v| v / delta_y).collect()
            }
            _ => locals,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn analytic(pts: &[Vec<f64>], f: impl Fn(&[f64]) -> f64) -> Result<Vec<f64>> {
        Ok(pts.iter().map(|t| f(t)).collect())
    }

    #[test]
    fn product_residual_integrals() {
        let (ig, phi) = diagonal_ig_with(2, DEFAULT_NODES, DEFAULT_FD_STEP, |p| {
            analytic(p, |t| t[0] * t[1])
        })
        .unwrap();
        assert!((ig[0] - 0.5).abs() < 1e-6 && (ig[1] - 0.5).abs() < 1e-6);
        assert_eq!(phi, 1.0);
    }

    #[test]
    fn square_times_linear_integrals() {
        let (ig, _) = diagonal_ig_with(2, DEFAULT_NODES, DEFAULT_FD_STEP, |p| {
            analytic(p, |t| t[0] * t[0] * t[1])
        })
        .unwrap();
        assert!((ig[0] - 2.0 / 3.0).abs() < 1e-5);
        assert!((ig[1] - 1.0 / 3.0).abs() < 1e-5);
        assert!((ig[0] + ig[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn multilinear_shares_are_half_at_every_m() {
        let tr = convergence_curve_fn(&[0, 1], &[1, 2, 3, 7], &[0.5, 0.5], |t| t[0] * t[1]).unwrap();
        for r in &tr.rows {
            assert!((r.share - 0.5).abs() < 1e-14, "m={} share={}", r.m, r.share);
        }
    }

    #[test]
    fn saturation_picks_start_of_stable_run() {
        let policy = SaturationPolicy {
            tolerance: 0.01,
            consecutive: 2,
            schedule: vec![1, 2, 3, 4, 5, 6],
            ..Default::default()
        };
        let values = [0.0, 0.5, 0.6, 0.605, 0.606, 0.9];
        let res = saturate_with(&policy, |m| Ok(vec![values[m - 1]])).unwrap();
        assert!(res.saturated);
        assert_eq!(res.m, 3);
        assert_eq!(res.trace.len(), 5);
    }

    #[test]
    fn saturation_reports_exhaustion() {
        let policy = SaturationPolicy {
            tolerance: 1e-6,
            consecutive: 1,
            schedule: vec![1, 2, 3],
            ..Default::default()
        };
        let res = saturate_with(&policy, |m| Ok(vec![m as f64])).unwrap();
        assert!(!res.saturated);
        assert_eq!(res.m, 3);
    }

    #[test]
    fn schedule_must_increase() {
        assert!(convergence_curve_fn(&[0, 1], &[2, 2], &[0.5, 0.5], |t| t[0] * t[1]).is_err());
    }
}
