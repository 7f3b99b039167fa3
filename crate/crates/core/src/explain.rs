//! Local and global attribution reports.
//!
//! A local report splits `g(x1) - g(x0)` into dividends over the changed
//! features, hands singleton pots to their feature, and redistributes every
//! interaction pot by the selected rules. Global reports average locals
//! over a collection of pairs.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::coalition::{coalition_values, dividends, full_mask, members, CounterfactualPair, Mask, EXHAUSTIVE_CAP};
use crate::cube::{eval_cube, residual_grid, GridSpec};
use crate::error::{Error, Result};
use crate::format::fmt_num;
use crate::limits::{saturate_m, SaturationPolicy, SaturationResult};
use crate::microgame::{equal_split, equal_surplus_shares, grid_state_shares, les_preset, LesRule, MicroGame};
use crate::model::{FeatureKind, Predictor};
use crate::montecarlo::{mc_micro_shapley, McConfig};

/// Default bound on model rows spent on pot grids in one local report.
pub const DEFAULT_GRID_BUDGET: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rule {
    /// Each pot split evenly among its members.
    #[serde(rename = "equal")]
    EqualSplit,
    #[serde(rename = "shapley")]
    MicroShapley,
    #[serde(rename = "solidarity")]
    Solidarity,
    /// Equal Surplus applied to each pot's micro-game.
    #[serde(rename = "es")]
    EqualSurplus,
    /// Equal Surplus applied once to the whole macro game.
    #[serde(rename = "es-macro")]
    EqualSurplusMacro,
}

impl Rule {
    pub const ALL: [Rule; 5] = [
        Rule::EqualSplit,
        Rule::MicroShapley,
        Rule::Solidarity,
        Rule::EqualSurplus,
        Rule::EqualSurplusMacro,
    ];

    /// Rules reported when none are requested.
    pub const DEFAULT: [Rule; 4] = [
        Rule::EqualSplit,
        Rule::MicroShapley,
        Rule::Solidarity,
        Rule::EqualSurplus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Rule::EqualSplit => "equal",
            Rule::MicroShapley => "shapley",
            Rule::Solidarity => "solidarity",
            Rule::EqualSurplus => "es",
            Rule::EqualSurplusMacro => "es-macro",
        }
    }

    fn les(self) -> Option<LesRule> {
        match self {
            Rule::MicroShapley => Some(LesRule::Shapley),
            Rule::Solidarity => Some(LesRule::Solidarity),
            Rule::EqualSurplus => Some(LesRule::EqualSurplus),
            _ => None,
        }
    }

    /// Whether the rule allocates pot by pot.
    pub fn per_pot(self) -> bool {
        self != Rule::EqualSurplusMacro
    }

    /// Parses a comma-separated list, keeping first occurrences in order.
    pub fn parse_list(s: &str) -> Result<Vec<Rule>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let r: Rule = part.parse()?;
            if !out.contains(&r) {
                out.push(r);
            }
        }
        if out.is_empty() {
            return Err(Error::input("no rules selected"));
        }
        Ok(out)
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal" | "equal-split" | "equal_split" | "eq" => Ok(Rule::EqualSplit),
            "shapley" | "micro" | "micro-shapley" | "micro_shapley" => Ok(Rule::MicroShapley),
            "solidarity" => Ok(Rule::Solidarity),
            "es" | "equal-surplus" | "equal_surplus" => Ok(Rule::EqualSurplus),
            "es-macro" | "es_macro" => Ok(Rule::EqualSurplusMacro),
            other => Err(Error::input(format!("unknown rule '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Resolution {
    Uniform(usize),
    /// One resolution per model feature; only changed features are read.
    PerFeature(Vec<usize>),
    /// Uniform resolution chosen by the saturation rule.
    Saturate(SaturationPolicy),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplainConfig {
    pub resolution: Resolution,
    pub rules: Vec<Rule>,
    /// Pots with more members fall back to equal split.
    pub order_cap: Option<usize>,
    pub exhaustive_cap: usize,
    /// Permutation sampling used when the changed set exceeds the cap.
    pub monte_carlo: Option<McConfig>,
    /// Upper bound on total grid rows over all pots.
    pub grid_budget: usize,
    /// Keep features with no attribution mass in report rows.
    pub dense: bool,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            resolution: Resolution::Uniform(5),
            rules: Rule::DEFAULT.to_vec(),
            order_cap: None,
            exhaustive_cap: EXHAUSTIVE_CAP,
            monte_carlo: None,
            grid_budget: DEFAULT_GRID_BUDGET,
            dense: false,
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.rules.is_empty() {
            return Err(Error::input("at least one rule must be selected"));
        }
        match &self.resolution {
            Resolution::Uniform(0) => return Err(Error::input("grid resolution must be >= 1")),
            Resolution::PerFeature(m) if m.len() != d => {
                return Err(Error::input(format!(
                    "{} per-feature resolutions for {d} features",
                    m.len()
                )))
            }
            Resolution::PerFeature(m) if m.contains(&0) => {
                return Err(Error::input("grid resolution must be >= 1"))
            }
            Resolution::Saturate(p) => p.validate()?,
            _ => {}
        }
        if self.order_cap == Some(0) {
            return Err(Error::input("order cap must be >= 1"));
        }
        if self.exhaustive_cap > EXHAUSTIVE_CAP {
            return Err(Error::input(format!(
                "exhaustive cap may not exceed {EXHAUSTIVE_CAP}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exhaustive,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleValues {
    pub rule: Rule,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotReport {
    /// Member features, ascending.
    pub pot: Vec<usize>,
    /// Dividend from the coalition table.
    pub phi: f64,
    /// Far corner of the residual grid; absent for fallback pots.
    pub corner: Option<f64>,
    pub resolution: Vec<usize>,
    /// Split evenly because the pot exceeds the order cap.
    pub fallback: bool,
    /// Per-rule shares in pot order.
    pub shares: Vec<RuleValues>,
}

impl PotReport {
    pub fn shares_of(&self, rule: Rule) -> Option<&[f64]> {
        self.shares.iter().find(|r| r.rule == rule).map(|r| r.values.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleAgreement {
    pub a: Rule,
    pub b: Rule,
    /// Kendall tau-b over the changed features; absent when undefined.
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributionReport {
    pub method: Method,
    pub dim: usize,
    pub changed: Vec<usize>,
    pub baseline_score: f64,
    pub counterfactual_score: f64,
    pub delta_y: f64,
    /// Grid resolution per changed feature.
    pub resolution: Vec<usize>,
    pub saturation: Option<SaturationResult>,
    pub rules: Vec<Rule>,
    /// `phi_{i}` per model feature.
    pub singletons: Vec<f64>,
    /// `S_i` per model feature, per rule.
    pub locals: Vec<RuleValues>,
    pub pots: Vec<PotReport>,
    /// Sum of all dividends.
    pub dividend_total: f64,
    /// `sum_i S_i - delta_y` per rule.
    pub efficiency: Vec<RuleValues>,
    pub agreement: Vec<RuleAgreement>,
    /// Standard errors of Monte-Carlo locals per model feature.
    pub stderr: Option<Vec<f64>>,
    pub notes: Vec<String>,
}

impl AttributionReport {
    pub fn locals_of(&self, rule: Rule) -> Option<&[f64]> {
        self.locals.iter().find(|r| r.rule == rule).map(|r| r.values.as_slice())
    }

    pub fn pot(&self, pot: &[usize]) -> Option<&PotReport> {
        self.pots.iter().find(|p| p.pot == pot)
    }

    /// Features shown in sparse output: those with a singleton dividend or
    /// a nonzero interaction pot.
    pub fn active_features(&self) -> Vec<usize> {
        let mut active = vec![false; self.dim];
        for &i in &self.changed {
            if self.singletons[i] != 0.0 {
                active[i] = true;
            }
        }
        for p in &self.pots {
            let moved = p.phi != 0.0 || p.shares.iter().any(|r| r.values.iter().any(|v| *v != 0.0));
            if moved {
                p.pot.iter().for_each(|&i| active[i] = true);
            }
        }
        if let Some(se) = &self.stderr {
            for r in &self.locals {
                for &i in &self.changed {
                    if r.values[i] != 0.0 || se[i] != 0.0 {
                        active[i] = true;
                    }
                }
            }
        }
        (0..self.dim).filter(|&i| active[i]).collect()
    }

    fn rows(&self, dense: bool) -> Vec<usize> {
        if dense {
            (0..self.dim).collect()
        } else {
            self.active_features()
        }
    }

    /// `feature,name,<rule>,<rule>_pct,...` with percentages of `delta_y`.
    pub fn locals_csv(&self, names: &[String], dense: bool) -> String {
        let mut out = String::from("feature,name,singleton");
        for r in &self.locals {
            write!(out, ",{0},{0}_pct", r.rule).unwrap();
        }
        if self.stderr.is_some() {
            out.push_str(",stderr");
        }
        out.push('\n');
        for i in self.rows(dense) {
            write!(out, "{i},{},{}", csv_field(&names[i]), fmt_num(self.singletons[i])).unwrap();
            for r in &self.locals {
                write!(out, ",{},{}", fmt_num(r.values[i]), fmt_num(pct(r.values[i], self.delta_y))).unwrap();
            }
            if let Some(se) = &self.stderr {
                write!(out, ",{}", fmt_num(se[i])).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// One row per (pot, rule, feature).
    pub fn pots_csv(&self, names: &[String]) -> String {
        let mut out = String::from("pot,feature,name,phi,rule,share,diff_vs_equal,fallback\n");
        for p in &self.pots {
            let label = pot_label(&p.pot);
            let even = p.phi / p.pot.len() as f64;
            for r in &p.shares {
                for (a, &i) in p.pot.iter().enumerate() {
                    writeln!(
                        out,
                        "{label},{i},{},{},{},{},{},{}",
                        csv_field(&names[i]),
                        fmt_num(p.phi),
                        r.rule,
                        fmt_num(r.values[a]),
                        fmt_num(r.values[a] - even),
                        p.fallback
                    )
                    .unwrap();
                }
            }
        }
        out
    }

    pub fn to_json(&self, names: &[String]) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v.as_object_mut()
            .expect("object")
            .insert("feature_names".into(), Value::from(names.to_vec()));
        round_json(&mut v);
        serde_json::to_string_pretty(&v).expect("json") + "\n"
    }

    /// Aligned text: a feature table followed by one table per pot.
    pub fn to_table(&self, names: &[String], dense: bool) -> String {
        let mut header = vec!["Feature".to_string(), "phi_i".to_string()];
        for r in &self.locals {
            header.push(r.rule.to_string());
            header.push(format!("{}%", r.rule));
        }
        let mut rows = Vec::new();
        for i in self.rows(dense) {
            let mut row = vec![names[i].clone(), fmt_num(self.singletons[i])];
            for r in &self.locals {
                row.push(fmt_num(r.values[i]));
                row.push(format!("{:.2}", pct(r.values[i], self.delta_y)));
            }
            rows.push(row);
        }
        let mut total = vec!["Total".to_string(), String::new()];
        for r in &self.locals {
            total.push(fmt_num(r.values.iter().sum()));
            total.push(format!("{:.2}", pct(r.values.iter().sum(), self.delta_y)));
        }
        rows.push(total);
        let mut out = format!(
            "delta_y = {}  (g(x0) = {}, g(x1) = {}, method {})\n\n",
            fmt_num(self.delta_y),
            fmt_num(self.baseline_score),
            fmt_num(self.counterfactual_score),
            match self.method {
                Method::Exhaustive => "exhaustive",
                Method::MonteCarlo => "monte-carlo",
            }
        );
        out.push_str(&render_table(&header, &rows));
        for p in &self.pots {
            let moved = p.phi != 0.0 || p.shares.iter().any(|r| r.values.iter().any(|v| *v != 0.0));
            if !(dense || moved) {
                continue;
            }
            let rows = within_pot_table(self, &p.pot).expect("pot present");
            let rules: Vec<Rule> = p.shares.iter().map(|r| r.rule).collect();
            let mut header = vec!["Feature".to_string()];
            for r in &rules {
                header.push(r.to_string());
            }
            for r in rules.iter().filter(|r| **r != Rule::EqualSplit) {
                header.push(format!("{r}-equal"));
            }
            let mut body = Vec::new();
            for &i in &p.pot {
                let mut row = vec![names[i].clone()];
                let mine: Vec<&WithinPotRow> = rows.iter().filter(|w| w.feature == i).collect();
                for w in &mine {
                    row.push(fmt_num(w.share));
                }
                for w in mine.iter().filter(|w| w.rule != Rule::EqualSplit) {
                    row.push(fmt_num(w.diff_vs_equal));
                }
                body.push(row);
            }
            let tag = if p.fallback { "  [equal split: above order cap]" } else { "" };
            let _ = write!(
                out,
                "\npot {} (phi = {}){tag}\n",
                p.pot.iter().map(|&i| names[i].as_str()).collect::<Vec<_>>().join("+"),
                fmt_num(p.phi)
            );
            out.push_str(&render_table(&header, &body));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WithinPotRow {
    pub rule: Rule,
    pub feature: usize,
    pub share: f64,
    /// `share - phi_u / |u|`.
    pub diff_vs_equal: f64,
}

/// Per-rule, per-feature shares of one pot with their deviation from the
/// equal split.
pub fn within_pot_table(report: &AttributionReport, pot: &[usize]) -> Result<Vec<WithinPotRow>> {
    let mut key = pot.to_vec();
    key.sort_unstable();
    let p = report
        .pot(&key)
        .ok_or_else(|| Error::input(format!("pot {pot:?} is not part of the report")))?;
    let even = p.phi / p.pot.len() as f64;
    let mut rows = Vec::new();
    for r in &p.shares {
        for (a, &i) in p.pot.iter().enumerate() {
            rows.push(WithinPotRow {
                rule: r.rule,
                feature: i,
                share: r.values[a],
                diff_vs_equal: r.values[a] - even,
            });
        }
    }
    Ok(rows)
}

/// Resolution per changed feature, resolving saturation if requested.
fn resolve_m<P: Predictor + ?Sized>(
    model: &P,
    pair: &CounterfactualPair,
    kinds: &[FeatureKind],
    cfg: &ExplainConfig,
) -> Result<(Vec<usize>, Option<SaturationResult>)> {
    let changed = pair.changed();
    Ok(match &cfg.resolution {
        Resolution::Uniform(m) => (vec![*m; changed.len()], None),
        Resolution::PerFeature(m) => (changed.iter().map(|&i| m[i]).collect(), None),
        Resolution::Saturate(policy) => {
            let sat = saturate_m(model, pair, kinds, policy)?;
            (vec![sat.m; changed.len()], Some(sat))
        }
    })
}

/// Local attribution of one pair.
pub fn explain_local<P: Predictor + ?Sized>(
    model: &P,
    pair: &CounterfactualPair,
    kinds: &[FeatureKind],
    cfg: &ExplainConfig,
) -> Result<AttributionReport> {
    let d = pair.dim();
    if model.dim() != d {
        return Err(Error::input(format!(
            "pair has {d} features, model expects {}",
            model.dim()
        )));
    }
    if kinds.len() != d {
        return Err(Error::input(format!("{} feature kinds for {d} features", kinds.len())));
    }
    cfg.validate(d)?;
    let k = pair.changed().len();
    if k > cfg.exhaustive_cap {
        return match &cfg.monte_carlo {
            Some(mc) => explain_monte_carlo(model, pair, kinds, cfg, mc),
            None => Err(Error::Capacity(format!(
                "{k} changed features exceed the exhaustive cap of {}; enable Monte-Carlo sampling",
                cfg.exhaustive_cap
            ))),
        };
    }

    let vt = coalition_values(model, pair, cfg.exhaustive_cap)?;
    let baseline_score = *vt.baseline_score();
    let delta_y = *vt.delta_y();
    let dt = dividends(&vt);
    let support = pair.changed().to_vec();
    let (m, saturation) = resolve_m(model, pair, kinds, cfg)?;

    let mut singletons = vec![0.0; d];
    for (a, &i) in support.iter().enumerate() {
        singletons[i] = *dt.pot(1 << a);
    }

    let cap = cfg.order_cap.unwrap_or(usize::MAX);
    let masks: Vec<Mask> = (1..=full_mask(k))
        .filter(|s| s.count_ones() >= 2)
        .collect();
    let budget: usize = masks
        .iter()
        .filter(|s| s.count_ones() as usize <= cap)
        .map(|&s| members(s).map(|a| m[a] + 1).fold(1usize, usize::saturating_mul))
        .fold(0usize, usize::saturating_add);
    if budget > cfg.grid_budget {
        return Err(Error::Capacity(format!(
            "pot grids need {budget} model rows, budget is {}; lower the resolution or the order cap",
            cfg.grid_budget
        )));
    }

    let pot_rules: Vec<Rule> = cfg.rules.iter().copied().filter(|r| r.per_pot()).collect();
    let pots: Vec<PotReport> = masks
        .par_iter()
        .map(|&s| {
            let axes: Vec<usize> = members(s).collect();
            let pot: Vec<usize> = axes.iter().map(|&a| support[a]).collect();
            let res: Vec<usize> = axes.iter().map(|&a| m[a]).collect();
            let phi = *dt.pot(s);
            if axes.len() > cap {
                let even = equal_split(&phi, pot.len());
                return Ok(PotReport {
                    pot,
                    phi,
                    corner: None,
                    resolution: res,
                    fallback: true,
                    shares: pot_rules
                        .iter()
                        .map(|&rule| RuleValues { rule, values: even.clone() })
                        .collect(),
                });
            }
            let spec = GridSpec::new(pot.clone(), res.clone())?;
            let grid = residual_grid(&eval_cube(model, pair, kinds, &spec)?);
            let mg = MicroGame::new(&grid);
            let shares = pot_rules
                .iter()
                .map(|&rule| {
                    let values = match rule {
                        Rule::EqualSplit => equal_split(&phi, pot.len()),
                        Rule::EqualSurplus => equal_surplus_shares(&mg),
                        other => {
                            let les = other.les().expect("per-pot LES rule");
                            grid_state_shares(&mg, &les_preset(les, mg.players())?)?
                        }
                    };
                    Ok(RuleValues { rule, values })
                })
                .collect::<Result<_>>()?;
            Ok(PotReport {
                pot,
                phi,
                corner: Some(*grid.far_corner()),
                resolution: res,
                fallback: false,
                shares,
            })
        })
        .collect::<Result<_>>()?;

    let mut notes = Vec::new();
    let fallbacks = pots.iter().filter(|p| p.fallback).count();
    if fallbacks > 0 {
        notes.push(format!("{fallbacks} pots above the order cap were split evenly"));
    }

    let locals: Vec<RuleValues> = cfg
        .rules
        .iter()
        .map(|&rule| {
            let values = if rule == Rule::EqualSurplusMacro {
                macro_equal_surplus(&vt, d)
            } else {
                let mut v = singletons.clone();
                for p in &pots {
                    let sh = p.shares_of(rule).expect("rule computed for every pot");
                    for (&i, s) in p.pot.iter().zip(sh) {
                        v[i] += s;
                    }
                }
                v
            };
            RuleValues { rule, values }
        })
        .collect();

    Ok(AttributionReport {
        method: Method::Exhaustive,
        dim: d,
        baseline_score,
        counterfactual_score: baseline_score + delta_y,
        delta_y,
        resolution: m,
        saturation,
        rules: cfg.rules.clone(),
        singletons,
        dividend_total: dt.total(),
        efficiency: efficiency(&locals, delta_y),
        agreement: agreement(&locals, &support),
        locals,
        pots,
        stderr: None,
        notes,
        changed: support,
    })
}

/// `S_i = V({i}) + (delta_y - sum_j V({j})) / k` on the macro game.
fn macro_equal_surplus(vt: &crate::coalition::ValueTable<f64>, d: usize) -> Vec<f64> {
    let support = vt.support();
    let k = support.len();
    let mut out = vec![0.0; d];
    if k == 0 {
        return out;
    }
    let alone: Vec<f64> = (0..k).map(|a| *vt.value(1 << a)).collect();
    let surplus = (vt.delta_y() - alone.iter().sum::<f64>()) / k as f64;
    for (a, &i) in support.iter().enumerate() {
        out[i] = alone[a] + surplus;
    }
    out
}

fn explain_monte_carlo<P: Predictor + ?Sized>(
    model: &P,
    pair: &CounterfactualPair,
    kinds: &[FeatureKind],
    cfg: &ExplainConfig,
    mc: &McConfig,
) -> Result<AttributionReport> {
    let d = pair.dim();
    let k = pair.changed().len();
    let m = match &cfg.resolution {
        Resolution::Uniform(m) => *m,
        Resolution::PerFeature(ms) => {
            let first = ms[pair.changed()[0]];
            if pair.changed().iter().any(|&i| ms[i] != first) {
                return Err(Error::input("Monte-Carlo sampling needs a uniform resolution"));
            }
            first
        }
        Resolution::Saturate(_) => {
            return Err(Error::input("saturation needs an exhaustive changed set"))
        }
    };
    let est = mc_micro_shapley(model, pair, kinds, m, mc)?;
    let mut values = vec![0.0; d];
    let mut stderr = vec![0.0; d];
    for (j, &i) in est.features.iter().enumerate() {
        values[i] = est.mean[j];
        stderr[i] = est.stderr[j];
    }
    let mut notes = vec![format!(
        "{k} changed features exceed the exhaustive cap; micro-Shapley estimated from {} permutations (seed {})",
        est.permutations, est.seed
    )];
    let skipped: Vec<&str> = cfg
        .rules
        .iter()
        .filter(|r| **r != Rule::MicroShapley)
        .map(|r| r.name())
        .collect();
    if !skipped.is_empty() {
        notes.push(format!("rules without a sampling estimator skipped: {}", skipped.join(",")));
    }
    let baseline_score = model.predict(pair.x0())?;
    let locals = vec![RuleValues {
        rule: Rule::MicroShapley,
        values,
    }];
    Ok(AttributionReport {
        method: Method::MonteCarlo,
        dim: d,
        changed: est.features.clone(),
        baseline_score,
        counterfactual_score: baseline_score + est.delta_y,
        delta_y: est.delta_y,
        resolution: vec![m; k],
        saturation: None,
        rules: vec![Rule::MicroShapley],
        singletons: vec![0.0; d],
        efficiency: efficiency(&locals, est.delta_y),
        agreement: Vec::new(),
        locals,
        pots: Vec::new(),
        dividend_total: est.delta_y,
        stderr: Some(stderr),
        notes,
    })
}

fn efficiency(locals: &[RuleValues], delta_y: f64) -> Vec<RuleValues> {
    locals
        .iter()
        .map(|r| RuleValues {
            rule: r.rule,
            values: vec![r.values.iter().sum::<f64>() - delta_y],
        })
        .collect()
}

fn agreement(locals: &[RuleValues], support: &[usize]) -> Vec<RuleAgreement> {
    let mut out = Vec::new();
    for (x, a) in locals.iter().enumerate() {
        for b in &locals[x + 1..] {
            let u: Vec<f64> = support.iter().map(|&i| a.values[i]).collect();
            let v: Vec<f64> = support.iter().map(|&i| b.values[i]).collect();
            out.push(RuleAgreement {
                a: a.rule,
                b: b.rule,
                tau: kendall_tau_b(&u, &v),
            });
        }
    }
    out
}

/// Kendall tau-b; `None` when either ranking is constant.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    let (mut concordant, mut discordant, mut tie_x, mut tie_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i].partial_cmp(&x[j])?;
            let dy = y[i].partial_cmp(&y[j])?;
            use std::cmp::Ordering::Equal;
            match (dx, dy) {
                (Equal, Equal) => {}
                (Equal, _) => tie_x += 1,
                (_, Equal) => tie_y += 1,
                _ if dx == dy => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n0 = (concordant + discordant + tie_x) as f64;
    let n1 = (concordant + discordant + tie_y) as f64;
    if n0 == 0.0 || n1 == 0.0 {
        return None;
    }
    Some((concordant - discordant) as f64 / (n0 * n1).sqrt())
}

/// Exhaustive micro-Shapley locals at uniform resolution `m`, in changed
/// order, together with `delta_y`.
pub fn micro_shapley_locals<P: Predictor + ?Sized>(
    model: &P,
    pair: &CounterfactualPair,
    kinds: &[FeatureKind],
    m: usize,
) -> Result<(Vec<f64>, f64)> {
    let cfg = ExplainConfig {
        resolution: Resolution::Uniform(m),
        rules: vec![Rule::MicroShapley],
        ..Default::default()
    };
    let report = explain_local(model, pair, kinds, &cfg)?;
    let locals = report.locals_of(Rule::MicroShapley).expect("requested rule");
    Ok((report.changed.iter().map(|&i| locals[i]).collect(), report.delta_y))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalReport {
    pub dim: usize,
    pub rules: Vec<Rule>,
    pub pair_count: usize,
    pub mean_changed: f64,
    pub mean_delta_y: f64,
    /// Unweighted mean of per-pair locals, per rule.
    pub averages: Vec<RuleValues>,
    /// `sum_i avg S_i - avg delta_y` per rule.
    pub efficiency: Vec<RuleValues>,
    pub monte_carlo_pairs: usize,
}

impl GlobalReport {
    pub fn averages_of(&self, rule: Rule) -> Option<&[f64]> {
        self.averages.iter().find(|r| r.rule == rule).map(|r| r.values.as_slice())
    }

    pub fn to_csv(&self, names: &[String], dense: bool) -> String {
        let mut out = String::from("feature,name");
        for r in &self.averages {
            write!(out, ",{0},{0}_pct", r.rule).unwrap();
        }
        out.push('\n');
        for i in 0..self.dim {
            if !dense && self.averages.iter().all(|r| r.values[i] == 0.0) {
                continue;
            }
            write!(out, "{i},{}", csv_field(&names[i])).unwrap();
            for r in &self.averages {
                write!(out, ",{},{}", fmt_num(r.values[i]), fmt_num(pct(r.values[i], self.mean_delta_y))).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self, names: &[String]) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v.as_object_mut()
            .expect("object")
            .insert("feature_names".into(), Value::from(names.to_vec()));
        round_json(&mut v);
        serde_json::to_string_pretty(&v).expect("json") + "\n"
    }

    pub fn to_table(&self, names: &[String], dense: bool) -> String {
        let mut header = vec!["Feature".to_string()];
        for r in &self.averages {
            header.push(r.rule.to_string());
            header.push(format!("{}%", r.rule));
        }
        let mut rows = Vec::new();
        for i in 0..self.dim {
            if !dense && self.averages.iter().all(|r| r.values[i] == 0.0) {
                continue;
            }
            let mut row = vec![names[i].clone()];
            for r in &self.averages {
                row.push(fmt_num(r.values[i]));
                row.push(format!("{:.2}", pct(r.values[i], self.mean_delta_y)));
            }
            rows.push(row);
        }
        format!(
            "{} pairs, mean |changed| = {}, mean delta_y = {}\n\n{}",
            self.pair_count,
            fmt_num(self.mean_changed),
            fmt_num(self.mean_delta_y),
            render_table(&header, &rows)
        )
    }
}

/// Averages local reports. Pairs are explained in parallel and merged in
/// input order.
pub fn explain_global<P: Predictor + ?Sized>(
    model: &P,
    pairs: &[CounterfactualPair],
    kinds: &[FeatureKind],
    cfg: &ExplainConfig,
) -> Result<GlobalReport> {
    if pairs.is_empty() {
        return Err(Error::input("global report needs at least one pair"));
    }
    let reports: Vec<AttributionReport> = pairs
        .par_iter()
        .map(|p| explain_local(model, p, kinds, cfg))
        .collect::<Result<_>>()?;
    Ok(aggregate(&reports))
}

/// Unweighted mean of local reports over the rules present in all of them.
pub fn aggregate(reports: &[AttributionReport]) -> GlobalReport {
    let n = reports.len() as f64;
    let dim = reports[0].dim;
    let rules: Vec<Rule> = reports[0]
        .rules
        .iter()
        .copied()
        .filter(|r| reports.iter().all(|rep| rep.locals_of(*r).is_some()))
        .collect();
    let averages: Vec<RuleValues> = rules
        .iter()
        .map(|&rule| {
            let mut values = vec![0.0; dim];
            for rep in reports {
                for (v, x) in values.iter_mut().zip(rep.locals_of(rule).expect("common rule")) {
                    *v += x;
                }
            }
            values.iter_mut().for_each(|v| *v /= n);
            RuleValues { rule, values }
        })
        .collect();
    let mean_delta_y = reports.iter().map(|r| r.delta_y).sum::<f64>() / n;
    GlobalReport {
        dim,
        pair_count: reports.len(),
        mean_changed: reports.iter().map(|r| r.changed.len() as f64).sum::<f64>() / n,
        efficiency: efficiency(&averages, mean_delta_y),
        mean_delta_y,
        averages,
        rules,
        monte_carlo_pairs: reports.iter().filter(|r| r.method == Method::MonteCarlo).count(),
    }
}

fn pct(v: f64, total: f64) -> f64 {
    if total == 0.0 {
        f64::NAN
    } else {
        100.0 * v / total
    }
}

fn pot_label(pot: &[usize]) -> String {
    pot.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("+")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Rounds every float in a JSON tree to 12 significant digits.
pub fn round_json(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64");
            *v = fmt_num(x)
                .parse::<f64>()
                .ok()
                .and_then(serde_json::Number::from_f64)
                .map(Value::Number)
                .unwrap_or(Value::Null);
        }
        Value::Array(a) => a.iter_mut().for_each(round_json),
        Value::Object(o) => o.values_mut().for_each(round_json),
        _ => {}
    }
}

fn render_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (j, (c, w)) in cells.iter().zip(&width).enumerate() {
            if j == 0 {
                let _ = write!(s, "{c:<w$}");
            } else {
                let _ = write!(s, "  {c:>w$}");
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header);
    out.push_str(&width.iter().enumerate().map(|(j, w)| "-".repeat(*w + if j == 0 { 0 } else { 2 })).collect::<String>());
    out.push('\n');
    for row in rows {
        out.push_str(&line(row));
    }
    out
}
