//! The TU micro-game on grid steps and its LES allocations.
//!
//! Feature `i` of a pot contributes `m_i` interchangeable players, one per
//! elementary step. A micro-coalition is worth the residual at the grid
//! state counting each feature's steps. Payoffs are computed either by
//! brute-force enumeration (the oracle, exponential in `n = sum m_i`) or by
//! the grid-state closed form, which groups coalitions by state.

use std::fmt;
use std::str::FromStr;


use crate::cube::ResidualGrid;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest player count accepted by [`enumerate_les`].
pub const ENUMERATION_CAP: usize = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LesRule {
    Shapley,
    Solidarity,
    EqualSurplus,
}

impl LesRule {
    pub const ALL: [LesRule; 3] = [LesRule::Shapley, LesRule::Solidarity, LesRule::EqualSurplus];

    pub fn name(self) -> &'static str {
        match self {
            LesRule::Shapley => "shapley",
            LesRule::Solidarity => "solidarity",
            LesRule::EqualSurplus => "equal_surplus",
        }
    }
}

impl fmt::Display for LesRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LesRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shapley" => Ok(LesRule::Shapley),
            "solidarity" => Ok(LesRule::Solidarity),
            "equal_surplus" | "equal-surplus" | "es" => Ok(LesRule::EqualSurplus),
            other => Err(Error::input(format!("unknown LES rule '{other}'"))),
        }
    }
}

/// The sequence `b(0..=n)` selecting a member of the LES family.
#[derive(Debug, Clone, PartialEq)]
pub struct LesWeights<T> {
    b: Vec<T>,
}

impl<T: Scalar> LesWeights<T> {
    pub fn new(b: Vec<T>) -> Result<Self> {
        if b.len() < 2 {
            return Err(Error::input("LES weights need at least one player"));
        }
        if !b[0].is_zero() {
            return Err(Error::input("LES weights require b(0) = 0"));
        }
        if !b[b.len() - 1].is_one() {
            return Err(Error::input("LES weights require b(n) = 1"));
        }
        Ok(Self { b })
    }

    pub fn players(&self) -> usize {
        self.b.len() - 1
    }

    pub fn get(&self, s: usize) -> &T {
        &self.b[s]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.b
    }
}

pub fn les_preset<T: Scalar>(rule: LesRule, n: usize) -> Result<LesWeights<T>> {
    if n == 0 {
        return Err(Error::input("LES presets need n >= 1"));
    }
    let mut b: Vec<T> = (0..=n)
        .map(|s| match rule {
            LesRule::Shapley => T::one(),
            LesRule::Solidarity => T::one() / T::from_usize(s + 1),
            LesRule::EqualSurplus if s == 1 => T::from_usize(n - 1),
            LesRule::EqualSurplus => T::zero(),
        })
        .collect();
    b[0] = T::zero();
    b[n] = T::one();
    LesWeights::new(b)
}

/// Micro-game over the steps of one pot's residual grid.
#[derive(Debug, Clone)]
pub struct MicroGame<'a, T> {
    grid: &'a ResidualGrid<T>,
    /// Player id -> pot axis; players of axis `a` are contiguous.
    owner: Vec<usize>,
}

impl<'a, T: Scalar> MicroGame<'a, T> {
    pub fn new(grid: &'a ResidualGrid<T>) -> Self {
        let owner = grid
            .shape()
            .resolutions()
            .iter()
            .enumerate()
            .flat_map(|(a, &m)| std::iter::repeat_n(a, m))
            .collect();
        Self { grid, owner }
    }

    pub fn grid(&self) -> &ResidualGrid<T> {
        self.grid
    }

    pub fn players(&self) -> usize {
        self.owner.len()
    }

    /// Axis owning a player.
    pub fn owner(&self, player: usize) -> usize {
        self.owner[player]
    }

    /// Player id of step `s` (1-based) of axis `axis`.
    pub fn player(&self, axis: usize, s: usize) -> usize {
        let m = self.grid.shape().resolutions();
        assert!(s >= 1 && s <= m[axis]);
        m[..axis].iter().sum::<usize>() + s - 1
    }

    /// Per-axis step counts of a micro-coalition.
    pub fn state_of(&self, coalition: u64) -> Result<Vec<usize>> {
        if self.players() < 64 && coalition >> self.players() != 0 {
            return Err(Error::input("micro-coalition names players outside the game"));
        }
        let mut p = vec![0; self.grid.shape().axes()];
        for (player, &a) in self.owner.iter().enumerate() {
            if coalition >> player & 1 == 1 {
                p[a] += 1;
            }
        }
        Ok(p)
    }

    /// `v(A) = r_{p(A)}`.
    pub fn micro_value(&self, coalition: u64) -> Result<T> {
        if self.players() > 64 {
            return Err(Error::Capacity("micro_value supports at most 64 players".into()));
        }
        let p = self.state_of(coalition)?;
        Ok(self.grid.at(&p).clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotShares<T> {
    /// Global feature indices of the pot.
    pub pot: Vec<usize>,
    pub rule: String,
    /// `S_{i -> u}` per pot feature, in pot order.
    pub shares: Vec<T>,
    /// Per micro-player payoffs, enumeration only.
    pub payoffs: Option<Vec<T>>,
}

fn check_weights<T: Scalar>(mg: &MicroGame<'_, T>, b: &LesWeights<T>) -> Result<()> {
    if b.players() != mg.players() {
        return Err(Error::input(format!(
            "weights for {} players, micro-game has {}",
            b.players(),
            mg.players()
        )));
    }
    Ok(())
}

fn binomial_u64(n: usize, k: usize) -> u64 {
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, j| acc * (n - j) as u64 / (j + 1) as u64)
}

/// Exact LES payoffs by summing over all `2^n` micro-coalitions.
pub fn enumerate_les<T: Scalar>(mg: &MicroGame<'_, T>, b: &LesWeights<T>) -> Result<PotShares<T>> {
    check_weights(mg, b)?;
    let n = mg.players();
    if n > ENUMERATION_CAP {
        return Err(Error::Capacity(format!(
            "{n} micro-players exceed the enumeration cap of {ENUMERATION_CAP}"
        )));
    }
    let strides = mg.grid.shape().strides();
    let step: Vec<usize> = mg.owner.iter().map(|&a| strides[a]).collect();
    let r = mg.grid.values();

    // Grid index of every coalition, built from its lowest player.
    let total = 1usize << n;
    let mut index = vec![0usize; total];
    for a in 1..total {
        let low = a.trailing_zeros() as usize;
        index[a] = index[a & (a - 1)] + step[low];
    }

    // s!(n-s-1)!/n! = 1 / (n C(n-1, s)), with both LES factors folded in.
    let n_t = T::from_usize(n);
    let (w_next, w_here): (Vec<T>, Vec<T>) = (0..n)
        .map(|s| {
            let w = T::one() / (n_t.clone() * T::from_usize(binomial_u64(n - 1, s) as usize));
            (w.clone() * b.get(s + 1).clone(), w * b.get(s).clone())
        })
        .unzip();

    let mut payoffs = vec![T::zero(); n];
    for a in 0..total {
        let s = a.count_ones() as usize;
        if s == n {
            continue;
        }
        let here = w_here[s].clone() * r[index[a]].clone();
        for (player, pay) in payoffs.iter_mut().enumerate() {
            if a >> player & 1 == 0 {
                let joined = r[index[a] + step[player]].clone();
                *pay = pay.clone() + w_next[s].clone() * joined - here.clone();
            }
        }
    }

    let mut shares = vec![T::zero(); mg.grid.shape().axes()];
    for (player, pay) in payoffs.iter().enumerate() {
        let a = mg.owner[player];
        shares[a] = shares[a].clone() + pay.clone();
    }
    Ok(PotShares {
        pot: mg.grid.spec().pot().to_vec(),
        rule: "les-enumerated".into(),
        shares,
        payoffs: Some(payoffs),
    })
}

/// Per-level and per-axis combinatorial factors of the closed form.
struct StateWeights<T: Scalar> {
    level: Vec<T::Coef>,
    binom: Vec<Vec<T::Coef>>,
}

impl<T: Scalar> StateWeights<T> {
    fn new(m: &[usize]) -> Self {
        let n: usize = m.iter().sum();
        let n_coef = T::coef_binomial(n, 1);
        let level = (0..n)
            .map(|s| {
                T::coef_div(
                    &T::coef_one(),
                    &T::coef_mul(&n_coef, &T::coef_binomial(n - 1, s)),
                )
            })
            .collect();
        let binom = m
            .iter()
            .map(|&mj| (0..=mj).map(|p| T::coef_binomial(mj, p)).collect())
            .collect();
        Self { level, binom }
    }

    /// `|p|!(n-|p|-1)!/n! * prod_j C(m_j, p_j)`, exponentiated once.
    fn at(&self, p: &[usize], level: usize) -> T {
        let c = p
            .iter()
            .zip(&self.binom)
            .fold(self.level[level].clone(), |acc, (&pj, bj)| T::coef_mul(&acc, &bj[pj]));
        T::coef_value(&c)
    }
}

/// Closed-form `S_{i -> u}` for every pot axis in a single sweep over the
/// `prod (m_i + 1)` states.
pub fn grid_state_shares<T: Scalar>(mg: &MicroGame<'_, T>, b: &LesWeights<T>) -> Result<Vec<T>> {
    check_weights(mg, b)?;
    let shape = mg.grid.shape();
    let m = shape.resolutions();
    let strides = shape.strides();
    let r = mg.grid.values();
    let weights = StateWeights::<T>::new(m);
    let n = mg.players();

    let mut shares = vec![T::zero(); m.len()];
    let mut deltas: Vec<Option<T>> = vec![None; m.len()];
    shape.for_each_state(|idx, p| {
        let level: usize = p.iter().sum();
        if level == n {
            return;
        }
        let here = b.get(level).clone() * r[idx].clone();
        let mut any = false;
        for (a, slot) in deltas.iter_mut().enumerate() {
            *slot = None;
            if p[a] < m[a] {
                let delta = b.get(level + 1).clone() * r[idx + strides[a]].clone() - here.clone();
                if !delta.is_zero() {
                    *slot = Some(delta);
                    any = true;
                }
            }
        }
        if !any {
            return;
        }
        let w = weights.at(p, level);
        for (a, slot) in deltas.iter_mut().enumerate() {
            if let Some(delta) = slot.take() {
                let remaining = T::from_usize(m[a] - p[a]);
                shares[a] = shares[a].clone() + w.clone() * remaining * delta;
            }
        }
    });
    Ok(shares)
}

/// Closed-form share of a single pot axis.
pub fn grid_state_les<T: Scalar>(mg: &MicroGame<'_, T>, b: &LesWeights<T>, axis: usize) -> Result<T> {
    check_weights(mg, b)?;
    let shape = mg.grid.shape();
    if axis >= shape.axes() {
        return Err(Error::Index(format!("axis {axis} outside pot of {}", shape.axes())));
    }
    let m = shape.resolutions();
    let stride = shape.strides()[axis];
    let r = mg.grid.values();
    let weights = StateWeights::<T>::new(m);
    let mut share = T::zero();
    shape.for_each_state(|idx, p| {
        if p[axis] == m[axis] {
            return;
        }
        let level: usize = p.iter().sum();
        let delta = b.get(level + 1).clone() * r[idx + stride].clone() - b.get(level).clone() * r[idx].clone();
        if delta.is_zero() {
            return;
        }
        share = share.clone() + weights.at(p, level) * T::from_usize(m[axis] - p[axis]) * delta;
    });
    Ok(share)
}

/// Equal Surplus in `O(k)`: each step keeps its stand-alone value and the
/// surplus is split evenly over all `n` steps.
pub fn equal_surplus_shares<T: Scalar>(mg: &MicroGame<'_, T>) -> Vec<T> {
    let shape = mg.grid.shape();
    let m = shape.resolutions();
    let r = mg.grid.values();
    let n = T::from_usize(mg.players());
    let alone: Vec<T> = shape.strides().iter().map(|&s| r[s].clone()).collect();
    let standalone_total = alone
        .iter()
        .zip(m)
        .fold(T::zero(), |acc, (v, &mi)| acc + T::from_usize(mi) * v.clone());
    let surplus = mg.grid.far_corner().clone() - standalone_total;
    alone
        .into_iter()
        .zip(m)
        .map(|(v, &mi)| {
            let mi = T::from_usize(mi);
            mi.clone() * v + mi * surplus.clone() / n.clone()
        })
        .collect()
}

/// `phi_u / |u|` for each member.
pub fn equal_split<T: Scalar>(phi: &T, members: usize) -> Vec<T> {
    if members == 0 {
        return Vec::new();
    }
    vec![phi.clone() / T::from_usize(members); members]
}
