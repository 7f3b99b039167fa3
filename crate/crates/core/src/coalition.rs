//! The macro game on changed features: mixed inputs, coalition values,
//! Harsanyi dividends and their Möbius reconstruction.
//!
//! Coalitions are bitmasks over the *support*, the ascending list of
//! changed feature indices. Bit `j` stands for feature `support[j]`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Instance, Predictor};
use crate::scalar::Scalar;

/// Bitmask over support positions.
pub type Mask = u32;

/// Default bound on the number of changed features for exhaustive work.
pub const EXHAUSTIVE_CAP: usize = 12;
/// Default threshold below which a coordinate counts as unchanged.
pub const CHANGE_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualPair {
    x0: Instance,
    x1: Instance,
    delta: Vec<f64>,
    changed: Vec<usize>,
}

impl CounterfactualPair {
    /// Features with `|x1_i - x0_i| > epsilon` form the changed set.
    pub fn new(x0: Instance, x1: Instance, epsilon: f64) -> Result<Self> {
        if x0.len() != x1.len() {
            return Err(Error::input(format!(
                "endpoints have different lengths ({} vs {})",
                x0.len(),
                x1.len()
            )));
        }
        if x0.is_empty() {
            return Err(Error::input("endpoints are empty"));
        }
        if x0.iter().chain(&x1).any(|v| !v.is_finite()) {
            return Err(Error::input("endpoints must be finite"));
        }
        if !(epsilon >= 0.0) {
            return Err(Error::input("change epsilon must be non-negative"));
        }
        let delta: Vec<f64> = x0.iter().zip(&x1).map(|(a, b)| b - a).collect();
        let changed = delta
            .iter()
            .enumerate()
            .filter(|(_, d)| d.abs() > epsilon)
            .map(|(i, _)| i)
            .collect();
        Ok(Self {
            x0,
            x1,
            delta,
            changed,
        })
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn x1(&self) -> &[f64] {
        &self.x1
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn changed(&self) -> &[usize] {
        &self.changed
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    /// The counterfactual endpoint with only changed coordinates moved.
    pub fn x1_effective(&self) -> Instance {
        self.mask_input(self.full_mask())
    }

    pub fn full_mask(&self) -> Mask {
        full_mask(self.changed.len())
    }

    /// Mixed input for a coalition given as support bitmask.
    pub fn mask_input(&self, mask: Mask) -> Instance {
        let mut x = self.x0.clone();
        for (j, &i) in self.changed.iter().enumerate() {
            if mask >> j & 1 == 1 {
                x[i] = self.x1[i];
            }
        }
        x
    }

    /// Mixed input `x^S`: coordinates in `s` at the counterfactual, the rest
    /// at baseline. Every member of `s` must be a changed feature.
    pub fn mixed_input(&self, s: &[usize]) -> Result<Instance> {
        let mut x = self.x0.clone();
        for &i in s {
            if self.changed.binary_search(&i).is_err() {
                return Err(Error::input(format!(
                    "feature {i} is not in the changed set {:?}",
                    self.changed
                )));
            }
            x[i] = self.x1[i];
        }
        Ok(x)
    }

    /// Support bitmask of a set of global feature indices.
    pub fn mask_of(&self, features: &[usize]) -> Result<Mask> {
        features.iter().try_fold(0, |acc, &i| {
            self.changed
                .binary_search(&i)
                .map(|j| acc | 1 << j)
                .map_err(|_| Error::input(format!("feature {i} is not in the changed set")))
        })
    }

    pub fn features_of(&self, mask: Mask) -> Vec<usize> {
        members(mask).map(|j| self.changed[j]).collect()
    }
}

/// On-disk pair description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSpec {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
}

impl PairSpec {
    pub fn into_pair(self, epsilon: f64) -> Result<CounterfactualPair> {
        CounterfactualPair::new(self.x0, self.x1, epsilon)
    }
}

impl From<&CounterfactualPair> for PairSpec {
    fn from(p: &CounterfactualPair) -> Self {
        Self {
            x0: p.x0.clone(),
            x1: p.x1.clone(),
        }
    }
}

pub fn load_pair(path: impl AsRef<Path>, epsilon: f64) -> Result<CounterfactualPair> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: PairSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: format!("line {} column {}: {e}", e.line(), e.column()),
    })?;
    spec.into_pair(epsilon)
}

pub fn full_mask(k: usize) -> Mask {
    if k == 0 {
        0
    } else {
        Mask::MAX >> (Mask::BITS as usize - k)
    }
}

/// Positions of the set bits, ascending.
pub fn members(mask: Mask) -> impl Iterator<Item = usize> {
    (0..Mask::BITS as usize).filter(move |j| mask >> j & 1 == 1)
}

/// All submasks of `mask`, including `0` and `mask` itself.
pub fn submasks(mask: Mask) -> impl Iterator<Item = Mask> {
    let mut next = Some(mask);
    std::iter::from_fn(move || {
        let cur = next?;
        next = if cur == 0 { None } else { Some((cur - 1) & mask) };
        Some(cur)
    })
}

/// In-place subset-sum (zeta) transform: `f(S) <- sum_{T ⊆ S} f(T)`.
pub fn zeta_transform<T: Scalar>(values: &mut [T]) {
    assert!(values.len().is_power_of_two());
    let mut bit = 1;
    while bit < values.len() {
        for s in 0..values.len() {
            if s & bit != 0 {
                let lower = values[s ^ bit].clone();
                values[s] = values[s].clone() + lower;
            }
        }
        bit <<= 1;
    }
}

/// In-place Möbius transform, the inverse of [`zeta_transform`].
pub fn mobius_transform<T: Scalar>(values: &mut [T]) {
    assert!(values.len().is_power_of_two());
    let mut bit = 1;
    while bit < values.len() {
        for s in 0..values.len() {
            if s & bit != 0 {
                let lower = values[s ^ bit].clone();
                values[s] = values[s].clone() - lower;
            }
        }
        bit <<= 1;
    }
}

/// Coalition values `V(S) = g(x^S) - g(x0)` for every `S ⊆ support`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable<T> {
    support: Vec<usize>,
    values: Vec<T>,
    baseline_score: T,
}

impl<T: Scalar> ValueTable<T> {
    /// `values[mask]`; the empty coalition is forced to zero.
    pub fn from_values(support: Vec<usize>, mut values: Vec<T>, baseline_score: T) -> Result<Self> {
        if support.len() > Mask::BITS as usize - 1 {
            return Err(Error::Capacity(format!(
                "{} players exceed the bitmask width",
                support.len()
            )));
        }
        if values.len() != 1 << support.len() {
            return Err(Error::input(format!(
                "{} values for {} players (expected {})",
                values.len(),
                support.len(),
                1usize << support.len()
            )));
        }
        values[0] = T::zero();
        Ok(Self {
            support,
            values,
            baseline_score,
        })
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn players(&self) -> usize {
        self.support.len()
    }

    pub fn value(&self, mask: Mask) -> &T {
        &self.values[mask as usize]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn baseline_score(&self) -> &T {
        &self.baseline_score
    }

    /// `V(support) = g(x1*) - g(x0)`.
    pub fn delta_y(&self) -> &T {
        self.values.last().expect("nonempty table")
    }
}

/// Evaluates the model at all `2^k` corners in one batch.
pub fn coalition_values<P: Predictor + ?Sized>(
    model: &P,
    pair: &CounterfactualPair,
    cap: usize,
) -> Result<ValueTable<f64>> {
    let k = pair.changed().len();
    if k > cap {
        return Err(Error::Capacity(format!(
            "{k} changed features exceed the exhaustive cap of {cap}; use Monte-Carlo estimation"
        )));
    }
    if model.dim() != pair.dim() {
        return Err(Error::input(format!(
            "pair has {} features, model expects {}",
            pair.dim(),
            model.dim()
        )));
    }
    let d = pair.dim();
    let mut rows = Vec::with_capacity((1 << k) * d);
    for mask in 0..(1 as Mask) << k {
        rows.extend(pair.mask_input(mask));
    }
    let scores = model.predict_rows(&rows)?;
    let base = scores[0];
    let values = scores.iter().map(|s| s - base).collect();
    ValueTable::from_values(pair.changed().to_vec(), values, base)
}

/// Harsanyi dividends `phi_u` for every coalition (`phi_∅ = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct DividendTable<T> {
    support: Vec<usize>,
    pots: Vec<T>,
}

impl<T: Scalar> DividendTable<T> {
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn players(&self) -> usize {
        self.support.len()
    }

    pub fn pot(&self, mask: Mask) -> &T {
        &self.pots[mask as usize]
    }

    pub fn pots(&self) -> &[T] {
        &self.pots
    }

    /// Nonempty coalitions with their pots, in mask order.
    pub fn iter(&self) -> impl Iterator<Item = (Mask, &T)> {
        self.pots
            .iter()
            .enumerate()
            .skip(1)
            .map(|(m, v)| (m as Mask, v))
    }

    /// `sum_{u ⊆ s} phi_u`, which equals `V(s)`.
    pub fn reconstruct(&self, s: Mask) -> Result<T> {
        if (s as usize) >= self.pots.len() {
            return Err(Error::input(format!("coalition {s:#b} is outside the support")));
        }
        Ok(submasks(s).fold(T::zero(), |acc, u| acc + self.pots[u as usize].clone()))
    }

    pub fn total(&self) -> T {
        self.pots.iter().fold(T::zero(), |acc, v| acc + v.clone())
    }
}

/// Fast Möbius inversion of a value table, `O(k 2^k)`.
pub fn dividends<T: Scalar>(vt: &ValueTable<T>) -> DividendTable<T> {
    let mut pots = vt.values.clone();
    mobius_transform(&mut pots);
    pots[0] = T::zero();
    DividendTable {
        support: vt.support.clone(),
        pots,
    }
}

/// Rebuilds the value table from dividends by the subset-sum transform.
pub fn values_from_dividends<T: Scalar>(dt: &DividendTable<T>, baseline_score: T) -> ValueTable<T> {
    let mut values = dt.pots.clone();
    zeta_transform(&mut values);
    ValueTable {
        support: dt.support.clone(),
        values,
        baseline_score,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Model;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_dividend(values: &[f64], u: Mask) -> f64 {
        let ku = u.count_ones();
        submasks(u)
            .map(|t| {
                let sign = if (ku - t.count_ones()) % 2 == 0 { 1.0 } else { -1.0 };
                sign * values[t as usize]
            })
            .sum()
    }

    fn pair(x0: Vec<f64>, x1: Vec<f64>) -> CounterfactualPair {
        CounterfactualPair::new(x0, x1, CHANGE_EPSILON).unwrap()
    }

    #[test]
    fn mixed_input_cases() {
        let p = pair(vec![0.0, 0.0], vec![1.0, 1.0]);
        assert_eq!(p.mixed_input(&[]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(p.mixed_input(&[0, 1]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(p.mixed_input(&[1]).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn mixed_input_rejects_unchanged_feature() {
        let p = pair(vec![0.0, 3.0], vec![1.0, 3.0]);
        assert_eq!(p.changed(), &[0]);
        assert!(matches!(p.mixed_input(&[1]), Err(Error::Input(_))));
    }

    #[test]
    fn product_game_values_and_dividends() {
        let m = Model::multilinear(2, vec![(vec![0, 1], 1.0)]).unwrap();
        let vt = coalition_values(&m, &pair(vec![0.0, 0.0], vec![1.0, 1.0]), EXHAUSTIVE_CAP).unwrap();
        assert_eq!(vt.values(), &[0.0, 0.0, 0.0, 1.0]);
        let dt = dividends(&vt);
        assert_eq!(dt.pots(), &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(dt.reconstruct(0).unwrap(), 0.0);
        assert_eq!(dt.reconstruct(3).unwrap(), *vt.delta_y());
    }

    #[test]
    fn linear_values_are_additive_and_interaction_free() {
        let w = vec![0.5, -2.0, 3.0];
        let m = Model::linear(w.clone(), 1.0).unwrap();
        let p = pair(vec![1.0, 2.0, 3.0], vec![2.5, 1.0, 4.0]);
        let vt = coalition_values(&m, &p, EXHAUSTIVE_CAP).unwrap();
        for mask in 0..8 {
            let want: f64 = members(mask).map(|j| w[j] * p.delta()[j]).sum();
            assert!((vt.value(mask) - want).abs() < 1e-12);
        }
        let dt = dividends(&vt);
        for (u, phi) in dt.iter() {
            if u.count_ones() >= 2 {
                assert!(phi.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fast_mobius_matches_inclusion_exclusion() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let values: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let vt = ValueTable::from_values(vec![0, 1, 2, 3], values, 0.0).unwrap();
        let dt = dividends(&vt);
        for u in 1..16 {
            assert!((dt.pot(u) - naive_dividend(vt.values(), u)).abs() < 1e-12);
        }
        for s in 0..16 {
            assert!((dt.reconstruct(s).unwrap() - vt.value(s)).abs() < 1e-12);
        }
    }

    #[test]
    fn capacity_error_above_cap() {
        let m = Model::linear(vec![1.0; 5], 0.0).unwrap();
        let p = pair(vec![0.0; 5], vec![1.0; 5]);
        assert!(coalition_values(&m, &p, 4).unwrap_err().is_capacity());
    }

    #[test]
    fn dummy_feature_gets_no_dividends() {
        // Feature 1 is ignored by the model.
        let m = Model::multilinear(3, vec![(vec![0, 2], 2.0), (vec![0], -1.0)]).unwrap();
        let p = pair(vec![0.2, 0.0, 0.1], vec![0.9, 1.0, 0.7]);
        let dt = dividends(&coalition_values(&m, &p, EXHAUSTIVE_CAP).unwrap());
        for (u, phi) in dt.iter() {
            if u & 0b010 != 0 {
                assert!(phi.abs() < 1e-15, "pot {u:#b} = {phi}");
            }
        }
    }

    #[test]
    fn submask_enumeration_is_complete() {
        let subs: Vec<Mask> = submasks(0b1011).collect();
        assert_eq!(subs.len(), 8);
        assert!(subs.contains(&0) && subs.contains(&0b1011));
    }
}
