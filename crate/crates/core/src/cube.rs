//! Local-cube restriction of a model to one pot and its grid sampling.
//!
//! Grids are dense and row-major over the pot's features in ascending
//! index order: the last feature varies fastest.

use std::fmt::Write as _;

use crate::coalition::CounterfactualPair;
use crate::error::{Error, Result};
use crate::format::fmt_num;
use crate::model::{FeatureKind, Predictor};
use crate::scalar::Scalar;

/// Index arithmetic for a `prod (m_i + 1)` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridShape {
    m: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

impl GridShape {
    pub fn new(m: Vec<usize>) -> Result<Self> {
        if m.is_empty() {
            return Err(Error::input("grid needs at least one axis"));
        }
        if m.iter().any(|&mi| mi == 0) {
            return Err(Error::input(format!("resolutions must be >= 1, got {m:?}")));
        }
        let mut strides = vec![1; m.len()];
        for a in (0..m.len() - 1).rev() {
            strides[a] = strides[a + 1] * (m[a + 1] + 1);
        }
        let len = strides[0] * (m[0] + 1);
        Ok(Self { m, strides, len })
    }

    pub fn resolutions(&self) -> &[usize] {
        &self.m
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn axes(&self) -> usize {
        self.m.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Total number of micro-players, `sum m_i`.
    pub fn total_steps(&self) -> usize {
        self.m.iter().sum()
    }

    pub fn index(&self, p: &[usize]) -> usize {
        p.iter().zip(&self.strides).map(|(pi, s)| pi * s).sum()
    }

    pub fn state(&self, mut idx: usize) -> Vec<usize> {
        let mut p = vec![0; self.m.len()];
        for (a, s) in self.strides.iter().enumerate() {
            p[a] = idx / s;
            idx %= s;
        }
        p
    }

    pub fn contains(&self, p: &[usize]) -> bool {
        p.len() == self.m.len() && p.iter().zip(&self.m).all(|(pi, mi)| pi <= mi)
    }

    /// Slider coordinates `t(p) = p_i / m_i`.
    pub fn slider(&self, p: &[usize]) -> Vec<f64> {
        p.iter().zip(&self.m).map(|(&pi, &mi)| pi as f64 / mi as f64).collect()
    }

    /// Visits every state in index order; `p` is updated in place.
    pub fn for_each_state(&self, mut f: impl FnMut(usize, &[usize])) {
        let mut p = vec![0; self.m.len()];
        for idx in 0..self.len {
            f(idx, &p);
            for a in (0..p.len()).rev() {
                if p[a] < self.m[a] {
                    p[a] += 1;
                    break;
                }
                p[a] = 0;
            }
        }
    }
}

/// A pot `u` (ascending global feature indices) and its resolutions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridSpec {
    pot: Vec<usize>,
    shape: GridShape,
}

impl GridSpec {
    pub fn new(pot: Vec<usize>, m: Vec<usize>) -> Result<Self> {
        if pot.len() < 2 {
            return Err(Error::input("a pot grid needs at least two features"));
        }
        if pot.len() != m.len() {
            return Err(Error::input(format!(
                "{} resolutions for a pot of {} features",
                m.len(),
                pot.len()
            )));
        }
        if pot.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::input("pot features must be strictly ascending"));
        }
        Ok(Self {
            pot,
            shape: GridShape::new(m)?,
        })
    }

    pub fn uniform(pot: Vec<usize>, m: usize) -> Result<Self> {
        let k = pot.len();
        Self::new(pot, vec![m; k])
    }

    pub fn pot(&self) -> &[usize] {
        &self.pot
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }
}

/// `x0 + sum_{i in pot} t_i Delta_i e_i`. Endpoint sliders reproduce the
/// endpoint coordinates bit for bit.
pub fn slider_point(pair: &CounterfactualPair, pot: &[usize], t: &[f64]) -> Result<Vec<f64>> {
    if pot.len() != t.len() {
        return Err(Error::input(format!(
            "{} slider values for a pot of {} features",
            t.len(),
            pot.len()
        )));
    }
    if let Some(v) = t.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::input(format!("slider value {v} outside [0, 1]")));
    }
    if let Some(&i) = pot.iter().find(|&&i| i >= pair.dim()) {
        return Err(Error::input(format!("feature {i} out of range")));
    }
    let mut x = pair.x0().to_vec();
    set_sliders(&mut x, pair, pot, t);
    Ok(x)
}

fn set_sliders(x: &mut [f64], pair: &CounterfactualPair, pot: &[usize], t: &[f64]) {
    for (&i, &ti) in pot.iter().zip(t) {
        x[i] = slider_coord(pair, i, ti);
    }
}

fn slider_coord(pair: &CounterfactualPair, i: usize, t: f64) -> f64 {
    if t == 0.0 {
        pair.x0()[i]
    } else if t == 1.0 {
        pair.x1()[i]
    } else {
        pair.x0()[i] + t * pair.delta()[i]
    }
}

/// Query rows realising `g*_u(t)` for a batch of slider vectors: each
/// categorical coordinate strictly inside (0, 1) is pinned at both endpoints
/// and the rows are mixed with product weights.
pub(crate) struct MixtureBatch {
    pub rows: Vec<f64>,
    /// Per slider vector: range into `weights`/rows.
    pub spans: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
}

impl MixtureBatch {
    pub fn build(
        pair: &CounterfactualPair,
        kinds: &[FeatureKind],
        pot: &[usize],
        sliders: impl IntoIterator<Item = Vec<f64>>,
    ) -> Self {
        let d = pair.dim();
        let mut out = MixtureBatch {
            rows: Vec::new(),
            spans: Vec::new(),
            weights: Vec::new(),
        };
        let mut base = pair.x0().to_vec();
        for t in sliders {
            let start = out.weights.len();
            let mixed: Vec<usize> = (0..pot.len())
                .filter(|&a| {
                    kinds.get(pot[a]) == Some(&FeatureKind::CategoricalBinary)
                        && t[a] > 0.0
                        && t[a] < 1.0
                })
                .collect();
            set_sliders(&mut base, pair, pot, &t);
            for corner in 0u32..1 << mixed.len() {
                let mut w = 1.0;
                let mut x = base.clone();
                for (bit, &a) in mixed.iter().enumerate() {
                    let i = pot[a];
                    if corner >> bit & 1 == 1 {
                        x[i] = pair.x1()[i];
                        w *= t[a];
                    } else {
                        x[i] = pair.x0()[i];
                        w *= 1.0 - t[a];
                    }
                }
                debug_assert_eq!(x.len(), d);
                out.rows.extend_from_slice(&x);
                out.weights.push(w);
            }
            out.spans.push((start, out.weights.len()));
        }
        out
    }

    pub fn evaluate<P: Predictor + ?Sized>(&self, model: &P) -> Result<Vec<f64>> {
        let scores = model.predict_rows(&self.rows)?;
        Ok(self
            .spans
            .iter()
            .map(|&(a, b)| {
                if b - a == 1 {
                    scores[a]
                } else {
                    (a..b).map(|r| self.weights[r] * scores[r]).sum()
                }
            })
            .collect())
    }

    /// Maps a failing row back to its slider vector.
    pub fn owner_of(&self, row: usize) -> usize {
        self.spans.partition_point(|&(_, end)| end <= row)
    }
}

/// Model values `g_p = g_u(t(p))` over a pot grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeTable<T> {
    spec: GridSpec,
    values: Vec<T>,
}

impl<T: Scalar> CubeTable<T> {
    pub fn from_values(spec: GridSpec, values: Vec<T>) -> Result<Self> {
        if values.len() != spec.shape.len() {
            return Err(Error::input(format!(
                "{} values for a grid of {} states",
                values.len(),
                spec.shape.len()
            )));
        }
        Ok(Self { spec, values })
    }

    /// Tabulates `f(t(p))`.
    pub fn from_fn(spec: GridSpec, mut f: impl FnMut(&[f64]) -> T) -> Self {
        let mut values = Vec::with_capacity(spec.shape.len());
        spec.shape.for_each_state(|_, p| values.push(f(&spec.shape.slider(p))));
        Self { spec, values }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn at(&self, p: &[usize]) -> &T {
        &self.values[self.spec.shape.index(p)]
    }
}

/// Samples the (mixture-extended) cube-restricted model on every grid node.
pub fn eval_cube<P: Predictor + ?Sized>(
    model: &P,
    pair: &CounterfactualPair,
    kinds: &[FeatureKind],
    spec: &GridSpec,
) -> Result<CubeTable<f64>> {
    if model.dim() != pair.dim() {
        return Err(Error::input("pair and model dimensions differ"));
    }
    if let Some(&i) = spec.pot.iter().find(|&&i| i >= pair.dim()) {
        return Err(Error::input(format!("pot feature {i} out of range")));
    }
    let shape = &spec.shape;
    let mut sliders = Vec::with_capacity(shape.len());
    shape.for_each_state(|_, p| sliders.push(shape.slider(p)));
    let batch = MixtureBatch::build(pair, kinds, &spec.pot, sliders);
    let values = batch.evaluate(model).map_err(|e| match e {
        Error::Evaluation {
            row: Some(row),
            message,
        } => {
            let idx = batch.owner_of(row);
            Error::eval(
                Some(idx),
                format!("grid state {:?} of pot {:?}: {message}", shape.state(idx), spec.pot),
            )
        }
        other => other,
    })?;
    Ok(CubeTable {
        spec: spec.clone(),
        values,
    })
}

/// Pure interaction residual `r_p` of one pot, sampled on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualGrid<T> {
    spec: GridSpec,
    values: Vec<T>,
}

impl<T: Scalar> ResidualGrid<T> {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn shape(&self) -> &GridShape {
        &self.spec.shape
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn at(&self, p: &[usize]) -> &T {
        &self.values[self.spec.shape.index(p)]
    }

    /// `r_m`, the pot's dividend.
    pub fn far_corner(&self) -> &T {
        self.values.last().expect("nonempty grid")
    }

    /// Residual of `f` sampled at `t(p)`; boundary-zero by construction.
    pub fn from_fn(spec: GridSpec, f: impl FnMut(&[f64]) -> T) -> Self {
        residual_grid(&CubeTable::from_fn(spec, f))
    }
}

/// Inclusion-exclusion over masked faces as `k` axis passes, each
/// `r <- r - r|_{p_a = 0}`. Boundary slices come out exactly zero.
pub fn residual_grid<T: Scalar>(ct: &CubeTable<T>) -> ResidualGrid<T> {
    let shape = &ct.spec.shape;
    let mut r = ct.values.clone();
    for a in 0..shape.axes() {
        let stride = shape.strides[a];
        let span = stride * (shape.m[a] + 1);
        for block in r.chunks_mut(span) {
            let (pinned, rest) = block.split_at_mut(stride);
            for row in rest.chunks_mut(stride) {
                for (x, z) in row.iter_mut().zip(pinned.iter()) {
                    *x = x.clone() - z.clone();
                }
            }
            for z in pinned.iter_mut() {
                *z = T::zero();
            }
        }
    }
    ResidualGrid {
        spec: ct.spec.clone(),
        values: r,
    }
}

/// `b(|p|+1) r_{p+e_i} - b(|p|) r_p` for axis `axis` of the pot.
pub fn delta_p<T: Scalar>(
    rg: &ResidualGrid<T>,
    p: &[usize],
    axis: usize,
    b: &crate::microgame::LesWeights<T>,
) -> Result<T> {
    let shape = rg.shape();
    if !shape.contains(p) {
        return Err(Error::Index(format!("state {p:?} outside grid {:?}", shape.m)));
    }
    if axis >= shape.axes() {
        return Err(Error::Index(format!("axis {axis} outside pot of {}", shape.axes())));
    }
    if p[axis] == shape.m[axis] {
        return Err(Error::Index(format!(
            "state {p:?} is already at the last step along axis {axis}"
        )));
    }
    if b.players() != shape.total_steps() {
        return Err(Error::input(format!(
            "weights for {} players, grid has {}",
            b.players(),
            shape.total_steps()
        )));
    }
    let level: usize = p.iter().sum();
    let idx = shape.index(p);
    let here = rg.values[idx].clone();
    let next = rg.values[idx + shape.strides[axis]].clone();
    Ok(b.get(level + 1).clone() * next - b.get(level).clone() * here)
}

/// Residual `r_u(t)` at arbitrary slider vectors by direct `2^k` masking.
pub fn residual_at<P: Predictor + ?Sized>(
    model: &P,
    pair: &CounterfactualPair,
    kinds: &[FeatureKind],
    pot: &[usize],
    points: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let k = pot.len();
    let mut sliders = Vec::with_capacity(points.len() << k);
    for t in points {
        if t.len() != k || t.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::input(format!("slider vector {t:?} outside the unit cube")));
        }
        for mask in 0u32..1 << k {
            sliders.push(
                (0..k)
                    .map(|a| if mask >> a & 1 == 1 { t[a] } else { 0.0 })
                    .collect(),
            );
        }
    }
    let g = MixtureBatch::build(pair, kinds, pot, sliders).evaluate(model)?;
    Ok(g.chunks_exact(1 << k)
        .map(|faces| {
            faces
                .iter()
                .enumerate()
                .map(|(mask, v)| {
                    if (k - (mask as u32).count_ones() as usize) % 2 == 0 {
                        *v
                    } else {
                        -*v
                    }
                })
                .sum()
        })
        .collect())
}

/// CSV with columns `p_<feature>..., t_<feature>..., g, r`.
pub fn dump_csv(ct: &CubeTable<f64>, rg: &ResidualGrid<f64>) -> String {
    let shape = &ct.spec.shape;
    let mut out = String::new();
    let pot = &ct.spec.pot;
    let head: Vec<String> = pot
        .iter()
        .map(|i| format!("p_{i}"))
        .chain(pot.iter().map(|i| format!("t_{i}")))
        .collect();
    writeln!(out, "{},g,r", head.join(",")).unwrap();
    shape.for_each_state(|idx, p| {
        let cols: Vec<String> = p
            .iter()
            .map(|v| v.to_string())
            .chain(shape.slider(p).into_iter().map(fmt_num))
            .collect();
        writeln!(
            out,
            "{},{},{}",
            cols.join(","),
            fmt_num(ct.values[idx]),
            fmt_num(rg.values[idx])
        )
        .unwrap();
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coalition::{coalition_values, dividends, CHANGE_EPSILON};
    use crate::microgame::{les_preset, LesRule};
    use crate::model::Model;

    fn unit_pair(d: usize) -> CounterfactualPair {
        CounterfactualPair::new(vec![0.0; d], vec![1.0; d], CHANGE_EPSILON).unwrap()
    }

    /// Literal inclusion-exclusion over masked indices.
    fn direct_residual(ct: &CubeTable<f64>, p: &[usize]) -> f64 {
        let k = p.len();
        (0u32..1 << k)
            .map(|mask| {
                let q: Vec<usize> = (0..k).map(|a| if mask >> a & 1 == 1 { p[a] } else { 0 }).collect();
                let sign = if (k - mask.count_ones() as usize) % 2 == 0 { 1.0 } else { -1.0 };
                sign * ct.at(&q)
            })
            .sum()
    }

    #[test]
    fn grid_shape_round_trips() {
        let s = GridShape::new(vec![2, 3, 1]).unwrap();
        assert_eq!(s.len(), 3 * 4 * 2);
        let mut seen = 0;
        s.for_each_state(|idx, p| {
            assert_eq!(s.index(p), idx);
            assert_eq!(s.state(idx), p);
            seen += 1;
        });
        assert_eq!(seen, s.len());
        assert!(GridShape::new(vec![2, 0]).is_err());
    }

    #[test]
    fn slider_point_cases() {
        let p = CounterfactualPair::new(vec![0.0, 0.0, 5.0], vec![1.0, 1.0, 5.0], 0.0).unwrap();
        assert_eq!(slider_point(&p, &[0, 1], &[0.0, 0.0]).unwrap(), vec![0.0, 0.0, 5.0]);
        assert_eq!(slider_point(&p, &[0, 1], &[1.0, 1.0]).unwrap(), vec![1.0, 1.0, 5.0]);
        assert_eq!(
            slider_point(&p, &[0, 1], &[0.5, 0.25]).unwrap(),
            vec![0.5, 0.25, 5.0]
        );
        assert!(slider_point(&p, &[0, 1], &[1.5, 0.0]).is_err());
    }

    #[test]
    fn slider_corner_is_bitwise_endpoint() {
        let p = CounterfactualPair::new(vec![0.1, 0.7], vec![0.3, 0.2], 0.0).unwrap();
        assert_eq!(slider_point(&p, &[0, 1], &[1.0, 1.0]).unwrap(), p.x1());
    }

    #[test]
    fn product_cube_values() {
        let m = Model::multilinear(2, vec![(vec![0, 1], 1.0)]).unwrap();
        let spec = GridSpec::uniform(vec![0, 1], 2).unwrap();
        let ct = eval_cube(&m, &unit_pair(2), &[FeatureKind::Continuous; 2], &spec).unwrap();
        assert_eq!(*ct.at(&[1, 1]), 0.25);
        assert_eq!(*ct.at(&[2, 2]), 1.0);
        let rg = residual_grid(&ct);
        spec.shape().for_each_state(|_, p| {
            let t = spec.shape().slider(p);
            assert!((rg.at(p) - t[0] * t[1]).abs() < 1e-15);
        });
        assert_eq!(*rg.far_corner(), 1.0);
    }

    #[test]
    fn axis_passes_match_direct_inclusion_exclusion() {
        let spec = GridSpec::new(vec![0, 1, 2], vec![2, 3, 1]).unwrap();
        let ct = CubeTable::from_fn(spec.clone(), |t| (t[0] * 3.0).sin() + t[1] * t[2].exp() - t[0] * t[1] * t[2]);
        let rg = residual_grid(&ct);
        spec.shape().for_each_state(|_, p| {
            assert!((rg.at(p) - direct_residual(&ct, p)).abs() < 1e-12);
            if p.contains(&0) {
                assert_eq!(*rg.at(p), 0.0);
            }
        });
    }

    #[test]
    fn far_corner_equals_dividend() {
        let m = Model::multilinear(3, vec![(vec![0, 1, 2], 1.5), (vec![0, 2], -0.5), (vec![1], 2.0)]).unwrap();
        let pair = CounterfactualPair::new(vec![0.2, 0.1, 0.4], vec![0.9, 0.6, 0.8], 0.0).unwrap();
        let dt = dividends(&coalition_values(&m, &pair, 12).unwrap());
        let spec = GridSpec::uniform(vec![0, 1, 2], 3).unwrap();
        let rg = residual_grid(&eval_cube(&m, &pair, &[FeatureKind::Continuous; 3], &spec).unwrap());
        assert!((rg.far_corner() - dt.pot(0b111)).abs() < 1e-12);
        let spec = GridSpec::uniform(vec![0, 2], 4).unwrap();
        let rg = residual_grid(&eval_cube(&m, &pair, &[FeatureKind::Continuous; 3], &spec).unwrap());
        assert!((rg.far_corner() - dt.pot(0b101)).abs() < 1e-12);
    }

    #[test]
    fn categorical_mixture_endpoints() {
        // sigmoid(x0 + x1) is nonlinear in x0, so raw interiors differ from mixtures.
        let m = Model::new(crate::model::ModelSpec::Mlp(crate::model::MlpModel {
            widths: vec![2, 1],
            layers: vec![crate::model::DenseLayer { weights: vec![vec![1.0, 1.0]], bias: vec![0.0] }],
            activation: crate::model::Activation::Identity,
            output: crate::model::Activation::Sigmoid,
        }))
        .unwrap();
        let pair = CounterfactualPair::new(vec![0.0, 0.0], vec![1.0, 1.0], 0.0).unwrap();
        let kinds = [FeatureKind::CategoricalBinary, FeatureKind::Continuous];
        let spec = GridSpec::uniform(vec![0, 1], 4).unwrap();
        let ct = eval_cube(&m, &pair, &kinds, &spec).unwrap();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        for p1 in 0..=4 {
            let t1 = p1 as f64 / 4.0;
            assert_eq!(*ct.at(&[0, p1]), sig(t1));
            assert_eq!(*ct.at(&[4, p1]), sig(1.0 + t1));
            let t0 = 0.25;
            let mix = (1.0 - t0) * sig(t1) + t0 * sig(1.0 + t1);
            assert!((ct.at(&[1, p1]) - mix).abs() < 1e-15);
        }
    }

    #[test]
    fn delta_p_examples() {
        let spec = GridSpec::uniform(vec![0, 1], 2).unwrap();
        let rg = ResidualGrid::from_fn(spec, |t: &[f64]| t[0] * t[1]);
        let sh = les_preset::<f64>(LesRule::Shapley, 4).unwrap();
        assert!((delta_p(&rg, &[1, 1], 0, &sh).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(delta_p(&rg, &[0, 0], 0, &sh).unwrap(), 0.0);
        let es = les_preset::<f64>(LesRule::EqualSurplus, 4).unwrap();
        assert_eq!(delta_p(&rg, &[0, 0], 1, &es).unwrap(), 0.0);
        assert!(matches!(delta_p(&rg, &[2, 0], 0, &sh), Err(Error::Index(_))));
    }

    #[test]
    fn pointwise_residual_matches_grid() {
        let m = Model::multilinear(2, vec![(vec![0, 1], 2.0)]).unwrap();
        let r = residual_at(&m, &unit_pair(2), &[FeatureKind::Continuous; 2], &[0, 1], &[vec![0.5, 0.5], vec![1.0, 0.25]]).unwrap();
        assert!((r[0] - 0.5).abs() < 1e-15);
        assert!((r[1] - 0.5).abs() < 1e-15);
    }
}
