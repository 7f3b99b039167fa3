//! Predictors: a small zoo of analytic models plus a file-based protocol
//! for external scoring processes.
//!
//! Every predictor consumes row-major batches of real feature vectors and
//! returns one score per row.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Instance = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    #[default]
    Continuous,
    /// Takes values in {0, 1} at the endpoints; interior slider positions
    /// are evaluated through an endpoint mixture.
    #[serde(alias = "categorical")]
    CategoricalBinary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub name: String,
    #[serde(default)]
    pub kind: FeatureKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<FeatureDescriptor>", into = "Vec<FeatureDescriptor>")]
pub struct FeatureSpace {
    features: Vec<FeatureDescriptor>,
}

impl FeatureSpace {
    pub fn new(features: Vec<FeatureDescriptor>) -> Result<Self> {
        if features.len() < 2 {
            return Err(Error::input("a feature space needs at least two features"));
        }
        let mut seen = HashSet::new();
        for f in &features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::input(format!("duplicate feature name '{}'", f.name)));
            }
        }
        Ok(Self { features })
    }

    /// Continuous features named `x0`, `x1`, ...
    pub fn continuous(d: usize) -> Result<Self> {
        Self::new(
            (0..d)
                .map(|i| FeatureDescriptor {
                    name: format!("x{i}"),
                    kind: FeatureKind::Continuous,
                })
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn kinds(&self) -> Vec<FeatureKind> {
        self.features.iter().map(|f| f.kind).collect()
    }

    pub fn descriptors(&self) -> &[FeatureDescriptor] {
        &self.features
    }
}

impl TryFrom<Vec<FeatureDescriptor>> for FeatureSpace {
    type Error = Error;

    fn try_from(v: Vec<FeatureDescriptor>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<FeatureSpace> for Vec<FeatureDescriptor> {
    fn from(fs: FeatureSpace) -> Self {
        fs.features
    }
}

/// Anything that maps feature vectors to scores.
///
/// Implementations must be pure: the same rows always yield bit-identical
/// scores, and concurrent calls are allowed.
pub trait Predictor: Send + Sync {
    fn dim(&self) -> usize;

    /// Scores a row-major buffer of `rows.len() / dim()` instances.
    fn predict_rows(&self, rows: &[f64]) -> Result<Vec<f64>>;

    /// Whether the model is smooth enough for limit checks to be meaningful.
    fn is_smooth(&self) -> bool {
        true
    }

    fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.predict_rows(x)?[0])
    }

    fn predict_batch(&self, xs: &[Instance]) -> Result<Vec<f64>> {
        let d = self.dim();
        let mut flat = Vec::with_capacity(xs.len() * d);
        for (i, x) in xs.iter().enumerate() {
            if x.len() != d {
                return Err(Error::input(format!(
                    "batch row {i} has {} values, expected {d}",
                    x.len()
                )));
            }
            flat.extend_from_slice(x);
        }
        self.predict_rows(&flat)
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn predict_rows(&self, rows: &[f64]) -> Result<Vec<f64>> {
        (**self).predict_rows(rows)
    }
    fn is_smooth(&self) -> bool {
        (**self).is_smooth()
    }
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn predict_rows(&self, rows: &[f64]) -> Result<Vec<f64>> {
        (**self).predict_rows(rows)
    }
    fn is_smooth(&self) -> bool {
        (**self).is_smooth()
    }
}

/// Splits `rows` into instances, validating shape and finiteness.
pub(crate) fn check_rows(rows: &[f64], d: usize) -> Result<usize> {
    if rows.is_empty() {
        return Err(Error::input("empty batch"));
    }
    if d == 0 || rows.len() % d != 0 {
        return Err(Error::input(format!(
            "batch of {} values is not a multiple of dimension {d}",
            rows.len()
        )));
    }
    if let Some(pos) = rows.iter().position(|v| !v.is_finite()) {
        return Err(Error::input(format!("non-finite input at row {}", pos / d)));
    }
    Ok(rows.len() / d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    #[serde(default)]
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultilinearTerm {
    /// Zero-based feature indices; empty means a constant term.
    pub coalition: Vec<usize>,
    pub coefficient: f64,
}

/// `g(x) = sum_u c_u * prod_{i in u} x_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultilinearModel {
    pub d: usize,
    pub terms: Vec<MultilinearTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Leaf {
        leaf: f64,
    },
    /// Rows with `x[feature] < cutpoint` go left.
    Split {
        feature: usize,
        cutpoint: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    fn eval(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { leaf } => return *leaf,
                TreeNode::Split {
                    feature,
                    cutpoint,
                    left,
                    right,
                } => {
                    node = if x[*feature] < *cutpoint { left } else { right };
                }
            }
        }
    }

    fn validate(&self, d: usize, path: &str) -> std::result::Result<(), String> {
        match self {
            TreeNode::Leaf { leaf } if !leaf.is_finite() => Err(format!("{path}.leaf: not finite")),
            TreeNode::Leaf { .. } => Ok(()),
            TreeNode::Split {
                feature,
                cutpoint,
                left,
                right,
            } => {
                if *feature >= d {
                    return Err(format!("{path}.feature: index {feature} out of range for d={d}"));
                }
                if !cutpoint.is_finite() {
                    return Err(format!("{path}.cutpoint: not finite"));
                }
                left.validate(d, &format!("{path}.left"))?;
                right.validate(d, &format!("{path}.right"))
            }
        }
    }
}

/// Additive ensemble of axis-aligned trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdModel {
    pub d: usize,
    pub trees: Vec<TreeNode>,
    #[serde(default)]
    pub bias: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Identity,
    Sigmoid,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `out x in` matrix.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

/// Fully connected network. Hidden layers use `activation`; the final layer
/// uses `output` (identity unless stated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    /// `[d, h1, ..., 1]`.
    pub widths: Vec<usize>,
    pub layers: Vec<DenseLayer>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "identity")]
    pub output: Activation,
}

fn identity() -> Activation {
    Activation::Identity
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ModelSpec {
    Linear(LinearModel),
    Multilinear(MultilinearModel),
    Threshold(ThresholdModel),
    Mlp(MlpModel),
}

impl ModelSpec {
    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::Linear(m) => m.weights.len(),
            ModelSpec::Multilinear(m) => m.d,
            ModelSpec::Threshold(m) => m.d,
            ModelSpec::Mlp(m) => m.widths.first().copied().unwrap_or(0),
        }
    }

    /// Structural checks; the error string names the offending field.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let finite = |v: &[f64], what: &str| match v.iter().position(|x| !x.is_finite()) {
            Some(i) => Err(format!("{what}[{i}]: not finite")),
            None => Ok(()),
        };
        match self {
            ModelSpec::Linear(m) => {
                if m.weights.is_empty() {
                    return Err("weights: must be nonempty".into());
                }
                finite(&m.weights, "weights")?;
                finite(&[m.bias], "bias")
            }
            ModelSpec::Multilinear(m) => {
                if m.d == 0 {
                    return Err("d: must be positive".into());
                }
                let mut seen = HashSet::new();
                for (t, term) in m.terms.iter().enumerate() {
                    let mut members = HashSet::new();
                    for &i in &term.coalition {
                        if i >= m.d {
                            return Err(format!(
                                "terms[{t}].coalition: feature {i} out of range for d={}",
                                m.d
                            ));
                        }
                        if !members.insert(i) {
                            return Err(format!("terms[{t}].coalition: repeated feature {i}"));
                        }
                    }
                    let mut key = term.coalition.clone();
                    key.sort_unstable();
                    if !seen.insert(key) {
                        return Err(format!("terms[{t}].coalition: duplicate term"));
                    }
                    finite(&[term.coefficient], &format!("terms[{t}].coefficient"))?;
                }
                Ok(())
            }
            ModelSpec::Threshold(m) => {
                if m.d == 0 {
                    return Err("d: must be positive".into());
                }
                for (t, tree) in m.trees.iter().enumerate() {
                    tree.validate(m.d, &format!("trees[{t}]"))?;
                }
                finite(&[m.bias], "bias")
            }
            ModelSpec::Mlp(m) => {
                if m.widths.len() < 2 {
                    return Err("widths: need at least input and output widths".into());
                }
                if m.widths.iter().any(|&w| w == 0) {
                    return Err("widths: all widths must be positive".into());
                }
                if *m.widths.last().unwrap() != 1 {
                    return Err("widths: output width must be 1".into());
                }
                if m.layers.len() != m.widths.len() - 1 {
                    return Err(format!(
                        "layers: expected {} layers for widths {:?}, found {}",
                        m.widths.len() - 1,
                        m.widths,
                        m.layers.len()
                    ));
                }
                for (l, layer) in m.layers.iter().enumerate() {
                    let (fan_in, fan_out) = (m.widths[l], m.widths[l + 1]);
                    if layer.weights.len() != fan_out {
                        return Err(format!(
                            "layers[{l}].weights: expected {fan_out} rows, found {}",
                            layer.weights.len()
                        ));
                    }
                    for (r, row) in layer.weights.iter().enumerate() {
                        if row.len() != fan_in {
                            return Err(format!(
                                "layers[{l}].weights[{r}]: expected {fan_in} columns, found {}",
                                row.len()
                            ));
                        }
                        finite(row, &format!("layers[{l}].weights[{r}]"))?;
                    }
                    if layer.bias.len() != fan_out {
                        return Err(format!(
                            "layers[{l}].bias: expected {fan_out} entries, found {}",
                            layer.bias.len()
                        ));
                    }
                    finite(&layer.bias, &format!("layers[{l}].bias"))?;
                }
                Ok(())
            }
        }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ModelSpec::Linear(m) => {
                m.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + m.bias
            }
            ModelSpec::Multilinear(m) => m
                .terms
                .iter()
                .map(|t| t.coalition.iter().fold(t.coefficient, |acc, &i| acc * x[i]))
                .sum(),
            ModelSpec::Threshold(m) => m.trees.iter().map(|t| t.eval(x)).sum::<f64>() + m.bias,
            ModelSpec::Mlp(m) => {
                let mut act = x.to_vec();
                let last = m.layers.len() - 1;
                for (l, layer) in m.layers.iter().enumerate() {
                    let f = if l == last { m.output } else { m.activation };
                    act = layer
                        .weights
                        .iter()
                        .zip(&layer.bias)
                        .map(|(row, b)| {
                            f.apply(row.iter().zip(&act).map(|(w, a)| w * a).sum::<f64>() + b)
                        })
                        .collect();
                }
                act[0]
            }
        }
    }
}

/// A validated built-in model, optionally carrying feature metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    #[serde(flatten)]
    spec: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<FeatureSpace>,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate().map_err(Error::Input)?;
        Ok(Self {
            spec,
            features: None,
        })
    }

    pub fn with_features(mut self, features: FeatureSpace) -> Result<Self> {
        if features.dim() != self.spec.dim() {
            return Err(Error::input(format!(
                "features: {} descriptors for a model of dimension {}",
                features.dim(),
                self.spec.dim()
            )));
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn linear(weights: Vec<f64>, bias: f64) -> Result<Self> {
        Self::new(ModelSpec::Linear(LinearModel { weights, bias }))
    }

    /// Terms given as (zero-based coalition, coefficient).
    pub fn multilinear(d: usize, terms: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        Self::new(ModelSpec::Multilinear(MultilinearModel {
            d,
            terms: terms
                .into_iter()
                .map(|(coalition, coefficient)| MultilinearTerm {
                    coalition,
                    coefficient,
                })
                .collect(),
        }))
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn features(&self) -> Option<&FeatureSpace> {
        self.features.as_ref()
    }

    pub fn feature_kinds(&self) -> Vec<FeatureKind> {
        self.features
            .as_ref()
            .map(FeatureSpace::kinds)
            .unwrap_or_else(|| vec![FeatureKind::Continuous; self.dim()])
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features
            .as_ref()
            .map(FeatureSpace::names)
            .unwrap_or_else(|| (0..self.dim()).map(|i| format!("x{i}")).collect())
    }
}

impl Predictor for Model {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn predict_rows(&self, rows: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        check_rows(rows, d)?;
        rows.chunks_exact(d)
            .enumerate()
            .map(|(row, x)| {
                let y = self.spec.eval(x);
                if y.is_finite() {
                    Ok(y)
                } else {
                    Err(Error::eval(Some(row), format!("model produced {y}")))
                }
            })
            .collect()
    }

    fn is_smooth(&self) -> bool {
        match &self.spec {
            ModelSpec::Threshold(_) => false,
            ModelSpec::Mlp(m) => {
                m.activation != Activation::Relu && m.output != Activation::Relu
            }
            _ => true,
        }
    }
}

fn parse_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Field path of a deserialization failure inside the model body. The
/// tagged, flattened layout buffers its content and loses the path, so the
/// body is decoded again as the concrete variant.
fn spec_field_path(text: &str) -> Option<String> {
    fn path_of<T: serde::de::DeserializeOwned>(v: serde_json::Value) -> Option<String> {
        serde_path_to_error::deserialize::<_, T>(v).err().map(|e| e.path().to_string())
    }
    let mut v: serde_json::Value = serde_json::from_str(text).ok()?;
    let obj = v.as_object_mut()?;
    let tag = obj.remove("type")?;
    if let Some(f) = obj.remove("features") {
        if let Some(p) = path_of::<FeatureSpace>(f) {
            return Some(format!("features{}", p.trim_start_matches('.')));
        }
    }
    match tag.as_str()? {
        "linear" => path_of::<LinearModel>(v),
        "multilinear" => path_of::<MultilinearModel>(v),
        "threshold" => path_of::<ThresholdModel>(v),
        "mlp" => path_of::<MlpModel>(v),
        _ => None,
    }
}

fn read_model_json(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        let mut field = e.path().to_string();
        if field == "." {
            field = spec_field_path(&text).unwrap_or(field);
        }
        parse_error(
            path,
            format!(
                "line {} column {}, field '{field}': {inner}",
                inner.line(),
                inner.column(),
            ),
        )
    })
}

/// Reads a model-spec JSON file.
pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let model = read_model_json(path)?;
    model.spec.validate().map_err(|m| parse_error(path, m))?;
    if let Some(fs) = &model.features {
        if fs.dim() != model.spec.dim() {
            return Err(parse_error(
                path,
                format!(
                    "features: {} descriptors for a model of dimension {}",
                    fs.dim(),
                    model.spec.dim()
                ),
            ));
        }
    }
    Ok(model)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(model).expect("model serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Configuration of a scoring process driven through files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalConfig {
    pub d: usize,
    pub request: PathBuf,
    pub response: PathBuf,
    /// Shell command; `{request}` and `{response}` are substituted.
    pub command: String,
    #[serde(default = "default_batch_limit")]
    pub batch_limit: usize,
    #[serde(default)]
    pub smooth: Option<bool>,
    #[serde(default)]
    pub features: Option<FeatureSpace>,
}

fn default_batch_limit() -> usize {
    4096
}

/// Writes query rows as headerless CSV, runs the command, reads one score
/// per line back. Invocations through one handle are serialized.
#[derive(Debug)]
pub struct ExternalPredictor {
    config: ExternalConfig,
    lock: Mutex<()>,
}

impl ExternalPredictor {
    pub fn new(config: ExternalConfig) -> Result<Self> {
        if config.d == 0 {
            return Err(Error::input("external predictor: d must be positive"));
        }
        if config.batch_limit == 0 {
            return Err(Error::input("external predictor: batch_limit must be positive"));
        }
        Ok(Self {
            config,
            lock: Mutex::new(()),
        })
    }

    pub fn config(&self) -> &ExternalConfig {
        &self.config
    }

    fn round_trip(&self, rows: &[f64]) -> Result<Vec<f64>> {
        let d = self.config.d;
        let count = rows.len() / d;
        let mut body = String::with_capacity(rows.len() * 20);
        for x in rows.chunks_exact(d) {
            for (j, v) in x.iter().enumerate() {
                if j > 0 {
                    body.push(',');
                }
                write!(body, "{v:?}").unwrap();
            }
            body.push('\n');
        }
        let req = &self.config.request;
        let resp = &self.config.response;
        fs::write(req, body).map_err(|e| Error::io(req, e))?;
        let _ = fs::remove_file(resp);
        let cmd = self
            .config
            .command
            .replace("{request}", &req.display().to_string())
            .replace("{response}", &resp.display().to_string());
        let status = Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .status()
            .map_err(|e| Error::Protocol(format!("could not launch '{cmd}': {e}")))?;
        if !status.success() {
            return Err(Error::Protocol(format!("'{cmd}' exited with {status}")));
        }
        let text = fs::read_to_string(resp).map_err(|e| Error::io(resp, e))?;
        let scores = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .enumerate()
            .map(|(i, l)| {
                l.parse::<f64>()
                    .map_err(|e| Error::Protocol(format!("response line {}: {e}", i + 1)))
                    .and_then(|v| {
                        if v.is_finite() {
                            Ok(v)
                        } else {
                            Err(Error::eval(Some(i), format!("external score {v}")))
                        }
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        if scores.len() != count {
            return Err(Error::Protocol(format!(
                "sent {count} rows, received {} scores",
                scores.len()
            )));
        }
        Ok(scores)
    }
}

impl Predictor for ExternalPredictor {
    fn dim(&self) -> usize {
        self.config.d
    }

    fn predict_rows(&self, rows: &[f64]) -> Result<Vec<f64>> {
        check_rows(rows, self.config.d)?;
        let _guard = self.lock.lock().unwrap_or_else(|p| p.into_inner());
        let chunk = self.config.batch_limit * self.config.d;
        let mut out = Vec::with_capacity(rows.len() / self.config.d);
        for part in rows.chunks(chunk) {
            out.extend(self.round_trip(part)?);
        }
        Ok(out)
    }

    fn is_smooth(&self) -> bool {
        self.config.smooth.unwrap_or(false)
    }
}

/// Either a built-in model or an external process, as read from disk.
#[derive(Debug)]
pub enum LoadedModel {
    Builtin(Model),
    External(ExternalPredictor),
}

impl LoadedModel {
    pub fn feature_kinds(&self) -> Vec<FeatureKind> {
        match self {
            LoadedModel::Builtin(m) => m.feature_kinds(),
            LoadedModel::External(e) => e
                .config
                .features
                .as_ref()
                .map(FeatureSpace::kinds)
                .unwrap_or_else(|| vec![FeatureKind::Continuous; e.config.d]),
        }
    }

    pub fn feature_names(&self) -> Vec<String> {
        match self {
            LoadedModel::Builtin(m) => m.feature_names(),
            LoadedModel::External(e) => e
                .config
                .features
                .as_ref()
                .map(FeatureSpace::names)
                .unwrap_or_else(|| (0..e.config.d).map(|i| format!("x{i}")).collect()),
        }
    }
}

impl Predictor for LoadedModel {
    fn dim(&self) -> usize {
        match self {
            LoadedModel::Builtin(m) => m.dim(),
            LoadedModel::External(e) => e.dim(),
        }
    }

    fn predict_rows(&self, rows: &[f64]) -> Result<Vec<f64>> {
        match self {
            LoadedModel::Builtin(m) => m.predict_rows(rows),
            LoadedModel::External(e) => e.predict_rows(rows),
        }
    }

    fn is_smooth(&self) -> bool {
        match self {
            LoadedModel::Builtin(m) => m.is_smooth(),
            LoadedModel::External(e) => e.is_smooth(),
        }
    }
}

/// Loads a model file; `"type": "external"` selects the file protocol.
pub fn load_predictor(path: impl AsRef<Path>) -> Result<LoadedModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let probe: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
        parse_error(path, format!("line {} column {}: {e}", e.line(), e.column()))
    })?;
    if probe.get("type").and_then(|t| t.as_str()) == Some("external") {
        let mut obj = probe;
        obj.as_object_mut().map(|o| o.remove("type"));
        let cfg: ExternalConfig = serde_json::from_value(obj)
            .map_err(|e| parse_error(path, e.to_string()))?;
        ExternalPredictor::new(cfg).map(LoadedModel::External)
    } else {
        load_model(path).map(LoadedModel::Builtin)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mlp_single(w: f64, b: f64) -> Model {
        Model::new(ModelSpec::Mlp(MlpModel {
            widths: vec![1, 1],
            layers: vec![DenseLayer {
                weights: vec![vec![w]],
                bias: vec![b],
            }],
            activation: Activation::Tanh,
            output: Activation::Identity,
        }))
        .unwrap()
    }

    #[test]
    fn linear_dot_product() {
        let m = Model::linear(vec![1.0, 2.0], 0.0).unwrap();
        assert_eq!(m.predict(&[1.0, 1.0]).unwrap(), 3.0);
    }

    #[test]
    fn multilinear_product_term() {
        let m = Model::multilinear(2, vec![(vec![0, 1], 1.0)]).unwrap();
        assert_eq!(m.predict(&[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(m.predict(&[1.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn single_layer_affine_output() {
        assert_eq!(mlp_single(2.0, 0.5).predict(&[1.0]).unwrap(), 2.5);
    }

    #[test]
    fn batch_matches_scalar() {
        let m = Model::linear(vec![1.0, 0.0], 0.0).unwrap();
        let xs = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]];
        assert_eq!(m.predict_batch(&xs).unwrap(), vec![0.0, 1.0, 2.0]);
        assert_eq!(
            m.predict_batch(&xs[1..2]).unwrap()[0],
            m.predict(&xs[1]).unwrap()
        );
        assert!(matches!(m.predict_batch(&[]), Err(Error::Input(_))));
    }

    #[test]
    fn dimension_mismatch_is_input_error() {
        let m = Model::linear(vec![1.0, 2.0], 0.0).unwrap();
        assert!(matches!(m.predict(&[1.0, 2.0, 3.0]), Err(Error::Input(_))));
        assert!(matches!(
            m.predict_batch(&[vec![1.0]]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn non_finite_output_is_evaluation_error() {
        let m = Model::linear(vec![1e308, 1e308], 0.0).unwrap();
        assert!(matches!(
            m.predict(&[10.0, 10.0]),
            Err(Error::Evaluation { row: Some(0), .. })
        ));
    }

    #[test]
    fn threshold_trees_route_left_below_cut() {
        let tree = TreeNode::Split {
            feature: 0,
            cutpoint: 0.5,
            left: Box::new(TreeNode::Leaf { leaf: -1.0 }),
            right: Box::new(TreeNode::Leaf { leaf: 1.0 }),
        };
        let m = Model::new(ModelSpec::Threshold(ThresholdModel {
            d: 1,
            trees: vec![tree.clone(), tree],
            bias: 0.25,
        }))
        .unwrap();
        assert_eq!(m.predict(&[0.49]).unwrap(), -1.75);
        assert_eq!(m.predict(&[0.5]).unwrap(), 2.25);
        assert!(!m.is_smooth());
    }

    #[test]
    fn multilinear_out_of_range_coalition_rejected() {
        let err = Model::multilinear(2, vec![(vec![0, 2], 1.0)]).unwrap_err();
        assert!(err.to_string().contains("terms[0].coalition"));
    }

    #[test]
    fn feature_space_rules() {
        assert!(FeatureSpace::continuous(1).is_err());
        let dup = vec![
            FeatureDescriptor {
                name: "a".into(),
                kind: FeatureKind::Continuous,
            };
            2
        ];
        assert!(FeatureSpace::new(dup).is_err());
    }
}
