//! Counterfactual attribution of a model's change `g(x1) - g(x0)` to single
//! features and to pure feature interactions.
//!
//! The change is split into Harsanyi dividends ("pots") over the changed
//! features. Each interaction pot is then redistributed among its members by
//! discretising the local baseline-to-counterfactual cube into a grid and
//! solving the induced micro-game whose players are elementary grid steps.
//! Shapley, Solidarity and Equal Surplus allocations are computed exactly via
//! a closed form that is polynomial in the grid resolution; large changed
//! sets fall back to permutation sampling.
//!
//! The game kernels ([`coalition`], [`cube`], [`microgame`]) are generic over
//! [`Scalar`], so they run in `f32`, `f64` or exact big rationals. Model
//! evaluation and everything downstream of it is `f64`.

pub mod bench;
pub mod coalition;
pub mod counterfactual;
pub mod cube;
pub mod dataset;
pub mod error;
pub mod explain;
pub mod format;
pub mod limits;
pub mod microgame;
pub mod model;
pub mod montecarlo;
pub mod scalar;
pub mod zoo;

pub use coalition::{coalition_values, dividends, CounterfactualPair, Mask, PairSpec};
pub use cube::{eval_cube, residual_grid, GridShape, GridSpec};
pub use dataset::{load_dataset, Dataset};
pub use error::{Error, Result};
pub use explain::{explain_global, explain_local, AttributionReport, ExplainConfig, GlobalReport, Resolution, Rule};
pub use microgame::{
    enumerate_les, equal_split, grid_state_les, grid_state_shares, les_preset, LesRule,
    MicroGame,
};
pub use model::{load_predictor, FeatureKind, FeatureSpace, LoadedModel, Model, ModelSpec, Predictor};
pub use montecarlo::{mc_macro_shapley, mc_micro_shapley, McConfig, McEstimate};
pub use scalar::Scalar;

/// Exact arithmetic for oracle checks.
pub type Rational = num_rational::BigRational;

pub type ValueTable = coalition::ValueTable<f64>;
pub type DividendTable = coalition::DividendTable<f64>;
pub type CubeTable = cube::CubeTable<f64>;
pub type ResidualGrid = cube::ResidualGrid<f64>;
pub type LesWeights = microgame::LesWeights<f64>;
pub type PotShares = microgame::PotShares<f64>;

pub type ValueTable32 = coalition::ValueTable<f32>;
pub type DividendTable32 = coalition::DividendTable<f32>;
pub type ResidualGrid32 = cube::ResidualGrid<f32>;
pub type LesWeights32 = microgame::LesWeights<f32>;

pub type ExactValueTable = coalition::ValueTable<Rational>;
pub type ExactDividendTable = coalition::DividendTable<Rational>;
pub type ExactResidualGrid = cube::ResidualGrid<Rational>;
pub type ExactLesWeights = microgame::LesWeights<Rational>;
