//! Small reference models with matching counterfactual pairs, for demos,
//! tests and benchmarks.

use rand::Rng;

use crate::coalition::CounterfactualPair;
use crate::model::{
    Activation, DenseLayer, FeatureDescriptor, FeatureKind, FeatureSpace, MlpModel, Model,
    ModelSpec, MultilinearTerm, MultilinearModel, ThresholdModel, TreeNode,
};

pub struct ZooEntry {
    pub name: &'static str,
    pub model: Model,
    pub pair: CounterfactualPair,
}

fn split(feature: usize, cutpoint: f64, left: TreeNode, right: TreeNode) -> TreeNode {
    TreeNode::Split {
        feature,
        cutpoint,
        left: Box::new(left),
        right: Box::new(right),
    }
}

fn leaf(v: f64) -> TreeNode {
    TreeNode::Leaf { leaf: v }
}

fn mlp(activation: Activation, output: Activation) -> Model {
    Model::new(ModelSpec::Mlp(MlpModel {
        widths: vec![4, 3, 1],
        layers: vec![
            DenseLayer {
                weights: vec![
                    vec![0.9, -0.4, 0.3, 0.7],
                    vec![-0.6, 1.1, 0.5, -0.2],
                    vec![0.4, 0.4, -0.8, 0.6],
                ],
                bias: vec![0.1, -0.2, 0.05],
            },
            DenseLayer {
                weights: vec![vec![1.3, -0.9, 0.8]],
                bias: vec![-0.1],
            },
        ],
        activation,
        output,
    }))
    .expect("valid network")
}

/// Linear, multilinear, tree, smooth and piecewise-linear networks, and a
/// network over mixed continuous and binary features; four features each.
pub fn model_zoo() -> Vec<ZooEntry> {
    let pair = |x0: Vec<f64>, x1: Vec<f64>| CounterfactualPair::new(x0, x1, 0.0).expect("valid pair");
    let cont = pair(vec![0.1, -0.3, 0.5, 0.0], vec![0.9, 0.4, -0.2, 0.6]);
    let trees = Model::new(ModelSpec::Threshold(ThresholdModel {
        d: 4,
        trees: vec![
            split(0, 0.5, leaf(0.0), split(1, 0.0, leaf(0.3), leaf(1.0))),
            split(2, 0.2, split(3, 0.3, leaf(-0.5), leaf(0.4)), leaf(0.1)),
        ],
        bias: 0.2,
    }))
    .expect("valid trees");
    let mixed_space = FeatureSpace::new(
        ["age", "smoker", "income", "owner"]
            .iter()
            .zip([
                FeatureKind::Continuous,
                FeatureKind::CategoricalBinary,
                FeatureKind::Continuous,
                FeatureKind::CategoricalBinary,
            ])
            .map(|(n, kind)| FeatureDescriptor {
                name: n.to_string(),
                kind,
            })
            .collect(),
    )
    .expect("valid space");
    vec![
        ZooEntry {
            name: "linear",
            model: Model::linear(vec![0.5, -1.0, 2.0, 0.25], 0.1).expect("valid"),
            pair: cont.clone(),
        },
        ZooEntry {
            name: "multilinear",
            model: Model::multilinear(
                4,
                vec![
                    (vec![0], 0.3),
                    (vec![0, 1], 1.2),
                    (vec![1, 2, 3], -0.8),
                    (vec![0, 1, 2, 3], 0.5),
                ],
            )
            .expect("valid"),
            pair: cont.clone(),
        },
        ZooEntry {
            name: "threshold",
            model: trees,
            pair: cont.clone(),
        },
        ZooEntry {
            name: "mlp-tanh",
            model: mlp(Activation::Tanh, Activation::Sigmoid),
            pair: cont.clone(),
        },
        ZooEntry {
            name: "mlp-relu",
            model: mlp(Activation::Relu, Activation::Identity),
            pair: cont,
        },
        ZooEntry {
            name: "mlp-categorical",
            model: mlp(Activation::Tanh, Activation::Sigmoid)
                .with_features(mixed_space)
                .expect("matching dimension"),
            pair: pair(vec![0.2, 0.0, 0.4, 1.0], vec![0.8, 1.0, -0.1, 0.0]),
        },
    ]
}

/// Random multilinear model with coefficients in `[-1, 1]` on every
/// coalition of size `1..=order`.
pub fn random_multilinear(d: usize, order: usize, rng: &mut impl Rng) -> Model {
    let mut terms = Vec::new();
    for mask in 1u32..1 << d {
        if mask.count_ones() as usize <= order {
            let coalition = (0..d).filter(|i| mask >> i & 1 == 1).collect();
            terms.push(MultilinearTerm {
                coalition,
                coefficient: rng.random_range(-1.0..=1.0),
            });
        }
    }
    Model::new(ModelSpec::Multilinear(MultilinearModel { d, terms })).expect("valid terms")
}
