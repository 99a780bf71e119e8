//! Edge-attributed relational graph convolution encoder with a logistic
//! output head.
//!
//! Per layer `l` and destination node `v`:
//!
//! ```text
//! w_e   = sigmoid(a2 . relu(A1 x_e + b1) + b2)                  per relation MLP
//! z_v   = W_s h_v + sum_r W_r ( mean_{v' in N_r(v)} w_e h_v' )
//! h'_v  = LayerNorm(relu(z_v))                                   (see NormPosition)
//! ```
//!
//! with `h^(0)_v = W_t x_v` and `p(u) = sigmoid(W . h_u + b)`. Node and edge
//! states are row-major `n x d` matrices, weights are `out x in`.

mod backward;
mod checkpoint;
mod forward;

pub use backward::{backward, BackwardOptions};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use forward::{forward, layer_forward, project_inputs, ForwardTrace, LayerTrace};

use crate::graph::HeteroGraph;
use crate::rng::StreamKey;
use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model does not match graph: {0}")]
    GraphMismatch(String),
    #[error("shape mismatch for {what}: expected {expected:?}, found {found:?}")]
    Shape {
        what: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("trace does not match parameters: {0}")]
    TraceMismatch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("{predictions} predictions but {labels} labels")]
    LabelCount { predictions: usize, labels: usize },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Where LayerNorm sits relative to the relu in each layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormPosition {
    /// `LayerNorm(relu(z))`
    #[default]
    PostActivation,
    /// `relu(LayerNorm(z))`
    PreActivation,
    /// `relu(z)`
    None,
}

impl std::str::FromStr for NormPosition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "post_activation" => Ok(Self::PostActivation),
            "pre_activation" => Ok(Self::PreActivation),
            "none" => Ok(Self::None),
            other => Err(format!(
                "expected post_activation, pre_activation or none, got `{other}`"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeInput {
    pub name: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationInput {
    pub name: String,
    pub src_type: usize,
    pub dst_type: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelHyper {
    pub embed_dim: usize,
    pub num_layers: usize,
    pub edge_mlp_hidden: usize,
    pub norm_position: NormPosition,
    pub norm_last_layer: bool,
    pub node_types: Vec<NodeInput>,
    pub relations: Vec<RelationInput>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl ModelHyper {
    /// Input shapes taken from `graph`, remaining fields at their defaults.
    pub fn for_graph(graph: &HeteroGraph, embed_dim: usize, num_layers: usize) -> Self {
        Self {
            embed_dim,
            num_layers,
            edge_mlp_hidden: 16,
            norm_position: NormPosition::PostActivation,
            norm_last_layer: true,
            node_types: graph
                .node_types()
                .iter()
                .map(|t| NodeInput {
                    name: t.name.clone(),
                    dim: t.feature_dim,
                })
                .collect(),
            relations: graph
                .relations()
                .iter()
                .map(|r| RelationInput {
                    name: r.spec.name.clone(),
                    src_type: r.src_type,
                    dst_type: r.dst_type,
                    dim: r.spec.edge_feature_dim,
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.embed_dim == 0 || self.num_layers == 0 || self.edge_mlp_hidden == 0 {
            return Err(ModelError::InvalidHyper(
                "embed_dim, num_layers and edge_mlp_hidden must be at least 1".into(),
            ));
        }
        for r in &self.relations {
            if r.src_type >= self.node_types.len() || r.dst_type >= self.node_types.len() {
                return Err(ModelError::InvalidHyper(format!(
                    "relation `{}` references a missing node type",
                    r.name
                )));
            }
        }
        Ok(())
    }

    pub fn check_graph(&self, graph: &HeteroGraph) -> Result<(), ModelError> {
        let expected = ModelHyper::for_graph(graph, self.embed_dim, self.num_layers);
        if expected.node_types != self.node_types {
            return Err(ModelError::GraphMismatch(format!(
                "node types {:?} vs model {:?}",
                expected.node_types, self.node_types
            )));
        }
        if expected.relations != self.relations {
            return Err(ModelError::GraphMismatch(format!(
                "relations {:?} vs model {:?}",
                expected.relations, self.relations
            )));
        }
        Ok(())
    }

    fn uses_norm(&self, layer: usize) -> bool {
        self.norm_position != NormPosition::None
            && (self.norm_last_layer || layer + 1 < self.num_layers)
    }
}

/// Relation-specific edge-weight perceptron `x_e -> (0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMlp {
    /// `hidden x d_r`
    pub hidden_weight: Array2<f64>,
    pub hidden_bias: Array1<f64>,
    pub out_weight: Array1<f64>,
    /// Single element.
    pub out_bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub self_weight: Array2<f64>,
    pub relation_weights: Vec<Array2<f64>>,
    pub edge_mlps: Vec<EdgeMlp>,
    pub norm_gain: Array1<f64>,
    pub norm_bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub hyper: ModelHyper,
    /// Per node type, `d x d_t`.
    pub input_weights: Vec<Array2<f64>>,
    pub layers: Vec<LayerParams>,
    pub head_weight: Array1<f64>,
    /// Single element.
    pub head_bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    /// Whether L2 regularization applies.
    pub decay: bool,
}

fn glorot(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases, unit LayerNorm gains.
    pub fn init(hyper: &ModelHyper, key: StreamKey) -> Result<Self, ModelError> {
        hyper.validate()?;
        let mut rng = key.rng();
        let d = hyper.embed_dim;
        let h = hyper.edge_mlp_hidden;
        let input_weights = hyper
            .node_types
            .iter()
            .map(|t| glorot(&mut rng, d, t.dim, t.dim, d))
            .collect();
        let layers = (0..hyper.num_layers)
            .map(|_| LayerParams {
                self_weight: glorot(&mut rng, d, d, d, d),
                relation_weights: hyper.relations.iter().map(|_| glorot(&mut rng, d, d, d, d)).collect(),
                edge_mlps: hyper
                    .relations
                    .iter()
                    .map(|r| EdgeMlp {
                        hidden_weight: glorot(&mut rng, h, r.dim, r.dim, h),
                        hidden_bias: Array1::zeros(h),
                        out_weight: glorot(&mut rng, 1, h, h, 1).into_shape_with_order(h).unwrap(),
                        out_bias: Array1::zeros(1),
                    })
                    .collect(),
                norm_gain: Array1::ones(d),
                norm_bias: Array1::zeros(d),
            })
            .collect();
        Ok(Self {
            hyper: hyper.clone(),
            input_weights,
            layers,
            head_weight: glorot(&mut rng, 1, d, d, 1).into_shape_with_order(d).unwrap(),
            head_bias: Array1::zeros(1),
        })
    }

    /// Same shapes, all entries zero. Used for gradients and optimizer moments.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    pub fn tensor_infos(&self) -> Vec<TensorInfo> {
        let info = |name: String, shape: &[usize], decay| TensorInfo {
            name,
            shape: shape.to_vec(),
            decay,
        };
        let mut out = Vec::new();
        for (t, w) in self.hyper.node_types.iter().zip(&self.input_weights) {
            out.push(info(format!("input.{}", t.name), w.shape(), true));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            out.push(info(format!("layer{l}.self"), layer.self_weight.shape(), true));
            for (r, w) in self.hyper.relations.iter().zip(&layer.relation_weights) {
                out.push(info(format!("layer{l}.relation.{}", r.name), w.shape(), true));
            }
            for (r, m) in self.hyper.relations.iter().zip(&layer.edge_mlps) {
                let p = format!("layer{l}.edge_mlp.{}", r.name);
                out.push(info(format!("{p}.hidden_weight"), m.hidden_weight.shape(), true));
                out.push(info(format!("{p}.hidden_bias"), m.hidden_bias.shape(), false));
                out.push(info(format!("{p}.out_weight"), m.out_weight.shape(), true));
                out.push(info(format!("{p}.out_bias"), m.out_bias.shape(), false));
            }
            out.push(info(format!("layer{l}.norm.gain"), layer.norm_gain.shape(), false));
            out.push(info(format!("layer{l}.norm.bias"), layer.norm_bias.shape(), false));
        }
        out.push(info("head.weight".into(), self.head_weight.shape(), true));
        out.push(info("head.bias".into(), self.head_bias.shape(), false));
        out
    }

    /// Flat views of every tensor, in [`tensor_infos`](Self::tensor_infos) order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for w in &self.input_weights {
            out.push(w.as_slice().unwrap());
        }
        for layer in &self.layers {
            out.push(layer.self_weight.as_slice().unwrap());
            for w in &layer.relation_weights {
                out.push(w.as_slice().unwrap());
            }
            for m in &layer.edge_mlps {
                out.push(m.hidden_weight.as_slice().unwrap());
                out.push(m.hidden_bias.as_slice().unwrap());
                out.push(m.out_weight.as_slice().unwrap());
                out.push(m.out_bias.as_slice().unwrap());
            }
            out.push(layer.norm_gain.as_slice().unwrap());
            out.push(layer.norm_bias.as_slice().unwrap());
        }
        out.push(self.head_weight.as_slice().unwrap());
        out.push(self.head_bias.as_slice().unwrap());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for w in &mut self.input_weights {
            out.push(w.as_slice_mut().unwrap());
        }
        for layer in &mut self.layers {
            out.push(layer.self_weight.as_slice_mut().unwrap());
            for w in &mut layer.relation_weights {
                out.push(w.as_slice_mut().unwrap());
            }
            for m in &mut layer.edge_mlps {
                out.push(m.hidden_weight.as_slice_mut().unwrap());
                out.push(m.hidden_bias.as_slice_mut().unwrap());
                out.push(m.out_weight.as_slice_mut().unwrap());
                out.push(m.out_bias.as_slice_mut().unwrap());
            }
            out.push(layer.norm_gain.as_slice_mut().unwrap());
            out.push(layer.norm_bias.as_slice_mut().unwrap());
        }
        out.push(self.head_weight.as_slice_mut().unwrap());
        out.push(self.head_bias.as_slice_mut().unwrap());
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `sum over decayed tensors of ||w||^2`.
    pub fn decayed_sq_norm(&self) -> f64 {
        self.tensor_infos()
            .iter()
            .zip(self.tensors())
            .filter(|(info, _)| info.decay)
            .map(|(_, t)| t.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// Edge weight for one edge of `relation` at `layer`.
    pub fn edge_weight(&self, layer: usize, relation: usize, x_e: &[f64]) -> Result<f64, ModelError> {
        let mlp = self
            .layers
            .get(layer)
            .and_then(|l| l.edge_mlps.get(relation))
            .ok_or_else(|| ModelError::GraphMismatch(format!("no edge MLP for layer {layer}, relation {relation}")))?;
        if x_e.len() != mlp.hidden_weight.ncols() {
            return Err(ModelError::Shape {
                what: "edge features".into(),
                expected: vec![mlp.hidden_weight.ncols()],
                found: vec![x_e.len()],
            });
        }
        let x = ndarray::ArrayView1::from(x_e);
        let hidden = (mlp.hidden_weight.dot(&x) + &mlp.hidden_bias).mapv(relu);
        Ok(sigmoid(hidden.dot(&mlp.out_weight) + mlp.out_bias[0]))
    }

    /// Output head on one final-layer embedding.
    pub fn predict(&self, h: &[f64]) -> Result<Prediction, ModelError> {
        if h.len() != self.head_weight.len() {
            return Err(ModelError::Shape {
                what: "embedding".into(),
                expected: vec![self.head_weight.len()],
                found: vec![h.len()],
            });
        }
        let logit = ndarray::ArrayView1::from(h).dot(&self.head_weight) + self.head_bias[0];
        Ok(Prediction {
            logit,
            probability: sigmoid(logit),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub logit: f64,
    pub probability: f64,
}

pub(crate) fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy of probabilities.
pub fn bce_loss(probabilities: &[f64], labels: &[u8]) -> Result<f64, ModelError> {
    check_batch(probabilities.len(), labels.len())?;
    let total: f64 = probabilities
        .iter()
        .zip(labels)
        .map(|(&p, &y)| if y == 1 { -p.ln() } else { -(1.0 - p).ln() })
        .sum();
    Ok(total / probabilities.len() as f64)
}

/// Mean binary cross-entropy computed from logits without forming `log(0)`.
pub fn bce_with_logits(logits: &[f64], labels: &[u8]) -> Result<f64, ModelError> {
    check_batch(logits.len(), labels.len())?;
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(&s, &y)| s.max(0.0) - s * y as f64 + (-s.abs()).exp().ln_1p())
        .sum();
    Ok(total / logits.len() as f64)
}

fn check_batch(predictions: usize, labels: usize) -> Result<(), ModelError> {
    if predictions == 0 {
        return Err(ModelError::EmptyBatch);
    }
    if predictions != labels {
        return Err(ModelError::LabelCount { predictions, labels });
    }
    Ok(())
}
