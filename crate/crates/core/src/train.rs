//! Mini-batch training with Adam, validation early stopping, and the
//! full-neighborhood inference entry points.

use crate::graph::{HeteroGraph, Split};
use crate::ingest::stratified_fraction;
use crate::metrics::{MetricsError, MetricsReport};
use crate::model::{backward, forward, BackwardOptions, ModelError, ModelHyper, ModelParams, NormPosition};
use crate::rng::StreamKey;
use crate::sampler::{full_blocks, sample_blocks, SampleError};
use log::{debug, info};
use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("graph has no train-labeled nodes")]
    NoTrainLabels,
    #[error("graph has no labels")]
    Unlabeled,
    #[error("no validation nodes available for early stopping")]
    NoValidation,
    #[error("non-finite loss {loss} at step {step} (batch of {batch} seeds, parameter norm {param_norm:.4e})")]
    NonFiniteLoss {
        step: usize,
        loss: f64,
        batch: usize,
        param_norm: f64,
    },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("split `{0}` has no labeled nodes")]
    EmptySplit(&'static str),
    #[error("node id {id} out of range (count {count})")]
    InvalidNode { id: usize, count: usize },
    #[error("optimizer state does not match parameters: {0}")]
    StateMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub embed_dim: usize,
    pub num_layers: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2_weight: f64,
    pub fanout: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub norm_position: NormPosition,
    pub norm_last_layer: bool,
    pub edge_mlp_hidden: usize,
    /// Share of train-labeled nodes held out for validation when the graph
    /// carries no validation split.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            embed_dim: 256,
            num_layers: 2,
            batch_size: 512,
            learning_rate: 9.5e-5,
            l2_weight: 1e-4,
            fanout: 50,
            max_steps: 2000,
            eval_every: 50,
            patience: 10,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            norm_position: NormPosition::PostActivation,
            norm_last_layer: true,
            edge_mlp_hidden: 16,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("num_layers", self.num_layers),
            ("batch_size", self.batch_size),
            ("fanout", self.fanout),
            ("max_steps", self.max_steps),
            ("eval_every", self.eval_every),
            ("patience", self.patience),
            ("edge_mlp_hidden", self.edge_mlp_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(TrainError::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        let reals = [
            ("learning_rate", self.learning_rate, 0.0, f64::INFINITY),
            ("l2_weight", self.l2_weight, 0.0, f64::INFINITY),
            ("adam_beta1", self.adam_beta1, 0.0, 1.0),
            ("adam_beta2", self.adam_beta2, 0.0, 1.0),
            ("val_fraction", self.val_fraction, 0.0, 1.0),
        ];
        for (name, v, lo, hi) in reals {
            if !(v.is_finite() && v >= lo && v < hi) {
                return Err(TrainError::InvalidConfig(format!("{name} = {v} outside [{lo}, {hi})")));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(TrainError::InvalidConfig("adam_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn hyper(&self, graph: &HeteroGraph) -> ModelHyper {
        let mut h = ModelHyper::for_graph(graph, self.embed_dim, self.num_layers);
        h.edge_mlp_hidden = self.edge_mlp_hidden;
        h.norm_position = self.norm_position;
        h.norm_last_layer = self.norm_last_layer;
        h
    }
}

/// Adam moments shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Any L2 term is expected to be in `grads`.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<(), TrainError> {
    let shapes = |p: &ModelParams| p.tensor_infos().into_iter().map(|i| i.shape).collect::<Vec<_>>();
    let want = shapes(params);
    for (what, other) in [("gradients", grads), ("first moment", &state.m), ("second moment", &state.v)] {
        if shapes(other) != want {
            return Err(TrainError::StateMismatch(format!("{what} shapes differ from parameters")));
        }
    }
    state.step += 1;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let lr = config.learning_rate;
    let eps = config.adam_eps;
    for (((w, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut())
    {
        for i in 0..w.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HistoryRecord {
    Step {
        step: usize,
        loss: f64,
    },
    Eval {
        step: usize,
        recall_at_fpr1: f64,
        auroc_trunc_fpr1: f64,
        auroc_full: f64,
        improved: bool,
    },
    Best {
        step: usize,
        recall_at_fpr1: f64,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<HistoryRecord>,
    /// Step whose parameters were returned.
    pub best_step: Option<usize>,
}

impl TrainHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| match r {
                HistoryRecord::Step { loss, .. } => Some(*loss),
                _ => None,
            })
            .collect()
    }

    pub fn evaluations(&self) -> usize {
        self.records.iter().filter(|r| matches!(r, HistoryRecord::Eval { .. })).count()
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("history records serialize"));
            out.push('\n');
        }
        out
    }
}

fn labeled_seed_type(graph: &HeteroGraph) -> Result<usize, TrainError> {
    graph.label_type().ok_or(TrainError::Unlabeled)
}

/// Train and validation seeds. Validation is carved out of train when the
/// graph has no validation split. Test-split labels are never read.
pub fn train_val_split(graph: &HeteroGraph, config: &TrainConfig) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    let train = graph.labeled_nodes(Split::Train);
    if train.is_empty() {
        return Err(TrainError::NoTrainLabels);
    }
    let val = graph.labeled_nodes(Split::Val);
    if !val.is_empty() {
        return Ok((train, val));
    }
    let items: Vec<(usize, u8)> = train.iter().map(|&v| (v, graph.label(v).unwrap().y)).collect();
    let held = stratified_fraction(&items, config.val_fraction, StreamKey::new(config.seed).child(1));
    let (mut keep, mut val) = (Vec::new(), Vec::new());
    for (&(v, _), h) in items.iter().zip(held) {
        if h {
            val.push(v);
        } else {
            keep.push(v);
        }
    }
    if val.is_empty() {
        return Err(TrainError::NoValidation);
    }
    if keep.is_empty() {
        return Err(TrainError::NoTrainLabels);
    }
    Ok((keep, val))
}

/// Runs the training loop and returns the parameters with the best
/// validation Recall@FPR1 (ties broken by truncated AUROC).
pub fn train(graph: &HeteroGraph, config: &TrainConfig) -> Result<(ModelParams, TrainHistory), TrainError> {
    config.validate()?;
    let seed_type = labeled_seed_type(graph)?;
    let (train_nodes, val_nodes) = train_val_split(graph, config)?;
    let val_labels: Vec<u8> = val_nodes.iter().map(|&v| graph.label(v).unwrap().y).collect();
    info!(
        "training on {} seeds, validating on {} ({} positive)",
        train_nodes.len(),
        val_nodes.len(),
        val_labels.iter().filter(|&&y| y == 1).count()
    );

    let key = StreamKey::new(config.seed);
    let hyper = config.hyper(graph);
    let mut params = ModelParams::init(&hyper, key.child(0))?;
    let mut adam = AdamState::new(&params);
    let opts = BackwardOptions {
        l2_weight: config.l2_weight,
        loss_scale: 1.0,
    };
    let fanouts = vec![config.fanout; config.num_layers];

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, f64, usize, ModelParams)> = None;
    let mut stale = 0usize;
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    let mut epoch = 0u64;

    for step in 0..config.max_steps {
        if cursor >= order.len() {
            order = train_nodes.clone();
            order.shuffle(&mut key.child(2).derive(&[epoch]).rng());
            epoch += 1;
            cursor = 0;
        }
        let end = (cursor + config.batch_size).min(order.len());
        let batch = &order[cursor..end];
        cursor = end;
        let labels: Vec<u8> = batch.iter().map(|&v| graph.label(v).unwrap().y).collect();

        let blocks = sample_blocks(graph, seed_type, batch, &fanouts, key.child(3).derive(&[step as u64]))?;
        let trace = forward(&params, graph, &blocks)?;
        let (loss, grads) = backward(&params, &trace, &labels, opts)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                step,
                loss,
                batch: batch.len(),
                param_norm: params.decayed_sq_norm().sqrt(),
            });
        }
        adam_step(&mut params, &grads, &mut adam, config)?;
        history.records.push(HistoryRecord::Step { step, loss });
        debug!("step {step} loss {loss:.6}");

        if (step + 1) % config.eval_every == 0 || step + 1 == config.max_steps {
            let scores = score(graph, &params, &val_nodes)?;
            let report = MetricsReport::compute(&scores, &val_labels)?;
            let improved = match &best {
                None => true,
                Some((r, a, _, _)) => {
                    report.recall_at_fpr1 > *r || (report.recall_at_fpr1 == *r && report.auroc_trunc_fpr1 > *a)
                }
            };
            history.records.push(HistoryRecord::Eval {
                step,
                recall_at_fpr1: report.recall_at_fpr1,
                auroc_trunc_fpr1: report.auroc_trunc_fpr1,
                auroc_full: report.auroc_full,
                improved,
            });
            info!(
                "step {step}: loss {loss:.5} val recall@1%fpr {:.4} auroc {:.4}",
                report.recall_at_fpr1, report.auroc_full
            );
            if improved {
                best = Some((report.recall_at_fpr1, report.auroc_trunc_fpr1, step, params.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    info!("early stop at step {step}");
                    break;
                }
            }
        }
    }

    let (recall, _, best_step, best_params) = best.expect("max_steps >= 1 guarantees one evaluation");
    history.records.push(HistoryRecord::Best {
        step: best_step,
        recall_at_fpr1: recall,
    });
    history.best_step = Some(best_step);
    Ok((best_params, history))
}

const INFER_CHUNK: usize = 2048;

/// Full-neighborhood forward over `nodes` of the labeled type, in fixed
/// chunks. Returns `(probabilities, embeddings)`.
fn infer(graph: &HeteroGraph, params: &ModelParams, nodes: &[usize]) -> Result<(Vec<f64>, Array2<f64>), TrainError> {
    let seed_type = labeled_seed_type(graph)?;
    let count = graph.node_count(seed_type);
    if let Some(&bad) = nodes.iter().find(|&&v| v >= count) {
        return Err(TrainError::InvalidNode { id: bad, count });
    }
    let d = params.hyper.embed_dim;
    let mut probs = Vec::with_capacity(nodes.len());
    let mut emb = Array2::zeros((nodes.len(), d));
    for (c, chunk) in nodes.chunks(INFER_CHUNK).enumerate() {
        let mut uniq = chunk.to_vec();
        uniq.sort_unstable();
        uniq.dedup();
        let blocks = full_blocks(graph, seed_type, &uniq, params.hyper.num_layers)?;
        let trace = forward(params, graph, &blocks)?;
        for (i, v) in chunk.iter().enumerate() {
            let row = uniq.binary_search(v).expect("node is in its chunk");
            probs.push(trace.probabilities[row]);
            emb.row_mut(c * INFER_CHUNK + i).assign(&trace.embeddings.row(row));
        }
    }
    Ok((probs, emb))
}

/// Spam probabilities for user nodes via full-neighborhood forward.
pub fn score(graph: &HeteroGraph, params: &ModelParams, nodes: &[usize]) -> Result<Vec<f64>, TrainError> {
    Ok(infer(graph, params, nodes)?.0)
}

/// Final-layer embeddings (before the output head), one row per node.
pub fn embed(graph: &HeteroGraph, params: &ModelParams, nodes: &[usize]) -> Result<Array2<f64>, TrainError> {
    Ok(infer(graph, params, nodes)?.1)
}

/// Metrics over every labeled node of `split`.
pub fn evaluate(graph: &HeteroGraph, params: &ModelParams, split: Split) -> Result<MetricsReport, TrainError> {
    let (nodes, labels) = split_nodes(graph, split)?;
    let scores = score(graph, params, &nodes)?;
    Ok(MetricsReport::compute(&scores, &labels)?)
}

/// Labeled nodes of `split` with their labels.
pub fn split_nodes(graph: &HeteroGraph, split: Split) -> Result<(Vec<usize>, Vec<u8>), TrainError> {
    labeled_seed_type(graph)?;
    let nodes = graph.labeled_nodes(split);
    if nodes.is_empty() {
        return Err(TrainError::EmptySplit(split.as_str()));
    }
    let labels = nodes.iter().map(|&v| graph.label(v).unwrap().y).collect();
    Ok((nodes, labels))
}
