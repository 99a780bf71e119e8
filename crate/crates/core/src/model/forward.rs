use super::{relu, sigmoid, LayerParams, ModelError, ModelParams, NormPosition, LAYER_NORM_EPS};
use crate::graph::HeteroGraph;
use crate::sampler::{SampleBlock, SampleBlockSet};
use ndarray::{s, Array1, Array2, Axis};

/// Activations of one relation's messages inside a layer.
#[derive(Debug, Clone)]
pub(crate) struct RelationTrace {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    /// `E x d_r`
    pub features: Array2<f64>,
    /// `E x hidden`, before relu.
    pub hidden_pre: Array2<f64>,
    pub weights: Array1<f64>,
    /// `1 / |N_r(v)|` per destination, 0 when it has no neighbors.
    pub inv_degree: Vec<f64>,
    /// `n_dst x d` weighted neighbor means.
    pub mean: Array2<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct NormTrace {
    pub xhat: Array2<f64>,
    pub rstd: Array1<f64>,
}

/// Per node type outputs of a layer.
#[derive(Debug, Clone)]
pub(crate) struct TypeTrace {
    pub z: Array2<f64>,
    pub norm: Option<NormTrace>,
    pub out: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub(crate) layer: usize,
    pub(crate) input: Vec<Array2<f64>>,
    pub(crate) relations: Vec<RelationTrace>,
    pub(crate) types: Vec<TypeTrace>,
}

impl LayerTrace {
    /// Output states per node type, rows ordered as the block's destinations.
    pub fn outputs(&self) -> Vec<&Array2<f64>> {
        self.types.iter().map(|t| &t.out).collect()
    }

    /// Edge weights of relation `r` in block edge order.
    pub fn edge_weights(&self, r: usize) -> &Array1<f64> {
        &self.relations[r].weights
    }
}

/// Everything backward needs, plus the forward outputs.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub(crate) input_features: Vec<Array2<f64>>,
    pub(crate) layers: Vec<LayerTrace>,
    /// `seeds x d` final-layer states (the exported embeddings).
    pub embeddings: Array2<f64>,
    pub logits: Array1<f64>,
    pub probabilities: Array1<f64>,
    pub seeds: Vec<usize>,
    pub(crate) seed_type: usize,
}

/// `h0_t = X_t W_t^T` for each node type; no bias and no activation.
pub fn project_inputs(params: &ModelParams, features: &[Array2<f64>]) -> Result<Vec<Array2<f64>>, ModelError> {
    if features.len() != params.input_weights.len() {
        return Err(ModelError::Shape {
            what: "node types".into(),
            expected: vec![params.input_weights.len()],
            found: vec![features.len()],
        });
    }
    features
        .iter()
        .zip(&params.input_weights)
        .enumerate()
        .map(|(t, (x, w))| {
            if x.ncols() != w.ncols() {
                return Err(ModelError::Shape {
                    what: format!("features of node type {t}"),
                    expected: vec![x.nrows(), w.ncols()],
                    found: x.shape().to_vec(),
                });
            }
            Ok(x.dot(&w.t()))
        })
        .collect()
}

pub(crate) fn gather_node_features(graph: &HeteroGraph, nodes: &[Vec<usize>]) -> Vec<Array2<f64>> {
    nodes
        .iter()
        .enumerate()
        .map(|(t, ids)| {
            let dim = graph.node_types()[t].feature_dim;
            let feats = graph.node_features(t);
            Array2::from_shape_fn((ids.len(), dim), |(i, j)| feats[ids[i] * dim + j])
        })
        .collect()
}

/// One convolution over `block`. `h_in[t]` has one row per `block.src_nodes[t]`.
pub fn layer_forward(
    params: &ModelParams,
    layer: usize,
    graph: &HeteroGraph,
    block: &SampleBlock,
    h_in: Vec<Array2<f64>>,
) -> Result<(Vec<Array2<f64>>, LayerTrace), ModelError> {
    let hyper = &params.hyper;
    let d = hyper.embed_dim;
    let lp: &LayerParams = params
        .layers
        .get(layer)
        .ok_or_else(|| ModelError::TraceMismatch(format!("layer {layer} does not exist")))?;
    if h_in.len() != block.src_nodes.len() || block.edges.len() != hyper.relations.len() {
        return Err(ModelError::GraphMismatch("block does not match model node types/relations".into()));
    }
    for (t, h) in h_in.iter().enumerate() {
        if h.dim() != (block.src_nodes[t].len(), d) {
            return Err(ModelError::Shape {
                what: format!("layer {layer} input for node type {t}"),
                expected: vec![block.src_nodes[t].len(), d],
                found: h.shape().to_vec(),
            });
        }
    }

    let mut relations = Vec::with_capacity(hyper.relations.len());
    for (r, rel) in hyper.relations.iter().enumerate() {
        let edges = &block.edges[r];
        let graph_rel = &graph.relations()[r];
        let n_dst = block.dst_nodes[rel.dst_type].len();
        let features = Array2::from_shape_fn((edges.len(), rel.dim), |(e, j)| {
            graph_rel.edge_feature(edges.edge_ids[e])[j]
        });
        let mlp = &lp.edge_mlps[r];
        let hidden_pre = features.dot(&mlp.hidden_weight.t()) + &mlp.hidden_bias;
        let weights = hidden_pre.mapv(relu).dot(&mlp.out_weight).mapv(|s| sigmoid(s + mlp.out_bias[0]));

        let mut count = vec![0usize; n_dst];
        for &v in &edges.dst {
            count[v] += 1;
        }
        let inv_degree: Vec<f64> = count.iter().map(|&c| if c > 0 { 1.0 / c as f64 } else { 0.0 }).collect();
        let mut mean = Array2::<f64>::zeros((n_dst, d));
        {
            let src_h = h_in[rel.src_type].as_slice().unwrap();
            let acc = mean.as_slice_mut().unwrap();
            for e in 0..edges.len() {
                let (u, v) = (edges.src[e], edges.dst[e]);
                let coef = weights[e] * inv_degree[v];
                let row = &src_h[u * d..(u + 1) * d];
                for (a, x) in acc[v * d..(v + 1) * d].iter_mut().zip(row) {
                    *a += coef * x;
                }
            }
        }
        relations.push(RelationTrace {
            src: edges.src.clone(),
            dst: edges.dst.clone(),
            features,
            hidden_pre,
            weights,
            inv_degree,
            mean,
        });
    }

    let use_norm = hyper.uses_norm(layer);
    let mut types = Vec::with_capacity(h_in.len());
    for (t, h) in h_in.iter().enumerate() {
        let n_dst = block.dst_nodes[t].len();
        let mut z = h.slice(s![..n_dst, ..]).dot(&lp.self_weight.t());
        for (r, rel) in hyper.relations.iter().enumerate() {
            if rel.dst_type == t && !relations[r].src.is_empty() {
                z += &relations[r].mean.dot(&lp.relation_weights[r].t());
            }
        }
        let (norm, out) = match (use_norm, hyper.norm_position) {
            (true, NormPosition::PostActivation) => {
                let (xhat, rstd, y) = layer_norm(&z.mapv(relu), &lp.norm_gain, &lp.norm_bias);
                (Some(NormTrace { xhat, rstd }), y)
            }
            (true, NormPosition::PreActivation) => {
                let (xhat, rstd, y) = layer_norm(&z, &lp.norm_gain, &lp.norm_bias);
                (Some(NormTrace { xhat, rstd }), y.mapv(relu))
            }
            _ => (None, z.mapv(relu)),
        };
        types.push(TypeTrace { z, norm, out });
    }

    let outputs = types.iter().map(|t| t.out.clone()).collect();
    Ok((
        outputs,
        LayerTrace {
            layer,
            input: h_in,
            relations,
            types,
        },
    ))
}

fn layer_norm(x: &Array2<f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.axis_iter_mut(Axis(0)).zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        *r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let rs = *r;
        row.mapv_inplace(|v| (v - mean) * rs);
    }
    let y = &xhat * gain + bias;
    (xhat, rstd, y)
}

/// Input projection, every layer over `blocks`, then the output head for the seeds.
pub fn forward(params: &ModelParams, graph: &HeteroGraph, blocks: &SampleBlockSet) -> Result<ForwardTrace, ModelError> {
    params.hyper.check_graph(graph)?;
    if blocks.num_layers() != params.hyper.num_layers {
        return Err(ModelError::GraphMismatch(format!(
            "{} blocks for a {}-layer model",
            blocks.num_layers(),
            params.hyper.num_layers
        )));
    }
    let input_features = gather_node_features(graph, blocks.input_nodes());
    let mut h = project_inputs(params, &input_features)?;
    let mut layers = Vec::with_capacity(params.hyper.num_layers);
    for l in 0..params.hyper.num_layers {
        let (out, trace) = layer_forward(params, l, graph, blocks.for_layer(l), h)?;
        h = out;
        layers.push(trace);
    }
    let embeddings = h.swap_remove(blocks.seed_type);
    let logits = embeddings.dot(&params.head_weight) + params.head_bias[0];
    let probabilities = logits.mapv(sigmoid);
    Ok(ForwardTrace {
        input_features,
        layers,
        embeddings,
        logits,
        probabilities,
        seeds: blocks.seeds.clone(),
        seed_type: blocks.seed_type,
    })
}
