//! Independent oracles shared by the integration and acceptance tests.
//! Nothing here calls into the implementation paths it checks.
#![allow(dead_code)]
// explicit index loops keep the oracles close to the math
#![allow(clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seine::graph::{GraphBuilder, HeteroGraph, Label, LabelTable, NodeTypeSpec, RelationSpec, Split};
use seine::model::{bce_with_logits, forward, ModelParams, NormPosition};
use seine::sampler::full_blocks;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Single node type, `n_rel` user->user relations with random parallel-edge
/// multigraph structure, random features and labels on every node.
pub fn random_user_graph(seed: u64, n: usize, n_rel: usize, d_t: usize, d_r: usize, edges_per_rel: usize) -> HeteroGraph {
    let mut rng = rng(seed);
    let feats: Vec<f64> = (0..n * d_t).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut b = GraphBuilder::new().node_type(NodeTypeSpec::new("user", d_t, n), feats);
    for r in 0..n_rel {
        let name = format!("R{r}");
        b = b.relation(RelationSpec::new(&name, "user", "user", d_r));
        let edges: Vec<(usize, usize)> = (0..edges_per_rel)
            .map(|_| (rng.random_range(0..n), rng.random_range(0..n)))
            .filter(|(s, d)| s != d)
            .collect();
        let ef: Vec<f64> = (0..edges.len() * d_r).map(|_| rng.random_range(-1.5..1.5)).collect();
        b = b.edges(&name, edges, ef);
    }
    let entries = (0..n)
        .map(|i| (i, Label { y: (rng.random::<f64>() < 0.4) as u8, split: Split::Train }))
        .collect();
    b.labels(LabelTable { node_type: "user".into(), entries }).build().unwrap()
}

/// user + domain graph with U-I-D, D-I-U and one user->user relation.
pub fn random_hetero_graph(seed: u64, n_users: usize, n_domains: usize) -> HeteroGraph {
    let mut rng = rng(seed);
    let uf: Vec<f64> = (0..n_users * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let df: Vec<f64> = (0..n_domains * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
    let uid: Vec<(usize, usize)> = (0..n_users * 2)
        .map(|_| (rng.random_range(0..n_users), rng.random_range(0..n_domains)))
        .collect();
    let uid_f: Vec<f64> = (0..uid.len() * 2).map(|_| rng.random_range(0.0..2.0)).collect();
    let uu: Vec<(usize, usize)> = (0..n_users)
        .map(|_| (rng.random_range(0..n_users), rng.random_range(0..n_users)))
        .filter(|(a, b)| a != b)
        .collect();
    let uu_f: Vec<f64> = (0..uu.len()).map(|_| rng.random_range(0.0..1.0)).collect();
    let entries = (0..n_users)
        .map(|i| (i, Label { y: (i % 3 == 0) as u8, split: Split::Train }))
        .collect();
    let g = GraphBuilder::new()
        .node_type(NodeTypeSpec::new("user", 4, n_users), uf)
        .node_type(NodeTypeSpec::new("domain", 2, n_domains), df)
        .relation(RelationSpec::new("U-I-D", "user", "domain", 2))
        .relation(RelationSpec::new("U-E1-U", "user", "user", 1))
        .edges("U-I-D", uid, uid_f)
        .edges("U-E1-U", uu, uu_f)
        .labels(LabelTable { node_type: "user".into(), entries })
        .build()
        .unwrap();
    g.reverse_relation("U-I-D", "D-I-U").unwrap()
}

/// Perturb the learned biases away from zero so no gradient is trivially zero.
pub fn jitter_biases(params: &mut ModelParams, seed: u64) {
    let mut rng = rng(seed);
    for layer in &mut params.layers {
        for m in &mut layer.edge_mlps {
            m.hidden_bias.mapv_inplace(|_| rng.random_range(-0.3..0.3));
            m.out_bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        layer.norm_gain.mapv_inplace(|_| rng.random_range(0.7..1.3));
        layer.norm_bias.mapv_inplace(|_| rng.random_range(-0.2..0.2));
    }
    params.head_bias[0] = rng.random_range(-0.5..0.5);
}

/// Objective recomputed from scratch: mean BCE on logits + l2/2 * ||W||^2.
pub fn objective(params: &ModelParams, graph: &HeteroGraph, seeds: &[usize], labels: &[u8], l2: f64) -> f64 {
    let blocks = full_blocks(graph, 0, seeds, params.hyper.num_layers).unwrap();
    let trace = forward(params, graph, &blocks).unwrap();
    let mut sq = 0.0;
    for (info, t) in params.tensor_infos().iter().zip(params.tensors()) {
        if info.decay {
            sq += t.iter().map(|v| v * v).sum::<f64>();
        }
    }
    bce_with_logits(trace.logits.as_slice().unwrap(), labels).unwrap() + 0.5 * l2 * sq
}

/// Central differences for every entry; returns one vector per tensor.
pub fn finite_difference_grads(
    params: &ModelParams,
    graph: &HeteroGraph,
    seeds: &[usize],
    labels: &[u8],
    l2: f64,
    eps: f64,
) -> Vec<Vec<f64>> {
    let mut work = params.clone();
    let n_tensors = params.tensors().len();
    let mut out = Vec::with_capacity(n_tensors);
    for t in 0..n_tensors {
        let len = params.tensors()[t].len();
        let mut g = vec![0.0; len];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = work.tensors()[t][i];
            work.tensors_mut()[t][i] = orig + eps;
            let plus = objective(&work, graph, seeds, labels, l2);
            work.tensors_mut()[t][i] = orig - eps;
            let minus = objective(&work, graph, seeds, labels, l2);
            work.tensors_mut()[t][i] = orig;
            *gi = (plus - minus) / (2.0 * eps);
        }
        out.push(g);
    }
    out
}

/// `||a - b|| / max(||a||, ||b||)`, or the absolute gap when both norms are
/// below `floor`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom < floor {
        diff
    } else {
        diff / denom
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Full-graph forward with explicit loops over every node and edge, using
/// the relations' raw endpoint lists rather than blocks or CSR slices.
pub fn dense_oracle_probabilities(params: &ModelParams, graph: &HeteroGraph, seed_type: usize, seeds: &[usize]) -> Vec<f64> {
    let hp = &params.hyper;
    let d = hp.embed_dim;
    let n_types = graph.node_types().len();

    let mut h: Vec<Vec<Vec<f64>>> = (0..n_types)
        .map(|t| {
            let dt = graph.node_types()[t].feature_dim;
            (0..graph.node_count(t))
                .map(|v| {
                    let x = graph.node_feature(t, v);
                    (0..d)
                        .map(|k| (0..dt).map(|j| params.input_weights[t][[k, j]] * x[j]).sum())
                        .collect()
                })
                .collect()
        })
        .collect();

    for l in 0..hp.num_layers {
        let lp = &params.layers[l];
        let mut next = Vec::with_capacity(n_types);
        for t in 0..n_types {
            let mut rows = Vec::with_capacity(graph.node_count(t));
            for v in 0..graph.node_count(t) {
                let mut z: Vec<f64> = (0..d)
                    .map(|k| (0..d).map(|j| lp.self_weight[[k, j]] * h[t][v][j]).sum())
                    .collect();
                for (r, rel) in graph.relations().iter().enumerate() {
                    if rel.dst_type != t {
                        continue;
                    }
                    let mut acc = vec![0.0; d];
                    let mut count = 0usize;
                    for (e, &(src, dst)) in rel.endpoints().iter().enumerate() {
                        if dst != v {
                            continue;
                        }
                        count += 1;
                        let x = rel.edge_feature(e);
                        let m = &lp.edge_mlps[r];
                        let mut s = m.out_bias[0];
                        for q in 0..hp.edge_mlp_hidden {
                            let mut a = m.hidden_bias[q];
                            for (j, xj) in x.iter().enumerate() {
                                a += m.hidden_weight[[q, j]] * xj;
                            }
                            s += m.out_weight[q] * a.max(0.0);
                        }
                        let w = sigmoid(s);
                        for k in 0..d {
                            acc[k] += w * h[rel.src_type][src][k];
                        }
                    }
                    if count > 0 {
                        for k in 0..d {
                            let msg: f64 = (0..d).map(|j| lp.relation_weights[r][[k, j]] * acc[j]).sum();
                            z[k] += msg / count as f64;
                        }
                    }
                }
                let uses_norm = hp.norm_position != NormPosition::None && (hp.norm_last_layer || l + 1 < hp.num_layers);
                let ln = |x: &[f64]| -> Vec<f64> {
                    let mean = x.iter().sum::<f64>() / d as f64;
                    let var = x.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / d as f64;
                    let rs = 1.0 / (var + 1e-5).sqrt();
                    (0..d).map(|k| lp.norm_gain[k] * (x[k] - mean) * rs + lp.norm_bias[k]).collect()
                };
                let relu = |x: Vec<f64>| -> Vec<f64> { x.into_iter().map(|a| a.max(0.0)).collect() };
                let out = match (uses_norm, hp.norm_position) {
                    (true, NormPosition::PostActivation) => ln(&relu(z)),
                    (true, NormPosition::PreActivation) => relu(ln(&z)),
                    _ => relu(z),
                };
                rows.push(out);
            }
            next.push(rows);
        }
        h = next;
    }

    seeds
        .iter()
        .map(|&u| {
            let s: f64 = (0..d).map(|k| params.head_weight[k] * h[seed_type][u][k]).sum::<f64>() + params.head_bias[0];
            sigmoid(s)
        })
        .collect()
}

/// Operating points by brute force: for each distinct score `t`, count
/// samples with score >= t. O(n^2).
pub fn brute_force_operating_points(scores: &[f64], labels: &[u8]) -> Vec<(usize, usize)> {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut pts = vec![(0usize, 0usize)];
    for t in thresholds {
        let mut fp = 0;
        let mut tp = 0;
        for (s, &l) in scores.iter().zip(labels) {
            if *s >= t {
                if l == 1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        pts.push((fp, tp));
    }
    pts
}

pub fn brute_force_recall_at_fpr(scores: &[f64], labels: &[u8], fpr_max: f64) -> f64 {
    let p = labels.iter().filter(|&&l| l == 1).count() as f64;
    let n = labels.len() as f64 - p;
    brute_force_operating_points(scores, labels)
        .into_iter()
        .filter(|&(fp, _)| fp as f64 / n <= fpr_max)
        .map(|(_, tp)| tp as f64 / p)
        .fold(0.0, f64::max)
}

/// Truncated area by dense numeric integration of the piecewise-linear ROC:
/// each segment is integrated with Simpson's rule on its clipped extent,
/// which is exact for linear pieces.
pub fn brute_force_truncated_auroc(scores: &[f64], labels: &[u8], fpr_max: f64) -> f64 {
    let p = labels.iter().filter(|&&l| l == 1).count() as f64;
    let n = labels.len() as f64 - p;
    let pts: Vec<(f64, f64)> = brute_force_operating_points(scores, labels)
        .into_iter()
        .map(|(fp, tp)| (fp as f64 / n, tp as f64 / p))
        .collect();
    let mut area = 0.0;
    for w in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        let hi = x1.min(fpr_max);
        if hi <= x0 {
            continue;
        }
        let at = |x: f64| y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        let mid = (x0 + hi) / 2.0;
        area += (hi - x0) / 6.0 * (at(x0) + 4.0 * at(mid) + at(hi));
    }
    area / fpr_max
}

/// Mann-Whitney by explicit pair counting.
pub fn pairwise_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if li != 1 {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj != 0 {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Random scored fixture with ties injected by quantizing a fraction of scores.
pub fn random_scored(seed: u64, max_n: usize) -> (Vec<f64>, Vec<u8>) {
    let mut rng = rng(seed);
    let n = rng.random_range(2..=max_n);
    let mut labels: Vec<u8> = (0..n).map(|_| (rng.random::<f64>() < 0.3) as u8).collect();
    labels[0] = 1;
    labels[1] = 0;
    let scores = (0..n)
        .map(|i| {
            let base: f64 = rng.random::<f64>() + 0.4 * labels[i] as f64;
            if rng.random::<f64>() < 0.3 {
                (base * 8.0).round() / 8.0
            } else {
                base
            }
        })
        .collect();
    (scores, labels)
}
