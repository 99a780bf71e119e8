//! Layered neighbor sampling for mini-batch training.
//!
//! A [`SampleBlockSet`] holds one bipartite [`SampleBlock`] per model layer,
//! ordered outermost-first: `blocks[0]` has the seeds as destinations and
//! `blocks[k].src_nodes == blocks[k + 1].dst_nodes`. Within every block the
//! destination nodes of a type form a prefix of the source nodes of that
//! type, which gives each destination access to its own previous-layer state.

use crate::graph::HeteroGraph;
use crate::rng::StreamKey;
use rayon::prelude::*;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SampleError {
    #[error("seed {id} out of range for node type `{node_type}` (count {count})")]
    InvalidSeed {
        id: usize,
        node_type: String,
        count: usize,
    },
    #[error("seed {0} listed more than once")]
    DuplicateSeed(usize),
    #[error("node type index {0} out of range")]
    InvalidNodeType(usize),
    #[error("fanout must be at least 1")]
    ZeroFanout,
    #[error("at least one layer is required")]
    NoLayers,
}

/// Sampled edges of one relation inside a block, in local ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BlockEdges {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub edge_ids: Vec<usize>,
}

impl BlockEdges {
    pub fn len(&self) -> usize {
        self.edge_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edge_ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleBlock {
    /// Model layer (0 = first convolution) that consumes this block.
    pub layer_index: usize,
    /// Global ids per node type needing output at this layer.
    pub dst_nodes: Vec<Vec<usize>>,
    /// Global ids per node type whose input state is read; `dst_nodes[t]` is a prefix.
    pub src_nodes: Vec<Vec<usize>>,
    /// One entry per graph relation.
    pub edges: Vec<BlockEdges>,
    src_lookup: Vec<HashMap<usize, usize>>,
}

impl SampleBlock {
    pub fn local_src(&self, node_type: usize, global: usize) -> Option<usize> {
        self.src_lookup.get(node_type)?.get(&global).copied()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.iter().map(BlockEdges::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleBlockSet {
    pub blocks: Vec<SampleBlock>,
    pub seed_type: usize,
    pub seeds: Vec<usize>,
}

impl SampleBlockSet {
    pub fn num_layers(&self) -> usize {
        self.blocks.len()
    }

    /// Block consumed by model layer `layer`.
    pub fn for_layer(&self, layer: usize) -> &SampleBlock {
        &self.blocks[self.blocks.len() - 1 - layer]
    }

    /// Nodes whose raw features feed the first layer.
    pub fn input_nodes(&self) -> &[Vec<usize>] {
        &self.blocks[self.blocks.len() - 1].src_nodes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fanout {
    Limit(usize),
    All,
}

/// Samples, for every frontier node and relation, `min(fanout, in-degree)`
/// in-neighbors uniformly without replacement. `fanouts` is outermost-first
/// and its length is the number of layers.
pub fn sample_blocks(
    graph: &HeteroGraph,
    seed_type: usize,
    seeds: &[usize],
    fanouts: &[usize],
    key: StreamKey,
) -> Result<SampleBlockSet, SampleError> {
    if fanouts.contains(&0) {
        return Err(SampleError::ZeroFanout);
    }
    let fanouts: Vec<Fanout> = fanouts.iter().map(|&f| Fanout::Limit(f)).collect();
    build(graph, seed_type, seeds, &fanouts, key)
}

/// Same structure as [`sample_blocks`] with every in-neighbor included.
pub fn full_blocks(
    graph: &HeteroGraph,
    seed_type: usize,
    seeds: &[usize],
    num_layers: usize,
) -> Result<SampleBlockSet, SampleError> {
    build(graph, seed_type, seeds, &vec![Fanout::All; num_layers], StreamKey::new(0))
}

fn build(
    graph: &HeteroGraph,
    seed_type: usize,
    seeds: &[usize],
    fanouts: &[Fanout],
    key: StreamKey,
) -> Result<SampleBlockSet, SampleError> {
    if fanouts.is_empty() {
        return Err(SampleError::NoLayers);
    }
    let n_types = graph.node_types().len();
    if seed_type >= n_types {
        return Err(SampleError::InvalidNodeType(seed_type));
    }
    let count = graph.node_count(seed_type);
    let mut seen = vec![false; count];
    for &s in seeds {
        if s >= count {
            return Err(SampleError::InvalidSeed {
                id: s,
                node_type: graph.node_types()[seed_type].name.clone(),
                count,
            });
        }
        if std::mem::replace(&mut seen[s], true) {
            return Err(SampleError::DuplicateSeed(s));
        }
    }

    let mut dst_nodes = vec![Vec::new(); n_types];
    dst_nodes[seed_type] = seeds.to_vec();
    let num_layers = fanouts.len();
    let mut blocks = Vec::with_capacity(num_layers);
    for (k, &fanout) in fanouts.iter().enumerate() {
        let block = expand(graph, dst_nodes, fanout, key.child(k as u64), num_layers - 1 - k);
        dst_nodes = block.src_nodes.clone();
        blocks.push(block);
    }
    Ok(SampleBlockSet {
        blocks,
        seed_type,
        seeds: seeds.to_vec(),
    })
}

fn expand(
    graph: &HeteroGraph,
    dst_nodes: Vec<Vec<usize>>,
    fanout: Fanout,
    key: StreamKey,
    layer_index: usize,
) -> SampleBlock {
    let mut src_nodes = dst_nodes.clone();
    let mut src_lookup: Vec<HashMap<usize, usize>> = dst_nodes
        .iter()
        .map(|ids| ids.iter().enumerate().map(|(i, &g)| (g, i)).collect())
        .collect();
    let mut edges = vec![BlockEdges::default(); graph.relations().len()];

    for (t, dsts) in dst_nodes.iter().enumerate() {
        let rels: Vec<usize> = (0..graph.relations().len())
            .filter(|&r| graph.relations()[r].dst_type == t)
            .collect();
        if rels.is_empty() || dsts.is_empty() {
            continue;
        }
        // choices per destination node are independent; merge keeps dst order
        let picks: Vec<Vec<(usize, Vec<usize>)>> = dsts
            .par_iter()
            .map(|&v| {
                rels.iter()
                    .map(|&r| {
                        let rel = &graph.relations()[r];
                        let degree = rel.csr.in_degree(v);
                        let slots = match fanout {
                            Fanout::Limit(f) if degree > f => {
                                let mut rng = key.derive(&[t as u64, v as u64, r as u64]).rng();
                                let mut idx = rand::seq::index::sample(&mut rng, degree, f).into_vec();
                                idx.sort_unstable();
                                idx
                            }
                            _ => (0..degree).collect(),
                        };
                        (r, slots)
                    })
                    .collect()
            })
            .collect();

        for (dst_local, per_rel) in picks.into_iter().enumerate() {
            let v = dsts[dst_local];
            for (r, slots) in per_rel {
                let rel = &graph.relations()[r];
                let base = rel.csr.offsets[v];
                let st = rel.src_type;
                for s in slots {
                    let src = rel.csr.sources[base + s];
                    let local = *src_lookup[st].entry(src).or_insert_with(|| {
                        src_nodes[st].push(src);
                        src_nodes[st].len() - 1
                    });
                    edges[r].src.push(local);
                    edges[r].dst.push(dst_local);
                    edges[r].edge_ids.push(rel.csr.edge_ids[base + s]);
                }
            }
        }
    }

    SampleBlock {
        layer_index,
        dst_nodes,
        src_nodes,
        edges,
        src_lookup,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, NodeTypeSpec, RelationSpec};
    use std::collections::HashSet;

    fn star(degree: usize) -> HeteroGraph {
        let edges: Vec<_> = (1..=degree).map(|s| (s, 0)).collect();
        GraphBuilder::new()
            .node_type(NodeTypeSpec::new("user", 0, degree + 1), vec![])
            .relation(RelationSpec::new("r", "user", "user", 0))
            .edges("r", edges, vec![])
            .build()
            .unwrap()
    }

    #[test]
    fn takes_all_when_degree_below_fanout() {
        let g = star(3);
        let set = sample_blocks(&g, 0, &[0], &[50], StreamKey::new(1)).unwrap();
        let e = &set.blocks[0].edges[0];
        assert_eq!(e.len(), 3);
        let ids: HashSet<_> = e.edge_ids.iter().collect();
        assert_eq!(ids.len(), 3);
    }

    #[test]
    fn exactly_fanout_distinct_neighbors() {
        let g = star(100);
        let set = sample_blocks(&g, 0, &[0], &[50], StreamKey::new(9)).unwrap();
        let e = &set.blocks[0].edges[0];
        assert_eq!(e.len(), 50);
        assert_eq!(e.edge_ids.iter().collect::<HashSet<_>>().len(), 50);
    }

    #[test]
    fn isolated_seeds_yield_self_only_blocks() {
        let g = star(2);
        let set = full_blocks(&g, 0, &[1, 2], 2).unwrap();
        for b in &set.blocks {
            assert_eq!(b.src_nodes[0], vec![1, 2]);
            assert_eq!(b.num_edges(), 0);
        }
    }

    #[test]
    fn frontier_chain_and_prefix() {
        let g = star(5);
        let set = sample_blocks(&g, 0, &[0], &[2, 2], StreamKey::new(3)).unwrap();
        assert_eq!(set.blocks[0].dst_nodes[0], vec![0]);
        assert_eq!(set.blocks[0].src_nodes, set.blocks[1].dst_nodes);
        for b in &set.blocks {
            assert_eq!(&b.src_nodes[0][..b.dst_nodes[0].len()], b.dst_nodes[0].as_slice());
            for (i, &gid) in b.src_nodes[0].iter().enumerate() {
                assert_eq!(b.local_src(0, gid), Some(i));
            }
        }
        assert_eq!(set.for_layer(1).layer_index, 1);
        assert_eq!(set.for_layer(0).layer_index, 0);
    }

    #[test]
    fn errors() {
        let g = star(2);
        assert!(matches!(
            sample_blocks(&g, 0, &[7], &[1], StreamKey::new(0)),
            Err(SampleError::InvalidSeed { id: 7, .. })
        ));
        assert_eq!(
            sample_blocks(&g, 0, &[1, 1], &[1], StreamKey::new(0)).unwrap_err(),
            SampleError::DuplicateSeed(1)
        );
        assert_eq!(sample_blocks(&g, 0, &[1], &[0], StreamKey::new(0)).unwrap_err(), SampleError::ZeroFanout);
        assert_eq!(full_blocks(&g, 0, &[1], 0).unwrap_err(), SampleError::NoLayers);
    }

    #[test]
    fn deterministic_per_key() {
        let g = star(100);
        let a = sample_blocks(&g, 0, &[0], &[10, 10], StreamKey::new(4)).unwrap();
        let b = sample_blocks(&g, 0, &[0], &[10, 10], StreamKey::new(4)).unwrap();
        let c = sample_blocks(&g, 0, &[0], &[10, 10], StreamKey::new(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
