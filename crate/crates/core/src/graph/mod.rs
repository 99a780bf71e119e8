//! Directed heterogeneous multigraph with typed node and edge features.
//!
//! Node ids are dense and 0-based per node type. Each relation stores its
//! adjacency as CSR indexed by destination, so the in-neighbors of a node are
//! one contiguous slice. Edge ids are the input order of the relation's edge
//! list; edge features are stored row-major by edge id.

pub(crate) mod format;

pub use format::{read_graph, read_id_map, write_graph, write_id_map, IdMap, GRAPH_MAGIC};

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("duplicate node type `{0}`")]
    DuplicateNodeType(String),
    #[error("duplicate relation `{0}`")]
    DuplicateRelation(String),
    #[error("relation `{relation}` references undeclared node type `{node_type}`")]
    UnknownNodeType { relation: String, node_type: String },
    #[error("unknown node type `{0}`")]
    NodeTypeNotFound(String),
    #[error("relation `{0}` not found")]
    RelationNotFound(String),
    #[error("{what}: expected {expected} values, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("relation `{relation}` edge {edge}: {end} id {id} out of range for node type `{node_type}` (count {count})")]
    DanglingEndpoint {
        relation: String,
        edge: usize,
        end: &'static str,
        id: usize,
        node_type: String,
        count: usize,
    },
    #[error("non-finite value in {what} at row {row}, column {col}")]
    NonFinite { what: String, row: usize, col: usize },
    #[error("node {id} out of range for node type `{node_type}` (count {count})")]
    NodeOutOfRange {
        node_type: String,
        id: usize,
        count: usize,
    },
    #[error("label for node {node} must be 0 or 1, got {label}")]
    InvalidLabel { node: usize, label: u8 },
    #[error("duplicate label for node {0}")]
    DuplicateLabel(usize),
    #[error("edge list supplied twice for relation `{0}`")]
    DuplicateEdgeList(String),
    #[error("malformed graph file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeTypeSpec {
    pub name: String,
    pub feature_dim: usize,
    pub count: usize,
}

impl NodeTypeSpec {
    pub fn new(name: impl Into<String>, feature_dim: usize, count: usize) -> Self {
        Self {
            name: name.into(),
            feature_dim,
            count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub name: String,
    pub src_type: String,
    pub dst_type: String,
    pub edge_feature_dim: usize,
}

impl RelationSpec {
    pub fn new(
        name: impl Into<String>,
        src_type: impl Into<String>,
        dst_type: impl Into<String>,
        edge_feature_dim: usize,
    ) -> Self {
        Self {
            name: name.into(),
            src_type: src_type.into(),
            dst_type: dst_type.into(),
            edge_feature_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Split::Train),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Label {
    pub y: u8,
    pub split: Split,
}

/// Labels attached to nodes of one designated (user) node type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTable {
    pub node_type: String,
    pub entries: Vec<(usize, Label)>,
}

/// Destination-indexed compressed adjacency of one relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Csr {
    pub offsets: Vec<usize>,
    pub sources: Vec<usize>,
    pub edge_ids: Vec<usize>,
}

impl Csr {
    pub fn num_edges(&self) -> usize {
        self.sources.len()
    }

    pub fn in_degree(&self, dst: usize) -> usize {
        self.offsets[dst + 1] - self.offsets[dst]
    }

    fn from_edges(num_dst: usize, edges: &[(usize, usize)]) -> Self {
        let mut offsets = vec![0usize; num_dst + 1];
        for &(_, dst) in edges {
            offsets[dst + 1] += 1;
        }
        for i in 0..num_dst {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets.clone();
        let mut sources = vec![0usize; edges.len()];
        let mut edge_ids = vec![0usize; edges.len()];
        // counting sort is stable, so ties keep input order
        for (eid, &(src, dst)) in edges.iter().enumerate() {
            let slot = cursor[dst];
            sources[slot] = src;
            edge_ids[slot] = eid;
            cursor[dst] += 1;
        }
        Self {
            offsets,
            sources,
            edge_ids,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Relation {
    pub spec: RelationSpec,
    pub src_type: usize,
    pub dst_type: usize,
    pub csr: Csr,
    /// Row-major `num_edges x edge_feature_dim`, indexed by edge id.
    pub edge_features: Vec<f64>,
}

impl Relation {
    pub fn num_edges(&self) -> usize {
        self.csr.num_edges()
    }

    pub fn edge_feature(&self, edge_id: usize) -> &[f64] {
        let d = self.spec.edge_feature_dim;
        &self.edge_features[edge_id * d..(edge_id + 1) * d]
    }

    /// `(src, dst)` pairs in edge-id order.
    pub fn endpoints(&self) -> Vec<(usize, usize)> {
        let mut out = vec![(0, 0); self.num_edges()];
        for dst in 0..self.csr.offsets.len() - 1 {
            for slot in self.csr.offsets[dst]..self.csr.offsets[dst + 1] {
                out[self.csr.edge_ids[slot]] = (self.csr.sources[slot], dst);
            }
        }
        out
    }
}

/// Immutable typed multigraph. Safe to share across threads once built.
#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    pub(crate) node_types: Vec<NodeTypeSpec>,
    pub(crate) node_features: Vec<Vec<f64>>,
    pub(crate) relations: Vec<Relation>,
    pub(crate) label_type: Option<usize>,
    pub(crate) labels: Vec<Option<Label>>,
}

/// Relation name, `(src, dst)` pairs and row-major edge features.
type EdgeList = (String, Vec<(usize, usize)>, Vec<f64>);

#[derive(Debug, Default)]
pub struct GraphBuilder {
    node_types: Vec<(NodeTypeSpec, Vec<f64>)>,
    relations: Vec<RelationSpec>,
    edge_lists: Vec<EdgeList>,
    labels: Option<LabelTable>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// `features` is row-major `count x feature_dim`.
    pub fn node_type(mut self, spec: NodeTypeSpec, features: Vec<f64>) -> Self {
        self.node_types.push((spec, features));
        self
    }

    pub fn relation(mut self, spec: RelationSpec) -> Self {
        self.relations.push(spec);
        self
    }

    /// `features` is row-major `edges.len() x edge_feature_dim`.
    pub fn edges(
        mut self,
        relation: impl Into<String>,
        edges: Vec<(usize, usize)>,
        features: Vec<f64>,
    ) -> Self {
        self.edge_lists.push((relation.into(), edges, features));
        self
    }

    pub fn labels(mut self, labels: LabelTable) -> Self {
        self.labels = Some(labels);
        self
    }

    pub fn build(self) -> Result<HeteroGraph, GraphError> {
        let mut seen = HashSet::new();
        for (spec, features) in &self.node_types {
            if !seen.insert(spec.name.as_str()) {
                return Err(GraphError::DuplicateNodeType(spec.name.clone()));
            }
            let expected = spec.count * spec.feature_dim;
            if features.len() != expected {
                return Err(GraphError::DimensionMismatch {
                    what: format!(
                        "node features of `{}` ({} rows x {} columns)",
                        spec.name, spec.count, spec.feature_dim
                    ),
                    expected,
                    found: features.len(),
                });
            }
            check_finite(
                &format!("node features of `{}`", spec.name),
                features,
                spec.feature_dim,
            )?;
        }
        let type_index = |name: &str| self.node_types.iter().position(|(s, _)| s.name == name);

        let mut rel_names = HashSet::new();
        for spec in &self.relations {
            if !rel_names.insert(spec.name.as_str()) {
                return Err(GraphError::DuplicateRelation(spec.name.clone()));
            }
            for t in [&spec.src_type, &spec.dst_type] {
                if type_index(t).is_none() {
                    return Err(GraphError::UnknownNodeType {
                        relation: spec.name.clone(),
                        node_type: t.clone(),
                    });
                }
            }
        }
        let mut supplied = HashSet::new();
        for (name, _, _) in &self.edge_lists {
            if !rel_names.contains(name.as_str()) {
                return Err(GraphError::RelationNotFound(name.clone()));
            }
            if !supplied.insert(name.as_str()) {
                return Err(GraphError::DuplicateEdgeList(name.clone()));
            }
        }

        let mut relations = Vec::with_capacity(self.relations.len());
        for spec in &self.relations {
            let src_type = type_index(&spec.src_type).unwrap();
            let dst_type = type_index(&spec.dst_type).unwrap();
            let (edges, features) = self
                .edge_lists
                .iter()
                .find(|(n, _, _)| n == &spec.name)
                .map(|(_, e, f)| (e.as_slice(), f.as_slice()))
                .unwrap_or((&[], &[]));
            relations.push(make_relation(
                spec.clone(),
                src_type,
                dst_type,
                &self.node_types[src_type].0,
                &self.node_types[dst_type].0,
                edges,
                features.to_vec(),
            )?);
        }

        let (label_type, labels) = match &self.labels {
            None => (None, Vec::new()),
            Some(table) => {
                let t = type_index(&table.node_type)
                    .ok_or_else(|| GraphError::NodeTypeNotFound(table.node_type.clone()))?;
                let spec = &self.node_types[t].0;
                let mut labels = vec![None; spec.count];
                for &(node, label) in &table.entries {
                    if node >= spec.count {
                        return Err(GraphError::NodeOutOfRange {
                            node_type: spec.name.clone(),
                            id: node,
                            count: spec.count,
                        });
                    }
                    if label.y > 1 {
                        return Err(GraphError::InvalidLabel {
                            node,
                            label: label.y,
                        });
                    }
                    if labels[node].replace(label).is_some() {
                        return Err(GraphError::DuplicateLabel(node));
                    }
                }
                (Some(t), labels)
            }
        };

        let (node_types, node_features) = self.node_types.into_iter().unzip();
        Ok(HeteroGraph {
            node_types,
            node_features,
            relations,
            label_type,
            labels,
        })
    }
}

fn check_finite(what: &str, values: &[f64], dim: usize) -> Result<(), GraphError> {
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(GraphError::NonFinite {
            what: what.to_string(),
            row: pos / dim.max(1),
            col: pos % dim.max(1),
        });
    }
    Ok(())
}

fn make_relation(
    spec: RelationSpec,
    src_type: usize,
    dst_type: usize,
    src_spec: &NodeTypeSpec,
    dst_spec: &NodeTypeSpec,
    edges: &[(usize, usize)],
    features: Vec<f64>,
) -> Result<Relation, GraphError> {
    for (edge, &(src, dst)) in edges.iter().enumerate() {
        for (end, id, node_spec) in [("source", src, src_spec), ("destination", dst, dst_spec)] {
            if id >= node_spec.count {
                return Err(GraphError::DanglingEndpoint {
                    relation: spec.name.clone(),
                    edge,
                    end,
                    id,
                    node_type: node_spec.name.clone(),
                    count: node_spec.count,
                });
            }
        }
    }
    let expected = edges.len() * spec.edge_feature_dim;
    if features.len() != expected {
        return Err(GraphError::DimensionMismatch {
            what: format!(
                "edge features of `{}` ({} edges x {} columns)",
                spec.name,
                edges.len(),
                spec.edge_feature_dim
            ),
            expected,
            found: features.len(),
        });
    }
    check_finite(
        &format!("edge features of `{}`", spec.name),
        &features,
        spec.edge_feature_dim,
    )?;
    Ok(Relation {
        csr: Csr::from_edges(dst_spec.count, edges),
        spec,
        src_type,
        dst_type,
        edge_features: features,
    })
}

impl HeteroGraph {
    pub fn node_types(&self) -> &[NodeTypeSpec] {
        &self.node_types
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn node_type_index(&self, name: &str) -> Option<usize> {
        self.node_types.iter().position(|t| t.name == name)
    }

    pub fn relation_index(&self, name: &str) -> Option<usize> {
        self.relations.iter().position(|r| r.spec.name == name)
    }

    pub fn relation(&self, name: &str) -> Result<&Relation, GraphError> {
        self.relation_index(name)
            .map(|i| &self.relations[i])
            .ok_or_else(|| GraphError::RelationNotFound(name.to_string()))
    }

    pub fn node_count(&self, node_type: usize) -> usize {
        self.node_types[node_type].count
    }

    /// Row-major `count x feature_dim` features of a node type.
    pub fn node_features(&self, node_type: usize) -> &[f64] {
        &self.node_features[node_type]
    }

    pub fn node_feature(&self, node_type: usize, id: usize) -> &[f64] {
        let d = self.node_types[node_type].feature_dim;
        &self.node_features[node_type][id * d..(id + 1) * d]
    }

    /// Index of the node type carrying labels, if any.
    pub fn label_type(&self) -> Option<usize> {
        self.label_type
    }

    pub fn label(&self, id: usize) -> Option<Label> {
        self.labels.get(id).copied().flatten()
    }

    /// Labeled node ids of one split, ascending.
    pub fn labeled_nodes(&self, split: Split) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| match l {
                Some(l) if l.split == split => Some(i),
                _ => None,
            })
            .collect()
    }

    pub fn label_table(&self) -> Option<LabelTable> {
        let t = self.label_type?;
        Some(LabelTable {
            node_type: self.node_types[t].name.clone(),
            entries: self
                .labels
                .iter()
                .enumerate()
                .filter_map(|(i, l)| l.map(|l| (i, l)))
                .collect(),
        })
    }

    /// `(source_id, edge_id)` pairs of every in-edge of `node_id`, in CSR order.
    pub fn in_neighbors(
        &self,
        relation: usize,
        node_id: usize,
    ) -> Result<impl Iterator<Item = (usize, usize)> + '_, GraphError> {
        let rel = self
            .relations
            .get(relation)
            .ok_or_else(|| GraphError::RelationNotFound(format!("#{relation}")))?;
        let (sources, edges) = self.in_slices(rel, node_id)?;
        Ok(sources.iter().copied().zip(edges.iter().copied()))
    }

    /// Raw CSR slices `(sources, edge_ids)` for `node_id` under `rel`.
    pub fn in_slices<'a>(
        &self,
        rel: &'a Relation,
        node_id: usize,
    ) -> Result<(&'a [usize], &'a [usize]), GraphError> {
        let count = self.node_types[rel.dst_type].count;
        if node_id >= count {
            return Err(GraphError::NodeOutOfRange {
                node_type: self.node_types[rel.dst_type].name.clone(),
                id: node_id,
                count,
            });
        }
        let range = rel.csr.offsets[node_id]..rel.csr.offsets[node_id + 1];
        Ok((&rel.csr.sources[range.clone()], &rel.csr.edge_ids[range]))
    }

    /// Returns a new graph with an added relation whose edges are those of
    /// `relation` with endpoints swapped. Edge ids and features carry over.
    pub fn reverse_relation(&self, relation: &str, new_name: &str) -> Result<HeteroGraph, GraphError> {
        let rel = self.relation(relation)?;
        if self.relation_index(new_name).is_some() {
            return Err(GraphError::DuplicateRelation(new_name.to_string()));
        }
        let swapped: Vec<(usize, usize)> = rel.endpoints().into_iter().map(|(s, d)| (d, s)).collect();
        let spec = RelationSpec {
            name: new_name.to_string(),
            src_type: rel.spec.dst_type.clone(),
            dst_type: rel.spec.src_type.clone(),
            edge_feature_dim: rel.spec.edge_feature_dim,
        };
        let reversed = make_relation(
            spec,
            rel.dst_type,
            rel.src_type,
            &self.node_types[rel.dst_type],
            &self.node_types[rel.src_type],
            &swapped,
            rel.edge_features.clone(),
        )?;
        let mut out = self.clone();
        out.relations.push(reversed);
        Ok(out)
    }

    /// Copy of the graph keeping only relations accepted by `keep`.
    pub fn retain_relations(&self, mut keep: impl FnMut(&RelationSpec) -> bool) -> HeteroGraph {
        let mut out = self.clone();
        out.relations.retain(|r| keep(&r.spec));
        out
    }

    /// Copy of the graph with every relation's edge features removed (`d_r = 0`).
    pub fn without_edge_features(&self) -> HeteroGraph {
        let mut out = self.clone();
        for rel in &mut out.relations {
            rel.spec.edge_feature_dim = 0;
            rel.edge_features.clear();
        }
        out
    }

    /// Copy of the graph with labels replaced.
    pub fn with_labels(&self, labels: LabelTable) -> Result<HeteroGraph, GraphError> {
        let mut builder = GraphBuilder::new();
        for (spec, feats) in self.node_types.iter().zip(&self.node_features) {
            builder = builder.node_type(spec.clone(), feats.clone());
        }
        let mut out = builder.labels(labels).build()?;
        out.relations = self.relations.clone();
        Ok(out)
    }

    pub fn summarize(&self) -> GraphStatsSummary {
        let node_types = self
            .node_types
            .iter()
            .enumerate()
            .map(|(t, spec)| {
                let (labeled, positives) = if self.label_type == Some(t) {
                    let labeled = self.labels.iter().flatten().count();
                    let positives = self.labels.iter().flatten().filter(|l| l.y == 1).count();
                    (labeled, positives)
                } else {
                    (0, 0)
                };
                NodeTypeSummary {
                    name: spec.name.clone(),
                    count: spec.count,
                    feature_dim: spec.feature_dim,
                    labeled,
                    positives,
                    positive_fraction: if labeled > 0 {
                        positives as f64 / labeled as f64
                    } else {
                        0.0
                    },
                }
            })
            .collect();
        let relations = self
            .relations
            .iter()
            .map(|rel| {
                let mut degrees: Vec<usize> = rel.csr.offsets.windows(2).map(|w| w[1] - w[0]).collect();
                degrees.sort_unstable();
                RelationSummary {
                    name: rel.spec.name.clone(),
                    src_type: rel.spec.src_type.clone(),
                    dst_type: rel.spec.dst_type.clone(),
                    edge_feature_dim: rel.spec.edge_feature_dim,
                    edges: rel.num_edges(),
                    in_degree: DegreeSummary::from_sorted(&degrees),
                }
            })
            .collect();
        GraphStatsSummary {
            node_types,
            relations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStatsSummary {
    pub node_types: Vec<NodeTypeSummary>,
    pub relations: Vec<RelationSummary>,
}

impl GraphStatsSummary {
    pub fn total_edges(&self) -> usize {
        self.relations.iter().map(|r| r.edges).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTypeSummary {
    pub name: String,
    pub count: usize,
    pub feature_dim: usize,
    pub labeled: usize,
    pub positives: usize,
    pub positive_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationSummary {
    pub name: String,
    pub src_type: String,
    pub dst_type: String,
    pub edge_feature_dim: usize,
    pub edges: usize,
    pub in_degree: DegreeSummary,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DegreeSummary {
    pub min: usize,
    pub mean: f64,
    pub max: usize,
    pub p50: usize,
    pub p90: usize,
    pub p99: usize,
}

impl DegreeSummary {
    fn from_sorted(degrees: &[usize]) -> Self {
        if degrees.is_empty() {
            return Self::default();
        }
        // nearest-rank quantile
        let q = |p: f64| {
            let rank = ((p * degrees.len() as f64).ceil() as usize).clamp(1, degrees.len());
            degrees[rank - 1]
        };
        Self {
            min: degrees[0],
            mean: degrees.iter().sum::<usize>() as f64 / degrees.len() as f64,
            max: degrees[degrees.len() - 1],
            p50: q(0.5),
            p90: q(0.9),
            p99: q(0.99),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_users() -> GraphBuilder {
        GraphBuilder::new()
            .node_type(NodeTypeSpec::new("user", 0, 2), vec![])
            .relation(RelationSpec::new("follows", "user", "user", 0))
    }

    #[test]
    fn smallest_graph_offsets() {
        let g = two_users().edges("follows", vec![(0, 1)], vec![]).build().unwrap();
        assert_eq!(g.relations()[0].csr.offsets, vec![0, 0, 1]);
    }

    #[test]
    fn parallel_edges_are_kept() {
        let g = two_users()
            .edges("follows", vec![(0, 1), (0, 1)], vec![])
            .build()
            .unwrap();
        let rel = &g.relations()[0];
        assert_eq!(rel.csr.in_degree(1), 2);
        let nbrs: Vec<_> = g.in_neighbors(0, 1).unwrap().collect();
        assert_eq!(nbrs, vec![(0, 0), (0, 1)]);
    }

    #[test]
    fn feature_row_mismatch() {
        let err = GraphBuilder::new()
            .node_type(NodeTypeSpec::new("user", 1, 2), vec![1.0, 2.0, 3.0])
            .build()
            .unwrap_err();
        assert!(matches!(err, GraphError::DimensionMismatch { expected: 2, found: 3, .. }));
    }

    #[test]
    fn rejects_non_finite_and_dangling() {
        let err = GraphBuilder::new()
            .node_type(NodeTypeSpec::new("user", 2, 2), vec![0.0, 1.0, f64::NAN, 0.0])
            .build()
            .unwrap_err();
        assert!(matches!(err, GraphError::NonFinite { row: 1, col: 0, .. }));

        let err = two_users().edges("follows", vec![(0, 2)], vec![]).build().unwrap_err();
        assert!(matches!(err, GraphError::DanglingEndpoint { edge: 0, id: 2, .. }));
    }

    #[test]
    fn rejects_duplicate_names() {
        let err = two_users()
            .node_type(NodeTypeSpec::new("user", 0, 1), vec![])
            .build()
            .unwrap_err();
        assert!(matches!(err, GraphError::DuplicateNodeType(_)));
        let err = two_users()
            .relation(RelationSpec::new("follows", "user", "user", 0))
            .build()
            .unwrap_err();
        assert!(matches!(err, GraphError::DuplicateRelation(_)));
    }

    #[test]
    fn in_neighbors_by_construction() {
        let g = GraphBuilder::new()
            .node_type(NodeTypeSpec::new("user", 0, 3), vec![])
            .relation(RelationSpec::new("r", "user", "user", 0))
            .edges("r", vec![(0, 2), (1, 2)], vec![])
            .build()
            .unwrap();
        assert_eq!(g.in_neighbors(0, 2).unwrap().collect::<Vec<_>>(), vec![(0, 0), (1, 1)]);
        assert_eq!(g.in_neighbors(0, 0).unwrap().count(), 0);
        assert!(matches!(
            g.in_neighbors(0, 3).err(),
            Some(GraphError::NodeOutOfRange { id: 3, .. })
        ));
    }

    #[test]
    fn reverse_relation_swaps_endpoints() {
        let g = GraphBuilder::new()
            .node_type(NodeTypeSpec::new("user", 0, 3), vec![])
            .node_type(NodeTypeSpec::new("domain", 0, 2), vec![])
            .relation(RelationSpec::new("U-I-D", "user", "domain", 1))
            .edges("U-I-D", vec![(0, 1), (2, 0), (1, 1)], vec![5.0, 6.0, 7.0])
            .build()
            .unwrap();
        let r = g.reverse_relation("U-I-D", "D-I-U").unwrap();
        let rev = r.relation("D-I-U").unwrap();
        assert_eq!(rev.num_edges(), 3);
        assert_eq!(rev.endpoints(), vec![(1, 0), (0, 2), (1, 1)]);
        assert_eq!(rev.edge_feature(1), &[6.0]);
        assert!(matches!(
            r.reverse_relation("U-I-D", "D-I-U"),
            Err(GraphError::DuplicateRelation(_))
        ));
        assert!(matches!(
            g.reverse_relation("nope", "x"),
            Err(GraphError::RelationNotFound(_))
        ));

        let twice = r.reverse_relation("D-I-U", "U-I-D-2").unwrap();
        assert_eq!(twice.relation("U-I-D-2").unwrap().csr, g.relation("U-I-D").unwrap().csr);
    }

    #[test]
    fn reverse_empty_relation() {
        let g = two_users().build().unwrap();
        let r = g.reverse_relation("follows", "followed_by").unwrap();
        assert_eq!(r.relation("followed_by").unwrap().num_edges(), 0);
    }

    #[test]
    fn summary_counts() {
        let empty = GraphBuilder::new().build().unwrap().summarize();
        assert!(empty.node_types.is_empty() && empty.relations.is_empty());

        let g = two_users()
            .edges("follows", vec![(0, 1), (1, 1)], vec![])
            .labels(LabelTable {
                node_type: "user".into(),
                entries: vec![
                    (0, Label { y: 1, split: Split::Train }),
                    (1, Label { y: 0, split: Split::Test }),
                ],
            })
            .build()
            .unwrap();
        let s = g.summarize();
        assert_eq!(s.node_types[0].labeled, 2);
        assert_eq!(s.node_types[0].positive_fraction, 0.5);
        assert_eq!(s.relations[0].edges, 2);
        assert_eq!(s.relations[0].in_degree.max, 2);
        assert_eq!(s.relations[0].in_degree.min, 0);
        assert_eq!(g.labeled_nodes(Split::Test), vec![1]);
    }

    #[test]
    fn label_errors() {
        let label = |n, y| (n, Label { y, split: Split::Train });
        let err = two_users()
            .labels(LabelTable { node_type: "user".into(), entries: vec![label(5, 1)] })
            .build()
            .unwrap_err();
        assert!(matches!(err, GraphError::NodeOutOfRange { .. }));
        let err = two_users()
            .labels(LabelTable { node_type: "user".into(), entries: vec![label(0, 1), label(0, 0)] })
            .build()
            .unwrap_err();
        assert!(matches!(err, GraphError::DuplicateLabel(0)));
        let err = two_users()
            .labels(LabelTable { node_type: "user".into(), entries: vec![label(0, 2)] })
            .build()
            .unwrap_err();
        assert!(matches!(err, GraphError::InvalidLabel { .. }));
    }
}
