//! `SEINEG1` binary graph files and the JSON id-map sidecar.
//!
//! Layout, all integers little-endian `u64` unless noted:
//!
//! ```text
//! magic "SEINEG1"
//! node types:   n, then per type { name, feature_dim, count }
//! relations:    n, then per relation { name, src_type, dst_type, edge_feature_dim, num_edges }
//! features:     per node type count*feature_dim f64, then per relation num_edges*edge_feature_dim f64
//! csr:          per relation offsets (dst_count+1), sources (num_edges), edge_ids (num_edges)
//! labels:       label type index (u64::MAX for none), n, then per entry { node, y: u8, split: u8 }
//! ```
//!
//! Strings are a `u64` byte length followed by UTF-8 bytes.

use super::{Csr, GraphError, HeteroGraph, Label, NodeTypeSpec, Relation, RelationSpec, Split};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

pub const GRAPH_MAGIC: &[u8; 7] = b"SEINEG1";

/// External string ids per node type, in dense-id order.
pub type IdMap = BTreeMap<String, Vec<String>>;

pub(crate) fn put_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    put_u64(w, s.len() as u64)?;
    w.write_all(s.as_bytes())
}

pub(crate) fn put_f64s(w: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

fn put_usizes(w: &mut impl Write, values: &[usize]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for &v in values {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    w.write_all(&buf)
}

/// Little-endian cursor over an in-memory file.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn bytes(&mut self, n: usize) -> Result<&'a [u8], String> {
        if self.buf.len() - self.pos < n {
            return Err(format!("unexpected end of file at byte {}", self.pos));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, String> {
        Ok(self.bytes(1)?[0])
    }

    pub(crate) fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    pub(crate) fn usize(&mut self) -> Result<usize, String> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| format!("value {v} does not fit in usize"))
    }

    pub(crate) fn string(&mut self) -> Result<String, String> {
        let n = self.usize()?;
        String::from_utf8(self.bytes(n)?.to_vec()).map_err(|e| e.to_string())
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>, String> {
        let raw = self.bytes(n.checked_mul(8).ok_or("length overflow")?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn usizes(&mut self, n: usize) -> Result<Vec<usize>, String> {
        let raw = self.bytes(n.checked_mul(8).ok_or("length overflow")?)?;
        raw.chunks_exact(8)
            .map(|c| {
                let v = u64::from_le_bytes(c.try_into().unwrap());
                usize::try_from(v).map_err(|_| format!("value {v} does not fit in usize"))
            })
            .collect()
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn write_graph(graph: &HeteroGraph, w: &mut impl Write) -> Result<(), GraphError> {
    w.write_all(GRAPH_MAGIC)?;
    put_u64(w, graph.node_types.len() as u64)?;
    for t in &graph.node_types {
        put_str(w, &t.name)?;
        put_u64(w, t.feature_dim as u64)?;
        put_u64(w, t.count as u64)?;
    }
    put_u64(w, graph.relations.len() as u64)?;
    for r in &graph.relations {
        put_str(w, &r.spec.name)?;
        put_u64(w, r.src_type as u64)?;
        put_u64(w, r.dst_type as u64)?;
        put_u64(w, r.spec.edge_feature_dim as u64)?;
        put_u64(w, r.num_edges() as u64)?;
    }
    for feats in &graph.node_features {
        put_f64s(w, feats)?;
    }
    for r in &graph.relations {
        put_f64s(w, &r.edge_features)?;
    }
    for r in &graph.relations {
        put_usizes(w, &r.csr.offsets)?;
        put_usizes(w, &r.csr.sources)?;
        put_usizes(w, &r.csr.edge_ids)?;
    }
    put_u64(w, graph.label_type.map_or(u64::MAX, |t| t as u64))?;
    let entries: Vec<(usize, Label)> = graph
        .labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.map(|l| (i, l)))
        .collect();
    put_u64(w, entries.len() as u64)?;
    for (node, label) in entries {
        put_u64(w, node as u64)?;
        w.write_all(&[label.y, label.split.code()])?;
    }
    Ok(())
}

pub fn read_graph(r: &mut impl Read) -> Result<HeteroGraph, GraphError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode(&buf).map_err(GraphError::Format)
}

fn decode(buf: &[u8]) -> Result<HeteroGraph, String> {
    let mut r = Reader::new(buf);
    if r.bytes(GRAPH_MAGIC.len())? != GRAPH_MAGIC {
        return Err("bad magic, expected SEINEG1".into());
    }
    let n_types = r.usize()?;
    let mut node_types = Vec::new();
    for _ in 0..n_types {
        let name = r.string()?;
        let feature_dim = r.usize()?;
        let count = r.usize()?;
        node_types.push(NodeTypeSpec { name, feature_dim, count });
    }
    let n_rels = r.usize()?;
    let mut headers = Vec::new();
    for _ in 0..n_rels {
        let name = r.string()?;
        let src = r.usize()?;
        let dst = r.usize()?;
        let dim = r.usize()?;
        let edges = r.usize()?;
        if src >= n_types || dst >= n_types {
            return Err(format!("relation `{name}` references node type out of range"));
        }
        headers.push((name, src, dst, dim, edges));
    }
    let mut node_features = Vec::new();
    for t in &node_types {
        let feats = r.f64s(t.count * t.feature_dim)?;
        if feats.iter().any(|v| !v.is_finite()) {
            return Err(format!("non-finite node feature in `{}`", t.name));
        }
        node_features.push(feats);
    }
    let mut edge_features = Vec::new();
    for (name, _, _, dim, edges) in &headers {
        let feats = r.f64s(edges * dim)?;
        if feats.iter().any(|v| !v.is_finite()) {
            return Err(format!("non-finite edge feature in `{name}`"));
        }
        edge_features.push(feats);
    }
    let mut relations = Vec::new();
    for ((name, src, dst, dim, edges), feats) in headers.into_iter().zip(edge_features) {
        let dst_count = node_types[dst].count;
        let offsets = r.usizes(dst_count + 1)?;
        let sources = r.usizes(edges)?;
        let edge_ids = r.usizes(edges)?;
        if offsets[0] != 0 || offsets.windows(2).any(|w| w[0] > w[1]) || offsets[dst_count] != edges {
            return Err(format!("invalid CSR offsets in `{name}`"));
        }
        if sources.iter().any(|&s| s >= node_types[src].count) {
            return Err(format!("source id out of range in `{name}`"));
        }
        let mut seen = vec![false; edges];
        for &e in &edge_ids {
            if e >= edges || std::mem::replace(&mut seen[e], true) {
                return Err(format!("edge ids of `{name}` are not a permutation"));
            }
        }
        relations.push(Relation {
            spec: RelationSpec {
                name,
                src_type: node_types[src].name.clone(),
                dst_type: node_types[dst].name.clone(),
                edge_feature_dim: dim,
            },
            src_type: src,
            dst_type: dst,
            csr: Csr { offsets, sources, edge_ids },
            edge_features: feats,
        });
    }
    let label_type = match r.u64()? {
        u64::MAX => None,
        t if (t as usize) < n_types => Some(t as usize),
        t => return Err(format!("label node type {t} out of range")),
    };
    let n_labels = r.usize()?;
    let mut labels = vec![None; label_type.map_or(0, |t| node_types[t].count)];
    for _ in 0..n_labels {
        let node = r.usize()?;
        let y = r.u8()?;
        let split = Split::from_code(r.u8()?).ok_or("invalid split code")?;
        if node >= labels.len() || y > 1 {
            return Err(format!("invalid label entry for node {node}"));
        }
        labels[node] = Some(Label { y, split });
    }
    if !r.is_empty() {
        return Err("trailing bytes after label table".into());
    }
    Ok(HeteroGraph {
        node_types,
        node_features,
        relations,
        label_type,
        labels,
    })
}

pub fn write_id_map(map: &IdMap, path: &Path) -> Result<(), GraphError> {
    let mut text = serde_json::to_string_pretty(map)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_id_map(path: &Path) -> Result<IdMap, GraphError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
