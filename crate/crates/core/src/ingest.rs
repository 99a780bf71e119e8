//! Raw interaction logs to [`HeteroGraph`].
//!
//! Filtering order: over-popular domains are dropped first, user totals are
//! recomputed over the remaining domains, under-active users are dropped, and
//! only then are user-domain edges thresholded.

use crate::graph::{
    GraphBuilder, GraphError, HeteroGraph, IdMap, Label, LabelTable, NodeTypeSpec, RelationSpec, Split,
};
use crate::rng::StreamKey;
use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const USER: &str = "user";
pub const DOMAIN: &str = "domain";
pub const UID: &str = "U-I-D";
pub const DIU: &str = "D-I-U";
pub const UE1U: &str = "U-E1-U";
pub const UE2U: &str = "U-E2-U";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: u64, message: String },
    #[error("record references unknown user `{0}`")]
    UnknownUser(String),
    #[error("record references unknown domain `{0}`")]
    UnknownDomain(String),
    #[error("label for nonexistent user `{0}`")]
    LabelForUnknownUser(String),
    #[error("duplicate id `{id}` in {what}")]
    DuplicateId { what: String, id: String },
    #[error("record {0} has no timestamp")]
    MissingTimestamp(usize),
    #[error("domain records disagree on extra field count ({expected} vs {found})")]
    ExtraWidth { expected: usize, found: usize },
    #[error("invalid value: {0}")]
    Invalid(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntityKind {
    Domain,
    Ip,
    Content,
}

impl std::str::FromStr for EntityKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "domain" => Ok(EntityKind::Domain),
            "ip" => Ok(EntityKind::Ip),
            "content" => Ok(EntityKind::Content),
            other => Err(format!("unknown entity kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord {
    pub user_id: String,
    pub kind: EntityKind,
    pub entity_id: String,
    pub count: u64,
    pub timestamp: Option<i64>,
    /// Pass-through numeric fields; summed per (user, domain) and appended
    /// to the user-domain edge features.
    pub extra: Vec<f64>,
}

impl InteractionRecord {
    pub fn new(user_id: impl Into<String>, kind: EntityKind, entity_id: impl Into<String>, count: u64) -> Self {
        Self {
            user_id: user_id.into(),
            kind,
            entity_id: entity_id.into(),
            count,
            timestamp: None,
            extra: Vec::new(),
        }
    }

    fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.user_id
            .cmp(&other.user_id)
            .then(self.kind.cmp(&other.kind))
            .then(self.entity_id.cmp(&other.entity_id))
            .then(self.count.cmp(&other.count))
            .then(self.timestamp.cmp(&other.timestamp))
            .then_with(|| {
                for (a, b) in self.extra.iter().zip(&other.extra) {
                    match a.total_cmp(b) {
                        Ordering::Equal => {}
                        o => return o,
                    }
                }
                self.extra.len().cmp(&other.extra.len())
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstructionRules {
    pub min_user_domain_interactions: u64,
    pub max_domain_user_count: usize,
    pub min_user_total_domain_interactions: u64,
    pub ip_share_min: usize,
    pub content_share_min: usize,
    /// IPs or content items with more users than this are skipped when
    /// generating user-user pairs.
    pub max_entity_users: usize,
}

impl Default for ConstructionRules {
    fn default() -> Self {
        Self {
            min_user_domain_interactions: 10,
            max_domain_user_count: 10_000,
            min_user_total_domain_interactions: 10,
            ip_share_min: 1,
            content_share_min: 1,
            max_entity_users: 1000,
        }
    }
}

/// Numeric node features keyed by external id, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub ids: Vec<String>,
    pub dim: usize,
    /// Row-major `ids.len() x dim`.
    pub values: Vec<f64>,
}

impl FeatureTable {
    pub fn new(ids: Vec<String>, dim: usize, values: Vec<f64>) -> Result<Self, IngestError> {
        if values.len() != ids.len() * dim {
            return Err(IngestError::Invalid(format!(
                "feature table has {} values for {} rows of width {dim}",
                values.len(),
                ids.len()
            )));
        }
        Ok(Self { ids, dim, values })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    fn index(&self, what: &str) -> Result<HashMap<&str, usize>, IngestError> {
        let mut map = HashMap::with_capacity(self.ids.len());
        for (i, id) in self.ids.iter().enumerate() {
            if map.insert(id.as_str(), i).is_some() {
                return Err(IngestError::DuplicateId {
                    what: what.to_string(),
                    id: id.clone(),
                });
            }
        }
        Ok(map)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawLabel {
    pub id: String,
    pub y: u8,
    /// Defaults to train when absent.
    pub split: Option<Split>,
}

/// A built graph together with the external ids of its nodes.
#[derive(Debug, Clone)]
pub struct BuiltGraph {
    pub graph: HeteroGraph,
    pub ids: IdMap,
}

pub fn apply_construction_rules(
    records: &[InteractionRecord],
    user_features: &FeatureTable,
    domain_features: &FeatureTable,
    labels: &[RawLabel],
    rules: &ConstructionRules,
) -> Result<BuiltGraph, IngestError> {
    let user_index = user_features.index("user features")?;
    let domain_index = domain_features.index("domain features")?;
    let n_users = user_features.ids.len();
    let n_domains = domain_features.ids.len();

    let mut sorted: Vec<&InteractionRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.canonical_cmp(b));

    // (user, domain) -> (count, summed extras); other kinds -> per-user entity ids
    let mut extra_width: Option<usize> = None;
    let mut pair_counts: BTreeMap<(usize, usize), (u64, Vec<f64>)> = BTreeMap::new();
    let mut shared: [Vec<(usize, &str)>; 2] = [Vec::new(), Vec::new()];
    for rec in &sorted {
        if rec.count == 0 {
            return Err(IngestError::Invalid(format!(
                "record for user `{}` and {} `{}` has count 0",
                rec.user_id,
                kind_name(rec.kind),
                rec.entity_id
            )));
        }
        let u = *user_index
            .get(rec.user_id.as_str())
            .ok_or_else(|| IngestError::UnknownUser(rec.user_id.clone()))?;
        match rec.kind {
            EntityKind::Domain => {
                let d = *domain_index
                    .get(rec.entity_id.as_str())
                    .ok_or_else(|| IngestError::UnknownDomain(rec.entity_id.clone()))?;
                let width = *extra_width.get_or_insert(rec.extra.len());
                if width != rec.extra.len() {
                    return Err(IngestError::ExtraWidth {
                        expected: width,
                        found: rec.extra.len(),
                    });
                }
                let slot = pair_counts.entry((u, d)).or_insert_with(|| (0, vec![0.0; width]));
                slot.0 += rec.count;
                for (acc, x) in slot.1.iter_mut().zip(&rec.extra) {
                    *acc += x;
                }
            }
            EntityKind::Ip => shared[0].push((u, rec.entity_id.as_str())),
            EntityKind::Content => shared[1].push((u, rec.entity_id.as_str())),
        }
    }
    let extra_width = extra_width.unwrap_or(0);

    let mut domain_users = vec![0usize; n_domains];
    for &(_, d) in pair_counts.keys() {
        domain_users[d] += 1;
    }
    let domain_kept: Vec<bool> = domain_users.iter().map(|&c| c <= rules.max_domain_user_count).collect();
    let dropped_domains = domain_kept.iter().filter(|k| !**k).count();
    if dropped_domains > 0 {
        info!("dropped {dropped_domains} domains with more than {} users", rules.max_domain_user_count);
    }

    let mut user_totals = vec![0u64; n_users];
    for (&(u, d), (c, _)) in &pair_counts {
        if domain_kept[d] {
            user_totals[u] += c;
        }
    }
    let user_kept: Vec<bool> = user_totals
        .iter()
        .map(|&t| t >= rules.min_user_total_domain_interactions)
        .collect();

    let (user_new, user_ids) = remap(&user_kept, &user_features.ids);
    let (domain_new, domain_ids) = remap(&domain_kept, &domain_features.ids);

    let mut uid_edges = Vec::new();
    let mut uid_raw: Vec<(u64, &[f64])> = Vec::new();
    let mut retained_total = vec![0u64; user_ids.len()];
    for (&(u, d), (c, extra)) in &pair_counts {
        if user_kept[u] && domain_kept[d] && *c >= rules.min_user_domain_interactions {
            uid_edges.push((user_new[u], domain_new[d]));
            uid_raw.push((*c, extra));
            retained_total[user_new[u]] += c;
        }
    }
    let mut uid_feats = Vec::with_capacity(uid_edges.len() * (2 + extra_width));
    for (&(c, extra), &(u, _)) in uid_raw.iter().zip(&uid_edges) {
        uid_feats.push(c as f64);
        uid_feats.push(c as f64 / retained_total[u] as f64);
        uid_feats.extend_from_slice(extra);
    }

    let pair_relation = |entries: &[(usize, &str)], share_min: usize, what: &str| {
        let kept: Vec<(usize, &str)> = entries
            .iter()
            .filter(|(u, _)| user_kept[*u])
            .map(|&(u, e)| (user_new[u], e))
            .collect();
        user_pairs(&kept, share_min, rules.max_entity_users, what)
    };
    let (ue1u_edges, ue1u_feats) = pair_relation(&shared[0], rules.ip_share_min, "IP");
    let (ue2u_edges, ue2u_feats) = pair_relation(&shared[1], rules.content_share_min, "content");

    let user_feats: Vec<f64> = (0..n_users)
        .filter(|&u| user_kept[u])
        .flat_map(|u| user_features.row(u).iter().copied())
        .collect();
    let domain_feats: Vec<f64> = (0..n_domains)
        .filter(|&d| domain_kept[d])
        .flat_map(|d| domain_features.row(d).iter().copied())
        .collect();

    let mut label_entries = Vec::new();
    for l in labels {
        let u = *user_index
            .get(l.id.as_str())
            .ok_or_else(|| IngestError::LabelForUnknownUser(l.id.clone()))?;
        if user_kept[u] {
            label_entries.push((user_new[u], Label { y: l.y, split: l.split.unwrap_or(Split::Train) }));
        }
    }
    label_entries.sort_by_key(|e| e.0);

    let graph = GraphBuilder::new()
        .node_type(NodeTypeSpec::new(USER, user_features.dim, user_ids.len()), user_feats)
        .node_type(NodeTypeSpec::new(DOMAIN, domain_features.dim, domain_ids.len()), domain_feats)
        .relation(RelationSpec::new(UID, USER, DOMAIN, 2 + extra_width))
        .relation(RelationSpec::new(UE1U, USER, USER, 2))
        .relation(RelationSpec::new(UE2U, USER, USER, 2))
        .edges(UID, uid_edges, uid_feats)
        .edges(UE1U, ue1u_edges, ue1u_feats)
        .edges(UE2U, ue2u_edges, ue2u_feats)
        .labels(LabelTable {
            node_type: USER.into(),
            entries: label_entries,
        })
        .build()?
        .reverse_relation(UID, DIU)?;

    let mut ids = IdMap::new();
    ids.insert(USER.into(), user_ids);
    ids.insert(DOMAIN.into(), domain_ids);
    Ok(BuiltGraph { graph, ids })
}

fn kind_name(kind: EntityKind) -> &'static str {
    match kind {
        EntityKind::Domain => "domain",
        EntityKind::Ip => "ip",
        EntityKind::Content => "content",
    }
}

fn remap(kept: &[bool], ids: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut new_ids = vec![usize::MAX; kept.len()];
    let mut names = Vec::new();
    for (i, &k) in kept.iter().enumerate() {
        if k {
            new_ids[i] = names.len();
            names.push(ids[i].clone());
        }
    }
    (new_ids, names)
}

/// Symmetric user-user edges from `(user, entity)` memberships. A pair is
/// linked when it shares at least `share_min` entities; features are
/// `[shared count, Jaccard]` over the users' non-hub entity sets.
fn user_pairs(
    memberships: &[(usize, &str)],
    share_min: usize,
    max_entity_users: usize,
    what: &str,
) -> (Vec<(usize, usize)>, Vec<f64>) {
    let mut by_entity: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &(u, e) in memberships {
        by_entity.entry(e).or_default().push(u);
    }
    let mut set_size: HashMap<usize, usize> = HashMap::new();
    let mut pair_shared: HashMap<(usize, usize), usize> = HashMap::new();
    let mut skipped = 0usize;
    for (entity, users) in &mut by_entity {
        users.sort_unstable();
        users.dedup();
        if users.len() > max_entity_users {
            skipped += 1;
            warn!("skipping {what} `{entity}` shared by {} users", users.len());
            continue;
        }
        for &u in users.iter() {
            *set_size.entry(u).or_default() += 1;
        }
        for i in 0..users.len() {
            for j in i + 1..users.len() {
                *pair_shared.entry((users[i], users[j])).or_default() += 1;
            }
        }
    }
    if skipped > 0 {
        info!("skipped {skipped} {what} entities above {max_entity_users} users");
    }
    let mut pairs: Vec<((usize, usize), usize)> = pair_shared
        .into_iter()
        .filter(|&(_, s)| s >= share_min.max(1))
        .collect();
    pairs.sort_unstable();
    let mut edges = Vec::with_capacity(pairs.len() * 2);
    let mut feats = Vec::with_capacity(pairs.len() * 4);
    for ((a, b), s) in pairs {
        let union = set_size[&a] + set_size[&b] - s;
        let jaccard = s as f64 / union as f64;
        edges.push((a, b));
        feats.extend_from_slice(&[s as f64, jaccard]);
        edges.push((b, a));
        feats.extend_from_slice(&[s as f64, jaccard]);
    }
    (edges, feats)
}

/// Splits records into those strictly before `boundary` and those at or
/// after it. Both halves come back in canonical order.
pub fn time_split(
    records: &[InteractionRecord],
    boundary: i64,
) -> Result<(Vec<InteractionRecord>, Vec<InteractionRecord>), IngestError> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let t = r.timestamp.ok_or(IngestError::MissingTimestamp(i))?;
        if t < boundary {
            train.push(r.clone());
        } else {
            test.push(r.clone());
        }
    }
    train.sort_by(|a, b| a.canonical_cmp(b));
    test.sort_by(|a, b| a.canonical_cmp(b));
    if test.is_empty() {
        warn!("time split at {boundary} leaves the test window empty");
    }
    Ok((train, test))
}

fn tsv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>, IngestError> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .flexible(true)
        .from_reader(file))
}

fn parse_err(path: &Path, record: &csv::StringRecord, message: impl Into<String>) -> IngestError {
    IngestError::Parse {
        file: path.display().to_string(),
        line: record.position().map_or(0, |p| p.line()),
        message: message.into(),
    }
}

fn parse_f64(path: &Path, rec: &csv::StringRecord, field: &str, what: &str) -> Result<f64, IngestError> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_err(path, rec, format!("{what}: `{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(path, rec, format!("{what}: non-finite value")));
    }
    Ok(v)
}

/// Columns: `user_id kind entity_id count [timestamp] [extra...]`. An empty
/// timestamp field means none.
pub fn read_records(path: &Path) -> Result<Vec<InteractionRecord>, IngestError> {
    let mut out = Vec::new();
    for row in tsv_reader(path)?.records() {
        let rec = row?;
        if rec.len() < 4 {
            return Err(parse_err(path, &rec, format!("expected at least 4 columns, found {}", rec.len())));
        }
        let kind = rec[1].parse().map_err(|e: String| parse_err(path, &rec, e))?;
        let count: u64 = rec[3]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, &rec, format!("count `{}` is not a positive integer", &rec[3])))?;
        if count == 0 {
            return Err(parse_err(path, &rec, "count must be at least 1"));
        }
        let timestamp = match rec.get(4).map(str::trim) {
            None | Some("") => None,
            Some(t) => Some(
                t.parse()
                    .map_err(|_| parse_err(path, &rec, format!("timestamp `{t}` is not an integer")))?,
            ),
        };
        let extra = (5..rec.len())
            .map(|i| parse_f64(path, &rec, &rec[i], "extra field"))
            .collect::<Result<_, _>>()?;
        out.push(InteractionRecord {
            user_id: rec[0].to_string(),
            kind,
            entity_id: rec[2].to_string(),
            count,
            timestamp,
            extra,
        });
    }
    Ok(out)
}

/// Columns: `id feature...`; the header fixes the width.
pub fn read_feature_table(path: &Path) -> Result<FeatureTable, IngestError> {
    let mut reader = tsv_reader(path)?;
    let dim = reader.headers()?.len().saturating_sub(1);
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for row in reader.records() {
        let rec = row?;
        if rec.len() != dim + 1 {
            return Err(parse_err(path, &rec, format!("expected {} columns, found {}", dim + 1, rec.len())));
        }
        ids.push(rec[0].to_string());
        for i in 1..=dim {
            values.push(parse_f64(path, &rec, &rec[i], "feature")?);
        }
    }
    FeatureTable::new(ids, dim, values)
}

/// Columns: `id label [split]`.
pub fn read_labels(path: &Path) -> Result<Vec<RawLabel>, IngestError> {
    let mut out = Vec::new();
    for row in tsv_reader(path)?.records() {
        let rec = row?;
        if rec.len() < 2 {
            return Err(parse_err(path, &rec, "expected `id label [split]`"));
        }
        let y = match rec[1].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(parse_err(path, &rec, format!("label `{other}` must be 0 or 1"))),
        };
        let split = match rec.get(2).map(str::trim) {
            None | Some("") => None,
            Some(s) => Some(s.parse().map_err(|e: String| parse_err(path, &rec, e))?),
        };
        out.push(RawLabel {
            id: rec[0].to_string(),
            y,
            split,
        });
    }
    Ok(out)
}

pub fn write_labels(labels: &[RawLabel], path: &Path) -> Result<(), IngestError> {
    let mut text = String::from("id\tlabel\tsplit\n");
    for l in labels {
        text.push_str(&format!("{}\t{}\t{}\n", l.id, l.y, l.split.unwrap_or(Split::Train).as_str()));
    }
    std::fs::write(path, text).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a whitespace-separated `src dst` edge list (no header). Blank lines
/// and lines starting with `#` are ignored.
pub fn read_edge_list(path: &Path, node_count: usize) -> Result<Vec<(usize, usize)>, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| IngestError::Parse {
            file: path.display().to_string(),
            line: i as u64 + 1,
            message,
        };
        let mut parts = line.split_whitespace();
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(err(format!("expected `src dst`, found `{line}`")));
        };
        let parse = |s: &str| -> Result<usize, IngestError> {
            let v: usize = s.parse().map_err(|_| err(format!("`{s}` is not a node id")))?;
            if v >= node_count {
                return Err(err(format!("node id {v} out of range (node count {node_count})")));
            }
            Ok(v)
        };
        edges.push((parse(a)?, parse(b)?));
    }
    Ok(edges)
}

/// Sources for a single-node-type graph stored as plain edge lists.
#[derive(Debug, Clone)]
pub struct EdgeListInputs {
    pub node_count: usize,
    /// `(relation name, edge list path)`.
    pub relations: Vec<(String, PathBuf)>,
    pub labels: PathBuf,
    pub features: PathBuf,
    pub train_fraction: f64,
    pub seed: u64,
}

/// Builds a user-only graph with feature-less relations. Node ids in every
/// file are integers in `[0, node_count)`. Exactly `floor(train_fraction *
/// labeled)` nodes go to train, stratified by class; the rest go to test.
pub fn load_relation_edge_lists(inputs: &EdgeListInputs) -> Result<HeteroGraph, IngestError> {
    let n = inputs.node_count;
    if !(0.0..=1.0).contains(&inputs.train_fraction) {
        return Err(IngestError::Invalid(format!(
            "train fraction {} outside [0, 1]",
            inputs.train_fraction
        )));
    }
    let table = read_feature_table(&inputs.features)?;
    let parse_id = |id: &str, what: &str| -> Result<usize, IngestError> {
        match id.trim().parse::<usize>() {
            Ok(v) if v < n => Ok(v),
            _ => Err(IngestError::Invalid(format!("{what} id `{id}` is not in [0, {n})"))),
        }
    };
    let mut features = vec![f64::NAN; n * table.dim];
    let mut seen = vec![false; n];
    for (i, id) in table.ids.iter().enumerate() {
        let v = parse_id(id, "feature")?;
        if std::mem::replace(&mut seen[v], true) {
            return Err(IngestError::DuplicateId { what: "features".into(), id: id.clone() });
        }
        features[v * table.dim..(v + 1) * table.dim].copy_from_slice(table.row(i));
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(IngestError::Invalid(format!("node {missing} has no feature row")));
    }

    let raw = read_labels(&inputs.labels)?;
    let mut labeled: Vec<(usize, u8)> = Vec::with_capacity(raw.len());
    for l in &raw {
        labeled.push((parse_id(&l.id, "label")?, l.y));
    }
    labeled.sort_unstable();
    let splits = stratified_fraction(&labeled, inputs.train_fraction, StreamKey::new(inputs.seed));
    let entries = labeled
        .iter()
        .zip(splits)
        .map(|(&(v, y), train)| (v, Label { y, split: if train { Split::Train } else { Split::Test } }))
        .collect();

    let mut builder = GraphBuilder::new().node_type(NodeTypeSpec::new(USER, table.dim, n), features);
    for (name, path) in &inputs.relations {
        let edges = read_edge_list(path, n)?;
        builder = builder.relation(RelationSpec::new(name, USER, USER, 0)).edges(name, edges, Vec::new());
    }
    Ok(builder
        .labels(LabelTable {
            node_type: USER.into(),
            entries,
        })
        .build()?)
}

/// Marks exactly `floor(fraction * len)` entries, stratified by label: each
/// class gets the floor of its share and the leftover slots go to the classes
/// with the largest fractional remainders.
pub fn stratified_fraction(items: &[(usize, u8)], fraction: f64, key: StreamKey) -> Vec<bool> {
    let total = (fraction * items.len() as f64).floor() as usize;
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &(_, y)) in items.iter().enumerate() {
        by_class[(y == 1) as usize].push(i);
    }
    let exact: Vec<f64> = by_class.iter().map(|c| fraction * c.len() as f64).collect();
    let mut take: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order = [0usize, 1];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let mut left = total - take.iter().sum::<usize>();
    for &c in order.iter().cycle().take(4) {
        if left == 0 {
            break;
        }
        if take[c] < by_class[c].len() {
            take[c] += 1;
            left -= 1;
        }
    }
    let mut marked = vec![false; items.len()];
    for (c, members) in by_class.iter_mut().enumerate() {
        let mut rng = key.derive(&[c as u64]).rng();
        members.shuffle(&mut rng);
        for &i in &members[..take[c]] {
            marked[i] = true;
        }
    }
    marked
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(prefix: &str, n: usize, dim: usize) -> FeatureTable {
        let ids = (0..n).map(|i| format!("{prefix}{i}")).collect();
        let values = (0..n * dim).map(|i| i as f64 * 0.5).collect();
        FeatureTable::new(ids, dim, values).unwrap()
    }

    fn rules(min_edge: u64, min_total: u64) -> ConstructionRules {
        ConstructionRules {
            min_user_domain_interactions: min_edge,
            min_user_total_domain_interactions: min_total,
            ..Default::default()
        }
    }

    #[test]
    fn below_threshold_interaction_has_no_edge() {
        let recs = vec![
            InteractionRecord::new("u0", EntityKind::Domain, "d0", 9),
            InteractionRecord::new("u0", EntityKind::Domain, "d1", 12),
        ];
        let g = apply_construction_rules(&recs, &table("u", 1, 2), &table("d", 2, 1), &[], &rules(10, 10))
            .unwrap()
            .graph;
        let uid = g.relation(UID).unwrap();
        assert_eq!(uid.endpoints(), vec![(0, 1)]);
        // proportion over retained edges
        assert_eq!(uid.edge_feature(0), &[12.0, 1.0]);
        assert_eq!(g.relation(DIU).unwrap().endpoints(), vec![(1, 0)]);
    }

    #[test]
    fn one_shared_ip_gives_two_directed_edges_and_jaccard() {
        let mut recs = vec![
            InteractionRecord::new("u0", EntityKind::Ip, "a", 1),
            InteractionRecord::new("u0", EntityKind::Ip, "b", 1),
            InteractionRecord::new("u1", EntityKind::Ip, "b", 1),
            InteractionRecord::new("u1", EntityKind::Ip, "c", 1),
        ];
        for u in ["u0", "u1"] {
            recs.push(InteractionRecord::new(u, EntityKind::Domain, "d0", 1));
        }
        let g = apply_construction_rules(&recs, &table("u", 2, 1), &table("d", 1, 1), &[], &rules(1, 1))
            .unwrap()
            .graph;
        let ip = g.relation(UE1U).unwrap();
        assert_eq!(ip.endpoints(), vec![(0, 1), (1, 0)]);
        assert_eq!(ip.edge_feature(0), &[1.0, 1.0 / 3.0]);
        assert_eq!(g.relation(UE2U).unwrap().num_edges(), 0);
    }

    #[test]
    fn popular_domains_dropped_before_user_totals() {
        // u0's only large interaction is with d0, which 3 users touch
        let recs = vec![
            InteractionRecord::new("u0", EntityKind::Domain, "d0", 50),
            InteractionRecord::new("u0", EntityKind::Domain, "d1", 3),
            InteractionRecord::new("u1", EntityKind::Domain, "d0", 1),
            InteractionRecord::new("u1", EntityKind::Domain, "d1", 20),
            InteractionRecord::new("u2", EntityKind::Domain, "d0", 1),
        ];
        let r = ConstructionRules {
            max_domain_user_count: 2,
            ..rules(1, 10)
        };
        let b = apply_construction_rules(&recs, &table("u", 3, 1), &table("d", 2, 1), &[], &r).unwrap();
        assert_eq!(b.ids[USER], vec!["u1"]);
        assert_eq!(b.ids[DOMAIN], vec!["d1"]);
        assert_eq!(b.graph.relation(UID).unwrap().endpoints(), vec![(0, 0)]);
    }

    #[test]
    fn errors_on_unknown_ids() {
        let recs = vec![InteractionRecord::new("ghost", EntityKind::Domain, "d0", 1)];
        assert!(matches!(
            apply_construction_rules(&recs, &table("u", 1, 1), &table("d", 1, 1), &[], &rules(1, 1)),
            Err(IngestError::UnknownUser(_))
        ));
        let recs = vec![InteractionRecord::new("u0", EntityKind::Domain, "nope", 1)];
        assert!(matches!(
            apply_construction_rules(&recs, &table("u", 1, 1), &table("d", 1, 1), &[], &rules(1, 1)),
            Err(IngestError::UnknownDomain(_))
        ));
        let labels = vec![RawLabel { id: "u9".into(), y: 1, split: None }];
        assert!(matches!(
            apply_construction_rules(&[], &table("u", 1, 1), &table("d", 1, 1), &labels, &rules(0, 0)),
            Err(IngestError::LabelForUnknownUser(_))
        ));
    }

    #[test]
    fn hub_entities_are_skipped() {
        let mut recs = Vec::new();
        for u in 0..5 {
            recs.push(InteractionRecord::new(format!("u{u}"), EntityKind::Ip, "hub", 1));
            recs.push(InteractionRecord::new(format!("u{u}"), EntityKind::Domain, "d0", 1));
        }
        recs.push(InteractionRecord::new("u0", EntityKind::Ip, "x", 1));
        recs.push(InteractionRecord::new("u1", EntityKind::Ip, "x", 1));
        let r = ConstructionRules {
            max_entity_users: 4,
            ..rules(1, 1)
        };
        let g = apply_construction_rules(&recs, &table("u", 5, 1), &table("d", 1, 1), &[], &r).unwrap().graph;
        let ip = g.relation(UE1U).unwrap();
        assert_eq!(ip.endpoints(), vec![(0, 1), (1, 0)]);
        assert_eq!(ip.edge_feature(0), &[1.0, 1.0]);
    }

    #[test]
    fn time_split_partitions() {
        let mk = |t| InteractionRecord {
            timestamp: Some(t),
            ..InteractionRecord::new("u", EntityKind::Domain, "d", 1)
        };
        let (train, test) = time_split(&[mk(3), mk(1), mk(2)], 3).unwrap();
        assert_eq!(train.iter().map(|r| r.timestamp.unwrap()).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(test.len(), 1);
        let (train, test) = time_split(&[mk(1), mk(2)], 10).unwrap();
        assert_eq!((train.len(), test.len()), (2, 0));
        assert!(matches!(
            time_split(&[InteractionRecord::new("u", EntityKind::Ip, "i", 1)], 0),
            Err(IngestError::MissingTimestamp(0))
        ));
    }

    #[test]
    fn stratified_fraction_exact_count() {
        let items: Vec<(usize, u8)> = (0..11_944).map(|i| (i, (i % 10 == 0) as u8)).collect();
        let marked = stratified_fraction(&items, 0.4, StreamKey::new(7));
        assert_eq!(marked.iter().filter(|m| **m).count(), 4777);
        let pos = items.iter().zip(&marked).filter(|(it, m)| it.1 == 1 && **m).count();
        let n_pos = items.iter().filter(|it| it.1 == 1).count();
        assert!((pos as f64 - 0.4 * n_pos as f64).abs() <= 1.0);
        assert_eq!(marked, stratified_fraction(&items, 0.4, StreamKey::new(7)));
    }
}
