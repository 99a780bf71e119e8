//! Labeled synthetic interaction graphs with planted spam collusion, and the
//! behavioral statistics used to calibrate them.
//!
//! Spammers are grouped into clusters. A cluster owns a few spam domains, a
//! small IP pool and a content pool. Non-evasive members share the IPs, all
//! members recycle the content and concentrate their interactions on the spam
//! domains, with light camouflage on unpopular benign domains. Benign users
//! spread interactions over Zipf-popular domains and mostly use unique IPs.
//! The generator emits raw interaction records and runs them through
//! [`apply_construction_rules`], so edge features come from behavior.

use crate::graph::{HeteroGraph, LabelTable, Split};
use crate::ingest::{
    apply_construction_rules, stratified_fraction, BuiltGraph, ConstructionRules, EntityKind, FeatureTable,
    IngestError, InteractionRecord, RawLabel, DIU, UE1U, UE2U, UID,
};
use crate::rng::StreamKey;
use rand::distr::weighted::WeightedIndex;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible config: {0}")]
    Infeasible(String),
    #[error("missing relation `{0}`")]
    MissingRelation(String),
    #[error("expected {expected} user labels, got {found}")]
    LabelCount { expected: usize, found: usize },
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_users: usize,
    pub spam_fraction: f64,
    /// Benign domains; spam domains come on top.
    pub n_domains: usize,
    pub n_spam_domain_clusters: usize,
    pub spam_domains_per_cluster: usize,
    pub domain_zipf_exponent: f64,
    pub following_ratio_mean_spam: f64,
    pub following_ratio_mean_nonspam: f64,
    /// Share of benign users whose following ratio looks like a spammer's.
    pub following_ratio_zero_inflation: f64,
    pub nonspam_domains_mean: f64,
    /// Non-spam over spam mean distinct domains.
    pub domains_per_user_ratio: f64,
    pub nonspam_interactions_mean: f64,
    /// Non-spam over spam mean interaction count.
    pub interactions_per_user_ratio: f64,
    /// Mean distinct camouflage domains per spammer.
    pub spam_camouflage_domains: f64,
    /// Share of camouflage domains drawn by popularity rather than from the
    /// unpopular half.
    pub camouflage_popular_fraction: f64,
    pub spam_ip_pool: usize,
    /// Evasive spammers share no IPs or content, use a single spam domain
    /// and add this many camouflage domains on average.
    pub evasive_spam_fraction: f64,
    pub evasive_extra_camouflage: f64,
    pub ip_pair_both_spam: f64,
    pub ip_pair_one_spam: f64,
    pub spam_content_pool: usize,
    pub viral_items: usize,
    pub viral_share_fraction: f64,
    /// Benign users who touch one or two spam domains with one or two
    /// interactions each.
    pub domain_leak_fraction: f64,
    /// Per-dimension class mean shift of the 14 Gaussian user features.
    pub user_feature_shift: f64,
    pub domain_feature_noise: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 10_000,
            spam_fraction: 0.095,
            n_domains: 5000,
            n_spam_domain_clusters: 40,
            spam_domains_per_cluster: 3,
            domain_zipf_exponent: 0.8,
            following_ratio_mean_spam: 0.001,
            following_ratio_mean_nonspam: 0.16,
            following_ratio_zero_inflation: 0.3,
            nonspam_domains_mean: 10.0,
            domains_per_user_ratio: 2.0,
            nonspam_interactions_mean: 40.0,
            interactions_per_user_ratio: 0.5,
            spam_camouflage_domains: 3.0,
            camouflage_popular_fraction: 0.35,
            spam_ip_pool: 3,
            evasive_spam_fraction: 0.35,
            evasive_extra_camouflage: 2.0,
            ip_pair_both_spam: 0.97,
            ip_pair_one_spam: 0.027,
            spam_content_pool: 8,
            viral_items: 300,
            viral_share_fraction: 0.1,
            domain_leak_fraction: 0.4,
            user_feature_shift: 0.55,
            domain_feature_noise: 2.0,
            train_fraction: 0.7,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

pub const USER_FEATURE_DIM: usize = 15;
pub const DOMAIN_FEATURE_DIM: usize = 3;

impl SynthConfig {
    pub fn n_spam(&self) -> usize {
        (self.spam_fraction * self.n_users as f64).round() as usize
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Infeasible(m));
        let fractions = [
            ("spam_fraction", self.spam_fraction),
            ("following_ratio_mean_spam", self.following_ratio_mean_spam),
            ("following_ratio_mean_nonspam", self.following_ratio_mean_nonspam),
            ("following_ratio_zero_inflation", self.following_ratio_zero_inflation),
            ("evasive_spam_fraction", self.evasive_spam_fraction),
            ("camouflage_popular_fraction", self.camouflage_popular_fraction),
            ("ip_pair_both_spam", self.ip_pair_both_spam),
            ("ip_pair_one_spam", self.ip_pair_one_spam),
            ("viral_share_fraction", self.viral_share_fraction),
            ("domain_leak_fraction", self.domain_leak_fraction),
            ("train_fraction", self.train_fraction),
            ("val_fraction", self.val_fraction),
        ];
        for (name, v) in fractions {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} must lie in [0, 1]"));
            }
        }
        if self.ip_pair_both_spam + self.ip_pair_one_spam > 1.0 {
            return bad("ip_pair_both_spam + ip_pair_one_spam exceeds 1".into());
        }
        if self.train_fraction + self.val_fraction > 1.0 {
            return bad("train_fraction + val_fraction exceeds 1".into());
        }
        if self.n_users == 0 || self.n_domains == 0 {
            return bad("n_users and n_domains must be at least 1".into());
        }
        let n_spam = self.n_spam();
        if n_spam > 0 {
            if self.n_spam_domain_clusters == 0 {
                return bad("spammers need at least one cluster".into());
            }
            if self.n_spam_domain_clusters > n_spam {
                return bad(format!(
                    "{} spam clusters exceed the spam population of {n_spam}",
                    self.n_spam_domain_clusters
                ));
            }
            if self.spam_domains_per_cluster == 0 || self.spam_ip_pool == 0 || self.spam_content_pool == 0 {
                return bad("per-cluster domain, IP and content pools must be non-empty".into());
            }
        }
        let following = self.following_ratio_mean_nonspam - self.following_ratio_zero_inflation * self.following_ratio_mean_spam;
        if self.following_ratio_zero_inflation >= 1.0 || following / (1.0 - self.following_ratio_zero_inflation) >= 1.0 {
            return bad("non-spam following ratio mean is unreachable with this zero inflation".into());
        }
        let spam_domains = self.spam_domains_mean();
        let spam_core = spam_domains - self.spam_camouflage_domains;
        if self.nonspam_domains_mean < 1.0 || spam_core < 1.0 || self.spam_camouflage_domains < 0.0 {
            return bad(format!(
                "spam users average {spam_domains:.2} domains, too few for {:.2} camouflage domains plus one spam domain",
                self.spam_camouflage_domains
            ));
        }
        if self.nonspam_interactions_mean < self.nonspam_domains_mean
            || self.spam_interactions_mean() < spam_domains + self.spam_camouflage_domains
        {
            return bad("interaction means must exceed domain means".into());
        }
        if !(self.domain_zipf_exponent >= 0.0 && self.user_feature_shift.is_finite() && self.domain_feature_noise >= 0.0) {
            return bad("zipf exponent, feature shift and noise must be finite and non-negative".into());
        }
        Ok(())
    }

    fn spam_domains_mean(&self) -> f64 {
        self.nonspam_domains_mean / self.domains_per_user_ratio
    }

    fn spam_interactions_mean(&self) -> f64 {
        self.nonspam_interactions_mean / self.interactions_per_user_ratio
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub built: BuiltGraph,
    /// Ground truth for every user, with split assignment.
    pub labels: Vec<RawLabel>,
}

impl SynthOutput {
    pub fn graph(&self) -> &HeteroGraph {
        &self.built.graph
    }
}

/// Poisson draw that tolerates a zero mean.
fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    if mean <= 0.0 {
        0
    } else {
        Poisson::new(mean).expect("positive mean").sample(rng) as usize
    }
}

/// Beta with the given mean and concentration `a + b`.
fn beta_mean(mean: f64, concentration: f64) -> Beta<f64> {
    let mean = mean.clamp(1e-6, 1.0 - 1e-6);
    Beta::new(mean * concentration, (1.0 - mean) * concentration).expect("valid beta")
}

fn user_name(u: usize) -> String {
    format!("u{u:06}")
}

fn domain_name(d: usize) -> String {
    format!("d{d:06}")
}

pub fn generate(config: &SynthConfig) -> Result<SynthOutput, SynthError> {
    config.validate()?;
    let key = StreamKey::new(config.seed);
    let n = config.n_users;
    let n_spam = config.n_spam();
    let n_clusters = if n_spam > 0 { config.n_spam_domain_clusters } else { 0 };
    let n_benign_domains = config.n_domains;
    let n_spam_domains = n_clusters * config.spam_domains_per_cluster;
    let n_domains_total = n_benign_domains + n_spam_domains;

    // class assignment, then clusters and evasiveness among spammers
    let mut rng = key.child(0).rng();
    let mut is_spam = vec![false; n];
    for i in index::sample(&mut rng, n, n_spam) {
        is_spam[i] = true;
    }
    let spammers: Vec<usize> = (0..n).filter(|&u| is_spam[u]).collect();
    let mut cluster_of = vec![usize::MAX; n];
    let mut order = spammers.clone();
    order.shuffle(&mut rng);
    for (i, &u) in order.iter().enumerate() {
        cluster_of[u] = i % n_clusters.max(1);
    }
    let evasive: HashSet<usize> = spammers
        .iter()
        .copied()
        .filter(|_| rng.random::<f64>() < config.evasive_spam_fraction)
        .collect();

    // spam domains are shuffled into the id space so names carry no signal
    let mut domain_perm: Vec<usize> = (0..n_domains_total).collect();
    domain_perm.shuffle(&mut rng);
    let benign_domain = |rank: usize| domain_perm[rank];
    let spam_domain = |c: usize, j: usize| domain_perm[n_benign_domains + c * config.spam_domains_per_cluster + j];

    let mut records = Vec::new();
    let mut push = |u: usize, kind: EntityKind, entity: String, count: u64| {
        records.push(InteractionRecord::new(user_name(u), kind, entity, count));
    };

    // domains
    let zipf = WeightedIndex::new((1..=n_benign_domains).map(|r| (r as f64).powf(-config.domain_zipf_exponent)))
        .expect("non-empty domain set");
    let camouflage_floor = n_benign_domains / 2;
    let benign_per_domain = config.nonspam_interactions_mean / config.nonspam_domains_mean;
    let spam_domains_mean = config.spam_domains_mean();
    let spam_core_mean = spam_domains_mean - config.spam_camouflage_domains;
    let camouflage_count_mean = 2.0;
    let mut rng = key.child(1).rng();
    for u in 0..n {
        if is_spam[u] {
            let c = cluster_of[u];
            let core_total = config.spam_interactions_mean() - config.spam_camouflage_domains * camouflage_count_mean;
            let (k_core, k_cam, per_core) = if evasive.contains(&u) {
                let k_cam = poisson(&mut rng, config.spam_camouflage_domains + config.evasive_extra_camouflage);
                (1, k_cam, core_total.max(1.0))
            } else {
                let k_core = (1 + poisson(&mut rng, spam_core_mean - 1.0)).min(config.spam_domains_per_cluster);
                let k_cam = poisson(&mut rng, config.spam_camouflage_domains);
                (k_core, k_cam, (core_total / spam_core_mean).max(1.0))
            };
            for j in index::sample(&mut rng, config.spam_domains_per_cluster, k_core) {
                let count = 1 + poisson(&mut rng, per_core - 1.0) as u64;
                push(u, EntityKind::Domain, domain_name(spam_domain(c, j)), count);
            }
            let mut camouflage = HashSet::with_capacity(k_cam);
            let tail = n_benign_domains - camouflage_floor;
            while camouflage.len() < k_cam.min(n_benign_domains) {
                let r = if rng.random::<f64>() < config.camouflage_popular_fraction {
                    zipf.sample(&mut rng)
                } else {
                    camouflage_floor + rng.random_range(0..tail)
                };
                camouflage.insert(r);
            }
            let mut camouflage: Vec<usize> = camouflage.into_iter().collect();
            camouflage.sort_unstable();
            for r in camouflage {
                let count = 1 + poisson(&mut rng, camouflage_count_mean - 1.0) as u64;
                push(u, EntityKind::Domain, domain_name(benign_domain(r)), count);
            }
        } else {
            let k = (1 + poisson(&mut rng, config.nonspam_domains_mean - 1.0)).min(n_benign_domains);
            let mut chosen = HashSet::with_capacity(k);
            while chosen.len() < k {
                chosen.insert(zipf.sample(&mut rng));
            }
            let mut chosen: Vec<usize> = chosen.into_iter().collect();
            chosen.sort_unstable();
            for r in chosen {
                let count = 1 + poisson(&mut rng, benign_per_domain - 1.0) as u64;
                push(u, EntityKind::Domain, domain_name(benign_domain(r)), count);
            }
            if n_spam_domains > 0 && rng.random::<f64>() < config.domain_leak_fraction {
                let k = rng.random_range(1..=2).min(n_spam_domains);
                for d in index::sample(&mut rng, n_spam_domains, k) {
                    push(u, EntityKind::Domain, domain_name(domain_perm[n_benign_domains + d]), rng.random_range(1..=2));
                }
            }
        }
    }

    // IPs
    let mut rng = key.child(2).rng();
    let mut ip_members: Vec<Vec<usize>> = Vec::new();
    let new_ip = |members: Vec<usize>, ips: &mut Vec<Vec<usize>>| {
        ips.push(members);
        ips.len() - 1
    };
    let mut pairs: HashSet<(usize, usize)> = HashSet::new();
    let mut class_pairs = [0usize; 3]; // both spam, one spam, neither
    let add_member = |ip: usize, u: usize, members: &mut Vec<Vec<usize>>, pairs: &mut HashSet<(usize, usize)>, cp: &mut [usize; 3]| {
        for &v in &members[ip] {
            if v != u && pairs.insert((u.min(v), u.max(v))) {
                cp[2 - (is_spam[u] as usize + is_spam[v] as usize)] += 1;
            }
        }
        members[ip].push(u);
    };
    let cluster_ips: Vec<Vec<usize>> = (0..n_clusters)
        .map(|_| (0..config.spam_ip_pool).map(|_| new_ip(Vec::new(), &mut ip_members)).collect())
        .collect();
    for u in 0..n {
        if is_spam[u] && !evasive.contains(&u) {
            let pool = &cluster_ips[cluster_of[u]];
            let k = rng.random_range(1..=2.min(pool.len()));
            for j in index::sample(&mut rng, pool.len(), k) {
                add_member(pool[j], u, &mut ip_members, &mut pairs, &mut class_pairs);
            }
        } else {
            for _ in 0..rng.random_range(1..=2) {
                new_ip(vec![u], &mut ip_members);
            }
        }
    }
    let spam_ips: Vec<usize> = cluster_ips.iter().flatten().copied().filter(|&ip| ip_members[ip].len() >= 2).collect();
    if class_pairs[0] > 0 && config.ip_pair_both_spam > 0.0 {
        let total = class_pairs[0] as f64 / config.ip_pair_both_spam;
        let target_one = (total * config.ip_pair_one_spam).round() as usize;
        let target_neither = (total * (1.0 - config.ip_pair_both_spam - config.ip_pair_one_spam)).round() as usize;
        let benign: Vec<usize> = (0..n).filter(|&u| !is_spam[u]).collect();
        // each leak puts one benign user on a spam IP no benign user holds yet
        let mut leak_order = spam_ips.clone();
        leak_order.shuffle(&mut rng);
        for ip in leak_order {
            if class_pairs[1] >= target_one {
                break;
            }
            let b = benign[rng.random_range(0..benign.len())];
            add_member(ip, b, &mut ip_members, &mut pairs, &mut class_pairs);
        }
        while class_pairs[2] < target_neither && benign.len() >= 2 {
            let pick = index::sample(&mut rng, benign.len(), 2);
            let ip = new_ip(Vec::new(), &mut ip_members);
            add_member(ip, benign[pick.index(0)], &mut ip_members, &mut pairs, &mut class_pairs);
            add_member(ip, benign[pick.index(1)], &mut ip_members, &mut pairs, &mut class_pairs);
        }
    }
    for (ip, members) in ip_members.iter().enumerate() {
        for &u in members {
            push(u, EntityKind::Ip, format!("ip{ip:07}"), 1);
        }
    }

    // content
    let mut rng = key.child(3).rng();
    let mut item = 0usize;
    let cluster_content: Vec<usize> = (0..n_clusters).map(|c| c * config.spam_content_pool).collect();
    let unique_base = n_clusters * config.spam_content_pool + config.viral_items;
    for u in 0..n {
        let mut post = |name: String, rng: &mut ChaCha8Rng| {
            push(u, EntityKind::Content, name, rng.random_range(1..=3));
        };
        if is_spam[u] {
            let pool = config.spam_content_pool;
            let k = if evasive.contains(&u) { 0 } else { rng.random_range(2..=3.min(pool).max(2)).min(pool) };
            for j in index::sample(&mut rng, pool, k) {
                post(format!("c{:07}", cluster_content[cluster_of[u]] + j), &mut rng);
            }
            let own = if evasive.contains(&u) { rng.random_range(1..=2) } else { rng.random_range(0..=1) };
            for _ in 0..own {
                post(format!("c{:07}", unique_base + item), &mut rng);
                item += 1;
            }
        } else {
            for _ in 0..rng.random_range(1..=3) {
                post(format!("c{:07}", unique_base + item), &mut rng);
                item += 1;
            }
            if config.viral_items > 0 && rng.random::<f64>() < config.viral_share_fraction {
                let v = rng.random_range(0..config.viral_items);
                post(format!("c{:07}", n_clusters * config.spam_content_pool + v), &mut rng);
            }
        }
    }

    // node features
    let mut rng = key.child(4).rng();
    let spam_follow = beta_mean(config.following_ratio_mean_spam, 500.0);
    let z = config.following_ratio_zero_inflation;
    let benign_active_mean = (config.following_ratio_mean_nonspam - z * config.following_ratio_mean_spam) / (1.0 - z);
    let benign_follow = beta_mean(benign_active_mean, 10.0);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut user_values = Vec::with_capacity(n * USER_FEATURE_DIM);
    for &spam in is_spam.iter() {
        let follow = if spam || rng.random::<f64>() < z {
            spam_follow.sample(&mut rng)
        } else {
            benign_follow.sample(&mut rng)
        };
        user_values.push(follow);
        let shift = if spam { config.user_feature_shift } else { 0.0 };
        for _ in 1..USER_FEATURE_DIM {
            user_values.push(shift + unit.sample(&mut rng));
        }
    }
    let mut domain_values = vec![0.0; n_domains_total * DOMAIN_FEATURE_DIM];
    let mut spam_flag = vec![false; n_domains_total];
    for c in 0..n_clusters {
        for j in 0..config.spam_domains_per_cluster {
            spam_flag[spam_domain(c, j)] = true;
        }
    }
    for d in 0..n_domains_total {
        let row = &mut domain_values[d * DOMAIN_FEATURE_DIM..(d + 1) * DOMAIN_FEATURE_DIM];
        row[0] = spam_flag[d] as u8 as f64 + config.domain_feature_noise * unit.sample(&mut rng);
        for v in &mut row[1..] {
            *v = unit.sample(&mut rng);
        }
    }
    let users = FeatureTable::new((0..n).map(user_name).collect(), USER_FEATURE_DIM, user_values)?;
    let domains = FeatureTable::new((0..n_domains_total).map(domain_name).collect(), DOMAIN_FEATURE_DIM, domain_values)?;

    // labels with stratified train / val / test
    let items: Vec<(usize, u8)> = (0..n).map(|u| (u, is_spam[u] as u8)).collect();
    let train = stratified_fraction(&items, config.train_fraction, key.child(5));
    let rest: Vec<(usize, u8)> = items.iter().copied().filter(|&(u, _)| !train[u]).collect();
    let val_share = if config.train_fraction < 1.0 {
        config.val_fraction / (1.0 - config.train_fraction)
    } else {
        0.0
    };
    let val_marks = stratified_fraction(&rest, val_share.min(1.0), key.child(6));
    let mut split = vec![Split::Train; n];
    for (&(u, _), v) in rest.iter().zip(val_marks) {
        split[u] = if v { Split::Val } else { Split::Test };
    }
    let labels: Vec<RawLabel> = (0..n)
        .map(|u| RawLabel {
            id: user_name(u),
            y: is_spam[u] as u8,
            split: Some(split[u]),
        })
        .collect();

    let rules = ConstructionRules {
        min_user_domain_interactions: 1,
        max_domain_user_count: n.max(10_000),
        min_user_total_domain_interactions: 1,
        ip_share_min: 1,
        content_share_min: 1,
        max_entity_users: 1000,
    };
    let built = apply_construction_rules(&records, &users, &domains, &labels, &rules)?;
    Ok(SynthOutput { built, labels })
}

/// Behavioral statistics measured by exact counting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorStats {
    pub n_spam: usize,
    pub n_nonspam: usize,
    /// Column 0 of the user features, when present.
    pub following_ratio_mean_spam: Option<f64>,
    pub following_ratio_mean_nonspam: Option<f64>,
    pub ip_edges: usize,
    pub ip_pair_both_spam: Option<f64>,
    pub ip_pair_one_spam: Option<f64>,
    pub ip_pair_neither: Option<f64>,
    pub domains_per_user_spam: Option<f64>,
    pub domains_per_user_nonspam: Option<f64>,
    /// Non-spam over spam.
    pub domains_per_user_ratio: Option<f64>,
    pub interactions_per_user_spam: Option<f64>,
    pub interactions_per_user_nonspam: Option<f64>,
    pub interactions_per_user_ratio: Option<f64>,
    /// Mean spam fraction among users sharing a domain, spam over non-spam.
    pub spam_neighbor_fraction_spam: Option<f64>,
    pub spam_neighbor_fraction_nonspam: Option<f64>,
    pub spam_neighbor_ratio: Option<f64>,
    pub content_jaccard_both_spam: Option<f64>,
    pub content_jaccard_one_spam: Option<f64>,
    pub content_jaccard_neither: Option<f64>,
}

fn mean(sum: f64, n: usize) -> Option<f64> {
    (n > 0).then(|| sum / n as f64)
}

fn ratio(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    }
}

/// `labels[u]` is the class of user node `u` (node type 0).
pub fn measure_stats(graph: &HeteroGraph, labels: &[u8]) -> Result<BehaviorStats, SynthError> {
    let rel = |name: &str| graph.relation(name).map_err(|_| SynthError::MissingRelation(name.into()));
    let uid = rel(UID)?;
    rel(DIU)?;
    let ip = rel(UE1U)?;
    let content = rel(UE2U)?;
    let n = graph.node_count(uid.src_type);
    if labels.len() != n {
        return Err(SynthError::LabelCount {
            expected: n,
            found: labels.len(),
        });
    }
    let spam = |u: usize| labels[u] == 1;
    let n_spam = labels.iter().filter(|&&y| y == 1).count();
    let n_nonspam = n - n_spam;

    let (following_ratio_mean_spam, following_ratio_mean_nonspam) = if graph.node_types()[uid.src_type].feature_dim > 0 {
        let mut s = [0.0; 2];
        for u in 0..n {
            s[spam(u) as usize] += graph.node_feature(uid.src_type, u)[0];
        }
        (mean(s[1], n_spam), mean(s[0], n_nonspam))
    } else {
        (None, None)
    };

    let pair_classes = |r: &crate::graph::Relation, feature: Option<usize>| {
        let mut counts = [0usize; 3];
        let mut sums = [0.0; 3];
        for (e, (a, b)) in r.endpoints().into_iter().enumerate() {
            if a < b {
                let k = 2 - (spam(a) as usize + spam(b) as usize);
                counts[k] += 1;
                if let Some(f) = feature {
                    sums[k] += r.edge_feature(e)[f];
                }
            }
        }
        (counts, sums)
    };
    let (ip_counts, _) = pair_classes(ip, None);
    let ip_total: usize = ip_counts.iter().sum();
    let ip_p = |k: usize| mean(ip_counts[k] as f64, ip_total);
    let jaccard_col = (content.spec.edge_feature_dim >= 2).then_some(1);
    let (c_counts, c_sums) = pair_classes(content, jaccard_col);
    let cj = |k: usize| jaccard_col.and_then(|_| mean(c_sums[k], c_counts[k]));

    let mut deg = vec![0usize; n];
    let mut inter = vec![0.0; n];
    for (e, (u, _)) in uid.endpoints().into_iter().enumerate() {
        deg[u] += 1;
        if uid.spec.edge_feature_dim > 0 {
            inter[u] += uid.edge_feature(e)[0];
        }
    }
    let mut dsum = [0.0; 2];
    let mut isum = [0.0; 2];
    for u in 0..n {
        dsum[spam(u) as usize] += deg[u] as f64;
        isum[spam(u) as usize] += inter[u];
    }
    let dom_spam = mean(dsum[1], n_spam);
    let dom_non = mean(dsum[0], n_nonspam);
    let (int_spam, int_non) = if uid.spec.edge_feature_dim > 0 {
        (mean(isum[1], n_spam), mean(isum[0], n_nonspam))
    } else {
        (None, None)
    };

    // 1-hop user neighborhoods through shared domains
    let n_dom = graph.node_count(uid.dst_type);
    let mut users_of: Vec<Vec<usize>> = vec![Vec::new(); n_dom];
    for (u, d) in uid.endpoints() {
        users_of[d].push(u);
    }
    let mut domains_of: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (d, us) in users_of.iter().enumerate() {
        for &u in us {
            domains_of[u].push(d);
        }
    }
    let mut stamp = vec![usize::MAX; n];
    let mut frac_sum = [0.0; 2];
    let mut frac_n = [0usize; 2];
    for u in 0..n {
        stamp[u] = u;
        let (mut total, mut spam_nb) = (0usize, 0usize);
        for &d in &domains_of[u] {
            for &v in &users_of[d] {
                if stamp[v] != u {
                    stamp[v] = u;
                    total += 1;
                    spam_nb += spam(v) as usize;
                }
            }
        }
        if total > 0 {
            let c = spam(u) as usize;
            frac_sum[c] += spam_nb as f64 / total as f64;
            frac_n[c] += 1;
        }
    }
    let nb_spam = mean(frac_sum[1], frac_n[1]);
    let nb_non = mean(frac_sum[0], frac_n[0]);

    Ok(BehaviorStats {
        n_spam,
        n_nonspam,
        following_ratio_mean_spam,
        following_ratio_mean_nonspam,
        ip_edges: ip_total,
        ip_pair_both_spam: ip_p(0),
        ip_pair_one_spam: ip_p(1),
        ip_pair_neither: ip_p(2),
        domains_per_user_spam: dom_spam,
        domains_per_user_nonspam: dom_non,
        domains_per_user_ratio: ratio(dom_non, dom_spam),
        interactions_per_user_spam: int_spam,
        interactions_per_user_nonspam: int_non,
        interactions_per_user_ratio: ratio(int_non, int_spam),
        spam_neighbor_fraction_spam: nb_spam,
        spam_neighbor_fraction_nonspam: nb_non,
        spam_neighbor_ratio: ratio(nb_spam, nb_non),
        content_jaccard_both_spam: cj(0),
        content_jaccard_one_spam: cj(1),
        content_jaccard_neither: cj(2),
    })
}

/// Labels of every user node from the graph's label table; unlabeled users
/// count as non-spam.
pub fn user_labels(graph: &HeteroGraph) -> Vec<u8> {
    let n = graph.node_count(0);
    let mut out = vec![0u8; n];
    if let Some(LabelTable { entries, .. }) = graph.label_table() {
        for (v, l) in entries {
            out[v] = l.y;
        }
    }
    out
}
