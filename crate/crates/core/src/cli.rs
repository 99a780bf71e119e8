//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data or validation
//! error, 3 runtime failure. Each command prints one JSON document on stdout.

use crate::config::{self, Assignment, ConfigError};
use crate::graph::format::{read_graph, read_id_map, write_graph, write_id_map, IdMap};
use crate::graph::{GraphError, HeteroGraph, Split};
use crate::ingest::{self, ConstructionRules, EdgeListInputs, IngestError};
use crate::model::{read_checkpoint, write_checkpoint, ModelError, ModelParams};
use crate::synth::{self, SynthConfig, SynthError};
use crate::train::{self, TrainConfig, TrainError};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(m: impl ToString) -> Self {
        Self { code: EXIT_USAGE, message: m.to_string() }
    }
    fn data(m: impl ToString) -> Self {
        Self { code: EXIT_DATA, message: m.to_string() }
    }
    fn runtime(m: impl ToString) -> Self {
        Self { code: EXIT_RUNTIME, message: m.to_string() }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::usage(e)
    }
}
impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::data(e)
    }
}
impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::data(e)
    }
}
impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::data(e)
    }
}
impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::data(e)
    }
}
impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } => CliError::runtime(e),
            TrainError::InvalidConfig(_) => CliError::usage(e),
            _ => CliError::data(e),
        }
    }
}

/// Declares a flag group with one optional typed flag per config key.
macro_rules! config_flags {
    ($name:ident { $($field:ident : $ty:ty => $help:literal),* $(,)? }) => {
        #[derive(Debug, Args, Default)]
        pub struct $name {
            $(
                #[arg(long = stringify!($field), help = $help, help_heading = "Config keys")]
                pub $field: Option<$ty>,
            )*
        }

        impl $name {
            fn assignments(&self) -> Vec<Assignment> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        out.push(Assignment::new(stringify!($field), v.to_string(), concat!("--", stringify!($field))));
                    }
                )*
                out
            }
        }
    };
}

config_flags!(TrainFlags {
    embed_dim: usize => "Embedding width",
    num_layers: usize => "Number of convolution layers",
    batch_size: usize => "Seed nodes per step",
    learning_rate: f64 => "Adam step size",
    l2_weight: f64 => "L2 penalty on weight matrices",
    fanout: usize => "Sampled in-neighbors per relation per layer",
    max_steps: usize => "Optimizer step budget",
    eval_every: usize => "Steps between validation passes",
    patience: usize => "Stale validation passes before stopping",
    seed: u64 => "Seed for all randomness",
    adam_beta1: f64 => "Adam first-moment decay",
    adam_beta2: f64 => "Adam second-moment decay",
    adam_eps: f64 => "Adam denominator epsilon",
    norm_position: String => "post_activation, pre_activation or none",
    norm_last_layer: bool => "Normalize the last layer's output",
    edge_mlp_hidden: usize => "Hidden width of the edge-weight network",
    val_fraction: f64 => "Share of train labels held out when the graph has no val split",
});

config_flags!(SynthFlags {
    n_users: usize => "Number of users",
    spam_fraction: f64 => "Share of users labeled spam",
    n_domains: usize => "Number of domains",
    n_spam_domain_clusters: usize => "Spam campaigns",
    spam_domains_per_cluster: usize => "Domains per campaign",
    domain_zipf_exponent: f64 => "Popularity skew of benign domains",
    following_ratio_mean_spam: f64 => "Mean following ratio of spam users",
    following_ratio_mean_nonspam: f64 => "Mean following ratio of benign users",
    following_ratio_zero_inflation: f64 => "Share of benign users with a spam-like following ratio",
    nonspam_domains_mean: f64 => "Mean distinct domains per benign user",
    domains_per_user_ratio: f64 => "Benign over spam distinct domains per user",
    nonspam_interactions_mean: f64 => "Mean interactions per benign user",
    interactions_per_user_ratio: f64 => "Benign over spam interactions per user",
    spam_camouflage_domains: f64 => "Mean popular domains visited by spam users",
    camouflage_popular_fraction: f64 => "Share of camouflage drawn by popularity",
    spam_ip_pool: usize => "IP addresses per campaign",
    evasive_spam_fraction: f64 => "Share of spam users sharing no IP or content",
    evasive_extra_camouflage: f64 => "Extra camouflage domains for evasive spam users",
    ip_pair_both_spam: f64 => "Target share of IP pairs with two spam users",
    ip_pair_one_spam: f64 => "Target share of IP pairs with one spam user",
    spam_content_pool: usize => "Recycled content items per campaign",
    viral_items: usize => "Widely shared benign content items",
    viral_share_fraction: f64 => "Share of benign users posting a viral item",
    domain_leak_fraction: f64 => "Share of benign users touching spam domains",
    user_feature_shift: f64 => "Class mean shift of generic user features",
    domain_feature_noise: f64 => "Noise scale of domain features",
    train_fraction: f64 => "Train share of labels",
    val_fraction: f64 => "Validation share of labels",
    seed: u64 => "Seed for all randomness",
});

config_flags!(RuleFlags {
    min_user_domain_interactions: u64 => "Minimum interactions for a user-domain edge",
    max_domain_user_count: usize => "Drop domains with more distinct users",
    min_user_total_domain_interactions: u64 => "Drop users with fewer domain interactions",
    ip_share_min: usize => "Shared IPs needed for a user-user edge",
    content_share_min: usize => "Shared content items needed for a user-user edge",
    max_entity_users: usize => "Skip IPs or content shared by more users",
});

#[derive(Debug, Parser)]
#[command(name = "seine", version, about = "Spam detection with edge-attributed relational graph convolution")]
struct Cli {
    /// Worker threads for sampling and inference
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labeled synthetic graph
    Synth(SynthArgs),
    /// Build a graph from interaction logs or relation edge lists
    BuildGraph(BuildArgs),
    /// Print node and edge counts
    Inspect(InspectArgs),
    /// Train a model and write a checkpoint
    Train(TrainArgs),
    /// Report metrics on a labeled split
    Eval(EvalArgs),
    /// Write spam probabilities as TSV
    Score(InferArgs),
    /// Write final-layer embeddings as TSV
    Embed(InferArgs),
}

#[derive(Debug, Args)]
#[command(rename_all = "snake_case")]
struct SynthArgs {
    /// Key-value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output graph path
    #[arg(long)]
    out: PathBuf,
    /// Label TSV path [default: <out>.labels.tsv]
    #[arg(long)]
    labels: Option<PathBuf>,
    #[command(flatten)]
    keys: SynthFlags,
}

#[derive(Debug, Args)]
#[command(rename_all = "snake_case")]
struct BuildArgs {
    /// Key-value config file with construction-rule keys
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output graph path
    #[arg(long)]
    out: PathBuf,
    /// Interaction records TSV
    #[arg(long, conflicts_with = "edge_list")]
    records: Option<PathBuf>,
    /// User feature TSV
    #[arg(long, requires = "records")]
    user_features: Option<PathBuf>,
    /// Domain feature TSV
    #[arg(long, requires = "records")]
    domain_features: Option<PathBuf>,
    /// Keep only records with timestamp below this value
    #[arg(long, requires = "records")]
    before: Option<i64>,
    /// Relation edge list as NAME=PATH, repeatable
    #[arg(long, value_parser = parse_named_path)]
    edge_list: Vec<(String, PathBuf)>,
    /// Node count for edge-list input
    #[arg(long, requires = "edge_list")]
    node_count: Option<usize>,
    /// Node feature TSV for edge-list input
    #[arg(long, requires = "edge_list")]
    features: Option<PathBuf>,
    /// Train share of labels for edge-list input
    #[arg(long, default_value_t = 0.4)]
    train_fraction: f64,
    /// Seed for the edge-list train split
    #[arg(long)]
    seed: Option<u64>,
    /// Label TSV
    #[arg(long)]
    labels: Option<PathBuf>,
    #[command(flatten)]
    keys: RuleFlags,
}

#[derive(Debug, Args)]
#[command(rename_all = "snake_case")]
struct InspectArgs {
    #[arg(long)]
    graph: PathBuf,
}

#[derive(Debug, Args)]
#[command(rename_all = "snake_case")]
struct TrainArgs {
    /// Key-value config file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    graph: PathBuf,
    /// Checkpoint path
    #[arg(long)]
    out: PathBuf,
    /// History JSONL path [default: <out>.history.jsonl]
    #[arg(long)]
    history: Option<PathBuf>,
    #[command(flatten)]
    keys: TrainFlags,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
#[command(rename_all = "snake_case")]
struct EvalArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Include ROC points in the report
    #[arg(long)]
    roc: bool,
}

#[derive(Debug, Args)]
#[command(rename_all = "snake_case")]
struct InferArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Output TSV, one row per node, no header
    #[arg(long)]
    out: PathBuf,
    /// File of node ids to include, one per line [default: every node]
    #[arg(long)]
    nodes: Option<PathBuf>,
}

fn parse_named_path(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((n, p)) if !n.is_empty() && !p.is_empty() => Ok((n.to_string(), PathBuf::from(p))),
        _ => Err(format!("expected NAME=PATH, got `{s}`")),
    }
}

/// Runs one command. `SEINE_SEED` is read from the environment.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let env_seed = std::env::var("SEINE_SEED").ok();
    run_with_env(args, env_seed.as_deref(), stdout, stderr)
}

/// Like [`run`], with the fallback seed passed explicitly.
pub fn run_with_env<I, T>(args: I, env_seed: Option<&str>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers.max(1))
        .build()
        .map_err(CliError::runtime)
        .and_then(|pool| pool.install(|| dispatch(cli.command, env_seed)));
    match result.and_then(|doc| emit(stdout, &doc)) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message);
            e.code
        }
    }
}

fn emit(stdout: &mut dyn Write, doc: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(doc).map_err(CliError::runtime)?;
    writeln!(stdout, "{text}").map_err(CliError::runtime)
}

fn dispatch(command: Command, env_seed: Option<&str>) -> Result<serde_json::Value, CliError> {
    match command {
        Command::Synth(a) => cmd_synth(a, env_seed),
        Command::BuildGraph(a) => cmd_build(a, env_seed),
        Command::Inspect(a) => to_json(&load_graph(&a.graph)?.summarize()),
        Command::Train(a) => cmd_train(a, env_seed),
        Command::Eval(a) => cmd_eval(a),
        Command::Score(a) => cmd_infer(a, false),
        Command::Embed(a) => cmd_infer(a, true),
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<serde_json::Value, CliError> {
    serde_json::to_value(v).map_err(CliError::runtime)
}

fn with_env_seed(env_seed: Option<&str>, overrides: Vec<Assignment>) -> Vec<Assignment> {
    let mut all: Vec<Assignment> = env_seed
        .map(|s| Assignment::new("seed", s.trim(), "SEINE_SEED"))
        .into_iter()
        .collect();
    all.extend(overrides);
    all
}

/// Defaults, then `SEINE_SEED`, then the file, then flags.
fn resolve<T>(file: Option<&Path>, env_seed: Option<&str>, flags: Vec<Assignment>) -> Result<T, CliError>
where
    T: Default + Serialize + serde::de::DeserializeOwned,
{
    let mut all = with_env_seed(env_seed, Vec::new());
    if let Some(p) = file {
        all.extend(config::read_assignments(p)?);
    }
    all.extend(flags);
    Ok(config::apply(&T::default(), &all)?)
}

pub fn id_map_path(graph: &Path) -> PathBuf {
    let mut s = graph.as_os_str().to_owned();
    s.push(".ids.json");
    PathBuf::from(s)
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn load_graph(path: &Path) -> Result<HeteroGraph, CliError> {
    Ok(read_graph(&mut open(path)?)?)
}

fn save_graph(graph: &HeteroGraph, ids: Option<&IdMap>, path: &Path) -> Result<(), CliError> {
    let mut w = create(path)?;
    write_graph(graph, &mut w).map_err(CliError::runtime)?;
    finish(w, path)?;
    if let Some(ids) = ids {
        write_id_map(ids, &id_map_path(path)).map_err(CliError::runtime)?;
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<ModelParams, CliError> {
    Ok(read_checkpoint(&mut open(path)?)?)
}

fn cmd_synth(a: SynthArgs, env_seed: Option<&str>) -> Result<serde_json::Value, CliError> {
    let config: SynthConfig = resolve(a.config.as_deref(), env_seed, a.keys.assignments())?;
    let out = synth::generate(&config)?;
    let labels_path = a.labels.unwrap_or_else(|| suffixed(&a.out, ".labels.tsv"));
    save_graph(out.graph(), Some(&out.built.ids), &a.out)?;
    ingest::write_labels(&out.labels, &labels_path).map_err(CliError::runtime)?;
    let measured = synth::measure_stats(out.graph(), &synth::user_labels(out.graph()))?;
    Ok(serde_json::json!({
        "graph": a.out,
        "labels": labels_path,
        "ids": id_map_path(&a.out),
        "configured": config,
        "measured": measured,
        "summary": out.graph().summarize(),
    }))
}

fn cmd_build(a: BuildArgs, env_seed: Option<&str>) -> Result<serde_json::Value, CliError> {
    if let Some(records) = &a.records {
        let (Some(uf), Some(df)) = (&a.user_features, &a.domain_features) else {
            return Err(CliError::usage("--records needs --user_features and --domain_features"));
        };
        let rules: ConstructionRules = resolve(a.config.as_deref(), None, a.keys.assignments())?;
        let mut recs = ingest::read_records(records)?;
        if let Some(boundary) = a.before {
            recs = ingest::time_split(&recs, boundary)?.0;
        }
        let users = ingest::read_feature_table(uf)?;
        let domains = ingest::read_feature_table(df)?;
        let labels = match &a.labels {
            Some(p) => ingest::read_labels(p)?,
            None => Vec::new(),
        };
        let built = ingest::apply_construction_rules(&recs, &users, &domains, &labels, &rules)?;
        save_graph(&built.graph, Some(&built.ids), &a.out)?;
        return Ok(serde_json::json!({ "graph": a.out, "rules": rules, "summary": built.graph.summarize() }));
    }
    if a.edge_list.is_empty() {
        return Err(CliError::usage("build-graph needs --records or at least one --edge_list"));
    }
    let (Some(node_count), Some(features), Some(labels)) = (a.node_count, &a.features, &a.labels) else {
        return Err(CliError::usage("--edge_list needs --node_count, --features and --labels"));
    };
    let seed = match (a.seed, env_seed) {
        (Some(s), _) => s,
        (None, Some(s)) => s
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("SEINE_SEED `{s}` is not an integer")))?,
        (None, None) => 0,
    };
    let graph = ingest::load_relation_edge_lists(&EdgeListInputs {
        node_count,
        relations: a.edge_list.clone(),
        labels: labels.clone(),
        features: features.clone(),
        train_fraction: a.train_fraction,
        seed,
    })?;
    save_graph(&graph, None, &a.out)?;
    Ok(serde_json::json!({ "graph": a.out, "summary": graph.summarize() }))
}

fn cmd_train(a: TrainArgs, env_seed: Option<&str>) -> Result<serde_json::Value, CliError> {
    let config: TrainConfig = resolve(a.config.as_deref(), env_seed, a.keys.assignments())?;
    let graph = load_graph(&a.graph)?;
    let (params, history) = train::train(&graph, &config)?;
    let history_path = a.history.unwrap_or_else(|| suffixed(&a.out, ".history.jsonl"));
    let mut w = create(&a.out)?;
    write_checkpoint(&params, &mut w).map_err(CliError::runtime)?;
    finish(w, &a.out)?;
    let mut w = create(&history_path)?;
    w.write_all(history.to_jsonl().as_bytes())
        .map_err(|e| CliError::runtime(format!("{}: {e}", history_path.display())))?;
    finish(w, &history_path)?;
    let best = history
        .records
        .iter()
        .rev()
        .find(|r| matches!(r, train::HistoryRecord::Best { .. }));
    Ok(serde_json::json!({
        "checkpoint": a.out,
        "history": history_path,
        "steps": history.losses().len(),
        "evaluations": history.evaluations(),
        "best_step": history.best_step,
        "best": best,
        "config": config,
    }))
}

fn cmd_eval(a: EvalArgs) -> Result<serde_json::Value, CliError> {
    let graph = load_graph(&a.graph)?;
    let params = load_model(&a.ckpt)?;
    if !a.roc {
        return to_json(&train::evaluate(&graph, &params, a.split.into())?);
    }
    let (nodes, labels) = train::split_nodes(&graph, a.split.into())?;
    let scores = train::score(&graph, &params, &nodes)?;
    let report = crate::metrics::MetricsReport::compute(&scores, &labels)
        .and_then(|r| r.with_roc_points(&scores, &labels))
        .map_err(CliError::data)?;
    to_json(&report)
}

fn cmd_infer(a: InferArgs, embeddings: bool) -> Result<serde_json::Value, CliError> {
    let graph = load_graph(&a.graph)?;
    let params = load_model(&a.ckpt)?;
    let node_type = graph
        .label_type()
        .ok_or_else(|| CliError::data(TrainError::Unlabeled))?;
    let type_name = graph.node_types()[node_type].name.clone();
    let count = graph.node_count(node_type);
    let sidecar = id_map_path(&a.graph);
    let names: Option<Vec<String>> = if sidecar.exists() {
        let mut map = read_id_map(&sidecar)?;
        map.remove(&type_name)
    } else {
        None
    };
    if let Some(n) = &names {
        if n.len() != count {
            return Err(CliError::data(format!(
                "{}: {} ids for {count} `{type_name}` nodes",
                sidecar.display(),
                n.len()
            )));
        }
    }
    let nodes = match &a.nodes {
        None => (0..count).collect(),
        Some(p) => read_node_list(p, names.as_deref(), count)?,
    };
    let mut w = create(&a.out)?;
    let label = |v: usize| names.as_ref().map_or_else(|| v.to_string(), |n| n[v].clone());
    let io = |e: std::io::Error| CliError::runtime(format!("{}: {e}", a.out.display()));
    let width = if embeddings {
        let emb = train::embed(&graph, &params, &nodes)?;
        for (i, &v) in nodes.iter().enumerate() {
            let row: Vec<String> = emb.row(i).iter().map(|x| x.to_string()).collect();
            writeln!(w, "{}\t{}", label(v), row.join("\t")).map_err(io)?;
        }
        emb.ncols()
    } else {
        let probs = train::score(&graph, &params, &nodes)?;
        for (&v, p) in nodes.iter().zip(&probs) {
            writeln!(w, "{}\t{p}", label(v)).map_err(io)?;
        }
        1
    };
    finish(w, &a.out)?;
    Ok(serde_json::json!({
        "out": a.out,
        "node_type": type_name,
        "rows": nodes.len(),
        "columns": width,
    }))
}

/// Ids are matched against the sidecar when present, else read as indices.
fn read_node_list(path: &Path, names: Option<&[String]>, count: usize) -> Result<Vec<usize>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let index: Option<std::collections::HashMap<&str, usize>> =
        names.map(|n| n.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect());
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let id = line.trim();
        if id.is_empty() {
            continue;
        }
        let bad = || CliError::data(format!("{}:{}: unknown node `{id}`", path.display(), i + 1));
        let v = match &index {
            Some(m) => *m.get(id).ok_or_else(bad)?,
            None => id.parse::<usize>().ok().filter(|&v| v < count).ok_or_else(bad)?,
        };
        out.push(v);
    }
    Ok(out)
}
