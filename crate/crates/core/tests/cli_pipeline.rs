use seine::cli::{run_with_env, EXIT_DATA};
use serde_json::Value;
use std::path::Path;
use std::process::Command;

fn run(args: &[&str]) -> (i32, Value) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_with_env(std::iter::once("seine").chain(args.iter().copied()), None, &mut out, &mut err);
    let text = String::from_utf8(out).unwrap();
    assert_eq!(code, 0, "{args:?}: {}", String::from_utf8_lossy(&err));
    (code, serde_json::from_str(&text).expect("one JSON document"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SYNTH_CFG: &str = "\
# small graph for a fast pipeline
n_users = 800
n_domains = 400
n_spam_domain_clusters = 8
viral_items = 20
seed = 5
";

const TRAIN_ARGS: &[&str] = &[
    "--embed_dim", "16", "--max_steps", "30", "--batch_size", "128", "--eval_every", "10", "--learning_rate", "0.003",
];

/// synth, train, eval, score and embed in one directory.
fn pipeline(dir: &Path) -> Vec<Value> {
    let cfg = dir.join("default.cfg");
    std::fs::write(&cfg, SYNTH_CFG).unwrap();
    let g = dir.join("g.seineg");
    let ck = dir.join("ckpt");
    let mut docs = Vec::new();
    docs.push(run(&["synth", "--config", p(&cfg), "--out", p(&g)]).1);
    let mut train = vec!["train", "--graph", p(&g), "--out", p(&ck)];
    train.extend_from_slice(TRAIN_ARGS);
    docs.push(run(&train).1);
    docs.push(run(&["eval", "--graph", p(&g), "--ckpt", p(&ck)]).1);
    docs.push(run(&["score", "--graph", p(&g), "--ckpt", p(&ck), "--out", p(&dir.join("s.tsv"))]).1);
    docs.push(run(&["embed", "--graph", p(&g), "--ckpt", p(&ck), "--out", p(&dir.join("e.tsv"))]).1);
    docs.push(run(&["inspect", "--graph", p(&g)]).1);
    docs
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let docs = pipeline(dir.path());
    let synth = &docs[0];
    assert_eq!(synth["configured"]["n_users"], 800);
    assert!(synth["measured"]["ip_pair_both_spam"].as_f64().unwrap() > 0.5);

    let eval = &docs[2];
    for k in ["recall_at_fpr1", "auroc_trunc_fpr1", "auroc_full"] {
        let v = eval[k].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{k} = {v}");
    }
    assert_eq!(eval["n_pos"].as_u64().unwrap() + eval["n_neg"].as_u64().unwrap(), 160);

    let scores = std::fs::read_to_string(dir.path().join("s.tsv")).unwrap();
    let rows: Vec<&str> = scores.lines().collect();
    assert_eq!(rows.len(), docs[3]["rows"].as_u64().unwrap() as usize);
    let ids: Vec<String> = serde_json::from_str::<Value>(&std::fs::read_to_string(dir.path().join("g.seineg.ids.json")).unwrap())
        .unwrap()["user"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    for (row, id) in rows.iter().zip(&ids) {
        let (name, prob) = row.split_once('\t').unwrap();
        assert_eq!(name, id);
        let prob: f64 = prob.parse().unwrap();
        assert!((0.0..=1.0).contains(&prob));
    }
    let emb = std::fs::read_to_string(dir.path().join("e.tsv")).unwrap();
    assert!(emb.lines().all(|l| l.split('\t').count() == 17));

    let relations: Vec<&str> = docs[5]["relations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["name"].as_str().unwrap())
        .collect();
    assert_eq!(relations, ["U-I-D", "U-E1-U", "U-E2-U", "D-I-U"]);

    let history = std::fs::read_to_string(dir.path().join("ckpt.history.jsonl")).unwrap();
    assert!(history.lines().all(|l| serde_json::from_str::<Value>(l).is_ok()));
    assert_eq!(history.lines().filter(|l| l.contains("\"step\"") && l.contains("\"loss\"")).count(), 30);
}

#[test]
fn identical_inputs_give_identical_outputs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (da, db) = (pipeline(a.path()), pipeline(b.path()));
    let strip = |docs: Vec<Value>, dir: &Path| -> String {
        serde_json::to_string(&docs).unwrap().replace(p(dir), "DIR")
    };
    assert_eq!(strip(da, a.path()), strip(db, b.path()));
    for f in ["g.seineg", "g.seineg.ids.json", "g.seineg.labels.tsv", "ckpt", "ckpt.history.jsonl", "s.tsv", "e.tsv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn build_graph_from_tsv_and_edge_lists() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("rec.tsv"),
        "user_id\tkind\tentity_id\tcount\n\
         a\tdomain\tx.com\t12\nb\tdomain\tx.com\t15\nc\tdomain\ty.com\t30\n\
         a\tip\t1.1.1.1\t1\nb\tip\t1.1.1.1\t1\nc\tcontent\tp1\t1\na\tcontent\tp1\t1\n",
    )
    .unwrap();
    std::fs::write(d.join("uf.tsv"), "id\tf0\tf1\na\t0.1\t1\nb\t0.2\t0\nc\t0.3\t1\n").unwrap();
    std::fs::write(d.join("df.tsv"), "id\tg0\nx.com\t1\ny.com\t2\n").unwrap();
    std::fs::write(d.join("lab.tsv"), "id\tlabel\tsplit\na\t1\ttrain\nb\t0\ttest\n").unwrap();
    let g = d.join("g");
    let (_, doc) = run(&[
        "build-graph", "--records", p(&d.join("rec.tsv")), "--user_features", p(&d.join("uf.tsv")),
        "--domain_features", p(&d.join("df.tsv")), "--labels", p(&d.join("lab.tsv")), "--out", p(&g),
    ]);
    let edges: Vec<u64> = doc["summary"]["relations"].as_array().unwrap().iter().map(|r| r["edges"].as_u64().unwrap()).collect();
    assert_eq!(edges, [3, 2, 2, 3]);
    let (_, doc) = run(&[
        "build-graph", "--records", p(&d.join("rec.tsv")), "--user_features", p(&d.join("uf.tsv")),
        "--domain_features", p(&d.join("df.tsv")), "--out", p(&g), "--min_user_domain_interactions", "13",
    ]);
    let edges: Vec<u64> = doc["summary"]["relations"].as_array().unwrap().iter().map(|r| r["edges"].as_u64().unwrap()).collect();
    assert_eq!(edges[0], 2);

    std::fs::write(d.join("r1.txt"), "0 1\n1 2\n# comment\n2 3\n").unwrap();
    std::fs::write(d.join("nf.tsv"), "id\tf\n0\t1\n1\t2\n2\t3\n3\t4\n").unwrap();
    std::fs::write(d.join("nl.tsv"), "id\tlabel\n0\t1\n1\t0\n2\t1\n3\t0\n").unwrap();
    let (_, doc) = run(&[
        "build-graph", "--edge_list", &format!("R-U-R={}", p(&d.join("r1.txt"))), "--node_count", "4",
        "--features", p(&d.join("nf.tsv")), "--labels", p(&d.join("nl.tsv")), "--train_fraction", "0.5", "--out", p(&g),
    ]);
    assert_eq!(doc["summary"]["relations"][0]["edges"], 3);

    std::fs::write(d.join("bad.txt"), "0 1\n1 9\n").unwrap();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let bad = format!("R={}", p(&d.join("bad.txt")));
    let (nf, nl) = (d.join("nf.tsv"), d.join("nl.tsv"));
    let args = [
        "seine", "build-graph", "--edge_list", &bad, "--node_count", "4",
        "--features", p(&nf), "--labels", p(&nl), "--out", p(&g),
    ];
    assert_eq!(run_with_env(args, None, &mut out, &mut err), EXIT_DATA);
    assert!(String::from_utf8(err).unwrap().contains(":2"));
}

#[test]
fn binary_keeps_logs_off_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    let out = Command::new(env!("CARGO_BIN_EXE_seine"))
        .args(["synth", "--n_users", "300", "--n_domains", "200", "--n_spam_domain_clusters", "4", "--out", p(&g)])
        .env("RUST_LOG", "info")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let _: Value = serde_json::from_slice(&out.stdout).expect("stdout is exactly one JSON document");

    let out = Command::new(env!("CARGO_BIN_EXE_seine"))
        .args(["train", "--graph", p(&g), "--out", "x", "--learning_rate", "not_a_number"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));

    let out = Command::new(env!("CARGO_BIN_EXE_seine"))
        .args(["synth", "--out", p(&g), "--n_users", "10", "--n_domains", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
