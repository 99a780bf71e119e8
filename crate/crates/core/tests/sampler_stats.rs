use seine::graph::{GraphBuilder, HeteroGraph, NodeTypeSpec, RelationSpec};
use seine::rng::StreamKey;
use seine::sampler::sample_blocks;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const DEGREE: usize = 100;
const FANOUT: usize = 50;
const RESAMPLES: u64 = 10_000;

/// Three destinations: two with `DEGREE` private in-neighbors, one with 30.
fn star_graph() -> (HeteroGraph, Vec<usize>) {
    let dsts = vec![0, 1, 2];
    let mut edges = Vec::new();
    let mut next = 3;
    for (&d, deg) in dsts.iter().zip([DEGREE, DEGREE, 30]) {
        for _ in 0..deg {
            edges.push((next, d));
            next += 1;
        }
    }
    let g = GraphBuilder::new()
        .node_type(NodeTypeSpec::new("user", 1, next), vec![0.0; next])
        .relation(RelationSpec::new("R", "user", "user", 0))
        .edges("R", edges, Vec::new())
        .build()
        .unwrap();
    (g, dsts)
}

#[test]
fn inclusion_counts_are_uniform() {
    let (g, dsts) = star_graph();
    let mut counts = vec![0u64; g.node_count(0)];
    let root = StreamKey::new(42);
    for i in 0..RESAMPLES {
        let set = sample_blocks(&g, 0, &dsts, &[FANOUT], root.derive(&[i])).unwrap();
        let e = &set.blocks[0].edges[0];
        let mut per_dst = [0usize; 3];
        let mut seen = std::collections::HashSet::new();
        for &id in &e.edge_ids {
            assert!(seen.insert(id), "edge sampled twice");
        }
        for (&s, &d) in e.src.iter().zip(&e.dst) {
            let gs = set.blocks[0].src_nodes[0][s];
            let gd = set.blocks[0].dst_nodes[0][d];
            per_dst[gd] += 1;
            counts[gs] += 1;
        }
        assert_eq!(per_dst, [FANOUT, FANOUT, 30]);
    }

    // low-degree node keeps every neighbor
    assert!(counts[3 + 2 * DEGREE..].iter().all(|&c| c == RESAMPLES));

    // Inclusion indicators of a without-replacement draw have covariance
    // p(1-p) k/(k-1) (I - J/k), so this statistic is chi-square with k-1 df.
    let p = FANOUT as f64 / DEGREE as f64;
    let k = DEGREE as f64;
    let scale = RESAMPLES as f64 * p * (1.0 - p) * k / (k - 1.0);
    let expected = RESAMPLES as f64 * p;
    let chi = ChiSquared::new(k - 1.0).unwrap();
    for block in 0..2 {
        let start = 3 + block * DEGREE;
        let stat: f64 = counts[start..start + DEGREE]
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / scale)
            .sum();
        let p_value = chi.sf(stat);
        assert!(p_value > 1e-3, "neighbor block {block}: stat {stat}, p {p_value}");
    }
}

#[test]
fn draws_for_different_destinations_are_independent() {
    // joint inclusion of one neighbor of node 0 and one of node 1
    let (g, dsts) = star_graph();
    let (a, b) = (3, 3 + DEGREE);
    let mut both = 0u64;
    let root = StreamKey::new(7);
    for i in 0..RESAMPLES {
        let set = sample_blocks(&g, 0, &dsts, &[FANOUT], root.derive(&[i])).unwrap();
        let blk = &set.blocks[0];
        let has = |n: usize| blk.edges[0].src.iter().any(|&s| blk.src_nodes[0][s] == n);
        both += (has(a) && has(b)) as u64;
    }
    let expected = RESAMPLES as f64 * 0.25;
    let sd = (RESAMPLES as f64 * 0.25 * 0.75).sqrt();
    assert!((both as f64 - expected).abs() < 4.0 * sd, "{both} vs {expected}");
}
