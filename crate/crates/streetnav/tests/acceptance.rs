//! Acceptance suite: one test per acceptance criterion, each printing a
//! single PASS line with its measured numbers (run with `--nocapture` to see
//! them). Every oracle here is an independent straight-line implementation,
//! kept deliberately free of the library's own kernel code paths.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use streetnav::data::{
    generate_world, load_world, save_world, split_records, BBox, LandmarkCategory,
    LandmarkRecord, WorldConfig,
};
use streetnav::encoder::{encode, encode_vjp, EncoderInput, EncoderParams};
use streetnav::env::{Edge, EnvGraph, Heading, NodeId};
use streetnav::extract::extract_landmarks;
use streetnav::fusion::{
    encode_text, fuse_round, match_score, recognize, Direction, FfParams, FusionParams,
    FusionRound, VerbalizerConfig, ViewObservation,
};
use streetnav::kernels::{
    cross_attention, fd_pairs, fd_summary, gcn_aggregate, gcn_layer, global_pool, project,
    AttentionParams, GcnAggParams, GcnLayerParams, ProjectionParams, FD_ABS_BOUND,
    FD_SCALE_FLOOR,
};
use streetnav::metrics::{evaluate, spd, EpisodeOutcome};
use streetnav::runtime::loss::LossConfig;
use streetnav::runtime::train::{
    build_context, loss_backward, loss_forward, train_policy, TrainConfig, TrainableParams,
};
use streetnav::runtime::{
    run_episode, LinearPolicy, OraclePolicy, Pipeline, RandomPolicy, RunConfig,
};
use streetnav::topo::{init_topomap, structure_loss, to_adjacency, update_on_move, NodeCategory};

fn standard_world(seed: u64) -> (WorldConfig, streetnav::data::WorldBundle) {
    let config = WorldConfig {
        nodes: 20,
        branching: 3,
        route_count: 10,
        landmarks_per_route: 3,
        feature_dim: 16,
        seed,
    };
    let world = generate_world(&config).expect("world generates");
    (config, world)
}

fn standard_run_config(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        feature_dim: 16,
        policy_dim: 8,
        ..RunConfig::default()
    }
}

// ---------------------------------------------------------------------------
// Criterion 1: oracle conservation
// ---------------------------------------------------------------------------

#[test]
fn acceptance_oracle_conservation() {
    let started = std::time::Instant::now();
    let mut episode_count = 0usize;
    for seed in 0..50u64 {
        let (_, world) = standard_world(seed);
        assert!(world.instances.len() >= 10, "world needs >= 10 instances");
        let cfg = standard_run_config(seed);
        let pipeline = Pipeline::new(&cfg).expect("pipeline");
        let traces: Vec<_> = world
            .instances
            .iter()
            .map(|instance| {
                let mut policy = OraclePolicy::new(instance.gold_actions.clone());
                run_episode(&world, instance, &pipeline, &mut policy, &cfg).expect("episode")
            })
            .collect();
        episode_count += traces.len();
        let outcomes: Vec<EpisodeOutcome> = traces
            .iter()
            .zip(&world.instances)
            .map(|(trace, instance)| EpisodeOutcome { trace, instance })
            .collect();
        let report = evaluate(&outcomes, &world.graph).expect("evaluate");
        assert_eq!(report.result.tc, 100.0, "seed {seed}: TC");
        assert_eq!(report.result.kpa, 100.0, "seed {seed}: KPA");
        assert_eq!(report.result.spd, 0.0, "seed {seed}: SPD");
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < 60,
        "oracle conservation took {elapsed:?}"
    );
    println!(
        "PASS oracle conservation: TC=100.0 KPA=100.0 SPD=0.0 over {episode_count} episodes in {elapsed:?}"
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: SPD matches brute-force BFS
// ---------------------------------------------------------------------------

fn random_graph(rng: &mut ChaCha8Rng, n: usize, extra: usize) -> EnvGraph {
    let nodes: Vec<NodeId> = (0..n).map(|i| NodeId::new(format!("g{i:03}"))).collect();
    let mut pairs = BTreeSet::new();
    let mut list = Vec::new();
    for i in 0..n {
        let to = (i + 1) % n;
        if pairs.insert((i, to)) {
            list.push((i, to));
        }
    }
    for _ in 0..extra {
        let from = rng.random_range(0..n);
        let to = rng.random_range(0..n);
        if from != to && pairs.insert((from, to)) {
            list.push((from, to));
        }
    }
    let mut by_from: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (idx, (from, _)) in list.iter().enumerate() {
        by_from.entry(*from).or_default().push(idx);
    }
    let mut headings = vec![0.0f64; list.len()];
    for (_, idxs) in by_from {
        let slot = 360.0 / idxs.len() as f64;
        let base: f64 = rng.random_range(0.0..360.0);
        for (j, &idx) in idxs.iter().enumerate() {
            headings[idx] = (base + slot * j as f64 + rng.random_range(0.0..slot * 0.4)) % 360.0;
        }
    }
    let edges = list
        .into_iter()
        .zip(headings)
        .map(|((f, t), h)| Edge {
            from: nodes[f].clone(),
            to: nodes[t].clone(),
            heading: Heading::new(h),
        })
        .collect();
    EnvGraph::new(nodes, edges).expect("random graph valid")
}

/// Straight-line BFS over an explicit boolean adjacency matrix.
fn bfs_oracle(graph: &EnvGraph, from: &NodeId, to: &NodeId, undirected: bool) -> Option<usize> {
    let nodes = graph.nodes();
    let index = |n: &NodeId| nodes.iter().position(|x| x == n).expect("node");
    let n = nodes.len();
    let mut adj = vec![vec![false; n]; n];
    for e in graph.edges() {
        adj[index(&e.from)][index(&e.to)] = true;
        if undirected {
            adj[index(&e.to)][index(&e.from)] = true;
        }
    }
    let (s, t) = (index(from), index(to));
    let mut dist = vec![usize::MAX; n];
    dist[s] = 0;
    let mut queue = VecDeque::from([s]);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if adj[u][v] && dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    (dist[t] != usize::MAX).then_some(dist[t])
}

#[test]
fn acceptance_spd_matches_bfs_oracle() {
    let started = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xBF5);
    let mut pair_count = 0usize;
    for _ in 0..100 {
        let n = rng.random_range(3..=50);
        let graph = random_graph(&mut rng, n, n * 2);
        let nodes = graph.nodes().to_vec();
        for a in &nodes {
            for b in &nodes {
                pair_count += 1;
                let got = spd(&graph, a, b).ok();
                let expected =
                    bfs_oracle(&graph, a, b, false).or_else(|| bfs_oracle(&graph, a, b, true));
                assert_eq!(got, expected, "spd mismatch {a} -> {b}");
            }
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 60, "spd check took {elapsed:?}");
    println!(
        "PASS metric oracle equivalence: spd == BFS on {pair_count} node pairs across 100 graphs in {elapsed:?}"
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: kernel oracle equivalence at 1e-12
// ---------------------------------------------------------------------------

fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

fn rand_vector(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_fn(len, |_| rng.random_range(-scale..scale))
}

fn matmul_oracle(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    for i in 0..a.nrows() {
        for j in 0..b.ncols() {
            let mut acc = 0.0;
            for k in 0..a.ncols() {
                acc += a[[i, k]] * b[[k, j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

fn softmax_oracle(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn attention_oracle(q_in: &Array2<f64>, k_in: &Array2<f64>, p: &AttentionParams) -> Array2<f64> {
    let q = matmul_oracle(q_in, &p.w_q);
    let k = matmul_oracle(k_in, &p.w_k);
    let v = matmul_oracle(k_in, &p.w_v);
    let mut out = Array2::zeros((q_in.nrows(), q_in.ncols()));
    for i in 0..q.nrows() {
        let logits: Vec<f64> = (0..k.nrows())
            .map(|j| {
                let mut acc = 0.0;
                for t in 0..q.ncols() {
                    acc += q[[i, t]] * k[[j, t]];
                }
                acc / p.scale
            })
            .collect();
        let weights = softmax_oracle(&logits);
        for t in 0..v.ncols() {
            let mut acc = 0.0;
            for j in 0..k.nrows() {
                acc += weights[j] * v[[j, t]];
            }
            out[[i, t]] = acc;
        }
    }
    out
}

fn ff_oracle(p: &FfParams, z: &[f64]) -> Vec<f64> {
    let d = z.len();
    let mut hidden = vec![0.0; d];
    for j in 0..d {
        let mut acc = p.b1[j];
        for i in 0..d {
            acc += z[i] * p.w1[[i, j]];
        }
        hidden[j] = acc.tanh();
    }
    let mut out = vec![0.0; d];
    for j in 0..d {
        let mut acc = p.b2[j];
        for i in 0..d {
            acc += hidden[i] * p.w2[[i, j]];
        }
        out[j] = z[j] + acc;
    }
    out
}

#[test]
fn acceptance_kernel_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0E12);
    let cases = 100;
    let tol = 1e-12;

    // gcn_aggregate
    for _ in 0..cases {
        let (n, d) = (rng.random_range(2..6), rng.random_range(2..5));
        let x = rand_matrix(&mut rng, n, d, 1.0);
        let mut nbrs = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.random_bool(0.4) {
                    nbrs[i].push(j);
                }
            }
        }
        let params = GcnAggParams {
            w_self: rand_matrix(&mut rng, d, d, 1.0),
            w_neigh: rand_matrix(&mut rng, d, d, 1.0),
        };
        let got = gcn_aggregate(&x, &nbrs, &params).unwrap();
        let mut expected = Array2::zeros((n, d));
        for i in 0..n {
            for k in 0..d {
                let mut acc = 0.0;
                for m in 0..d {
                    acc += x[[i, m]] * params.w_self[[m, k]];
                }
                for &j in &nbrs[i] {
                    for m in 0..d {
                        acc += x[[j, m]] * params.w_neigh[[m, k]];
                    }
                }
                expected[[i, k]] = acc.tanh();
            }
        }
        assert!(max_abs_diff(&got, &expected) <= tol);
    }

    // gcn_layer
    for _ in 0..cases {
        let (n, d_in, d_out) = (
            rng.random_range(2..6),
            rng.random_range(2..5),
            rng.random_range(2..5),
        );
        let h = rand_matrix(&mut rng, n, d_in, 1.0);
        let a = rand_matrix(&mut rng, n, n, 1.0);
        let params = GcnLayerParams {
            w: rand_matrix(&mut rng, d_in, d_out, 1.0),
        };
        let got = gcn_layer(&h, &a, &params).unwrap();
        let mut expected = Array2::zeros((n, d_out));
        for i in 0..n {
            for k in 0..d_out {
                let mut acc = 0.0;
                for j in 0..n {
                    for m in 0..d_in {
                        acc += a[[i, j]] * h[[j, m]] * params.w[[m, k]];
                    }
                }
                expected[[i, k]] = acc.tanh();
            }
        }
        assert!(max_abs_diff(&got, &expected) <= tol);
    }

    // global_pool
    for _ in 0..cases {
        let (n, d) = (rng.random_range(1..7), rng.random_range(2..6));
        let h = rand_matrix(&mut rng, n, d, 2.0);
        let got = global_pool(&h).unwrap();
        for k in 0..d {
            let mut acc = 0.0;
            for i in 0..n {
                acc += h[[i, k]];
            }
            assert!((got[k] - acc / n as f64).abs() <= tol);
        }
    }

    // cross_attention
    for _ in 0..cases {
        let (m, k, d) = (
            rng.random_range(1..5),
            rng.random_range(1..6),
            rng.random_range(2..5),
        );
        let q_in = rand_matrix(&mut rng, m, d, 1.0);
        let k_in = rand_matrix(&mut rng, k, d, 1.0);
        let params = AttentionParams {
            w_q: rand_matrix(&mut rng, d, d, 1.0),
            w_k: rand_matrix(&mut rng, d, d, 1.0),
            w_v: rand_matrix(&mut rng, d, d, 1.0),
            scale: (d as f64).sqrt(),
        };
        let got = cross_attention(&q_in, &k_in, &params).unwrap();
        let expected = attention_oracle(&q_in, &k_in, &params);
        assert!(max_abs_diff(&got, &expected) <= tol);
    }

    // project
    for _ in 0..cases {
        let (d_in, hidden, d_out) = (
            rng.random_range(2..5),
            rng.random_range(2..6),
            rng.random_range(1..5),
        );
        let m = rand_vector(&mut rng, d_in, 1.0);
        let params = ProjectionParams {
            w1: rand_matrix(&mut rng, d_in, hidden, 1.0),
            b1: rand_vector(&mut rng, hidden, 0.5),
            w2: rand_matrix(&mut rng, hidden, d_out, 1.0),
            b2: rand_vector(&mut rng, d_out, 0.5),
        };
        let got = project(&m.view(), &params).unwrap();
        let mut hidden_vals = vec![0.0; hidden];
        for j in 0..hidden {
            let mut acc = params.b1[j];
            for i in 0..d_in {
                acc += m[i] * params.w1[[i, j]];
            }
            hidden_vals[j] = acc.tanh();
        }
        for kk in 0..d_out {
            let mut acc = params.b2[kk];
            for j in 0..hidden {
                acc += hidden_vals[j] * params.w2[[j, kk]];
            }
            assert!((got[kk] - acc).abs() <= tol);
        }
    }

    // fuse_round
    for _ in 0..cases {
        let (n, d) = (rng.random_range(1..5), rng.random_range(2..5));
        let round = FusionRound {
            attn: AttentionParams {
                w_q: rand_matrix(&mut rng, d, d, 1.0),
                w_k: rand_matrix(&mut rng, d, d, 1.0),
                w_v: rand_matrix(&mut rng, d, d, 1.0),
                scale: (d as f64).sqrt(),
            },
            ff_visual: FfParams {
                w1: rand_matrix(&mut rng, d, d, 1.0),
                b1: rand_vector(&mut rng, d, 0.5),
                w2: rand_matrix(&mut rng, d, d, 1.0),
                b2: rand_vector(&mut rng, d, 0.5),
            },
            ff_text: FfParams {
                w1: rand_matrix(&mut rng, d, d, 1.0),
                b1: rand_vector(&mut rng, d, 0.5),
                w2: rand_matrix(&mut rng, d, d, 1.0),
                b2: rand_vector(&mut rng, d, 0.5),
            },
        };
        let o = rand_matrix(&mut rng, n, d, 1.0);
        let b = rand_vector(&mut rng, d, 1.0);
        let (o_got, b_got) = fuse_round(&o, &b, &round).unwrap();

        // oracle: attention both ways then residual feedforward
        let b_mat = {
            let mut m = Array2::zeros((1, d));
            m.row_mut(0).assign(&b);
            m
        };
        let o_tilde = attention_oracle(&o, &b_mat, &round.attn);
        let b_tilde = attention_oracle(&b_mat, &o, &round.attn);
        let mut o_expected = Array2::zeros((n, d));
        for i in 0..n {
            let z: Vec<f64> = (0..d).map(|j| o[[i, j]] + o_tilde[[i, j]]).collect();
            let row = ff_oracle(&round.ff_visual, &z);
            for j in 0..d {
                o_expected[[i, j]] = row[j];
            }
        }
        let z: Vec<f64> = (0..d).map(|j| b[j] + b_tilde[[0, j]]).collect();
        let b_expected = ff_oracle(&round.ff_text, &z);
        assert!(max_abs_diff(&o_got, &o_expected) <= tol);
        for j in 0..d {
            assert!((b_got[j] - b_expected[j]).abs() <= tol);
        }
    }

    // topo_loss over random structure snapshots
    for _ in 0..cases {
        let ids: Vec<NodeId> = (0..6).map(|i| NodeId::new(format!("t{i}"))).collect();
        let mut random_snap = |rng: &mut ChaCha8Rng| {
            let n = rng.random_range(1..=6);
            let nodes: Vec<(NodeId, NodeCategory)> = (0..n)
                .map(|i| (ids[i].clone(), NodeCategory::Contiguous))
                .collect();
            let mut edges = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if rng.random_bool(0.4) {
                        edges.push((ids[i].clone(), ids[j].clone()));
                    }
                }
            }
            streetnav::topo::TopoSnapshot {
                step: 0,
                nodes,
                edges,
            }
        };
        let s = random_snap(&mut rng);
        let c = random_snap(&mut rng);
        let got = structure_loss(&s, &c);

        let mut union: Vec<NodeId> = Vec::new();
        for (id, _) in s.nodes.iter().chain(c.nodes.iter()) {
            if !union.contains(id) {
                union.push(id.clone());
            }
        }
        let index = |id: &NodeId| union.iter().position(|u| u == id).unwrap();
        let n = union.len();
        let mut a_s = vec![vec![0.0f64; n]; n];
        for (u, v) in &s.edges {
            a_s[index(u)][index(v)] = 1.0;
            a_s[index(v)][index(u)] = 1.0;
        }
        let mut a_c = vec![vec![0.0f64; n]; n];
        for (u, v) in &c.edges {
            a_c[index(u)][index(v)] = 1.0;
            a_c[index(v)][index(u)] = 1.0;
        }
        let mut expected = 0.0;
        for i in 0..n {
            for j in 0..n {
                let diff = a_s[i][j] - a_c[i][j];
                expected += diff * diff;
            }
        }
        assert!((got - expected).abs() <= tol);
    }

    println!(
        "PASS kernel oracle equivalence: 7 kernels x {cases} random cases within {tol:e} of straight-line oracles"
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: gradient correctness over 20 seeds
// ---------------------------------------------------------------------------

#[test]
fn acceptance_gradient_correctness() {
    let eps = 1e-5;
    let mut worst_rel = 0.0f64;
    let mut worst_abs = 0.0f64;

    // composed encoder chain
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, dim, regions, d_out) = (5, 4, 3, 2);
        let node_features = rand_matrix(&mut rng, n, dim, 0.8);
        let mut neighbor_sets = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.random_bool(0.4) {
                    neighbor_sets[i].push(j);
                }
            }
        }
        let mut a_norm = Array2::zeros((n, n));
        for i in 0..n {
            a_norm[[i, i]] = 1.0;
        }
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(0.5) {
                    let w = rng.random_range(0.1..0.5);
                    a_norm[[i, j]] = w;
                    a_norm[[j, i]] = w;
                }
            }
        }
        let image_regions = rand_matrix(&mut rng, regions, dim, 1.0);
        let input = EncoderInput {
            node_features,
            neighbor_sets,
            a_norm,
            image_regions,
        };
        let params = EncoderParams::seeded(dim, d_out, &mut rng);
        let mut theta = Vec::new();
        params.pack_into(&mut theta);
        let acts = encode(&input, &params).unwrap();
        let grads = encode_vjp(&input, &params, &acts, &Array1::ones(d_out)).unwrap();
        let mut analytic = Vec::new();
        grads.pack_into(&mut analytic);
        let template = params.clone();
        let pairs = fd_pairs(
            move |t: &[f64]| {
                let mut p = template.clone();
                p.unpack_from(t);
                encode(&input, &p).unwrap().output.sum()
            },
            &analytic,
            &theta,
            eps,
        )
        .unwrap();
        let summary = fd_summary(&pairs, FD_SCALE_FLOOR);
        assert!(
            summary.max_rel_scaled < 1e-5,
            "encoder seed {seed}: rel {} on resolvable coordinates",
            summary.max_rel_scaled
        );
        assert!(
            summary.max_abs < FD_ABS_BOUND,
            "encoder seed {seed}: abs {}",
            summary.max_abs
        );
        worst_rel = worst_rel.max(summary.max_rel_scaled);
        worst_abs = worst_abs.max(summary.max_abs);
    }

    // combined loss under teacher forcing
    for seed in 0..20u64 {
        let config = WorldConfig {
            nodes: 12,
            branching: 3,
            route_count: 2,
            landmarks_per_route: 2,
            feature_dim: 6,
            seed,
        };
        let world = generate_world(&config).unwrap();
        let cfg = RunConfig {
            feature_dim: 6,
            policy_dim: 4,
            seed,
            ..RunConfig::default()
        };
        let pipeline = Pipeline::new(&cfg).unwrap();
        let contexts: Vec<_> = world
            .instances
            .iter()
            .map(|i| build_context(&world, i, &pipeline, &cfg).unwrap())
            .collect();
        let loss_cfg = LossConfig::default();
        let params = TrainableParams::seeded(&cfg, seed ^ 0xabc);
        let theta = params.pack();
        let (_, grads) = loss_backward(&params, &contexts, &loss_cfg).unwrap();
        let analytic = grads.pack();
        let template = params.clone();
        let pairs = fd_pairs(
            move |t: &[f64]| {
                let mut p = template.clone();
                p.unpack(t);
                loss_forward(&p, &contexts, &loss_cfg).unwrap()
            },
            &analytic,
            &theta,
            eps,
        )
        .unwrap();
        let summary = fd_summary(&pairs, FD_SCALE_FLOOR);
        assert!(
            summary.max_rel_scaled < 1e-5,
            "loss seed {seed}: rel {} on resolvable coordinates",
            summary.max_rel_scaled
        );
        assert!(
            summary.max_abs < FD_ABS_BOUND,
            "loss seed {seed}: abs {}",
            summary.max_abs
        );
        worst_rel = worst_rel.max(summary.max_rel_scaled);
        worst_abs = worst_abs.max(summary.max_abs);
    }

    println!(
        "PASS gradient correctness: encoder+loss over 20 seeds, max rel {worst_rel:.3e} (resolvable coords), max abs {worst_abs:.3e} (all coords)"
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: topology invariants
// ---------------------------------------------------------------------------

#[test]
fn acceptance_topology_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7090);
    let feat = |_: &NodeId, _: NodeCategory| Array1::<f64>::zeros(2);

    for graph_idx in 0..20 {
        let n = rng.random_range(6..24);
        let graph = random_graph(&mut rng, n, n * 2);
        let start = graph.nodes()[rng.random_range(0..n)].clone();
        let mut here = start.clone();
        let mut map = init_topomap(&graph, &start, &feat).unwrap();
        for step in 0..1000 {
            let nbrs = graph.undirected_neighbors(&here).unwrap();
            here = nbrs[rng.random_range(0..nbrs.len())].clone();
            let prev_nodes = map.len();
            let prev_edges = map.edge_count();
            map = update_on_move(&map, &graph, &here, &feat).unwrap();

            // exactly one current
            let currents = map
                .nodes()
                .iter()
                .filter(|node| node.category == NodeCategory::Current)
                .count();
            assert_eq!(currents, 1, "graph {graph_idx} step {step}");

            // contiguous nodes neighbor something explored; never the current
            for node in map.nodes() {
                if node.category == NodeCategory::Contiguous {
                    let neighbors = graph.undirected_neighbors(&node.id).unwrap();
                    let touches_explored = neighbors.iter().any(|nb| {
                        matches!(
                            map.category_of(nb),
                            Some(NodeCategory::Visited) | Some(NodeCategory::Current)
                        )
                    });
                    assert!(touches_explored, "graph {graph_idx} step {step}");
                }
            }

            // monotone growth
            assert!(map.len() >= prev_nodes);
            assert!(map.edge_count() >= prev_edges);
        }
    }

    // loss identity and symmetry over random map pairs
    let mut snaps = Vec::new();
    for _ in 0..40 {
        let n = rng.random_range(5..15);
        let graph = random_graph(&mut rng, n, n);
        let start = graph.nodes()[0].clone();
        let mut here = start.clone();
        let mut map = init_topomap(&graph, &start, &feat).unwrap();
        for _ in 0..rng.random_range(1..10) {
            let nbrs = graph.undirected_neighbors(&here).unwrap();
            here = nbrs[rng.random_range(0..nbrs.len())].clone();
            map = update_on_move(&map, &graph, &here, &feat).unwrap();
        }
        snaps.push(map.snapshot());
    }
    let mut pair_count = 0;
    for _ in 0..200 {
        let a = &snaps[rng.random_range(0..snaps.len())];
        let b = &snaps[rng.random_range(0..snaps.len())];
        assert_eq!(structure_loss(a, a), 0.0);
        assert_eq!(structure_loss(b, b), 0.0);
        let forward = structure_loss(a, b);
        let backward = structure_loss(b, a);
        assert!((forward - backward).abs() <= 1e-12);
        assert!(forward >= 0.0);
        pair_count += 1;
    }

    println!(
        "PASS topology invariants: 20 graphs x 1000-step walks hold all invariants; loss identity+symmetry on {pair_count} pairs"
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: closed-loop landmark recovery
// ---------------------------------------------------------------------------

#[test]
fn acceptance_closed_loop_recovery() {
    let mut plants = 0usize;
    let mut recovered = 0usize;
    let mut degenerate_hits = 0usize;
    let mut seed = 100u64;
    let params = FusionParams::identity(16, 2);
    let cfg_default = VerbalizerConfig::default();
    let cfg_degenerate = VerbalizerConfig::new(0.999).unwrap();

    while plants < 500 {
        let (_, world) = standard_world(seed);
        seed += 1;
        let lexicon = streetnav::data::vocab::standard_lexicon();
        for instance in &world.instances {
            let landmarks = extract_landmarks(&instance.instruction, &lexicon);
            for ann in &instance.landmark_annotations {
                plants += 1;
                let pano = &world.node_observations[&ann.node];
                let (_, messages) = recognize(pano, &landmarks, &params, &cfg_default).unwrap();
                if messages
                    .iter()
                    .any(|m| m.phrase == ann.phrase && m.direction == ann.direction)
                {
                    recovered += 1;
                }
                let (_, degenerate) =
                    recognize(pano, &landmarks, &params, &cfg_degenerate).unwrap();
                degenerate_hits += degenerate.len();
            }
        }
    }
    let rate = recovered as f64 / plants as f64;
    assert!(
        rate >= 0.99,
        "recovery rate {rate} over {plants} plants (recovered {recovered})"
    );
    assert_eq!(
        degenerate_hits, 0,
        "threshold 0.999 must silence all messages"
    );
    println!(
        "PASS closed-loop recovery: {recovered}/{plants} plants recovered at tau=0.8 ({:.1}%), zero messages at tau=0.999",
        100.0 * rate
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: threshold error modes under a fixed noisy scorer
// ---------------------------------------------------------------------------

/// Counts false positives (messages for phrases not planted at the step's
/// node/direction) and false negatives (visits to a planted node where the
/// phrase's message is missing) over one trace.
fn count_error_modes(
    trace: &streetnav::runtime::EpisodeTrace,
    instance: &streetnav::data::NavInstance,
) -> (usize, usize) {
    let planted: BTreeSet<(&str, &NodeId, Direction)> = instance
        .landmark_annotations
        .iter()
        .map(|a| (a.phrase.as_str(), &a.node, a.direction))
        .collect();
    let mut false_positives = 0;
    let mut false_negatives = 0;
    for step in &trace.steps {
        for message in &step.messages {
            if !planted.contains(&(message.phrase.as_str(), &step.state.node, message.direction)) {
                false_positives += 1;
            }
        }
        for ann in &instance.landmark_annotations {
            if ann.node == step.state.node {
                let seen = step
                    .messages
                    .iter()
                    .any(|m| m.phrase == ann.phrase && m.direction == ann.direction);
                if !seen {
                    false_negatives += 1;
                }
            }
        }
    }
    (false_positives, false_negatives)
}

#[test]
fn acceptance_tau_error_modes() {
    let sigma = 1.0;
    let mut totals = BTreeMap::new();
    let mut episodes = 0usize;
    for &tau in &[0.6f64, 0.9f64] {
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        episodes = 0;
        for seed in 200..220u64 {
            let (_, world) = standard_world(seed);
            let cfg = RunConfig {
                tau,
                noise_sigma: Some(sigma),
                ..standard_run_config(seed)
            };
            let pipeline = Pipeline::new(&cfg).expect("pipeline");
            for instance in &world.instances {
                let mut policy = OraclePolicy::new(instance.gold_actions.clone());
                let trace =
                    run_episode(&world, instance, &pipeline, &mut policy, &cfg).expect("episode");
                let (dfp, dfn) = count_error_modes(&trace, instance);
                fp += dfp;
                fn_ += dfn;
                episodes += 1;
            }
        }
        totals.insert(format!("{tau:.1}"), (fp, fn_));
    }
    assert_eq!(episodes, 200, "200 seeded episodes per threshold");
    let (fp_low, fn_low) = totals["0.6"];
    let (fp_high, fn_high) = totals["0.9"];
    assert!(
        fp_low > fp_high,
        "false positives must grow as tau falls: {fp_low} vs {fp_high}"
    );
    assert!(
        fn_high > fn_low,
        "false negatives must grow as tau rises: {fn_high} vs {fn_low}"
    );
    println!(
        "PASS tau error modes: over {episodes} episodes FP(0.6)={fp_low} > FP(0.9)={fp_high}; FN(0.9)={fn_high} > FN(0.6)={fn_low}"
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: learning signal
// ---------------------------------------------------------------------------

#[test]
fn acceptance_learning_signal() {
    let started = std::time::Instant::now();
    let train_seed = 300u64;
    let (_, train_world) = standard_world(train_seed);
    let run_cfg = standard_run_config(train_seed);
    let train_cfg = TrainConfig {
        epochs: 50,
        lr: 0.5,
        seed: train_seed,
        loss: LossConfig::default(),
    };
    let report = train_policy(std::slice::from_ref(&train_world), &run_cfg, &train_cfg)
        .expect("training runs");
    let first = report.loss_curve[0];
    let last = *report.loss_curve.last().unwrap();
    assert!(
        last < 0.5 * first,
        "final loss {last} must be under half of first-epoch loss {first}"
    );

    // held-out evaluation: 20 fresh worlds x 10 instances = 200 episodes
    let mut linear_outcomes = Vec::new();
    let mut random_outcomes = Vec::new();
    for seed in 301..321u64 {
        let (_, world) = standard_world(seed);
        let cfg = standard_run_config(seed);
        let mut pipeline = Pipeline::new(&cfg).expect("pipeline");
        pipeline.encoder = report.params.encoder.clone();
        for instance in &world.instances {
            let mut linear = LinearPolicy::new(report.params.policy.clone());
            let trace =
                run_episode(&world, instance, &pipeline, &mut linear, &cfg).expect("episode");
            linear_outcomes.push((trace, instance.clone(), seed));

            let mut random = RandomPolicy::new(seed);
            let trace =
                run_episode(&world, instance, &pipeline, &mut random, &cfg).expect("episode");
            random_outcomes.push((trace, instance.clone(), seed));
        }
    }
    assert_eq!(linear_outcomes.len(), 200);

    let tc_of = |rows: &[(streetnav::runtime::EpisodeTrace, streetnav::data::NavInstance, u64)]| {
        let mut success = 0usize;
        for (trace, instance, seed) in rows {
            let (_, world) = standard_world(*seed);
            if streetnav::env::is_success(&world.graph, trace.final_node(), instance.goal())
                .unwrap()
            {
                success += 1;
            }
        }
        100.0 * success as f64 / rows.len() as f64
    };
    let linear_tc = tc_of(&linear_outcomes);
    let random_tc = tc_of(&random_outcomes);
    assert!(
        linear_tc >= random_tc + 30.0,
        "trained TC {linear_tc} must beat random TC {random_tc} by 30 points"
    );
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 300, "learning check took {elapsed:?}");
    println!(
        "PASS learning signal: trained TC {linear_tc:.1} vs random TC {random_tc:.1} on 200 held-out episodes; loss {first:.4} -> {last:.4} in {elapsed:?}"
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: format round-trips and split arithmetic
// ---------------------------------------------------------------------------

#[test]
fn acceptance_formats_and_splits() {
    // 2000 records split 6:2:2 exactly
    let records: Vec<LandmarkRecord> = (0..2000)
        .map(|i| LandmarkRecord {
            image_id: format!("rec{i:05}"),
            bbox: BBox(1.0, 2.0, 30.0, 20.0),
            caption: "a weathered bench near the corner".into(),
            category: LandmarkCategory::Other,
        })
        .collect();
    let split = split_records(&records, (6, 2, 2), 0).unwrap();
    assert_eq!(split.sizes(), (1200, 400, 400));

    // byte-stable world bundle round trip
    let (_, world) = standard_world(7);
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    save_world(&first, &world).unwrap();
    let loaded = load_world(&first).unwrap();
    assert_eq!(loaded, world);
    let second = dir.path().join("second");
    save_world(&second, &loaded).unwrap();
    for file in ["graph.json", "instances.jsonl", "observations.json"] {
        let a = std::fs::read(first.join(file)).unwrap();
        let b = std::fs::read(second.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs across save/load/save");
    }
    println!(
        "PASS formats and splits: 2000 -> 1200/400/400; world bundle byte-stable across save/load/save"
    );
}

// match-score sanity behind the recovery margin argument: identity fusion
// params reduce scoring to the logistic of the raw dot product
#[test]
fn acceptance_identity_fusion_reduces_to_dot_product() {
    let dim = 16;
    let params = FusionParams::identity(dim, 3);
    let text = encode_text("a mossy fountain", dim);
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut regions = Array2::zeros((4, dim));
    for mut row in regions.rows_mut() {
        for v in row.iter_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    regions.row_mut(2).assign(&text.vector.mapv(|v| 1.9 * v));
    let view = ViewObservation::new(Direction::Front, regions.clone()).unwrap();
    let (score, idx) = match_score(&view, &text, &params).unwrap();
    assert_eq!(idx, 2);
    let mut best = f64::NEG_INFINITY;
    for row in regions.rows() {
        best = best.max(row.dot(&text.vector));
    }
    let expected = 1.0 / (1.0 + (-best).exp());
    assert!((score - expected).abs() <= 1e-12);
}
