//! Comparisons between the tape layers and the dense references, shared by
//! the focused tests and the acceptance run.

use std::sync::Arc;

use rand::Rng;
use uspgnn::diffkernel::{init_params, ModelDims, ParameterStore, Tape, Tensor};
use uspgnn::graphs::{build_global_graph, build_local_graph, LocalBatch};
use uspgnn::layers::{attention_readout, fuse, ggnn_step, hetero_step, user_session_simnet, HeteroOperators};
use uspgnn::model::{Ablation, Model, ModelOptions, PreparedBatch};
use uspgnn::objective::{NegativeSample, RecomLoss};

use super::*;

/// Denominator floor for relative gradient errors.
pub const SCALE_FLOOR: f64 = 1e-6;

pub fn layer_params(d: usize, n_items: usize, n_users: usize, seed: u64) -> ParameterStore {
    let dims = ModelDims {
        d,
        n_items,
        n_users,
        k_global: 1,
        ggnn_shared_w: false,
    };
    let mut store = init_params(&dims, seed).unwrap();
    randomize(&mut store, seed + 1000, 0.8);
    store
}

pub fn random_session(r: &mut ChaCha8Rng, n_items: usize, max_len: usize) -> Vec<usize> {
    let len = r.random_range(1..=max_len);
    (0..len).map(|_| r.random_range(0..n_items)).collect()
}

/// Max abs error of one GGNN step against the dense reference on a random
/// session over at most 5 distinct items.
pub fn ggnn_error(seed: u64) -> f64 {
    let d = 4;
    let store = layer_params(d, 5, 1, seed);
    let mut r = rng(seed);
    let items = random_session(&mut r, 5, 7);
    let (nodes, a_out, a_in) = dense_session_graph(&items);
    let h0 = random_tensor(&mut r, nodes.len(), d, 1.5);
    let expected = dense_ggnn_step(&store, &a_out, &a_in, &to_matrix(&h0));

    let batch = LocalBatch::new(&[build_local_graph(&items).unwrap()]);
    assert_eq!(&batch.node_items[..], &nodes[..]);
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let h = tape.constant(h0);
    let out = ggnn_step(&mut tape, &batch, h, &p, false).unwrap();
    max_abs_diff(&expected, tape.value(out))
}

/// Max abs error of one heterogeneous layer on a graph with 3 items and
/// 2 users, one item left isolated now and then.
pub fn hetero_error(seed: u64) -> f64 {
    let d = 4;
    let (n_items, n_users) = (3, 2);
    let store = layer_params(d, n_items, n_users, seed);
    let mut r = rng(seed);
    let n_sessions = r.random_range(1..=3);
    let sessions: Vec<_> = (0..n_sessions)
        .map(|k| {
            let user = r.random_range(0..n_users);
            let max_item = if seed.is_multiple_of(2) { n_items - 1 } else { n_items };
            session(user, &random_session(&mut r, max_item, 4), k as i64)
        })
        .collect();
    let items0 = random_tensor(&mut r, n_items, d, 1.0);
    let users0 = random_tensor(&mut r, n_users, d, 1.0);
    let g = DenseHetero::from_sessions(&sessions);
    let (ei, eu) = dense_hetero_step(&store, 0, &g, &to_matrix(&items0), &to_matrix(&users0));

    let graph = build_global_graph(&sessions, n_items, n_users).unwrap();
    let ops = HeteroOperators::new(&graph);
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let (i, u) = (tape.constant(items0), tape.constant(users0));
    let (ni, nu) = hetero_step(&mut tape, &ops, i, u, &p, 0).unwrap();
    max_abs_diff(&ei, tape.value(ni)).max(max_abs_diff(&eu, tape.value(nu)))
}

/// Readout of two sessions batched together against per-session dense
/// references (embedding and attention weights).
pub fn readout_error(seed: u64) -> f64 {
    let d = 4;
    let store = layer_params(d, 5, 1, seed);
    let mut r = rng(seed);
    let sessions: Vec<Vec<usize>> = (0..2).map(|_| random_session(&mut r, 5, 6)).collect();
    let graphs: Vec<_> = sessions.iter().map(|s| build_local_graph(s).unwrap()).collect();
    let batch = LocalBatch::new(&graphs);
    let states = random_tensor(&mut r, batch.n_nodes(), d, 1.0);

    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let sv = tape.constant(states.clone());
    let emb = attention_readout(&mut tape, &batch, sv, &p).unwrap();
    let got_s = tape.value(emb.s);
    let got_alpha = tape.value(emb.alpha);

    let mut worst: f64 = 0.0;
    let mut offset = 0;
    for (g, (items, graph)) in sessions.iter().zip(&graphs).enumerate() {
        let (nodes, _, _) = dense_session_graph(items);
        let n = nodes.len();
        let block: Matrix = (offset..offset + n).map(|row| states.row(row).to_vec()).collect();
        let last = nodes.iter().position(|&x| x == *items.last().unwrap()).unwrap();
        assert_eq!(last, graph.last_unique_pos);
        let (s, alpha) = dense_readout(&store, &block, last);
        for k in 0..d {
            worst = worst.max((s[k] - got_s.get(g, k)).abs());
        }
        for (j, a) in alpha.iter().enumerate() {
            worst = worst.max((a - got_alpha.get(offset + j, 0)).abs());
        }
        offset += n;
    }
    worst
}

/// Batched user–session attention over 3 users (one without sessions)
/// against per-user dense references, in both value modes.
pub fn simnet_error(seed: u64) -> f64 {
    let d = 4;
    let store = layer_params(d, 5, 3, seed);
    let mut r = rng(seed);
    let users = random_tensor(&mut r, 3, d, 1.0);
    let owners: Vec<usize> = vec![0, 2, 0, 0, 2];
    let sessions = random_tensor(&mut r, owners.len(), d, 1.0);
    let owners_arc: Arc<[usize]> = owners.clone().into();

    let mut worst: f64 = 0.0;
    for literal in [false, true] {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let (u, s) = (tape.constant(users.clone()), tape.constant(sessions.clone()));
        let out = user_session_simnet(&mut tape, u, s, &owners_arc, &p, literal).unwrap();
        let got = tape.value(out);
        for user in 0..3 {
            let mine: Matrix = owners
                .iter()
                .enumerate()
                .filter(|(_, &o)| o == user)
                .map(|(j, _)| sessions.row(j).to_vec())
                .collect();
            let expected = dense_simnet(&store, users.row(user), &mine, literal);
            for k in 0..d {
                worst = worst.max((expected[k] - got.get(user, k)).abs());
            }
        }
    }
    worst
}

/// Fusion on 3 rows, with and without the local term. Also returns the
/// gate values for range checks.
pub fn fuse_error(seed: u64) -> (f64, Vec<f64>) {
    let d = 4;
    let store = layer_params(d, 5, 1, seed);
    let mut r = rng(seed);
    let sl = random_tensor(&mut r, 3, d, 2.0);
    let sg = random_tensor(&mut r, 3, d, 2.0);
    let ug = random_tensor(&mut r, 3, d, 2.0);
    let mut worst: f64 = 0.0;
    let mut betas = Vec::new();
    for with_local in [true, false] {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let (l, g, u) = (tape.constant(sl.clone()), tape.constant(sg.clone()), tape.constant(ug.clone()));
        let out = fuse(&mut tape, with_local.then_some(l), g, u, &p).unwrap();
        for row in 0..3 {
            let (beta, s) = dense_fuse(&store, with_local.then(|| sl.row(row)), sg.row(row), ug.row(row));
            worst = worst.max((beta - tape.value(out.beta).get(row, 0)).abs());
            for k in 0..d {
                worst = worst.max((s[k] - tape.value(out.s_final).get(row, k)).abs());
            }
            betas.push(tape.value(out.beta).get(row, 0));
        }
    }
    (worst, betas)
}

/// The micro-batch used for the end-to-end gradient check: 12 items,
/// 2 users, 3 sessions, one instance per session.
pub struct MicroBatch {
    pub model: Model,
    pub batch: PreparedBatch,
    pub negatives: NegativeSample,
}

pub fn micro_batch(d: usize, ablation: Ablation, recom_loss: RecomLoss, lambda: f64) -> MicroBatch {
    use uspgnn::corpus::Instance;
    let sessions = vec![
        session(0, &[0, 1, 2, 3, 1], 0),
        session(0, &[4, 5, 6, 4], 1),
        session(1, &[7, 8, 9, 10, 11, 2], 2),
    ];
    let graph = build_global_graph(&sessions, 12, 2).unwrap();
    let dims = ModelDims {
        d,
        n_items: 12,
        n_users: 2,
        k_global: 1,
        ggnn_shared_w: false,
    };
    let options = ModelOptions {
        k_local: 1,
        k_global: 1,
        ggnn_shared_w: false,
        simnet_literal_value: false,
        recom_loss,
        ablation,
        lambda,
        tau: 0.5,
    };
    let model = Model::new(dims, options, &graph).unwrap();
    let instances: Vec<Instance> = sessions
        .iter()
        .map(|s| Instance {
            user: s.user_index,
            prefix: s.items[..s.items.len() - 1].to_vec(),
            target: *s.items.last().unwrap(),
        })
        .collect();
    let batch = PreparedBatch::new(&instances).unwrap();
    let negatives = NegativeSample {
        anchors: vec![0, 1],
        negatives: vec![1, 0],
        per_anchor: 1,
    };
    MicroBatch {
        model,
        batch,
        negatives,
    }
}

pub fn micro_loss(mb: &MicroBatch, store: &ParameterStore) -> f64 {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let fwd = mb.model.forward(&mut tape, &p, &mb.batch).unwrap();
    let l = mb.model.losses(&mut tape, &p, &mb.batch, &fwd, Some(&mb.negatives)).unwrap();
    tape.value(l.total).item()
}

/// `(analytic, central-difference)` pairs for every scalar parameter of
/// the micro-batch model.
pub fn model_gradient_pairs(mb: &MicroBatch, store: &ParameterStore, h: f64) -> Vec<(String, f64, f64)> {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, true);
    let fwd = mb.model.forward(&mut tape, &p, &mb.batch).unwrap();
    let l = mb.model.losses(&mut tape, &p, &mb.batch, &fwd, Some(&mb.negatives)).unwrap();
    let grads = tape.backward(l.total).unwrap();

    let mut out = Vec::new();
    let names: Vec<String> = store.names().map(str::to_owned).collect();
    for name in names {
        let var = p.get(&name).unwrap();
        let value = store.value(&name).unwrap().clone();
        let zero = Tensor::zeros(value.rows(), value.cols());
        let analytic = grads.get(var).unwrap_or(&zero).clone();
        for idx in 0..value.len() {
            let mut probe = store.clone();
            let mut plus = value.clone();
            plus.data_mut()[idx] += h;
            probe.insert(name.clone(), plus);
            let lp = micro_loss(mb, &probe);
            let mut minus = value.clone();
            minus.data_mut()[idx] -= h;
            probe.insert(name.clone(), minus);
            let lm = micro_loss(mb, &probe);
            out.push((format!("{name}[{idx}]"), analytic.data()[idx], (lp - lm) / (2.0 * h)));
        }
    }
    out
}

pub fn fixture_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/preprocess")
}

pub const GOLDEN_FILES: [&str; 4] = ["items.tsv", "users.tsv", "train_sessions.jsonl", "test_sessions.jsonl"];

/// Compares every golden file under `golden` with its counterpart under
/// `produced`, byte for byte. Returns the first mismatch.
pub fn compare_golden(produced: &std::path::Path, golden: &std::path::Path) -> Result<(), String> {
    for name in GOLDEN_FILES {
        let want = std::fs::read(golden.join(name)).map_err(|e| format!("{name}: {e}"))?;
        let got = std::fs::read(produced.join(name)).map_err(|e| format!("{name}: {e}"))?;
        if want != got {
            return Err(format!(
                "{name} differs:\n--- expected\n{}--- produced\n{}",
                String::from_utf8_lossy(&want),
                String::from_utf8_lossy(&got)
            ));
        }
    }
    Ok(())
}

/// Runs the library preprocessing on the 30-event fixture with the given
/// gap and checks the result against the matching golden directory.
pub fn preprocess_fixture(gap_seconds: u64) -> Result<uspgnn::corpus::CorpusMeta, String> {
    use uspgnn::corpus::{preprocess, read_events_tsv, write_corpus_dir, PreprocessConfig};
    let events = read_events_tsv(&fixture_dir().join("events.tsv")).map_err(|e| e.to_string())?;
    let config = PreprocessConfig {
        gap_seconds,
        min_item_count: 5,
        min_session_len: 2,
        train_fraction: 0.8,
    };
    let corpus = preprocess(&events, &config).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let meta = write_corpus_dir(dir.path(), &corpus, serde_json::to_value(&config).unwrap()).map_err(|e| e.to_string())?;
    compare_golden(dir.path(), &fixture_dir().join(format!("gap{gap_seconds}")))?;
    Ok(meta)
}

/// Every row of both adjacency blocks sums to 0 or 1.
pub fn adjacency_rows_ok(items: &[usize]) -> Result<(), String> {
    let g = build_local_graph(items).map_err(|e| e.to_string())?;
    let n = g.n_nodes();
    for row in 0..n {
        for (block, name) in [(0, "out"), (n, "in")] {
            let sum: f64 = (0..n).map(|c| g.adj.get(row, block + c)).sum();
            if !(sum.abs() < 1e-12 || (sum - 1.0).abs() < 1e-12) {
                return Err(format!("{items:?}: {name} row {row} sums to {sum}"));
            }
        }
    }
    Ok(())
}

/// The user→item edge set is the item→user edge set reversed.
pub fn transpose_ok(sessions: &[uspgnn::corpus::Session], n_items: usize, n_users: usize) -> Result<(), String> {
    use std::collections::BTreeSet;
    let g = build_global_graph(sessions, n_items, n_users).map_err(|e| e.to_string())?;
    let u2i: BTreeSet<(usize, usize)> = g.u2i.edges().collect();
    let i2u: BTreeSet<(usize, usize)> = g.i2u.edges().map(|(s, t)| (t, s)).collect();
    let truth: BTreeSet<(usize, usize)> = sessions
        .iter()
        .flat_map(|s| s.items.iter().map(move |&i| (s.user_index, i)))
        .collect();
    if u2i != i2u {
        return Err("u2i and i2u disagree".into());
    }
    if u2i != truth {
        return Err("u2i does not match the interaction set".into());
    }
    Ok(())
}

/// Softmax rows sum to one and stay positive for arbitrary logits.
pub fn softmax_ok(logits: &Tensor) -> Result<(), String> {
    let mut tape = Tape::new();
    let x = tape.constant(logits.clone());
    let p = tape.softmax_rows(x);
    let p = tape.value(p);
    for r in 0..p.rows() {
        let row = p.row(r);
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(format!("row {r}: sum {sum}"));
        }
    }
    Ok(())
}

/// The fusion gate stays strictly inside (0, 1) on random inputs. In f64
/// the sigmoid rounds to exactly 1 once its argument passes about 36.7, so
/// inputs are kept at embedding scale.
pub fn beta_in_unit_interval(seed: u64, spread: f64) -> Result<(), String> {
    let d = 6;
    let store = layer_params(d, 3, 1, seed);
    let mut r = rng(seed);
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let sg = tape.constant(random_tensor(&mut r, 8, d, spread));
    let ug = tape.constant(random_tensor(&mut r, 8, d, spread));
    let out = fuse(&mut tape, None, sg, ug, &p).map_err(|e| e.to_string())?;
    for &b in tape.value(out.beta).data() {
        if !(b > 0.0 && b < 1.0) {
            return Err(format!("beta {b}"));
        }
    }
    Ok(())
}

/// MRR@k ≤ HR@k and both are nondecreasing in k.
pub fn metric_order_ok(ranks: Vec<usize>) -> Result<(), String> {
    let res = uspgnn::eval::RankingResult { ranks };
    let mut prev = (0.0, 0.0);
    for k in 1..=20 {
        let (hr, mrr) = (res.hr(k), res.mrr(k));
        if mrr > hr + 1e-15 {
            return Err(format!("k={k}: mrr {mrr} > hr {hr}"));
        }
        if hr + 1e-15 < prev.0 || mrr + 1e-15 < prev.1 {
            return Err(format!("k={k}: not monotone"));
        }
        prev = (hr, mrr);
    }
    let m = res.metrics();
    for k in uspgnn::eval::KS {
        if m.mrr.get(k).unwrap() > m.hr.get(k).unwrap() {
            return Err(format!("rounded metrics at {k}"));
        }
    }
    Ok(())
}

/// Runs the structural invariants on deterministic random inputs:
/// adjacency rows over `n_sessions` sessions, transposes, softmax, gate
/// range and metric ordering.
pub fn structural_suite(seed: u64, n_sessions: usize) -> Result<(), String> {
    let mut r = rng(seed);
    for _ in 0..n_sessions {
        let items = random_session(&mut r, 12, 15);
        adjacency_rows_ok(&items)?;
    }
    for round in 0..50 {
        let n_users = r.random_range(1..6);
        let sessions: Vec<_> = (0..r.random_range(1..20))
            .map(|k| session(r.random_range(0..n_users), &random_session(&mut r, 30, 8), k))
            .collect();
        transpose_ok(&sessions, 30, n_users).map_err(|e| format!("round {round}: {e}"))?;
    }
    for round in 0..100 {
        let spread = [1.0, 50.0, 800.0][round % 3];
        softmax_ok(&random_tensor(&mut r, 4, 25, spread))?;
        beta_in_unit_interval(seed * 1000 + round as u64, spread.min(3.0))?;
        let ranks = (0..50).map(|_| r.random_range(1..40)).collect();
        metric_order_ok(ranks)?;
    }
    Ok(())
}

/// Largest deviation from `0.5 h` after one GGNN step with every GGNN
/// parameter set to zero.
pub fn zero_ggnn_halving_error(seed: u64) -> f64 {
    let d = 5;
    let mut store = layer_params(d, 9, 1, seed);
    let names: Vec<String> = store.names().filter(|n| n.starts_with("ggnn.")).map(str::to_owned).collect();
    assert!(!names.is_empty());
    for name in names {
        let v = store.value(&name).unwrap();
        let zero = Tensor::zeros(v.rows(), v.cols());
        store.insert(name, zero);
    }
    let mut r = rng(seed);
    let graphs: Vec<_> = (0..3)
        .map(|_| build_local_graph(&random_session(&mut r, 9, 8)).unwrap())
        .collect();
    let batch = LocalBatch::new(&graphs);
    let h0 = random_tensor(&mut r, batch.n_nodes(), d, 3.0);
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let h = tape.constant(h0.clone());
    let out = ggnn_step(&mut tape, &batch, h, &p, false).unwrap();
    h0.data()
        .iter()
        .zip(tape.value(out).data())
        .map(|(a, b)| (0.5 * a - b).abs())
        .fold(0.0, f64::max)
}
