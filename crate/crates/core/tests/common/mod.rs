//! Dense reference implementations and finite-difference helpers shared by
//! the integration tests. Everything here is written from the layer
//! definitions with plain loops over `Vec<f64>`.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uspgnn::corpus::{Corpus, Session, Vocab};
use uspgnn::diffkernel::{ParameterStore, Tensor};

pub type Vector = Vec<f64>;
pub type Matrix = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

pub fn to_matrix(t: &Tensor) -> Matrix {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn param(store: &ParameterStore, name: &str) -> Matrix {
    to_matrix(store.value(name).unwrap())
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `W x` for `W` stored row-major as `out × in`.
pub fn matvec(w: &Matrix, x: &[f64]) -> Vector {
    w.iter()
        .map(|row| {
            assert_eq!(row.len(), x.len());
            row.iter().zip(x).map(|(a, b)| a * b).sum()
        })
        .collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vector {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vector {
    a.iter().map(|x| x * s).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn concat(a: &[f64], b: &[f64]) -> Vector {
    a.iter().chain(b).copied().collect()
}

pub fn max_abs_diff(a: &Matrix, b: &Tensor) -> f64 {
    assert_eq!((a.len(), a.first().map_or(0, Vec::len)), b.shape());
    a.iter()
        .enumerate()
        .flat_map(|(r, row)| row.iter().enumerate().map(move |(c, v)| (v - b.get(r, c)).abs()))
        .fold(0.0, f64::max)
}

/// Unique items of a session in first-occurrence order and the normalized
/// outgoing/incoming adjacency over them.
pub fn dense_session_graph(items: &[usize]) -> (Vec<usize>, Matrix, Matrix) {
    let mut nodes: Vec<usize> = Vec::new();
    for &i in items {
        if !nodes.contains(&i) {
            nodes.push(i);
        }
    }
    let n = nodes.len();
    let idx = |item: usize| nodes.iter().position(|&x| x == item).unwrap();
    let mut edge = vec![vec![false; n]; n];
    for w in items.windows(2) {
        edge[idx(w[0])][idx(w[1])] = true;
    }
    let mut a_out = vec![vec![0.0; n]; n];
    let mut a_in = vec![vec![0.0; n]; n];
    for v in 0..n {
        let outs = (0..n).filter(|&u| edge[v][u]).count();
        let ins = (0..n).filter(|&u| edge[u][v]).count();
        for u in 0..n {
            if edge[v][u] {
                a_out[v][u] = 1.0 / outs as f64;
            }
            if edge[u][v] {
                a_in[v][u] = 1.0 / ins as f64;
            }
        }
    }
    (nodes, a_out, a_in)
}

/// One GGNN step on a single session graph.
pub fn dense_ggnn_step(store: &ParameterStore, a_out: &Matrix, a_in: &Matrix, h: &Matrix) -> Matrix {
    let p = |n: &str| param(store, &format!("ggnn.{n}"));
    let (w_out, w_in, b_out, b_in) = (p("w_out"), p("w_in"), p("b_out")[0].clone(), p("b_in")[0].clone());
    let n = h.len();
    let d = h[0].len();
    (0..n)
        .map(|v| {
            let mut m = vec![0.0; d];
            for u in 0..n {
                if a_out[v][u] != 0.0 {
                    m = add(&m, &scale(&add(&matvec(&w_out, &h[u]), &b_out), a_out[v][u]));
                }
                if a_in[v][u] != 0.0 {
                    m = add(&m, &scale(&add(&matvec(&w_in, &h[u]), &b_in), a_in[v][u]));
                }
            }
            let hv = &h[v];
            let z: Vector = add(&matvec(&p("w_z"), &m), &matvec(&p("u_z"), hv)).into_iter().map(sigmoid).collect();
            let r: Vector = add(&matvec(&p("w_r"), &m), &matvec(&p("u_r"), hv)).into_iter().map(sigmoid).collect();
            let rh: Vector = r.iter().zip(hv).map(|(a, b)| a * b).collect();
            let cand: Vector = add(&matvec(&p("w_h"), &m), &matvec(&p("u_h"), &rh)).into_iter().map(f64::tanh).collect();
            (0..d).map(|k| (1.0 - z[k]) * hv[k] + z[k] * cand[k]).collect()
        })
        .collect()
}

/// Typed edges as `(source, target)` pairs, deduplicated.
#[derive(Debug, Clone, Default)]
pub struct DenseHetero {
    pub i2i: Vec<(usize, usize)>,
    pub u2i: Vec<(usize, usize)>,
    pub i2u: Vec<(usize, usize)>,
}

impl DenseHetero {
    pub fn from_sessions(sessions: &[Session]) -> Self {
        let mut g = DenseHetero::default();
        let push = |list: &mut Vec<(usize, usize)>, e| {
            if !list.contains(&e) {
                list.push(e);
            }
        };
        for s in sessions {
            for w in s.items.windows(2) {
                push(&mut g.i2i, (w[0], w[1]));
            }
            for &i in &s.items {
                push(&mut g.u2i, (s.user_index, i));
                push(&mut g.i2u, (i, s.user_index));
            }
        }
        g
    }
}

fn typed_candidate(
    store: &ParameterStore,
    layer: usize,
    t: &str,
    sources: &[usize],
    source_states: &Matrix,
    target_state: &[f64],
) -> Vector {
    let w_msg = param(store, &format!("hetero.{layer}.{t}.w_msg"));
    let w_upd = param(store, &format!("hetero.{layer}.{t}.w_upd"));
    let b = param(store, &format!("hetero.{layer}.{t}.b_upd"))[0].clone();
    let d = target_state.len();
    let mut m = vec![0.0; d];
    for &s in sources {
        m = add(&m, &matvec(&w_msg, &source_states[s]));
    }
    let m = scale(&m, 1.0 / sources.len() as f64);
    add(&matvec(&w_upd, &concat(&m, target_state)), &b)
        .into_iter()
        .map(f64::tanh)
        .collect()
}

/// One heterogeneous layer over full item and user state tables.
pub fn dense_hetero_step(
    store: &ParameterStore,
    layer: usize,
    g: &DenseHetero,
    items: &Matrix,
    users: &Matrix,
) -> (Matrix, Matrix) {
    let srcs = |edges: &[(usize, usize)], target: usize| -> Vec<usize> {
        edges.iter().filter(|e| e.1 == target).map(|e| e.0).collect()
    };
    let new_items = (0..items.len())
        .map(|v| {
            let mut cands = Vec::new();
            let from_items = srcs(&g.i2i, v);
            if !from_items.is_empty() {
                cands.push(typed_candidate(store, layer, "i2i", &from_items, items, &items[v]));
            }
            let from_users = srcs(&g.u2i, v);
            if !from_users.is_empty() {
                cands.push(typed_candidate(store, layer, "u2i", &from_users, users, &items[v]));
            }
            if cands.is_empty() {
                return items[v].clone();
            }
            let k = cands.len() as f64;
            cands.iter().fold(vec![0.0; items[v].len()], |acc, c| add(&acc, &scale(c, 1.0 / k)))
        })
        .collect();
    let new_users = (0..users.len())
        .map(|u| {
            let from_items = srcs(&g.i2u, u);
            if from_items.is_empty() {
                users[u].clone()
            } else {
                typed_candidate(store, layer, "i2u", &from_items, items, &users[u])
            }
        })
        .collect();
    (new_items, new_users)
}

/// Attention readout of one session: returns `(s, alpha)`.
pub fn dense_readout(store: &ParameterStore, states: &Matrix, last: usize) -> (Vector, Vector) {
    let w1 = param(store, "readout.w_1");
    let w2 = param(store, "readout.w_2");
    let c = param(store, "readout.c")[0].clone();
    let q: Vector = param(store, "readout.q").iter().map(|r| r[0]).collect();
    let w3 = param(store, "readout.w_3");
    let vn = &states[last];
    let alpha: Vector = states
        .iter()
        .map(|vi| {
            let pre = add(&add(&matvec(&w1, vi), &matvec(&w2, vn)), &c);
            let act: Vector = pre.into_iter().map(sigmoid).collect();
            dot(&q, &act)
        })
        .collect();
    let d = vn.len();
    let mut sg = vec![0.0; d];
    for (a, vi) in alpha.iter().zip(states) {
        sg = add(&sg, &scale(vi, *a));
    }
    (matvec(&w3, &concat(vn, &sg)), alpha)
}

/// User–session attention for one user.
pub fn dense_simnet(store: &ParameterStore, user: &[f64], sessions: &Matrix, literal: bool) -> Vector {
    if sessions.is_empty() {
        return user.to_vec();
    }
    let wq = param(store, "simnet.w_q");
    let wk = param(store, "simnet.w_k");
    let wv = param(store, "simnet.w_v");
    let q = matvec(&wq, user);
    let m: Vector = sessions.iter().map(|s| dot(&q, &matvec(&wk, s))).collect();
    let max = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vector = m.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = e.iter().sum();
    let mut out = vec![0.0; user.len()];
    for (ej, s) in e.iter().zip(sessions) {
        let value = if literal { matvec(&wv, user) } else { matvec(&wv, s) };
        out = add(&out, &scale(&value, ej / z));
    }
    out
}

/// Gate and fused embedding for one session.
pub fn dense_fuse(store: &ParameterStore, s_local: Option<&[f64]>, s_global: &[f64], u_global: &[f64]) -> (f64, Vector) {
    let w = param(store, "fuse.w_s")[0].clone();
    let beta = sigmoid(dot(&w, &concat(s_global, u_global)));
    let mixed = add(&scale(s_global, beta), &scale(u_global, 1.0 - beta));
    let out = match s_local {
        Some(l) => add(l, &mixed),
        None => mixed,
    };
    (beta, out)
}

/// Overwrites every parameter with uniform values in `±scale`.
pub fn randomize(store: &mut ParameterStore, seed: u64, scale: f64) {
    let mut r = rng(seed);
    let names: Vec<String> = store.names().map(str::to_owned).collect();
    for n in names {
        let (rows, cols) = store.value(&n).unwrap().shape();
        store.insert(n, random_tensor(&mut r, rows, cols, scale));
    }
}

pub fn session(user: usize, items: &[usize], start: i64) -> Session {
    Session {
        user_index: user,
        items: items.to_vec(),
        start_time: start,
    }
}

pub fn small_corpus(n_items: usize, n_users: usize, train: Vec<Session>, test: Vec<Session>) -> Corpus {
    Corpus {
        item_vocab: Vocab::from_ordered((0..n_items).map(|i| format!("i{i:02}")).collect()).unwrap(),
        user_vocab: Vocab::from_ordered((0..n_users).map(|u| format!("u{u}")).collect()).unwrap(),
        train_sessions: train,
        test_sessions: test,
    }
}

/// Relative agreement test used by the gradient checks: passes when the
/// absolute difference is below `abs_floor` or below `rel` times the larger
/// magnitude.
pub fn grads_agree(analytic: f64, numeric: f64, rel: f64, abs_floor: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= abs_floor || diff <= rel * analytic.abs().max(numeric.abs())
}

/// Worst relative error `|a - n| / max(|a|, |n|, scale_floor)` over all
/// entries. The floor keeps gradients that are numerically zero from
/// turning rounding noise into large ratios.
pub fn worst_relative(pairs: &[(f64, f64)], scale_floor: f64) -> f64 {
    pairs
        .iter()
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(scale_floor))
        .fold(0.0, f64::max)
}

/// Tally helper for per-seed criteria.
pub fn count_true<K: Ord>(map: &BTreeMap<K, bool>) -> usize {
    map.values().filter(|&&b| b).count()
}

pub mod checks;
