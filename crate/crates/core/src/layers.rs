//! Model layers over the tape.
//!
//! All layers work on batches: node states are rows of one matrix and
//! per-graph quantities are rows indexed by graph. A single session is a
//! batch of one.

use std::sync::Arc;

use crate::diffkernel::{Bindings, SparseMatrix, Tape, Tensor, Var, EDGE_TYPES};
use crate::error::Result;
use crate::graphs::{EdgeType, GlobalHeteroGraph, LocalBatch};

/// One gated propagation step over the batched local graphs.
///
/// Messages mix linearly transformed states through the normalized
/// outgoing and incoming blocks; a GRU cell (no gate biases) then merges
/// message and state.
pub fn ggnn_step(tape: &mut Tape, batch: &LocalBatch, h: Var, p: &Bindings, shared_w: bool) -> Result<Var> {
    let (w_out, b_out, w_in, b_in) = if shared_w {
        let (w, b) = (p.get("ggnn.w_msg")?, p.get("ggnn.b_msg")?);
        (w, b, w, b)
    } else {
        (
            p.get("ggnn.w_out")?,
            p.get("ggnn.b_out")?,
            p.get("ggnn.w_in")?,
            p.get("ggnn.b_in")?,
        )
    };
    let lin_out = tape.matmul_t(h, w_out)?;
    let lin_out = tape.add_row(lin_out, b_out)?;
    let msg_out = tape.spmm(&batch.out_adj, lin_out)?;
    let lin_in = tape.matmul_t(h, w_in)?;
    let lin_in = tape.add_row(lin_in, b_in)?;
    let msg_in = tape.spmm(&batch.in_adj, lin_in)?;
    let m = tape.add(msg_out, msg_in)?;
    gru_cell(tape, m, h, p)
}

fn gate(tape: &mut Tape, m: Var, h: Var, w: Var, u: Var) -> Result<Var> {
    let a = tape.matmul_t(m, w)?;
    let b = tape.matmul_t(h, u)?;
    tape.add(a, b)
}

/// `z = σ(W_z m + U_z h)`, `r = σ(W_r m + U_r h)`,
/// `ĥ = tanh(W_h m + U_h (r ⊙ h))`, `h' = (1 − z) ⊙ h + z ⊙ ĥ`.
fn gru_cell(tape: &mut Tape, m: Var, h: Var, p: &Bindings) -> Result<Var> {
    let z_pre = gate(tape, m, h, p.get("ggnn.w_z")?, p.get("ggnn.u_z")?)?;
    let z = tape.sigmoid(z_pre);
    let r_pre = gate(tape, m, h, p.get("ggnn.w_r")?, p.get("ggnn.u_r")?)?;
    let r = tape.sigmoid(r_pre);
    let rh = tape.mul(r, h)?;
    let cand_pre = gate(tape, m, rh, p.get("ggnn.w_h")?, p.get("ggnn.u_h")?)?;
    let cand = tape.tanh(cand_pre);
    let keep = tape.one_minus(z);
    let kept = tape.mul(keep, h)?;
    let fresh = tape.mul(z, cand)?;
    tape.add(kept, fresh)
}

pub fn ggnn(tape: &mut Tape, batch: &LocalBatch, h0: Var, p: &Bindings, steps: usize, shared_w: bool) -> Result<Var> {
    (0..steps).try_fold(h0, |h, _| ggnn_step(tape, batch, h, p, shared_w))
}

/// Constant operators derived from the global graph: neighbor-mean matrices
/// per edge type and the per-node weights that combine candidates.
#[derive(Debug, Clone)]
pub struct HeteroOperators {
    pub n_items: usize,
    pub n_users: usize,
    mean: [Arc<SparseMatrix>; 3],
    item_w_i2i: Tensor,
    item_w_u2i: Tensor,
    item_keep: Tensor,
    user_w_i2u: Tensor,
    user_keep: Tensor,
}

impl HeteroOperators {
    pub fn new(graph: &GlobalHeteroGraph) -> Self {
        let mean = EdgeType::ALL.map(|t| Arc::new(graph.edges_of(t).mean_operator(graph.n_sources(t))));
        let mut item_w_i2i = vec![0.0; graph.n_items];
        let mut item_w_u2i = vec![0.0; graph.n_items];
        let mut item_keep = vec![0.0; graph.n_items];
        for v in 0..graph.n_items {
            let has_i2i = !graph.i2i.neighbors(v).is_empty();
            let has_u2i = !graph.u2i.neighbors(v).is_empty();
            let count = usize::from(has_i2i) + usize::from(has_u2i);
            if count == 0 {
                item_keep[v] = 1.0;
            } else {
                let w = 1.0 / count as f64;
                item_w_i2i[v] = if has_i2i { w } else { 0.0 };
                item_w_u2i[v] = if has_u2i { w } else { 0.0 };
            }
        }
        let mut user_w_i2u = vec![0.0; graph.n_users];
        let mut user_keep = vec![0.0; graph.n_users];
        for u in 0..graph.n_users {
            if graph.i2u.neighbors(u).is_empty() {
                user_keep[u] = 1.0;
            } else {
                user_w_i2u[u] = 1.0;
            }
        }
        HeteroOperators {
            n_items: graph.n_items,
            n_users: graph.n_users,
            mean,
            item_w_i2i: Tensor::col_vector(&item_w_i2i),
            item_w_u2i: Tensor::col_vector(&item_w_u2i),
            item_keep: Tensor::col_vector(&item_keep),
            user_w_i2u: Tensor::col_vector(&user_w_i2u),
            user_keep: Tensor::col_vector(&user_keep),
        }
    }

    fn mean_of(&self, t: EdgeType) -> &Arc<SparseMatrix> {
        &self.mean[t as usize]
    }
}

/// Candidate state for every target node under one edge type:
/// `tanh(W_upd [mean_u(W_msg h_u) ∥ h_v] + b)`.
fn typed_candidate(
    tape: &mut Tape,
    ops: &HeteroOperators,
    t: EdgeType,
    sources: Var,
    targets: Var,
    p: &Bindings,
    layer: usize,
) -> Result<Var> {
    let prefix = format!("hetero.{layer}.{}", t.as_str());
    let agg = tape.spmm(ops.mean_of(t), sources)?;
    let msg = tape.matmul_t(agg, p.get(&format!("{prefix}.w_msg"))?)?;
    let cat = tape.concat_cols(&[msg, targets])?;
    let upd = tape.matmul_t(cat, p.get(&format!("{prefix}.w_upd"))?)?;
    let upd = tape.add_row(upd, p.get(&format!("{prefix}.b_upd"))?)?;
    Ok(tape.tanh(upd))
}

/// One heterogeneous propagation layer. Items average their i2i and u2i
/// candidates over the types they have in-edges for; users take their i2u
/// candidate; nodes with no applicable in-edges keep their state.
pub fn hetero_step(
    tape: &mut Tape,
    ops: &HeteroOperators,
    items: Var,
    users: Var,
    p: &Bindings,
    layer: usize,
) -> Result<(Var, Var)> {
    debug_assert_eq!(EDGE_TYPES, EdgeType::ALL.map(EdgeType::as_str));
    let c_i2i = typed_candidate(tape, ops, EdgeType::I2i, items, items, p, layer)?;
    let c_u2i = typed_candidate(tape, ops, EdgeType::U2i, users, items, p, layer)?;
    let c_i2u = typed_candidate(tape, ops, EdgeType::I2u, items, users, p, layer)?;

    let w_i2i = tape.constant(ops.item_w_i2i.clone());
    let w_u2i = tape.constant(ops.item_w_u2i.clone());
    let keep_i = tape.constant(ops.item_keep.clone());
    let a = tape.mul_col(c_i2i, w_i2i)?;
    let b = tape.mul_col(c_u2i, w_u2i)?;
    let k = tape.mul_col(items, keep_i)?;
    let ab = tape.add(a, b)?;
    let new_items = tape.add(ab, k)?;

    let w_i2u = tape.constant(ops.user_w_i2u.clone());
    let keep_u = tape.constant(ops.user_keep.clone());
    let a = tape.mul_col(c_i2u, w_i2u)?;
    let k = tape.mul_col(users, keep_u)?;
    let new_users = tape.add(a, k)?;
    Ok((new_items, new_users))
}

pub fn hetero(
    tape: &mut Tape,
    ops: &HeteroOperators,
    items: Var,
    users: Var,
    p: &Bindings,
    layers: usize,
) -> Result<(Var, Var)> {
    (0..layers).try_fold((items, users), |(i, u), layer| hetero_step(tape, ops, i, u, p, layer))
}

/// Per-graph readout results, each `n_graphs × d` (`alpha` is per node).
#[derive(Debug, Clone, Copy)]
pub struct SessionEmbedding {
    /// State of the chronologically last item.
    pub s_local_last: Var,
    /// Attention-weighted sum over the session's unique items.
    pub s_attn: Var,
    /// `W_3 [s_local_last ∥ s_attn]`.
    pub s: Var,
    pub alpha: Var,
}

/// `α_i = qᵀ σ(W_1 v_i + W_2 v_n + c)`, `s_g = Σ_i α_i v_i`,
/// `s = W_3 [v_n ∥ s_g]`.
pub fn attention_readout(tape: &mut Tape, batch: &LocalBatch, states: Var, p: &Bindings) -> Result<SessionEmbedding> {
    let v_n = tape.gather_rows(states, Arc::clone(&batch.last_node))?;
    let v_n_per_node = tape.gather_rows(v_n, Arc::clone(&batch.node_graph))?;
    let a = tape.matmul_t(states, p.get("readout.w_1")?)?;
    let b = tape.matmul_t(v_n_per_node, p.get("readout.w_2")?)?;
    let pre = tape.add(a, b)?;
    let pre = tape.add_row(pre, p.get("readout.c")?)?;
    let act = tape.sigmoid(pre);
    let alpha = tape.matmul(act, p.get("readout.q")?)?;
    let weighted = tape.mul_col(states, alpha)?;
    let s_attn = tape.scatter_add_rows(weighted, Arc::clone(&batch.node_graph), batch.n_graphs)?;
    let cat = tape.concat_cols(&[v_n, s_attn])?;
    let s = tape.matmul_t(cat, p.get("readout.w_3")?)?;
    Ok(SessionEmbedding {
        s_local_last: v_n,
        s_attn,
        s,
        alpha,
    })
}

/// User–session attention over a batch.
///
/// `users` is the `n_users × d` user table, `sessions` holds one session
/// embedding per row and `session_user[j]` names its user. For every user
/// with sessions, `m_j = (W_q u)·(W_k s_j)`, `α = softmax_j(m)` over that
/// user's sessions and the output row is `Σ_j α_j W_v s_j` (or
/// `Σ_j α_j W_v u` with `literal_value`). Users without sessions pass
/// through unchanged.
pub fn user_session_simnet(
    tape: &mut Tape,
    users: Var,
    sessions: Var,
    session_user: &Arc<[usize]>,
    p: &Bindings,
    literal_value: bool,
) -> Result<Var> {
    let n_users = tape.value(users).rows();
    let u_rows = tape.gather_rows(users, Arc::clone(session_user))?;
    let q = tape.matmul_t(u_rows, p.get("simnet.w_q")?)?;
    let k = tape.matmul_t(sessions, p.get("simnet.w_k")?)?;
    let qk = tape.mul(q, k)?;
    let m = tape.sum_cols(qk);
    let alpha = tape.segment_softmax(m, Arc::clone(session_user), n_users)?;
    let value_src = if literal_value { u_rows } else { sessions };
    let v = tape.matmul_t(value_src, p.get("simnet.w_v")?)?;
    let weighted = tape.mul_col(v, alpha)?;
    let updated = tape.scatter_add_rows(weighted, Arc::clone(session_user), n_users)?;

    let mut bypass = vec![1.0; n_users];
    for &u in session_user.iter() {
        bypass[u] = 0.0;
    }
    let skipped = bypass.iter().filter(|&&b| b == 1.0).count();
    if skipped > 0 {
        log::trace!("simnet: {skipped} users without sessions pass through unchanged");
    }
    let mask = tape.constant(Tensor::col_vector(&bypass));
    let kept = tape.mul_col(users, mask)?;
    tape.add(updated, kept)
}

/// Single-user form: `sessions` is `k × d` or absent. An absent session list
/// returns `user` unchanged.
pub fn user_session_simnet_one(
    tape: &mut Tape,
    user: Var,
    sessions: Option<Var>,
    p: &Bindings,
    literal_value: bool,
) -> Result<Var> {
    let Some(sessions) = sessions else {
        log::info!("simnet: user has no sessions in this batch; embedding unchanged");
        return Ok(user);
    };
    let k = tape.value(sessions).rows();
    let owners: Arc<[usize]> = vec![0; k].into();
    user_session_simnet(tape, user, sessions, &owners, p, literal_value)
}

#[derive(Debug, Clone, Copy)]
pub struct FusionOutput {
    /// `n × 1` gate values in (0, 1).
    pub beta: Var,
    pub s_final: Var,
}

/// `β = σ(w_s · [s_global ∥ u_global])`,
/// `s_final = s_local + β s_global + (1 − β) u_global`. Passing
/// `s_local = None` drops the local term.
pub fn fuse(
    tape: &mut Tape,
    s_local: Option<Var>,
    s_global: Var,
    u_global: Var,
    p: &Bindings,
) -> Result<FusionOutput> {
    let cat = tape.concat_cols(&[s_global, u_global])?;
    let logit = tape.matmul_t(cat, p.get("fuse.w_s")?)?;
    let beta = tape.sigmoid(logit);
    let one_minus = tape.one_minus(beta);
    let a = tape.mul_col(s_global, beta)?;
    let b = tape.mul_col(u_global, one_minus)?;
    let mixed = tape.add(a, b)?;
    let s_final = match s_local {
        Some(s) => tape.add(s, mixed)?,
        None => mixed,
    };
    Ok(FusionOutput { beta, s_final })
}
