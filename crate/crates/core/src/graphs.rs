//! Session graphs and the global user–item graph.
//!
//! A [`LocalSessionGraph`] is the directed graph over one session's unique
//! items with row-normalized outgoing and incoming adjacency blocks. The
//! [`GlobalHeteroGraph`] is built once from all training sessions and holds
//! three typed, deduplicated edge relations: item→item (consecutive items),
//! user→item and item→user.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::corpus::Session;
use crate::diffkernel::{SparseMatrix, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LocalSessionGraph {
    /// Item indices in first-occurrence order.
    pub unique_items: Vec<usize>,
    /// Position in the session → position in `unique_items`.
    pub alias: Vec<usize>,
    /// `n × 2n`: columns `0..n` outgoing, `n..2n` incoming.
    pub adj: Tensor,
    /// Position in `unique_items` of the session's last element.
    pub last_unique_pos: usize,
}

impl LocalSessionGraph {
    pub fn n_nodes(&self) -> usize {
        self.unique_items.len()
    }

    pub fn out_weight(&self, from: usize, to: usize) -> f64 {
        self.adj.get(from, to)
    }

    pub fn in_weight(&self, at: usize, from: usize) -> f64 {
        self.adj.get(at, self.n_nodes() + from)
    }
}

pub fn build_local_graph(items: &[usize]) -> Result<LocalSessionGraph> {
    let Some(&last) = items.last() else {
        return Err(Error::Input("cannot build a session graph from an empty sequence".into()));
    };
    let mut unique_items: Vec<usize> = Vec::new();
    let mut pos: BTreeMap<usize, usize> = BTreeMap::new();
    let alias: Vec<usize> = items
        .iter()
        .map(|&item| {
            *pos.entry(item).or_insert_with(|| {
                unique_items.push(item);
                unique_items.len() - 1
            })
        })
        .collect();
    let edges: BTreeSet<(usize, usize)> = alias.windows(2).map(|w| (w[0], w[1])).collect();
    let n = unique_items.len();
    let mut out_deg = vec![0usize; n];
    let mut in_deg = vec![0usize; n];
    for &(s, t) in &edges {
        out_deg[s] += 1;
        in_deg[t] += 1;
    }
    let mut adj = Tensor::zeros(n, 2 * n);
    for &(s, t) in &edges {
        adj.set(s, t, 1.0 / out_deg[s] as f64);
        adj.set(t, n + s, 1.0 / in_deg[t] as f64);
    }
    Ok(LocalSessionGraph {
        last_unique_pos: pos[&last],
        unique_items,
        alias,
        adj,
    })
}

/// Several local graphs laid out block-diagonally so one set of dense
/// operations covers a whole batch.
#[derive(Debug, Clone)]
pub struct LocalBatch {
    /// Item index of every node.
    pub node_items: Arc<[usize]>,
    /// Owning graph of every node.
    pub node_graph: Arc<[usize]>,
    /// Node index of each graph's last item.
    pub last_node: Arc<[usize]>,
    pub out_adj: Arc<SparseMatrix>,
    pub in_adj: Arc<SparseMatrix>,
    pub n_graphs: usize,
}

impl LocalBatch {
    pub fn new(graphs: &[LocalSessionGraph]) -> Self {
        let total: usize = graphs.iter().map(LocalSessionGraph::n_nodes).sum();
        let mut node_items = Vec::with_capacity(total);
        let mut node_graph = Vec::with_capacity(total);
        let mut last_node = Vec::with_capacity(graphs.len());
        let mut out_t = Vec::new();
        let mut in_t = Vec::new();
        let mut offset = 0;
        for (g_idx, g) in graphs.iter().enumerate() {
            let n = g.n_nodes();
            node_items.extend_from_slice(&g.unique_items);
            node_graph.extend(std::iter::repeat_n(g_idx, n));
            last_node.push(offset + g.last_unique_pos);
            for i in 0..n {
                for j in 0..n {
                    let w_out = g.out_weight(i, j);
                    if w_out != 0.0 {
                        out_t.push((offset + i, offset + j, w_out));
                    }
                    let w_in = g.in_weight(i, j);
                    if w_in != 0.0 {
                        in_t.push((offset + i, offset + j, w_in));
                    }
                }
            }
            offset += n;
        }
        LocalBatch {
            node_items: node_items.into(),
            node_graph: node_graph.into(),
            last_node: last_node.into(),
            out_adj: Arc::new(SparseMatrix::from_triplets(total, total, &out_t)),
            in_adj: Arc::new(SparseMatrix::from_triplets(total, total, &in_t)),
            n_graphs: graphs.len(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.node_items.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeType {
    I2i,
    U2i,
    I2u,
}

impl EdgeType {
    pub const ALL: [EdgeType; 3] = [EdgeType::I2i, EdgeType::U2i, EdgeType::I2u];

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeType::I2i => "i2i",
            EdgeType::U2i => "u2i",
            EdgeType::I2u => "i2u",
        }
    }
}

/// Per-target neighbor lists in compressed form; each list is sorted and
/// deduplicated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    sources: Vec<usize>,
}

impl Adjacency {
    fn from_sets(sets: Vec<BTreeSet<usize>>) -> Self {
        let mut offsets = Vec::with_capacity(sets.len() + 1);
        let mut sources = Vec::new();
        offsets.push(0);
        for set in sets {
            sources.extend(set);
            offsets.push(sources.len());
        }
        Adjacency { offsets, sources }
    }

    pub fn n_targets(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbors(&self, target: usize) -> &[usize] {
        &self.sources[self.offsets[target]..self.offsets[target + 1]]
    }

    pub fn n_edges(&self) -> usize {
        self.sources.len()
    }

    /// All `(src, dst)` pairs ordered by destination then source.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_targets()).flat_map(move |t| self.neighbors(t).iter().map(move |&s| (s, t)))
    }

    /// Row-stochastic operator averaging over each target's sources.
    /// Targets without neighbors get an all-zero row.
    pub fn mean_operator(&self, n_sources: usize) -> SparseMatrix {
        let triplets: Vec<(usize, usize, f64)> = (0..self.n_targets())
            .flat_map(|t| {
                let nb = self.neighbors(t);
                let w = 1.0 / nb.len() as f64;
                nb.iter().map(move |&s| (t, s, w))
            })
            .collect();
        SparseMatrix::from_triplets(self.n_targets(), n_sources, &triplets)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalHeteroGraph {
    pub n_items: usize,
    pub n_users: usize,
    /// Target item ← source items.
    pub i2i: Adjacency,
    /// Target item ← source users.
    pub u2i: Adjacency,
    /// Target user ← source items.
    pub i2u: Adjacency,
}

impl GlobalHeteroGraph {
    pub fn edges_of(&self, t: EdgeType) -> &Adjacency {
        match t {
            EdgeType::I2i => &self.i2i,
            EdgeType::U2i => &self.u2i,
            EdgeType::I2u => &self.i2u,
        }
    }

    /// Number of source nodes for an edge type.
    pub fn n_sources(&self, t: EdgeType) -> usize {
        match t {
            EdgeType::I2i | EdgeType::I2u => self.n_items,
            EdgeType::U2i => self.n_users,
        }
    }

    /// Writes one JSON object per edge: `{"t":..,"src":..,"dst":..}`.
    pub fn dump_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in EdgeType::ALL {
            for (src, dst) in self.edges_of(t).edges() {
                writeln!(out, r#"{{"t":"{}","src":{src},"dst":{dst}}}"#, t.as_str())
                    .expect("write to string");
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Single pass over the training sessions.
pub fn build_global_graph(train_sessions: &[Session], n_items: usize, n_users: usize) -> Result<GlobalHeteroGraph> {
    if train_sessions.is_empty() {
        return Err(Error::EmptyCorpus("global graph needs at least one training session".into()));
    }
    let mut i2i = vec![BTreeSet::new(); n_items];
    let mut u2i = vec![BTreeSet::new(); n_items];
    let mut i2u = vec![BTreeSet::new(); n_users];
    for s in train_sessions {
        if s.user_index >= n_users || s.items.iter().any(|&i| i >= n_items) {
            return Err(Error::Input(format!(
                "session of user {} out of range ({n_items} items, {n_users} users)",
                s.user_index
            )));
        }
        for w in s.items.windows(2) {
            i2i[w[1]].insert(w[0]);
        }
        for &item in &s.items {
            u2i[item].insert(s.user_index);
            i2u[s.user_index].insert(item);
        }
    }
    Ok(GlobalHeteroGraph {
        n_items,
        n_users,
        i2i: Adjacency::from_sets(i2i),
        u2i: Adjacency::from_sets(u2i),
        i2u: Adjacency::from_sets(i2u),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EdgeTypeStats {
    pub edges: usize,
    /// In-degree → number of target nodes with that in-degree.
    pub in_degree_histogram: BTreeMap<usize, usize>,
}

pub fn neighbor_stats(graph: &GlobalHeteroGraph) -> BTreeMap<EdgeType, EdgeTypeStats> {
    EdgeType::ALL
        .into_iter()
        .map(|t| {
            let adj = graph.edges_of(t);
            let mut hist = BTreeMap::new();
            for v in 0..adj.n_targets() {
                *hist.entry(adj.neighbors(v).len()).or_insert(0) += 1;
            }
            (
                t,
                EdgeTypeStats {
                    edges: adj.n_edges(),
                    in_degree_histogram: hist,
                },
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branching_session_weights() {
        // a=0 b=1 c=2 d=3 : [a,b,c,b,d]
        let g = build_local_graph(&[0, 1, 2, 1, 3]).unwrap();
        assert_eq!(g.unique_items, [0, 1, 2, 3]);
        assert_eq!(g.alias, [0, 1, 2, 1, 3]);
        assert_eq!(g.last_unique_pos, 3);
        assert_eq!(g.out_weight(1, 2), 0.5);
        assert_eq!(g.out_weight(1, 3), 0.5);
        assert_eq!(g.out_weight(0, 1), 1.0);
        assert_eq!(g.in_weight(1, 0), 0.5);
        assert_eq!(g.in_weight(1, 2), 0.5);
        assert_eq!(g.out_weight(3, 0) + g.in_weight(0, 3), 0.0);
    }

    #[test]
    fn single_item_has_no_edges() {
        let g = build_local_graph(&[7]).unwrap();
        assert_eq!(g.unique_items, [7]);
        assert_eq!(g.adj, Tensor::zeros(1, 2));
        assert!(build_local_graph(&[]).is_err());
    }

    #[test]
    fn repeated_item_is_one_self_loop() {
        let g = build_local_graph(&[4, 4]).unwrap();
        assert_eq!(g.adj, Tensor::from_rows(&[vec![1.0, 1.0]]));
    }

    #[test]
    fn last_item_seen_earlier() {
        let g = build_local_graph(&[5, 6, 5]).unwrap();
        assert_eq!(g.last_unique_pos, 0);
    }

    fn session(user: usize, items: &[usize]) -> Session {
        Session {
            user_index: user,
            items: items.to_vec(),
            start_time: 0,
        }
    }

    #[test]
    fn single_user_single_session_unfolds() {
        let g = build_global_graph(&[session(0, &[0, 1])], 2, 1).unwrap();
        assert_eq!(g.i2i.edges().collect::<Vec<_>>(), [(0, 1)]);
        assert_eq!(g.u2i.edges().collect::<Vec<_>>(), [(0, 0), (0, 1)]);
        assert_eq!(g.i2u.edges().collect::<Vec<_>>(), [(0, 0), (1, 0)]);
        let stats = neighbor_stats(&g);
        assert_eq!(stats[&EdgeType::I2i].edges, 1);
        assert_eq!(stats[&EdgeType::U2i].edges, 2);
        assert_eq!(stats[&EdgeType::I2u].edges, 2);
    }

    #[test]
    fn duplicate_transitions_deduplicated() {
        let g = build_global_graph(&[session(0, &[0, 0, 1])], 2, 1).unwrap();
        assert_eq!(g.i2i.edges().collect::<Vec<_>>(), [(0, 0), (0, 1)]);
    }

    #[test]
    fn empty_training_set_is_an_error() {
        assert!(build_global_graph(&[], 3, 1).is_err());
        assert!(build_global_graph(&[session(2, &[0])], 3, 1).is_err());
    }

    #[test]
    fn mean_operator_rows_average() {
        let g = build_global_graph(&[session(0, &[0, 2]), session(1, &[1, 2])], 3, 2).unwrap();
        let m = g.i2i.mean_operator(3).to_dense();
        assert_eq!(m.row(2), &[0.5, 0.5, 0.0]);
        assert_eq!(m.row(0), &[0.0, 0.0, 0.0]);
    }
}
