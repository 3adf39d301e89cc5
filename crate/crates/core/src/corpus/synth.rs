//! Planted-preference synthetic corpora.
//!
//! Users and items are partitioned into clusters. Each cluster has its own
//! first-order transition structure over its items; each user additionally
//! has a few favourite items that the walk keeps returning to. Sessions are
//! random walks, so a first-order model recovers most of the signal and a
//! user-aware model can recover the rest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{chronological_split, Corpus, Session, Vocab};
use crate::error::{Error, Result};

/// Successors an item prefers within its cluster.
const PREFERRED_SUCCESSORS: usize = 3;
/// Favourite items per user.
const USER_FAVOURITES: usize = 4;
const P_PREFERRED: f64 = 0.6;
const P_FAVOURITE: f64 = 0.25;
const SESSION_SPACING_SECONDS: i64 = 86_400;
const EPOCH_BASE: i64 = 1_600_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    pub sessions_per_user: usize,
    pub mean_session_len: f64,
    pub seed: u64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

fn default_train_fraction() -> f64 {
    0.8
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_users: 50,
            n_items: 200,
            n_clusters: 4,
            sessions_per_user: 100,
            mean_session_len: 8.0,
            seed: 7,
            train_fraction: default_train_fraction(),
        }
    }
}

/// A generated corpus plus the planted cluster assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub user_cluster: Vec<usize>,
    pub item_cluster: Vec<usize>,
}

impl SyntheticCorpus {
    /// Writes the cluster sidecar `clusters.tsv` (`kind, index, cluster`).
    pub fn write_sidecar(&self, dir: &Path) -> Result<()> {
        let mut out = String::from("kind\tindex\tcluster\n");
        for (i, c) in self.user_cluster.iter().enumerate() {
            out.push_str(&format!("user\t{i}\t{c}\n"));
        }
        for (i, c) in self.item_cluster.iter().enumerate() {
            out.push_str(&format!("item\t{i}\t{c}\n"));
        }
        let path = dir.join("clusters.tsv");
        fs::write(&path, out).map_err(|e| Error::io(&path, e))
    }
}

struct ClusterModel {
    items: Vec<usize>,
    start_weights: Vec<f64>,
    /// Per item of the cluster (by global index): preferred successors and
    /// their weights.
    successors: BTreeMap<usize, Vec<(usize, f64)>>,
}

fn weighted_pick(rng: &mut ChaCha8Rng, options: &[(usize, f64)]) -> usize {
    let total: f64 = options.iter().map(|(_, w)| w).sum();
    let mut x = rng.random::<f64>() * total;
    for &(item, w) in options {
        if x < w {
            return item;
        }
        x -= w;
    }
    options.last().expect("nonempty options").0
}

fn label(prefix: char, i: usize, n: usize) -> String {
    let width = n.saturating_sub(1).to_string().len();
    format!("{prefix}{i:0width$}")
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    let c = config;
    if c.n_users == 0 || c.n_items == 0 || c.n_clusters == 0 || c.sessions_per_user == 0 {
        return Err(Error::Config("synthetic counts must be positive".into()));
    }
    if c.n_items < c.n_clusters {
        return Err(Error::Config(format!(
            "n_items ({}) must be at least n_clusters ({})",
            c.n_items, c.n_clusters
        )));
    }
    if c.n_clusters > c.n_users {
        return Err(Error::Config(format!(
            "n_clusters ({}) must not exceed n_users ({})",
            c.n_clusters, c.n_users
        )));
    }
    if !(c.mean_session_len >= 1.0) {
        return Err(Error::Config("mean_session_len must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);

    let mut user_perm: Vec<usize> = (0..c.n_users).collect();
    user_perm.shuffle(&mut rng);
    let mut user_cluster = vec![0; c.n_users];
    for (pos, &u) in user_perm.iter().enumerate() {
        user_cluster[u] = pos % c.n_clusters;
    }
    let mut item_perm: Vec<usize> = (0..c.n_items).collect();
    item_perm.shuffle(&mut rng);
    let mut item_cluster = vec![0; c.n_items];
    for (pos, &i) in item_perm.iter().enumerate() {
        item_cluster[i] = pos % c.n_clusters;
    }

    let clusters: Vec<ClusterModel> = (0..c.n_clusters)
        .map(|k| {
            let items: Vec<usize> = (0..c.n_items).filter(|&i| item_cluster[i] == k).collect();
            let mut ranks: Vec<usize> = (0..items.len()).collect();
            ranks.shuffle(&mut rng);
            let start_weights = ranks.iter().map(|&r| 1.0 / (r as f64 + 1.0).powf(0.8)).collect();
            let successors = items
                .iter()
                .map(|&i| {
                    let pool: Vec<usize> = if items.len() > 1 {
                        items.iter().copied().filter(|&j| j != i).collect()
                    } else {
                        items.clone()
                    };
                    let chosen: Vec<(usize, f64)> = pool
                        .choose_multiple(&mut rng, PREFERRED_SUCCESSORS)
                        .map(|&j| (j, rng.random_range(0.5..1.5)))
                        .collect();
                    (i, chosen)
                })
                .collect();
            ClusterModel {
                items,
                start_weights,
                successors,
            }
        })
        .collect();

    let length_dist = if c.mean_session_len > 2.0 {
        Some(Poisson::new(c.mean_session_len - 2.0).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };

    let mut per_user: BTreeMap<usize, Vec<Session>> = BTreeMap::new();
    for user in 0..c.n_users {
        let cluster = &clusters[user_cluster[user]];
        let favourites: Vec<usize> = cluster
            .items
            .choose_multiple(&mut rng, USER_FAVOURITES)
            .copied()
            .collect();
        let starts: Vec<(usize, f64)> = cluster
            .items
            .iter()
            .copied()
            .zip(cluster.start_weights.iter().copied())
            .collect();
        let user_base = EPOCH_BASE + user as i64 * 7;
        let sessions = (0..c.sessions_per_user)
            .map(|s| {
                let len = match &length_dist {
                    Some(dist) => 2 + dist.sample(&mut rng) as usize,
                    None => c.mean_session_len.round() as usize,
                };
                let mut items = Vec::with_capacity(len);
                let first = if rng.random::<f64>() < 0.5 {
                    *favourites.choose(&mut rng).expect("favourites")
                } else {
                    weighted_pick(&mut rng, &starts)
                };
                items.push(first);
                while items.len() < len {
                    let cur = *items.last().expect("nonempty");
                    let x = rng.random::<f64>();
                    let next = if x < P_PREFERRED {
                        weighted_pick(&mut rng, &cluster.successors[&cur])
                    } else if x < P_PREFERRED + P_FAVOURITE {
                        *favourites.choose(&mut rng).expect("favourites")
                    } else {
                        *cluster.items.choose(&mut rng).expect("cluster items")
                    };
                    items.push(next);
                }
                Session {
                    user_index: user,
                    items,
                    start_time: user_base + s as i64 * SESSION_SPACING_SECONDS,
                }
            })
            .collect();
        per_user.insert(user, sessions);
    }

    let (train, test) = chronological_split(&per_user, c.train_fraction)?;
    let corpus = Corpus {
        item_vocab: Vocab::from_ordered((0..c.n_items).map(|i| label('i', i, c.n_items)).collect())?,
        user_vocab: Vocab::from_ordered((0..c.n_users).map(|u| label('u', u, c.n_users)).collect())?,
        train_sessions: train.into_values().flatten().collect(),
        test_sessions: test.into_values().flatten().collect(),
    };
    corpus.validate()?;
    Ok(SyntheticCorpus {
        corpus,
        user_cluster,
        item_cluster,
    })
}
