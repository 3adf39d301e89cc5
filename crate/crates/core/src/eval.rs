//! Ranking metrics and reference baselines.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{expand_instances, Corpus, Instance, Session};
use crate::diffkernel::{ParameterStore, Tape};
use crate::error::{Error, Result};
use crate::model::{Model, PreparedBatch};

/// Cutoffs reported everywhere.
pub const KS: [usize; 3] = [3, 5, 10];
pub const METRICS_FORMAT_VERSION: u32 = 1;

/// 1-based rank of `target` under descending score; equal scores are
/// ordered by ascending item index.
pub fn rank_of(scores: &[f64], target: usize) -> usize {
    let t = scores[target];
    let mut rank = 1;
    for (j, &s) in scores.iter().enumerate() {
        if s > t || (s == t && j < target) {
            rank += 1;
        }
    }
    rank
}

/// Per-instance target ranks.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RankingResult {
    pub ranks: Vec<usize>,
}

impl RankingResult {
    pub fn n_instances(&self) -> usize {
        self.ranks.len()
    }

    /// Fraction of instances with rank ≤ k.
    pub fn hr(&self, k: usize) -> f64 {
        if self.ranks.is_empty() {
            return 0.0;
        }
        self.ranks.iter().filter(|&&r| r <= k).count() as f64 / self.ranks.len() as f64
    }

    /// Mean of `1/rank` over instances, counting ranks beyond k as 0.
    pub fn mrr(&self, k: usize) -> f64 {
        if self.ranks.is_empty() {
            return 0.0;
        }
        let total: f64 = self.ranks.iter().filter(|&&r| r <= k).map(|&r| 1.0 / r as f64).sum();
        total / self.ranks.len() as f64
    }

    /// Percentages rounded to two decimals.
    pub fn metrics(&self) -> Metrics {
        let at = |f: &dyn Fn(usize) -> f64| AtK {
            at3: percent(f(3)),
            at5: percent(f(5)),
            at10: percent(f(10)),
        };
        Metrics {
            format_version: METRICS_FORMAT_VERSION,
            hr: at(&|k| self.hr(k)),
            mrr: at(&|k| self.mrr(k)),
            n_instances: self.n_instances(),
        }
    }
}

fn percent(fraction: f64) -> f64 {
    (fraction * 10_000.0).round() / 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtK {
    #[serde(rename = "3")]
    pub at3: f64,
    #[serde(rename = "5")]
    pub at5: f64,
    #[serde(rename = "10")]
    pub at10: f64,
}

impl AtK {
    pub fn get(&self, k: usize) -> Option<f64> {
        match k {
            3 => Some(self.at3),
            5 => Some(self.at5),
            10 => Some(self.at10),
            _ => None,
        }
    }
}

/// Contents of `metrics.json`; values are percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub format_version: u32,
    pub hr: AtK,
    pub mrr: AtK,
    pub n_instances: usize,
}

/// Ranks every instance's target under `score`, in parallel, keeping
/// instance order.
pub fn evaluate_scorer<F>(instances: &[Instance], score: F) -> Result<RankingResult>
where
    F: Fn(&Instance) -> Vec<f64> + Sync,
{
    if instances.is_empty() {
        return Err(Error::Input("no evaluation instances".into()));
    }
    let ranks = instances
        .par_iter()
        .map(|inst| rank_of(&score(inst), inst.target))
        .collect();
    Ok(RankingResult { ranks })
}

/// Scores instances with the model in batches of `batch_size`.
pub fn evaluate_model(
    model: &Model,
    params: &ParameterStore,
    instances: &[Instance],
    batch_size: usize,
) -> Result<RankingResult> {
    if instances.is_empty() {
        return Err(Error::Input("no evaluation instances".into()));
    }
    let batch_size = batch_size.max(1);
    let chunks: Vec<Vec<usize>> = instances
        .par_chunks(batch_size)
        .map(|chunk| -> Result<Vec<usize>> {
            let mut tape = Tape::new();
            let p = params.bind(&mut tape, false);
            let batch = PreparedBatch::new(chunk)?;
            let fwd = model.forward(&mut tape, &p, &batch)?;
            let scores = tape.value(fwd.logits);
            Ok(chunk
                .iter()
                .enumerate()
                .map(|(r, inst)| rank_of(scores.row(r), inst.target))
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(RankingResult {
        ranks: chunks.into_iter().flatten().collect(),
    })
}

/// Model evaluation over the prefix instances of `sessions`.
pub fn evaluate(model: &Model, params: &ParameterStore, sessions: &[Session], batch_size: usize) -> Result<RankingResult> {
    evaluate_model(model, params, &expand_instances(sessions), batch_size)
}

/// Occurrence count of every item in `sessions`.
pub fn item_counts(sessions: &[Session], n_items: usize) -> Vec<f64> {
    let mut counts = vec![0.0; n_items];
    for s in sessions {
        for &i in &s.items {
            counts[i] += 1.0;
        }
    }
    counts
}

fn require_train(corpus: &Corpus) -> Result<()> {
    if corpus.train_sessions.is_empty() {
        Err(Error::EmptyCorpus("no training sessions".into()))
    } else {
        Ok(())
    }
}

/// Ranks items by training frequency regardless of the prefix.
pub fn popularity_baseline(corpus: &Corpus) -> Result<RankingResult> {
    require_train(corpus)?;
    let counts = item_counts(&corpus.train_sessions, corpus.n_items());
    evaluate_scorer(&expand_instances(&corpus.test_sessions), |_| counts.clone())
}

/// First-order transition counts over all users' training sessions.
#[derive(Debug, Clone)]
pub struct MarkovModel {
    transitions: BTreeMap<usize, BTreeMap<usize, f64>>,
    popularity: Vec<f64>,
}

impl MarkovModel {
    pub fn fit(sessions: &[Session], n_items: usize) -> Self {
        let mut transitions: BTreeMap<usize, BTreeMap<usize, f64>> = BTreeMap::new();
        for s in sessions {
            for w in s.items.windows(2) {
                *transitions.entry(w[0]).or_default().entry(w[1]).or_default() += 1.0;
            }
        }
        MarkovModel {
            transitions,
            popularity: item_counts(sessions, n_items),
        }
    }

    /// Transition counts out of `last`, or popularity when `last` never
    /// had a successor in training.
    pub fn scores(&self, last: usize) -> Vec<f64> {
        match self.transitions.get(&last) {
            Some(next) => {
                let mut s = vec![0.0; self.popularity.len()];
                for (&j, &c) in next {
                    s[j] = c;
                }
                s
            }
            None => self.popularity.clone(),
        }
    }
}

pub fn markov_baseline(corpus: &Corpus) -> Result<RankingResult> {
    require_train(corpus)?;
    let m = MarkovModel::fit(&corpus.train_sessions, corpus.n_items());
    evaluate_scorer(&expand_instances(&corpus.test_sessions), |inst| {
        m.scores(*inst.prefix.last().expect("nonempty prefix"))
    })
}
