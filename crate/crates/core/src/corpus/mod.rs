//! Interaction logs, sessionization, filtering and per-user chronological
//! splits.
//!
//! The preprocessing pipeline is
//! [`split_sessions`] → [`filter_corpus`] → [`chronological_split`] →
//! [`Corpus::from_raw`], bundled as [`preprocess`].

mod io;
mod synth;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{read_corpus_dir, read_events_tsv, write_corpus_dir, CorpusMeta, META_FORMAT_VERSION};
pub use synth::{generate_synthetic, SyntheticConfig, SyntheticCorpus};

/// One `(user, item, timestamp)` record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionEvent {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
}

impl InteractionEvent {
    pub fn new(user_id: impl Into<String>, item_id: impl Into<String>, timestamp: i64) -> Result<Self> {
        let (user_id, item_id) = (user_id.into(), item_id.into());
        if user_id.is_empty() || item_id.is_empty() {
            return Err(Error::Input("user_id and item_id must be nonempty".into()));
        }
        if timestamp < 0 {
            return Err(Error::Input(format!("negative timestamp {timestamp}")));
        }
        Ok(InteractionEvent {
            user_id,
            item_id,
            timestamp,
        })
    }
}

/// A session over raw item keys, before vocabulary assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSession {
    pub items: Vec<String>,
    pub start_time: i64,
}

/// Sessions keyed by raw user id, each list in chronological order.
pub type UserSessions = BTreeMap<String, Vec<RawSession>>;

/// A session over dense indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    #[serde(rename = "user")]
    pub user_index: usize,
    pub items: Vec<usize>,
    #[serde(rename = "start")]
    pub start_time: i64,
}

/// Bidirectional map between raw keys and dense indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocab {
    keys: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Assigns indices in the given order. Duplicate keys are rejected.
    pub fn from_ordered(keys: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(keys.len());
        for (i, k) in keys.iter().enumerate() {
            if index.insert(k.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate vocabulary key {k:?}")));
            }
        }
        Ok(Vocab { keys, index })
    }

    /// Sorted, deduplicated keys.
    pub fn from_keys<'a>(keys: impl IntoIterator<Item = &'a str>) -> Self {
        let mut sorted: Vec<String> = keys.into_iter().map(str::to_owned).collect();
        sorted.sort();
        sorted.dedup();
        Vocab::from_ordered(sorted).expect("deduplicated")
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn index_of(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn key_of(&self, index: usize) -> Option<&str> {
        self.keys.get(index).map(String::as_str)
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    pub gap_seconds: u64,
    pub min_item_count: usize,
    pub min_session_len: usize,
    pub train_fraction: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            gap_seconds: 180,
            min_item_count: 5,
            min_session_len: 2,
            train_fraction: 0.8,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gap_seconds == 0 {
            return Err(Error::Config("gap_seconds must be positive".into()));
        }
        if self.min_session_len == 0 {
            return Err(Error::Config("min_session_len must be at least 1".into()));
        }
        validate_fraction(self.train_fraction)
    }
}

fn validate_fraction(f: f64) -> Result<()> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::Config(format!("train_fraction {f} outside (0, 1]")));
    }
    Ok(())
}

/// Item/user vocabularies and the train/test session lists.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub item_vocab: Vocab,
    pub user_vocab: Vocab,
    pub train_sessions: Vec<Session>,
    pub test_sessions: Vec<Session>,
}

impl Corpus {
    pub fn n_items(&self) -> usize {
        self.item_vocab.len()
    }

    pub fn n_users(&self) -> usize {
        self.user_vocab.len()
    }

    /// Assigns sorted vocabularies over everything that survived filtering
    /// (train and test), so test-only items keep an index.
    pub fn from_raw(train: &UserSessions, test: &UserSessions) -> Result<Self> {
        let all = || train.iter().chain(test.iter());
        let user_vocab = Vocab::from_keys(
            all().filter(|(_, s)| !s.is_empty()).map(|(u, _)| u.as_str()),
        );
        let item_vocab = Vocab::from_keys(
            all().flat_map(|(_, s)| s.iter().flat_map(|x| x.items.iter().map(String::as_str))),
        );
        if item_vocab.is_empty() || user_vocab.is_empty() {
            return Err(Error::EmptyCorpus("no sessions survived preprocessing".into()));
        }
        let convert = |sessions: &UserSessions| -> Vec<Session> {
            let mut out: Vec<Session> = sessions
                .iter()
                .filter(|(_, list)| !list.is_empty())
                .flat_map(|(u, list)| {
                    let user_index = user_vocab.index_of(u).expect("user in vocab");
                    list.iter().map(move |s| (user_index, s))
                })
                .map(|(user_index, s)| Session {
                    user_index,
                    items: s
                        .items
                        .iter()
                        .map(|k| item_vocab.index_of(k).expect("item in vocab"))
                        .collect(),
                    start_time: s.start_time,
                })
                .collect();
            out.sort_by_key(|s| s.user_index);
            out
        };
        let corpus = Corpus {
            train_sessions: convert(train),
            test_sessions: convert(test),
            item_vocab,
            user_vocab,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    /// Checks the index-range and per-user split-order invariants.
    pub fn validate(&self) -> Result<()> {
        let (n_items, n_users) = (self.n_items(), self.n_users());
        for s in self.train_sessions.iter().chain(&self.test_sessions) {
            if s.items.is_empty() {
                return Err(Error::Input("empty session".into()));
            }
            if s.user_index >= n_users || s.items.iter().any(|&i| i >= n_items) {
                return Err(Error::Input(format!(
                    "session index out of range (user {}, {} items, {} users)",
                    s.user_index, n_items, n_users
                )));
            }
        }
        let mut last_train = vec![i64::MIN; n_users];
        for s in &self.train_sessions {
            last_train[s.user_index] = last_train[s.user_index].max(s.start_time);
        }
        if let Some(s) = self
            .test_sessions
            .iter()
            .find(|s| s.start_time < last_train[s.user_index])
        {
            return Err(Error::Input(format!(
                "user {} has a test session before a train session",
                s.user_index
            )));
        }
        Ok(())
    }

    /// Mean length over train and test sessions.
    pub fn mean_session_length(&self) -> f64 {
        let all = self.train_sessions.iter().chain(&self.test_sessions);
        let (n, total) = all.fold((0usize, 0usize), |(n, t), s| (n + 1, t + s.items.len()));
        if n == 0 {
            0.0
        } else {
            total as f64 / n as f64
        }
    }
}

/// Groups events per user, sorts them by timestamp (stable, so ties keep
/// input order) and starts a new session whenever the gap to the previous
/// event is strictly greater than `gap_seconds`.
pub fn split_sessions(events: &[InteractionEvent], gap_seconds: u64) -> Result<UserSessions> {
    if gap_seconds == 0 {
        return Err(Error::Config("gap_seconds must be positive".into()));
    }
    let mut per_user: BTreeMap<&str, Vec<&InteractionEvent>> = BTreeMap::new();
    for e in events {
        per_user.entry(&e.user_id).or_default().push(e);
    }
    let gap = i64::try_from(gap_seconds).unwrap_or(i64::MAX);
    let mut out = UserSessions::new();
    for (user, mut list) in per_user {
        list.sort_by_key(|e| e.timestamp);
        let mut sessions: Vec<RawSession> = Vec::new();
        let mut prev: Option<i64> = None;
        for e in list {
            match (prev, sessions.last_mut()) {
                (Some(p), Some(current)) if e.timestamp - p <= gap => {
                    current.items.push(e.item_id.clone());
                }
                _ => sessions.push(RawSession {
                    items: vec![e.item_id.clone()],
                    start_time: e.timestamp,
                }),
            }
            prev = Some(e.timestamp);
        }
        out.insert(user.to_owned(), sessions);
    }
    Ok(out)
}

/// Drops items seen fewer than `min_item_count` times overall, then drops
/// sessions shorter than `min_session_len`. One pass, no fixpoint.
pub fn filter_corpus(sessions: &UserSessions, min_item_count: usize, min_session_len: usize) -> UserSessions {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in sessions.values().flatten() {
        for item in &s.items {
            *counts.entry(item).or_default() += 1;
        }
    }
    sessions
        .iter()
        .map(|(user, list)| {
            let kept = list
                .iter()
                .map(|s| RawSession {
                    items: s
                        .items
                        .iter()
                        .filter(|i| counts[i.as_str()] >= min_item_count)
                        .cloned()
                        .collect(),
                    start_time: s.start_time,
                })
                .filter(|s| !s.items.is_empty() && s.items.len() >= min_session_len)
                .collect();
            (user.clone(), kept)
        })
        .collect()
}

/// Per user, the first `ceil(train_fraction · n)` sessions go to train and
/// the rest to test. Input lists must already be chronological.
pub fn chronological_split<K: Ord + Clone, T: Clone>(
    sessions: &BTreeMap<K, Vec<T>>,
    train_fraction: f64,
) -> Result<(BTreeMap<K, Vec<T>>, BTreeMap<K, Vec<T>>)> {
    validate_fraction(train_fraction)?;
    let mut train = BTreeMap::new();
    let mut test = BTreeMap::new();
    for (user, list) in sessions {
        let n_train = train_count(list.len(), train_fraction);
        train.insert(user.clone(), list[..n_train].to_vec());
        test.insert(user.clone(), list[n_train..].to_vec());
    }
    Ok((train, test))
}

/// `ceil(fraction · n)`, robust to representation error such as
/// `0.8 · 5 = 4.000000000000001`.
pub(crate) fn train_count(n: usize, fraction: f64) -> usize {
    let exact = fraction * n as f64;
    let rounded = exact.round();
    let count = if (exact - rounded).abs() < 1e-9 {
        rounded
    } else {
        exact.ceil()
    };
    (count as usize).min(n)
}

/// Full preprocessing pipeline from raw events to a [`Corpus`].
pub fn preprocess(events: &[InteractionEvent], config: &PreprocessConfig) -> Result<Corpus> {
    config.validate()?;
    let sessions = split_sessions(events, config.gap_seconds)?;
    let filtered = filter_corpus(&sessions, config.min_item_count, config.min_session_len);
    let (train, test) = chronological_split(&filtered, config.train_fraction)?;
    Corpus::from_raw(&train, &test)
}

/// All `(items[..k], items[k])` pairs for `k = 1..len`.
pub fn make_prefix_instances(session: &Session) -> Vec<(Vec<usize>, usize)> {
    (1..session.items.len())
        .map(|k| (session.items[..k].to_vec(), session.items[k]))
        .collect()
}

/// A `(user, prefix, next item)` example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub user: usize,
    pub prefix: Vec<usize>,
    pub target: usize,
}

/// Expands sessions into prefix instances, preserving session order.
pub fn expand_instances(sessions: &[Session]) -> Vec<Instance> {
    sessions
        .iter()
        .flat_map(|s| {
            make_prefix_instances(s)
                .into_iter()
                .map(move |(prefix, target)| Instance {
                    user: s.user_index,
                    prefix,
                    target,
                })
        })
        .collect()
}
