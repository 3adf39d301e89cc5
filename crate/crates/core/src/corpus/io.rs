use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, InteractionEvent, Session, Vocab};
use crate::error::{Error, Result};

pub const META_FORMAT_VERSION: u32 = 1;

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub format_version: u32,
    /// Echo of whatever produced the corpus (preprocess or synth settings).
    pub config: serde_json::Value,
    pub n_items: usize,
    pub n_users: usize,
    pub n_train_sessions: usize,
    pub n_test_sessions: usize,
    pub mean_session_length: f64,
}

impl CorpusMeta {
    pub fn describe(corpus: &Corpus, config: serde_json::Value) -> Self {
        CorpusMeta {
            format_version: META_FORMAT_VERSION,
            config,
            n_items: corpus.n_items(),
            n_users: corpus.n_users(),
            n_train_sessions: corpus.train_sessions.len(),
            n_test_sessions: corpus.test_sessions.len(),
            mean_session_length: corpus.mean_session_length(),
        }
    }
}

/// Reads `user_id<TAB>item_id<TAB>timestamp` with a mandatory header row.
pub fn read_events_tsv(path: &Path) -> Result<Vec<InteractionEvent>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(header)) if header.trim_end().split('\t').count() == 3 => {}
        Some(Err(e)) => return Err(Error::io(path, e)),
        _ => return Err(Error::format(path, "expected a 3-column header row")),
    }
    let mut events = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            continue;
        }
        let lineno = n + 2;
        let fields: Vec<&str> = line.split('\t').collect();
        let [user, item, ts] = fields[..] else {
            return Err(Error::format(path, format!("line {lineno}: expected 3 columns")));
        };
        let ts: i64 = ts
            .trim()
            .parse()
            .map_err(|_| Error::format(path, format!("line {lineno}: bad timestamp {ts:?}")))?;
        let event = InteractionEvent::new(user, item, ts)
            .map_err(|e| Error::format(path, format!("line {lineno}: {e}")))?;
        events.push(event);
    }
    Ok(events)
}

fn write_vocab(path: &Path, column: &str, vocab: &Vocab) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("index\t{column}\n"));
    for (i, k) in vocab.keys().iter().enumerate() {
        out.push_str(&format!("{i}\t{k}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_vocab(path: &Path) -> Result<Vocab> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut keys = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let (idx, key) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(path, format!("line {}: expected index<TAB>key", n + 1)))?;
        if idx.parse::<usize>().ok() != Some(keys.len()) {
            return Err(Error::format(path, format!("line {}: indices must be dense", n + 1)));
        }
        keys.push(key.to_owned());
    }
    Vocab::from_ordered(keys).map_err(|e| Error::format(path, e.to_string()))
}

fn write_sessions(path: &Path, sessions: &[Session]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in sessions {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_sessions(path: &Path) -> Result<Vec<Session>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))
        })
        .collect()
}

/// Writes `items.tsv`, `users.tsv`, `train_sessions.jsonl`,
/// `test_sessions.jsonl` and `meta.json` under `dir`.
pub fn write_corpus_dir(dir: &Path, corpus: &Corpus, config: serde_json::Value) -> Result<CorpusMeta> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_vocab(&dir.join("items.tsv"), "item_id", &corpus.item_vocab)?;
    write_vocab(&dir.join("users.tsv"), "user_id", &corpus.user_vocab)?;
    write_sessions(&dir.join("train_sessions.jsonl"), &corpus.train_sessions)?;
    write_sessions(&dir.join("test_sessions.jsonl"), &corpus.test_sessions)?;
    let meta = CorpusMeta::describe(corpus, config);
    let path = dir.join("meta.json");
    fs::write(&path, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(meta)
}

pub fn read_corpus_dir(dir: &Path) -> Result<(Corpus, CorpusMeta)> {
    let meta_path = dir.join("meta.json");
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: CorpusMeta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::format(&meta_path, e.to_string()))?;
    let corpus = Corpus {
        item_vocab: read_vocab(&dir.join("items.tsv"))?,
        user_vocab: read_vocab(&dir.join("users.tsv"))?,
        train_sessions: read_sessions(&dir.join("train_sessions.jsonl"))?,
        test_sessions: read_sessions(&dir.join("test_sessions.jsonl"))?,
    };
    corpus.validate()?;
    Ok((corpus, meta))
}
