//! Sessionizes a raw interaction log and writes a corpus directory.
//!
//! ```text
//! cargo run --example preprocess_tsv -- events.tsv out_dir [gap_seconds]
//! ```
//! Without arguments it runs on the bundled 30-event fixture.

use std::path::PathBuf;

use uspgnn::corpus::{preprocess, read_events_tsv, write_corpus_dir, PreprocessConfig};

fn main() -> uspgnn::Result<()> {
    let mut args = std::env::args().skip(1);
    let input = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/preprocess/events.tsv"));
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("uspgnn-preprocessed"));
    let gap_seconds = args.next().map_or(180, |g| g.parse().expect("gap_seconds must be an integer"));

    let config = PreprocessConfig {
        gap_seconds,
        ..PreprocessConfig::default()
    };
    let events = read_events_tsv(&input)?;
    let corpus = preprocess(&events, &config)?;
    let meta = write_corpus_dir(&out, &corpus, serde_json::to_value(&config)?)?;

    println!("{} events from {}", events.len(), input.display());
    println!("{} items, {} users", meta.n_items, meta.n_users);
    println!("{} train / {} test sessions", meta.n_train_sessions, meta.n_test_sessions);
    for s in corpus.train_sessions.iter().chain(&corpus.test_sessions).take(5) {
        let user = corpus.user_vocab.key_of(s.user_index).unwrap_or("?");
        let items: Vec<&str> = s.items.iter().map(|&i| corpus.item_vocab.key_of(i).unwrap_or("?")).collect();
        println!("  {user} @{}: {}", s.start_time, items.join(" "));
    }
    println!("written to {}", out.display());
    Ok(())
}
