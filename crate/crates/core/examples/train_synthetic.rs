//! Trains on a generated corpus and compares against the baselines.
//!
//! ```text
//! cargo run --release --example train_synthetic -- [key=value ...]
//! ```
//! Arguments are dotted config overrides, e.g. `lambda=0.7 ablation.no_local=true`.

use uspgnn::corpus::{generate_synthetic, SyntheticConfig};
use uspgnn::eval::{evaluate, markov_baseline, popularity_baseline};
use uspgnn::trainer::{train_with, TrainConfig};

fn main() -> uspgnn::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let overrides: Vec<String> = std::env::args().skip(1).collect();
    let base = TrainConfig {
        d: 32,
        lr: 1e-2,
        lr_step: 5,
        epochs: 10,
        ..TrainConfig::default()
    };
    let config = base.with_overrides(&overrides)?;
    let synth = generate_synthetic(&SyntheticConfig::default())?;
    let corpus = &synth.corpus;

    let pop = popularity_baseline(corpus)?;
    let markov = markov_baseline(corpus)?;
    let outcome = train_with(corpus, &config, |r| {
        println!("epoch {} loss {:.4} val MRR@10 {:.2}", r.epoch, r.loss, r.val.mrr.at10);
    })?;
    let model = evaluate(&outcome.model, &outcome.best, &corpus.test_sessions, config.eval_batch_size)?;

    println!("{:<12} {:>7} {:>7} {:>7} {:>7}", "", "HR@5", "HR@10", "MRR@5", "MRR@10");
    for (name, r) in [("popularity", &pop), ("markov", &markov), ("model", &model)] {
        let m = r.metrics();
        println!("{name:<12} {:>7.2} {:>7.2} {:>7.2} {:>7.2}", m.hr.at5, m.hr.at10, m.mrr.at5, m.mrr.at10);
    }
    Ok(())
}
