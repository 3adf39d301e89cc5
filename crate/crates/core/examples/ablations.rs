//! Trains the full model and each ablated variant with the same seed and
//! reports test metrics of the best-validation checkpoints.
//!
//! ```text
//! cargo run --release --example ablations -- [seed]
//! ```

use uspgnn::corpus::{generate_synthetic, SyntheticConfig};
use uspgnn::eval::evaluate;
use uspgnn::model::Ablation;
use uspgnn::trainer::{train, TrainConfig};

fn main() -> uspgnn::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed must be an integer"));
    let corpus = generate_synthetic(&SyntheticConfig::default())?.corpus;
    let base = TrainConfig {
        d: 32,
        lr: 1e-2,
        lr_step: 5,
        epochs: 10,
        seed,
        ..TrainConfig::default()
    };
    let variants = [
        ("full", Ablation::default()),
        ("no_simnet", Ablation { no_simnet: true, ..Ablation::default() }),
        ("no_contrastive", Ablation { no_contrastive: true, ..Ablation::default() }),
        ("no_global", Ablation { no_global: true, ..Ablation::default() }),
        ("no_local", Ablation { no_local: true, ..Ablation::default() }),
    ];
    println!("{:<16} {:>7} {:>7} {:>7} {:>7}", "variant", "HR@5", "HR@10", "MRR@5", "MRR@10");
    for (name, ablation) in variants {
        let config = TrainConfig { ablation, ..base.clone() };
        let out = train(&corpus, &config)?;
        let m = evaluate(&out.model, &out.best, &corpus.test_sessions, config.eval_batch_size)?.metrics();
        println!("{name:<16} {:>7.2} {:>7.2} {:>7.2} {:>7.2}", m.hr.at5, m.hr.at10, m.mrr.at5, m.mrr.at10);
    }
    Ok(())
}
