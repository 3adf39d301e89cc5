//! Grid search over the contrastive weight and the negative ratio, written
//! to sweep.csv.
//!
//! ```text
//! cargo run --release --example lambda_sweep -- [out.csv]
//! ```

use std::collections::BTreeMap;

use serde_json::json;
use uspgnn::corpus::{generate_synthetic, SyntheticConfig};
use uspgnn::trainer::{grid_search, write_sweep_csv, TrainConfig};

fn main() -> uspgnn::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out = std::env::args().nth(1).unwrap_or_else(|| "sweep.csv".into());
    let corpus = generate_synthetic(&SyntheticConfig::default())?.corpus;
    let base = TrainConfig {
        d: 32,
        lr: 1e-2,
        lr_step: 5,
        epochs: 10,
        ..TrainConfig::default()
    };
    let grid = BTreeMap::from([
        ("lambda".to_owned(), vec![json!(0.0), json!(0.3), json!(0.7), json!(1.0)]),
        ("neg_ratio".to_owned(), vec![json!(1), json!(2), json!(4)]),
    ]);
    let rows = grid_search(&corpus, &base, &grid)?;
    println!("{:<4} {:>7} {:>9} {:>12} {:>13}", "rank", "lambda", "neg_ratio", "val MRR@10", "test MRR@10");
    for (i, r) in rows.iter().enumerate() {
        println!(
            "{:<4} {:>7} {:>9} {:>12.2} {:>13.2}",
            i + 1,
            r.config.lambda,
            r.config.neg_ratio,
            r.val.mrr.at10,
            r.test.mrr.at10
        );
    }
    write_sweep_csv(std::path::Path::new(&out), &rows)?;
    println!("wrote {out}");
    Ok(())
}
