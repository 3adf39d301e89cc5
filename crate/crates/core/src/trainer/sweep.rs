use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde_json::Value;

use super::{train, TrainConfig};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::eval::{evaluate, Metrics};

/// Values to try per dotted config key. The Cartesian product is
/// enumerated in key order with the last key varying fastest.
pub type Grid = BTreeMap<String, Vec<Value>>;

#[derive(Debug, Clone)]
pub struct SweepRow {
    /// Position of the configuration in enumeration order.
    pub position: usize,
    pub config: TrainConfig,
    pub config_hash: String,
    /// Validation MRR@10 of the selected checkpoint, as a fraction.
    pub val_mrr10: f64,
    pub val_hr10: f64,
    pub val: Metrics,
    /// Test metrics of the selected checkpoint.
    pub test: Metrics,
}

fn expand(base: &TrainConfig, grid: &Grid) -> Result<Vec<TrainConfig>> {
    if grid.is_empty() || grid.values().any(Vec::is_empty) {
        return Err(Error::Config("grid must name at least one key with at least one value".into()));
    }
    let mut combos: Vec<Vec<(String, Value)>> = vec![Vec::new()];
    for (key, values) in grid {
        combos = combos
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut next = prefix.clone();
                    next.push((key.clone(), v.clone()));
                    next
                })
            })
            .collect();
    }
    combos.iter().map(|c| base.with_values(c)).collect()
}

/// Trains every configuration of the grid (concurrently; each run is
/// deterministic) and ranks them by validation MRR@10, then HR@10, then
/// enumeration order.
pub fn grid_search(corpus: &Corpus, base: &TrainConfig, grid: &Grid) -> Result<Vec<SweepRow>> {
    let configs = expand(base, grid)?;
    let mut rows = configs
        .into_par_iter()
        .enumerate()
        .map(|(position, config)| -> Result<SweepRow> {
            let outcome = train(corpus, &config)?;
            let test = evaluate(&outcome.model, &outcome.best, &corpus.test_sessions, config.eval_batch_size)?;
            log::info!(
                "sweep {position} ({}): val MRR@10 {:.4}",
                config.config_hash(),
                outcome.best_val.mrr(10)
            );
            Ok(SweepRow {
                position,
                config_hash: config.config_hash(),
                config,
                val_mrr10: outcome.best_val.mrr(10),
                val_hr10: outcome.best_val.hr(10),
                val: outcome.best_val.metrics(),
                test: test.metrics(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| {
        b.val_mrr10
            .total_cmp(&a.val_mrr10)
            .then(b.val_hr10.total_cmp(&a.val_hr10))
            .then(a.position.cmp(&b.position))
    });
    Ok(rows)
}

/// Writes `sweep.csv`: one line per configuration in rank order, with test
/// metrics as percentages.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut out = String::from("config_hash,lambda,neg_ratio,hr3,hr5,hr10,mrr3,mrr5,mrr10\n");
    for r in rows {
        let (h, m) = (r.test.hr, r.test.mrr);
        out.push_str(&format!(
            "{},{},{},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2}\n",
            r.config_hash, r.config.lambda, r.config.neg_ratio, h.at3, h.at5, h.at10, m.at3, m.at5, m.at10
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
