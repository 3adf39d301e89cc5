//! Command-line front end.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error (including unknown
//! configuration keys).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::corpus::{
    generate_synthetic, preprocess, read_corpus_dir, read_events_tsv, write_corpus_dir, PreprocessConfig,
    SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::graphs::{build_global_graph, neighbor_stats};
use crate::trainer::{
    build_model, grid_search, load_checkpoint, save_run, train_with, write_sweep_csv, Grid, TrainConfig,
};

#[derive(Debug, Parser)]
#[command(name = "uspgnn", about = "Personalized session-based recommendation with graph neural networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sessionize, filter and split a `user_id, item_id, timestamp` TSV log.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Largest gap in seconds between events of one session.
        #[arg(long, default_value_t = 180)]
        gap: u64,
        #[arg(long, default_value_t = 5)]
        min_item_count: usize,
        #[arg(long, default_value_t = 2)]
        min_session_len: usize,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
    },
    /// Generate a planted-cluster synthetic corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        users: usize,
        #[arg(long, default_value_t = 200)]
        items: usize,
        #[arg(long, default_value_t = 4)]
        clusters: usize,
        #[arg(long, default_value_t = 100)]
        sessions: usize,
        #[arg(long, default_value_t = 8.0)]
        mean_len: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Print corpus statistics.
    Inspect { dir: PathBuf },
    /// Train and write checkpoints and per-epoch reports to a run directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on the test sessions and write metrics.json.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to metrics.json next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid search; writes sweep.csv in rank order.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// JSON object mapping dotted config keys to lists of values.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Training configuration (JSON); defaults apply to missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted override such as `ablation.no_local=true`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<TrainConfig> {
        let base = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                TrainConfig::from_json_str(&text).map_err(|e| match e {
                    Error::Json(j) => Error::format(path, j.to_string()),
                    other => other,
                })?
            }
            None => TrainConfig::default(),
        };
        base.with_overrides(&self.overrides)
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::UnknownKey(_) => 2,
                _ => 1,
            }
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Preprocess {
            input,
            out,
            gap,
            min_item_count,
            min_session_len,
            train_fraction,
        } => {
            let config = PreprocessConfig {
                gap_seconds: gap,
                min_item_count,
                min_session_len,
                train_fraction,
            };
            let events = read_events_tsv(&input)?;
            let corpus = preprocess(&events, &config)?;
            let meta = write_corpus_dir(&out, &corpus, serde_json::to_value(&config)?)?;
            println!(
                "{} events -> {} train / {} test sessions in {}",
                events.len(),
                meta.n_train_sessions,
                meta.n_test_sessions,
                out.display()
            );
            Ok(())
        }
        Command::Synth {
            out,
            users,
            items,
            clusters,
            sessions,
            mean_len,
            seed,
        } => {
            let config = SyntheticConfig {
                n_users: users,
                n_items: items,
                n_clusters: clusters,
                sessions_per_user: sessions,
                mean_session_len: mean_len,
                seed,
                ..SyntheticConfig::default()
            };
            let synth = generate_synthetic(&config)?;
            let meta = write_corpus_dir(&out, &synth.corpus, serde_json::to_value(&config)?)?;
            synth.write_sidecar(&out)?;
            println!(
                "{} train / {} test sessions in {}",
                meta.n_train_sessions,
                meta.n_test_sessions,
                out.display()
            );
            Ok(())
        }
        Command::Inspect { dir } => inspect(&dir),
        Command::Train { cfg, out } => {
            let config = cfg.load()?;
            let (corpus, _) = read_corpus_dir(&cfg.data)?;
            let outcome = train_with(&corpus, &config, |r| {
                println!(
                    "epoch {:>3}  lr {:.2e}  loss {:.5}  recom {:.5}  cont {:.5}  val HR@10 {:.2}  MRR@10 {:.2}  {:.1}s",
                    r.epoch, r.lr, r.loss, r.recom, r.cont, r.val.hr.at10, r.val.mrr.at10, r.wall_secs
                );
            })?;
            save_run(&out, &corpus, &config, &outcome)?;
            println!("best epoch {} saved to {}", outcome.best_epoch, out.display());
            Ok(())
        }
        Command::Evaluate { data, checkpoint, out } => {
            let (config, params) = load_checkpoint(&checkpoint)?;
            let (corpus, _) = read_corpus_dir(&data)?;
            let model = build_model(&corpus, &config)?;
            let ranking = evaluate(&model, &params, &corpus.test_sessions, config.eval_batch_size)?;
            let metrics = ranking.metrics();
            let path = out.unwrap_or_else(|| {
                checkpoint
                    .parent()
                    .unwrap_or_else(|| Path::new("."))
                    .join("metrics.json")
            });
            fs::write(&path, serde_json::to_string_pretty(&metrics)? + "\n").map_err(|e| Error::io(&path, e))?;
            println!("{:>6} {:>7} {:>7}", "k", "HR", "MRR");
            for k in crate::eval::KS {
                println!(
                    "{k:>6} {:>7.2} {:>7.2}",
                    metrics.hr.get(k).unwrap_or_default(),
                    metrics.mrr.get(k).unwrap_or_default()
                );
            }
            println!("{} instances; metrics written to {}", metrics.n_instances, path.display());
            Ok(())
        }
        Command::Sweep { cfg, grid, out } => {
            let config = cfg.load()?;
            let text = fs::read_to_string(&grid).map_err(|e| Error::io(&grid, e))?;
            let grid_spec: Grid = serde_json::from_str(&text).map_err(|e| Error::format(&grid, e.to_string()))?;
            let (corpus, _) = read_corpus_dir(&cfg.data)?;
            let rows = grid_search(&corpus, &config, &grid_spec)?;
            write_sweep_csv(&out, &rows)?;
            for (rank, r) in rows.iter().enumerate() {
                println!(
                    "{:>3}  {}  lambda {}  neg_ratio {}  val MRR@10 {:.2}  test MRR@10 {:.2}",
                    rank + 1,
                    r.config_hash,
                    r.config.lambda,
                    r.config.neg_ratio,
                    r.val.mrr.at10,
                    r.test.mrr.at10
                );
            }
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn inspect(dir: &Path) -> Result<()> {
    let (corpus, _meta) = read_corpus_dir(dir)?;
    let n_train = corpus.train_sessions.len();
    let n_test = corpus.test_sessions.len();
    let interactions: usize = corpus
        .train_sessions
        .iter()
        .chain(&corpus.test_sessions)
        .map(|s| s.items.len())
        .sum();
    println!("items                {}", corpus.n_items());
    println!("users                {}", corpus.n_users());
    println!("sessions             {}", n_train + n_test);
    println!("train sessions       {n_train}");
    println!("test sessions        {n_test}");
    println!("interactions         {interactions}");
    println!("mean session length  {}", corpus.mean_session_length());
    if n_train > 0 {
        let graph = build_global_graph(&corpus.train_sessions, corpus.n_items(), corpus.n_users())?;
        for (t, s) in neighbor_stats(&graph) {
            println!("{:<20} {}", format!("{} edges", t.as_str()), s.edges);
        }
    }
    Ok(())
}
