//! Training loop, optimizer, checkpoints and sweeps.

mod config;
mod sweep;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{expand_instances, Corpus, Instance, Session};
use crate::diffkernel::checkpoint::{self, CheckpointHeader};
use crate::diffkernel::{init_params, ParameterStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, Metrics, RankingResult};
use crate::graphs::build_global_graph;
use crate::model::{Model, PreparedBatch};
use crate::objective::{sample_negatives, NegativeSample};

pub use config::{Flags, TrainConfig, ValidationSource, REFERENCE_BATCH, REFERENCE_D, REFERENCE_LR};
pub use sweep::{grid_search, write_sweep_csv, Grid, SweepRow};

const SHUFFLE_STREAM: u64 = 1;
const NEGATIVE_STREAM: u64 = 2;

/// Adam moments and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(store: &ParameterStore) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(n, p)| (n.to_owned(), Tensor::zeros(p.value.rows(), p.value.cols())))
                .collect()
        };
        AdamState {
            m: zeros(),
            v: zeros(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update from the gradients stored in `store`.
pub fn adam_step(store: &mut ParameterStore, state: &mut AdamState, lr: f64) -> Result<()> {
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (name, p) in store.iter_mut() {
        let (Some(m), Some(v)) = (state.m.get_mut(name), state.v.get_mut(name)) else {
            return Err(Error::Config(format!("optimizer state has no entry for {name:?}")));
        };
        if m.shape() != p.value.shape() {
            return Err(Error::shape("adam_step", format!("{name}: {:?} vs {:?}", m.shape(), p.value.shape())));
        }
        let theta = p.value.data_mut();
        let g = p.grad.data();
        for (((th, &gi), mi), vi) in theta.iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *th -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Loss values of one optimizer step. `cont` is 0 when the contrastive
/// term is switched off.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepLosses {
    pub total: f64,
    pub recom: f64,
    pub cont: f64,
}

/// Forward, backward and one Adam update on a single batch.
pub fn train_step(
    model: &Model,
    store: &mut ParameterStore,
    adam: &mut AdamState,
    batch: &PreparedBatch,
    negatives: Option<&NegativeSample>,
    lr: f64,
) -> Result<StepLosses> {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, true);
    let fwd = model.forward(&mut tape, &p, batch)?;
    let losses = model.losses(&mut tape, &p, batch, &fwd, negatives)?;
    let out = StepLosses {
        total: tape.value(losses.total).item(),
        recom: tape.value(losses.recom).item(),
        cont: losses.cont.map_or(0.0, |c| tape.value(c).item()),
    };
    if !out.total.is_finite() {
        return Err(Error::Input(format!("non-finite loss {}", out.total)));
    }
    let grads = tape.backward(losses.total)?;
    store.zero_grad();
    store.accumulate_grads(&p, &grads);
    adam_step(store, adam, lr)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub lr: f64,
    /// Mean total loss over the epoch's steps.
    pub loss: f64,
    pub recom: f64,
    pub cont: f64,
    /// Validation metrics (percentages).
    pub val: Metrics,
    pub wall_secs: f64,
}

pub struct TrainOutcome {
    pub model: Model,
    /// Parameters of the epoch with the best validation MRR@10.
    pub best: ParameterStore,
    pub best_epoch: usize,
    /// Parameters after the final epoch.
    pub last: ParameterStore,
    pub reports: Vec<EpochReport>,
    /// Validation ranking of the best epoch.
    pub best_val: RankingResult,
}

/// Moves the last `floor(fraction · n)` sessions of each user into a
/// validation list. Sessions of a user must be in chronological order.
pub fn holdout_split(sessions: &[Session], fraction: f64) -> (Vec<Session>, Vec<Session>) {
    let mut per_user: BTreeMap<usize, Vec<&Session>> = BTreeMap::new();
    for s in sessions {
        per_user.entry(s.user_index).or_default().push(s);
    }
    let mut fit = Vec::new();
    let mut val = Vec::new();
    for list in per_user.values() {
        let n_val = (fraction * list.len() as f64 + 1e-9).floor() as usize;
        let cut = list.len() - n_val.min(list.len());
        fit.extend(list[..cut].iter().map(|&s| s.clone()));
        val.extend(list[cut..].iter().map(|&s| s.clone()));
    }
    (fit, val)
}

/// Fitting and validation instances for a configuration.
pub fn training_instances(corpus: &Corpus, config: &TrainConfig) -> Result<(Vec<Instance>, Vec<Instance>)> {
    let (fit, val) = match config.validation {
        ValidationSource::Holdout => {
            let (fit, val) = holdout_split(&corpus.train_sessions, config.val_fraction);
            (expand_instances(&fit), expand_instances(&val))
        }
        ValidationSource::Test => (
            expand_instances(&corpus.train_sessions),
            expand_instances(&corpus.test_sessions),
        ),
    };
    if fit.is_empty() {
        return Err(Error::EmptyCorpus("no training instances".into()));
    }
    if val.is_empty() {
        return Err(Error::Config(
            "validation set has no instances; raise val_fraction or use validation=\"test\"".into(),
        ));
    }
    Ok((fit, val))
}

/// Builds the global graph from every training session and the model for
/// `config`.
pub fn build_model(corpus: &Corpus, config: &TrainConfig) -> Result<Model> {
    config.validate()?;
    let graph = build_global_graph(&corpus.train_sessions, corpus.n_items(), corpus.n_users())?;
    Model::new(
        config.model_dims(corpus.n_items(), corpus.n_users()),
        config.model_options(),
        &graph,
    )
}

pub fn train(corpus: &Corpus, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(corpus, config, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    corpus: &Corpus,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<TrainOutcome> {
    let model = build_model(corpus, config)?;
    let (fit, val) = training_instances(corpus, config)?;
    let mut store = init_params(&model.dims, config.seed)?;
    let mut adam = AdamState::new(&store);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let mut neg_rng = ChaCha8Rng::seed_from_u64(config.seed);
    neg_rng.set_stream(NEGATIVE_STREAM);

    let mut order: Vec<usize> = (0..fit.len()).collect();
    let mut reports = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ParameterStore, RankingResult)> = None;
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = config.lr_at(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut sums = StepLosses::default();
        let mut steps = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch = PreparedBatch::new(chunk.iter().map(|&i| &fit[i]))?;
            let negatives = (!config.ablation.no_contrastive)
                .then(|| sample_negatives(&batch.users, corpus.n_users(), config.neg_ratio, &mut neg_rng));
            let l = train_step(&model, &mut store, &mut adam, &batch, negatives.as_ref(), lr)?;
            sums.total += l.total;
            sums.recom += l.recom;
            sums.cont += l.cont;
            steps += 1;
        }
        let n = steps as f64;
        let ranking = evaluate_model(&model, &store, &val, config.eval_batch_size)?;
        let report = EpochReport {
            epoch,
            lr,
            loss: sums.total / n,
            recom: sums.recom / n,
            cont: sums.cont / n,
            val: ranking.metrics(),
            wall_secs: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.5} (recom {:.5}, cont {:.5}) val HR@10 {:.2} MRR@10 {:.2}",
            report.loss,
            report.recom,
            report.cont,
            report.val.hr.at10,
            report.val.mrr.at10
        );
        on_epoch(&report);
        reports.push(report);
        let score = ranking.mrr(10);
        if best.as_ref().is_none_or(|(b, ..)| score > *b) {
            best = Some((score, epoch, store.clone(), ranking));
        }
    }
    let (_, best_epoch, best_store, best_val) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        best: best_store,
        best_epoch,
        last: store,
        reports,
        best_val,
    })
}

/// Checkpoint header for parameters trained with `config`.
pub fn checkpoint_header(config: &TrainConfig, n_items: usize, n_users: usize) -> Result<CheckpointHeader> {
    Ok(CheckpointHeader {
        format_version: checkpoint::CHECKPOINT_FORMAT_VERSION,
        d: config.d,
        n_items,
        n_users,
        config_hash: config.config_hash(),
        config: serde_json::to_value(config)?,
        params: Vec::new(),
    })
}

/// Writes `config.json`, `reports.jsonl`, `best.ckpt` and `last.ckpt`.
pub fn save_run(dir: &Path, corpus: &Corpus, config: &TrainConfig, outcome: &TrainOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg_path = dir.join("config.json");
    fs::write(&cfg_path, serde_json::to_string_pretty(config)? + "\n").map_err(|e| Error::io(&cfg_path, e))?;
    let rep_path = dir.join("reports.jsonl");
    let mut f = fs::File::create(&rep_path).map_err(|e| Error::io(&rep_path, e))?;
    for r in &outcome.reports {
        writeln!(f, "{}", serde_json::to_string(r)?).map_err(|e| Error::io(&rep_path, e))?;
    }
    let header = checkpoint_header(config, corpus.n_items(), corpus.n_users())?;
    checkpoint::save(&dir.join("best.ckpt"), header.clone(), &outcome.best)?;
    checkpoint::save(&dir.join("last.ckpt"), header, &outcome.last)
}

/// Loads a checkpoint and the configuration stored in its header.
pub fn load_checkpoint(path: &Path) -> Result<(TrainConfig, ParameterStore)> {
    let (header, store) = checkpoint::load(path)?;
    let config = TrainConfig::from_value(header.config).map_err(|e| Error::format(path, e.to_string()))?;
    if config.config_hash() != header.config_hash {
        return Err(Error::format(path, "config hash does not match the stored config"));
    }
    Ok((config, store))
}
