//! Scores and losses.

use std::sync::Arc;

use rand::seq::index;
use rand::Rng;

use crate::diffkernel::{Tape, Var};
use crate::error::{Error, Result};

/// Probability clamp for the binary cross-entropy terms.
pub const PROB_EPS: f64 = 1e-12;

/// `s_final · item_tableᵀ`, one row of item scores per session.
pub fn logits(tape: &mut Tape, s_final: Var, item_table: Var) -> Result<Var> {
    tape.matmul_t(s_final, item_table)
}

/// Softmax probabilities over all items.
pub fn predict(tape: &mut Tape, s_final: Var, item_table: Var) -> Result<Var> {
    let l = logits(tape, s_final, item_table)?;
    Ok(tape.softmax_rows(l))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RecomLoss {
    /// Binary cross-entropy of the softmax against the one-hot target,
    /// summed over every item.
    #[default]
    BceOverSoftmax,
    /// `−ln ŷ_target`.
    CrossEntropy,
}

/// Per-session recommendation loss (`n × 1`) from item logits.
pub fn recom_loss(tape: &mut Tape, logits: Var, targets: &Arc<[usize]>, kind: RecomLoss) -> Result<Var> {
    match kind {
        RecomLoss::BceOverSoftmax => {
            let p = tape.softmax_rows(logits);
            tape.bce_one_hot(p, Arc::clone(targets), PROB_EPS)
        }
        RecomLoss::CrossEntropy => tape.cross_entropy(logits, Arc::clone(targets)),
    }
}

/// Negatives for a contrastive batch: `negatives[a * per_anchor + k]` is the
/// k-th negative user of `anchors[a]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeSample {
    pub anchors: Vec<usize>,
    pub negatives: Vec<usize>,
    pub per_anchor: usize,
}

/// Draws `min(ratio, n_users − 1)` distinct negatives per anchor, uniformly
/// without replacement from the other users in `batch_users`, or from all
/// other users when the batch does not hold enough of them.
pub fn sample_negatives<R: Rng + ?Sized>(
    batch_users: &[usize],
    n_users: usize,
    ratio: usize,
    rng: &mut R,
) -> NegativeSample {
    let mut anchors = batch_users.to_vec();
    anchors.sort_unstable();
    anchors.dedup();
    let per_anchor = ratio.min(n_users.saturating_sub(1));
    let mut negatives = Vec::with_capacity(anchors.len() * per_anchor);
    for &a in &anchors {
        let in_batch: Vec<usize> = anchors.iter().copied().filter(|&u| u != a).collect();
        if in_batch.len() >= per_anchor {
            negatives.extend(index::sample(rng, in_batch.len(), per_anchor).iter().map(|i| in_batch[i]));
        } else {
            negatives.extend(
                index::sample(rng, n_users - 1, per_anchor)
                    .iter()
                    .map(|i| if i >= a { i + 1 } else { i }),
            );
        }
    }
    NegativeSample {
        anchors,
        negatives,
        per_anchor,
    }
}

/// Normalized-temperature cross-entropy over cosine similarities.
///
/// `anchors` and `positives` are `A × d`; `negatives`, when present, is
/// `(A·per_anchor) × d` grouped by anchor. Returns the mean over anchors.
pub fn contrastive_loss(
    tape: &mut Tape,
    anchors: Var,
    positives: Var,
    negatives: Option<(Var, usize)>,
    tau: f64,
) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let n_anchors = tape.value(anchors).rows();
    if n_anchors == 0 {
        return Err(Error::Input("contrastive loss needs at least one anchor".into()));
    }
    let pos = tape.cosine_rows(anchors, positives)?;
    let sims = match negatives {
        Some((neg, per_anchor)) if per_anchor > 0 => {
            let rep: Vec<usize> = (0..n_anchors).flat_map(|a| std::iter::repeat_n(a, per_anchor)).collect();
            let a_rep = tape.gather_rows(anchors, rep)?;
            let neg_sims = tape.cosine_rows(a_rep, neg)?;
            let neg_sims = tape.reshape(neg_sims, n_anchors, per_anchor)?;
            tape.concat_cols(&[pos, neg_sims])?
        }
        _ => pos,
    };
    let scaled = tape.affine(sims, 1.0 / tau, 0.0);
    let per_anchor_loss = tape.cross_entropy(scaled, vec![0; n_anchors])?;
    tape.mean_rows(per_anchor_loss)
}

/// `(1 − λ)·recom + λ·cont`.
pub fn total_loss(tape: &mut Tape, recom: Var, cont: Var, lambda: f64) -> Result<Var> {
    check_lambda(lambda)?;
    tape.lerp(recom, cont, lambda)
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::Config(format!("lambda must lie in [0, 1], got {lambda}")))
    }
}
