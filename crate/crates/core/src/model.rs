//! Full forward pass: local GGNN, heterogeneous propagation, readouts,
//! user–session attention, fusion and losses.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::Instance;
use crate::diffkernel::{Bindings, ModelDims, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graphs::{build_local_graph, GlobalHeteroGraph, LocalBatch};
use crate::layers::{attention_readout, fuse, ggnn, hetero, user_session_simnet, HeteroOperators};
use crate::objective::{contrastive_loss, logits, recom_loss, total_loss, NegativeSample, RecomLoss};

/// Pathway switches. Any combination is allowed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub no_contrastive: bool,
    pub no_simnet: bool,
    pub no_global: bool,
    pub no_local: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelOptions {
    pub k_local: usize,
    pub k_global: usize,
    pub ggnn_shared_w: bool,
    /// Use the user embedding as the attention value instead of the
    /// session embeddings.
    pub simnet_literal_value: bool,
    pub recom_loss: RecomLoss,
    pub ablation: Ablation,
    pub lambda: f64,
    pub tau: f64,
}

/// Instances of one batch with their local graphs laid out.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    pub local: LocalBatch,
    /// User of each instance.
    pub users: Arc<[usize]>,
    pub targets: Arc<[usize]>,
}

impl PreparedBatch {
    pub fn new<'a>(instances: impl IntoIterator<Item = &'a Instance>) -> Result<Self> {
        let mut graphs = Vec::new();
        let mut users = Vec::new();
        let mut targets = Vec::new();
        for inst in instances {
            graphs.push(build_local_graph(&inst.prefix)?);
            users.push(inst.user);
            targets.push(inst.target);
        }
        if graphs.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        Ok(PreparedBatch {
            local: LocalBatch::new(&graphs),
            users: users.into(),
            targets: targets.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

/// Intermediate results of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub logits: Var,
    pub s_local: Var,
    pub s_final: Var,
    /// Fusion gate per session; absent when the global pathway is off.
    pub beta: Option<Var>,
    /// Updated embedding of every user (hetero state and/or attention
    /// output), the positive view for the contrastive term.
    pub user_combined: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct Losses {
    pub recom: Var,
    /// Absent when the contrastive term is switched off.
    pub cont: Option<Var>,
    pub total: Var,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub dims: ModelDims,
    pub options: ModelOptions,
    hetero_ops: HeteroOperators,
}

impl Model {
    pub fn new(dims: ModelDims, options: ModelOptions, graph: &GlobalHeteroGraph) -> Result<Self> {
        if graph.n_items != dims.n_items || graph.n_users != dims.n_users {
            return Err(Error::Config(format!(
                "graph has {} items / {} users, model expects {} / {}",
                graph.n_items, graph.n_users, dims.n_items, dims.n_users
            )));
        }
        if dims.k_global != options.k_global || dims.ggnn_shared_w != options.ggnn_shared_w {
            return Err(Error::Config("model dims disagree with options".into()));
        }
        Ok(Model {
            dims,
            options,
            hetero_ops: HeteroOperators::new(graph),
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bindings, batch: &PreparedBatch) -> Result<Forward> {
        let opts = &self.options;
        let ab = opts.ablation;
        let items = p.get("embed.items")?;
        let users = p.get("embed.users")?;

        let x0 = tape.gather_rows(items, Arc::clone(&batch.local.node_items))?;
        let h = ggnn(tape, &batch.local, x0, p, opts.k_local, opts.ggnn_shared_w)?;
        let s_local = attention_readout(tape, &batch.local, h, p)?.s;

        let simnet = if ab.no_simnet {
            None
        } else {
            Some(user_session_simnet(tape, users, s_local, &batch.users, p, opts.simnet_literal_value)?)
        };

        let (s_final, beta, user_combined) = if ab.no_global {
            let s_final = if ab.no_local {
                let d = self.dims.d;
                tape.constant(Tensor::zeros(batch.len(), d))
            } else {
                s_local
            };
            (s_final, None, simnet.unwrap_or(users))
        } else {
            let (hi, hu) = hetero(tape, &self.hetero_ops, items, users, p, opts.k_global)?;
            let xg = tape.gather_rows(hi, Arc::clone(&batch.local.node_items))?;
            let s_global = attention_readout(tape, &batch.local, xg, p)?.s;
            let user_combined = match simnet {
                Some(sim) => tape.add(hu, sim)?,
                None => hu,
            };
            let u_global = tape.gather_rows(user_combined, Arc::clone(&batch.users))?;
            let local = (!ab.no_local).then_some(s_local);
            let f = fuse(tape, local, s_global, u_global, p)?;
            (f.s_final, Some(f.beta), user_combined)
        };

        Ok(Forward {
            logits: logits(tape, s_final, items)?,
            s_local,
            s_final,
            beta,
            user_combined,
        })
    }

    /// Mean recommendation loss, contrastive loss over `negatives.anchors`
    /// and their blend.
    pub fn losses(
        &self,
        tape: &mut Tape,
        p: &Bindings,
        batch: &PreparedBatch,
        fwd: &Forward,
        negatives: Option<&NegativeSample>,
    ) -> Result<Losses> {
        let opts = &self.options;
        let per_row = recom_loss(tape, fwd.logits, &batch.targets, opts.recom_loss)?;
        let recom = tape.mean_rows(per_row)?;
        if opts.ablation.no_contrastive {
            return Ok(Losses {
                recom,
                cont: None,
                total: recom,
            });
        }
        let neg = negatives.ok_or_else(|| Error::Input("contrastive term needs a negative sample".into()))?;
        let users = p.get("embed.users")?;
        let anchors = tape.gather_rows(users, neg.anchors.clone())?;
        let positives = tape.gather_rows(fwd.user_combined, neg.anchors.clone())?;
        let negs = if neg.per_anchor > 0 {
            Some((tape.gather_rows(fwd.user_combined, neg.negatives.clone())?, neg.per_anchor))
        } else {
            None
        };
        let cont = contrastive_loss(tape, anchors, positives, negs, opts.tau)?;
        let total = total_loss(tape, recom, cont, opts.lambda)?;
        Ok(Losses {
            recom,
            cont: Some(cont),
            total,
        })
    }
}
