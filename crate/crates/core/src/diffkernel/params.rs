use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Edge types of the global graph, in the fixed order used for naming.
pub const EDGE_TYPES: [&str; 3] = ["i2i", "u2i", "i2u"];

/// Sizes that determine the parameter inventory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub d: usize,
    pub n_items: usize,
    pub n_users: usize,
    /// Number of heterogeneous propagation layers; each owns its weights.
    pub k_global: usize,
    /// Use one message transform for both edge directions in the GGNN.
    pub ggnn_shared_w: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named trainable tensors with paired gradient buffers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore {
    params: BTreeMap<String, Parameter>,
}

/// Tape handles for every parameter of a store, created by
/// [`ParameterStore::bind`].
#[derive(Debug, Clone)]
pub struct Bindings {
    vars: BTreeMap<String, Var>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Names and shapes of every parameter for the given sizes.
pub fn parameter_layout(dims: &ModelDims) -> Vec<(String, (usize, usize))> {
    let d = dims.d;
    let mut out: Vec<(String, (usize, usize))> = vec![
        ("embed.items".into(), (dims.n_items, d)),
        ("embed.users".into(), (dims.n_users, d)),
    ];
    if dims.ggnn_shared_w {
        out.push(("ggnn.w_msg".into(), (d, d)));
        out.push(("ggnn.b_msg".into(), (1, d)));
    } else {
        out.push(("ggnn.w_out".into(), (d, d)));
        out.push(("ggnn.b_out".into(), (1, d)));
        out.push(("ggnn.w_in".into(), (d, d)));
        out.push(("ggnn.b_in".into(), (1, d)));
    }
    for gate in ["w_z", "u_z", "w_r", "u_r", "w_h", "u_h"] {
        out.push((format!("ggnn.{gate}"), (d, d)));
    }
    for layer in 0..dims.k_global {
        for t in EDGE_TYPES {
            out.push((format!("hetero.{layer}.{t}.w_msg"), (d, d)));
            out.push((format!("hetero.{layer}.{t}.w_upd"), (d, 2 * d)));
            out.push((format!("hetero.{layer}.{t}.b_upd"), (1, d)));
        }
    }
    out.extend([
        ("readout.w_1".into(), (d, d)),
        ("readout.w_2".into(), (d, d)),
        ("readout.c".into(), (1, d)),
        ("readout.q".into(), (d, 1)),
        ("readout.w_3".into(), (d, 2 * d)),
        ("simnet.w_q".into(), (d, d)),
        ("simnet.w_k".into(), (d, d)),
        ("simnet.w_v".into(), (d, d)),
        ("fuse.w_s".into(), (1, 2 * d)),
    ]);
    out
}

fn is_bias(name: &str) -> bool {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    leaf.starts_with("b_") || leaf == "c"
}

/// Initializes every parameter uniformly in `[−1/√d, 1/√d]`, biases at zero.
/// Deterministic for a given seed.
pub fn init_params(dims: &ModelDims, seed: u64) -> Result<ParameterStore> {
    if dims.d == 0 {
        return Err(Error::Config("embedding size d must be positive".into()));
    }
    let bound = 1.0 / (dims.d as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::default();
    for (name, (r, c)) in parameter_layout(dims) {
        let value = if is_bias(&name) {
            Tensor::zeros(r, c)
        } else {
            let data = (0..r * c).map(|_| rng.random_range(-bound..=bound)).collect();
            Tensor::from_vec(r, c, data)?
        };
        store.insert(name, value);
    }
    Ok(store)
}

impl ParameterStore {
    pub fn new() -> Self {
        ParameterStore::default()
    }

    /// Adds or replaces a parameter, resetting its gradient.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let (r, c) = value.shape();
        self.params.insert(
            name.into(),
            Parameter {
                value,
                grad: Tensor::zeros(r, c),
            },
        );
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.get_mut(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Config(format!("missing parameter {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalar entries.
    pub fn n_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Records every parameter as a leaf. With `trainable == false` the
    /// leaves do not require gradients (evaluation).
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bindings {
        let vars = self
            .params
            .iter()
            .map(|(name, p)| (name.clone(), tape.leaf(p.value.clone(), trainable)))
            .collect();
        Bindings { vars }
    }

    /// Adds the tape gradients into the gradient buffers. Calling this twice
    /// without [`zero_grad`](Self::zero_grad) accumulates.
    pub fn accumulate_grads(&mut self, bindings: &Bindings, grads: &Gradients) {
        for (name, var) in bindings.iter() {
            if let (Some(p), Some(g)) = (self.params.get_mut(name), grads.get(var)) {
                p.grad.add_assign(g);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }
}
