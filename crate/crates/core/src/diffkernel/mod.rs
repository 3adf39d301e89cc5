//! Dense tensors, a reverse-mode tape, named parameters and checkpoints.

pub mod checkpoint;
mod params;
mod tape;
mod tensor;

pub use params::{init_params, parameter_layout, Bindings, ModelDims, Parameter, ParameterStore, EDGE_TYPES};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{SparseMatrix, Tensor};
