pub mod cli;
pub mod corpus;
pub mod diffkernel;
pub mod error;
pub mod eval;
pub mod graphs;
pub mod layers;
pub mod model;
pub mod objective;
pub mod trainer;

pub use error::{Error, Result};
