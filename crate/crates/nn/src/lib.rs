//! Reverse-mode automatic differentiation over dense `f64` matrices, plus the
//! handful of neural layers the style-transfer models are built from.
//!
//! Every value in a [`Graph`] is a 2-D matrix. Sequences are laid out one
//! token per row; several sequences can be packed into one matrix and kept
//! apart with [`Segment`]s where an op mixes rows (attention).

mod error;

pub mod checkpoint;
pub mod graph;
pub mod init;
pub mod layers;
pub mod optim;
pub mod params;

pub use error::{NnError, Result};
pub use graph::{Graph, Segment, Var};
pub use optim::{clip_global_norm, Adam, AdamConfig};
pub use params::{Gradients, ParamId, ParamStore};

/// Dense row-major matrix used for every tensor in the crate.
pub type Matrix = ndarray::Array2<f64>;
