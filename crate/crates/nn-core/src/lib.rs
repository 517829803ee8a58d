//! Numeric core of the miniature vision-language model.
//!
//! Everything here runs on 64-bit floats on the CPU and is deterministic:
//! the same inputs always produce bitwise identical outputs. Differentiable
//! operations are recorded on a [`Graph`] tape whose backward pass is
//! written by hand and checked against central finite differences
//! (see [`gradcheck`]).

pub mod attention;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod loss;
pub mod ops;
pub mod optim;
pub mod rope;
pub mod tensor;

pub use attention::attention;
pub use error::{NnError, Result};
pub use graph::{Gradients, Graph, NodeId};
pub use loss::cross_entropy;
pub use optim::{adamw_step, cosine_lr, LrSchedule, OptimizerState};
pub use rope::{apply_rope, rope_frequencies, yarn_scale, RopeConfig};
pub use tensor::Tensor;
