//! Dense row-major `f64` tensors with define-by-run reverse-mode
//! differentiation, an Adam optimizer and a plain-text checkpoint format.
//!
//! Most ops work on matrices (`[rows, cols]`); vectors are `[n]` and
//! scalars are one-element tensors.

mod adam;
pub mod checkpoint;
mod error;
mod gemm;
pub mod gradcheck;
mod graph;
mod ops;
mod param;

pub use adam::AdamState;
pub use checkpoint::{Checkpoint, NamedArray, CHECKPOINT_HEADER};
pub use error::{Result, TensorError};
pub use graph::{recorded_ops, Graph, Var};
pub use ops::conv::ConvGeometry;
pub use ops::elementwise::sigmoid;
pub use ops::norm::{BatchNormMode, BatchStats, RunningStats, NORM_EPS};
pub use param::{Grads, Param, ParamId, ParamStore};
