//! Minimal dense tensor engine: 2-D tensors, reverse-mode autodiff on a
//! per-step tape, Adam, and a versioned checkpoint format.
//!
//! Everything is generic over [`Scalar`] so training runs in `f32` while
//! gradient checks run in `f64`. There is no GPU path, no sparsity and no
//! higher-order differentiation — the engine exists to train a small graph
//! transformer on a CPU deterministically.

mod adam;
mod checkpoint;
mod params;
mod scalar;
mod tape;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use params::{normal, standard_normal, xavier_uniform, Param, ParamStore};
pub use scalar::Scalar;
pub use tape::{Tape, Var};

use thiserror::Error;

/// Errors from tensor ops and the optimizer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op}: row index {index} out of range for {rows} rows")]
    RowOutOfRange {
        op: &'static str,
        index: usize,
        rows: usize,
    },
    #[error("{op}: column range {start}..{end} out of bounds for {cols} columns")]
    ColOutOfRange {
        op: &'static str,
        start: usize,
        end: usize,
        cols: usize,
    },
    #[error("concat of zero tensors")]
    EmptyConcat,
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: (usize, usize) },
    #[error("node {id} is not on this tape ({len} nodes recorded)")]
    DetachedNode { id: usize, len: usize },
    #[error("non-finite gradient in parameter `{name}`")]
    NonFiniteGradient { name: String },
    #[error("dropout rate must be in [0, 1), got {0}")]
    BadDropoutRate(f64),
}
