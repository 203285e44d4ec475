//! Dense `f32` tensors, a reverse-mode tape, Adam, and the weight checkpoint format.

mod adam;
mod checkpoint;
pub mod conv;
mod gemm;
mod layers;
mod params;
mod tape;
mod tensor;

use std::path::PathBuf;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{read_checkpoint, read_checkpoint_from, write_checkpoint, write_checkpoint_to, WEIGHTS_MAGIC};
pub use conv::{ConvSpec, ConvTransposeSpec};
pub use layers::{lstm_cell, LstmVars};
pub use params::{clip_global_norm, ParamSet};
pub use tape::{sigmoid, Gradients, Tape, Var};
pub use tensor::{Tensor, MAX_RANK};

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("payload of {len} values does not fill shape {shape:?}")]
    Payload { shape: Vec<usize>, len: usize },
    #[error("rank {rank} exceeds the supported maximum of 4")]
    Rank { rank: usize },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGradient { name: String },
    #[error("parameter `{name}` missing from checkpoint")]
    MissingParameter { name: String },
    #[error("weight file format: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl NumericsError {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Self::Shape { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
    }

    pub(crate) fn rename(self, new_op: &'static str) -> Self {
        match self {
            Self::Shape { lhs, rhs, .. } => Self::Shape { op: new_op, lhs, rhs },
            other => other,
        }
    }
}
