//! Dense f64 tensors with a single-use reverse-mode tape, plus the transformer
//! building blocks used by the model.

pub mod gradcheck;
mod layers;
mod params;
mod tape;

use thiserror::Error;

pub use layers::{CrossLayer, EncoderLayer, FeedForward, LayerNorm, Linear, MultiHeadAttention};
pub use params::{matrix_dims, Init, ParamId, ParamStore, Parameter, Tensor};
pub use tape::{AttentionShape, Gradients, Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("{op}: incompatible shapes {a:?} and {b:?}")]
    Shape { op: &'static str, a: Vec<usize>, b: Vec<usize> },
    #[error("{op}: index {index} out of range {bound}")]
    Index { op: &'static str, index: usize, bound: usize },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("backward already ran on this tape")]
    BackwardConsumed,
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("duplicate parameter name {0}")]
    DuplicateParameter(String),
}
