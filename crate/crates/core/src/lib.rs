//! Driver gaze mapping: a residual dense eye branch fused with facial
//! features, regressing a pixel on the forward road image.
//!
//! The crate carries its own small tensor and reverse-mode differentiation
//! engine ([`tensor`], [`ops`], [`autograd`]), the network ([`model`]), the
//! training recipe ([`train`]) and dataset handling ([`data`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
pub mod autograd;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod model;
pub mod ops;
pub mod tensor;
pub mod train;

pub use autograd::{Fault, Gradients, Tape, Var};
pub use error::{Error, Result};
pub use model::{DrGazeModel, EyeBranchConfig, ModelConfig};
pub use tensor::{Element, Precision, Tensor};
