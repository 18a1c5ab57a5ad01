//! Sequence-to-sequence and transformer forecasters for store×item daily
//! sales panels, built on a small reverse-mode autodiff engine.

pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod params;
pub mod tensor;

pub use error::{Error, Result};
pub use params::ParamStore;
pub use tensor::{Gradients, Tape, Tensor, Var};
