//! Differentiable building blocks shared by both forecasting architectures.
//!
//! Layers are lightweight descriptors: they own parameter *names* and
//! dimensions, while the values live in a [`ParamStore`]. A forward pass binds
//! the parameters it touches onto the caller's [`Tape`].

mod attention;
mod gru;

pub use attention::{causal_mask, scaled_dot_product_attention, MultiHeadAttention, MASK_LOGIT};
pub use gru::{GruCell, RecurrentCell};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Tape, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
        }
    }
}

pub(crate) fn last_dim_check(tape: &Tape, x: Var, expected: usize, op: &'static str) -> Result<()> {
    let shape = tape.shape(x);
    if shape.last() != Some(&expected) {
        return Err(Error::ShapeMismatch {
            op,
            lhs: shape.to_vec(),
            rhs: vec![expected],
        });
    }
    Ok(())
}

/// Fully connected layer: `activation(x · W + b)` over the last axis.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    name: String,
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
}

impl DenseLayer {
    /// Registers `{name}.weight` `[in, out]` (Glorot) and `{name}.bias` `[out]` (zeros).
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        store.init_glorot(&format!("{name}.weight"), in_dim, out_dim, rng);
        store.init_const(&format!("{name}.bias"), &[out_dim], 0.0);
        Self {
            name: name.to_string(),
            in_dim,
            out_dim,
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    /// `x` is `[b, in]` or `[b, t, in]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        last_dim_check(tape, x, self.in_dim, "dense")?;
        let w = tape.param(store, &self.weight_name())?;
        let b = tape.param(store, &self.bias_name())?;
        let xw = tape.matmul(x, w)?;
        let z = tape.add(xw, b)?;
        self.activation.apply(tape, z)
    }
}

/// Lookup table mapping integer ids to learned vectors.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    name: String,
    vocab: usize,
    dim: usize,
}

impl EmbeddingTable {
    pub fn new(store: &mut ParamStore, name: &str, vocab: usize, dim: usize, rng: &mut impl Rng) -> Self {
        store.init_normal(&format!("{name}.table"), &[vocab, dim], 0.1, rng);
        Self {
            name: name.to_string(),
            vocab,
            dim,
        }
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn table_name(&self) -> String {
        format!("{}.table", self.name)
    }

    /// Returns `[ids.len(), dim]`; any id `>= vocab` is an error.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        if let Some(&id) = ids.iter().find(|&&id| id >= self.vocab) {
            return Err(Error::IdOutOfRange { id, vocab: self.vocab });
        }
        let table = tape.param(store, &self.table_name())?;
        tape.gather(table, ids)
    }
}

/// Post-sublayer normalization: standardize over the last axis, then scale and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    name: String,
    dim: usize,
    eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        store.init_const(&format!("{name}.gain"), &[dim], 1.0);
        store.init_const(&format!("{name}.bias"), &[dim], 0.0);
        Self {
            name: name.to_string(),
            dim,
            eps: LAYER_NORM_EPS,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        last_dim_check(tape, x, self.dim, "layer_norm")?;
        let gain = tape.param(store, &format!("{}.gain", self.name))?;
        let bias = tape.param(store, &format!("{}.bias", self.name))?;
        let z = tape.standardize(x, self.eps)?;
        let scaled = tape.mul(z, gain)?;
        tape.add(scaled, bias)
    }
}

/// Sinusoidal position table: `PE(t, 2i) = sin(t / 10000^(2i/d))`,
/// `PE(t, 2i+1) = cos(t / 10000^(2i/d))`.
pub fn positional_encoding(t_max: usize, d_model: usize) -> Result<Tensor> {
    if d_model % 2 != 0 {
        return Err(Error::Config(format!("positional encoding needs an even d_model, got {d_model}")));
    }
    let mut data = vec![0.0; t_max * d_model];
    for t in 0..t_max {
        for i in 0..d_model / 2 {
            let angle = t as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            data[t * d_model + 2 * i] = angle.sin();
            data[t * d_model + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::new(vec![t_max, d_model], data)
}
