//! The two forecasting architectures and what they share.

mod config;
mod seq2seq;
mod transformer;

pub use config::{Architecture, HistoryLen, InputDims, ModelConfig};
pub use seq2seq::{Seq2SeqModel, SEQ2SEQ_MAGIC};
pub use transformer::{TransformerModel, TRANSFORMER_MAGIC};

use std::path::Path;

use crate::data::WindowBatch;
use crate::error::{Error, Result};
use crate::nn::EmbeddingTable;
use crate::params::ParamStore;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Differentiable training pass. The transformer decodes teacher-forced.
    Train,
    /// Autoregressive forecast from the model's own predictions.
    Infer,
}

/// A model mapping a [`WindowBatch`] to `[b, horizon]` log-space predictions.
pub trait Forecaster: Send + Sync {
    fn config(&self) -> &ModelConfig;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn magic(&self) -> [u8; 4];

    /// Builds the forward graph against `store`, which must have this model's parameter layout.
    fn forward(&self, tape: &mut Tape, store: &ParamStore, batch: &WindowBatch, mode: Mode) -> Result<Var>;

    fn predict(&self, batch: &WindowBatch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, self.params(), batch, Mode::Infer)?;
        Ok(tape.value(out).clone())
    }

    fn save(&self, path: &Path) -> Result<()> {
        self.params().save(path, self.magic(), &self.config().digest()?)
    }

    /// Loads parameters written by [`Forecaster::save`] for an identical config.
    fn load_params(&mut self, path: &Path) -> Result<()> {
        let (digest, store) = ParamStore::load(path, self.magic())?;
        let expected = self.config().digest()?;
        if digest != expected {
            return Err(Error::DigestMismatch {
                expected: hex::encode(expected),
                found: hex::encode(digest),
            });
        }
        self.params_mut().assign_from(&store)
    }
}

/// Either architecture behind one type.
pub enum Model {
    Seq2seq(Seq2SeqModel),
    Transformer(TransformerModel),
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        Ok(match config.architecture {
            Architecture::Seq2seq => Model::Seq2seq(Seq2SeqModel::new(config)?),
            Architecture::Transformer => Model::Transformer(TransformerModel::new(config)?),
        })
    }

    fn inner(&self) -> &dyn Forecaster {
        match self {
            Model::Seq2seq(m) => m,
            Model::Transformer(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Forecaster {
        match self {
            Model::Seq2seq(m) => m,
            Model::Transformer(m) => m,
        }
    }
}

impl Forecaster for Model {
    fn config(&self) -> &ModelConfig {
        self.inner().config()
    }

    fn params(&self) -> &ParamStore {
        self.inner().params()
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        self.inner_mut().params_mut()
    }

    fn magic(&self) -> [u8; 4] {
        self.inner().magic()
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, batch: &WindowBatch, mode: Mode) -> Result<Var> {
        self.inner().forward(tape, store, batch, mode)
    }
}

/// Store and item embeddings shared by both architectures.
#[derive(Clone, Debug)]
pub(crate) struct StaticEncoder {
    store: EmbeddingTable,
    item: EmbeddingTable,
    static_dim: usize,
}

impl StaticEncoder {
    pub(crate) fn new(store: &mut ParamStore, config: &ModelConfig, rng: &mut impl rand::Rng) -> Self {
        let i = &config.inputs;
        Self {
            store: EmbeddingTable::new(store, "store_embedding", i.store_vocab, config.embed_dim, rng),
            item: EmbeddingTable::new(store, "item_embedding", i.item_vocab, config.embed_dim, rng),
            static_dim: i.static_dim,
        }
    }

    pub(crate) fn width(&self) -> usize {
        self.store.dim() + self.item.dim() + self.static_dim
    }

    /// `[b, width]`: store embedding ‖ item embedding ‖ one-hot metadata.
    pub(crate) fn forward(&self, tape: &mut Tape, store: &ParamStore, batch: &WindowBatch) -> Result<Var> {
        if batch.static_features.shape()[1] != self.static_dim {
            return Err(Error::ShapeMismatch {
                op: "static features",
                lhs: batch.static_features.shape().to_vec(),
                rhs: vec![self.static_dim],
            });
        }
        let s = self.store.forward(tape, store, &batch.store_rows)?;
        let i = self.item.forward(tape, store, &batch.item_rows)?;
        let meta = tape.constant(batch.static_features.clone());
        tape.concat(&[s, i, meta], 1)
    }
}

/// Repeats `[b, w]` over `t` positions as `[b, t, w]` (via a ones matmul, so it stays differentiable).
pub(crate) fn broadcast_time(tape: &mut Tape, x: Var, t: usize) -> Result<Var> {
    let (b, w) = (tape.shape(x)[0], tape.shape(x)[1]);
    let x3 = tape.reshape(x, &[b, 1, w])?;
    let ones = tape.constant(Tensor::full(&[b, t, 1], 1.0));
    tape.matmul(ones, x3)
}

pub(crate) fn check_batch(config: &ModelConfig, batch: &WindowBatch) -> Result<()> {
    let enc = batch.encoder.shape();
    if enc[2] != config.inputs.channels {
        return Err(Error::ShapeMismatch {
            op: "encoder channels",
            lhs: enc.to_vec(),
            rhs: vec![config.inputs.channels],
        });
    }
    if batch.horizon() != config.horizon {
        return Err(Error::ShapeMismatch {
            op: "horizon",
            lhs: vec![batch.horizon()],
            rhs: vec![config.horizon],
        });
    }
    if config.future_covariates && batch.future.shape()[2] != config.inputs.future_dim {
        return Err(Error::ShapeMismatch {
            op: "future covariates",
            lhs: batch.future.shape().to_vec(),
            rhs: vec![config.inputs.future_dim],
        });
    }
    Ok(())
}
