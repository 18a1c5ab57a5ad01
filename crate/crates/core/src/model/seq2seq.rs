use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_batch, Forecaster, Mode, ModelConfig, StaticEncoder};
use crate::data::WindowBatch;
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer, GruCell, RecurrentCell};
use crate::params::ParamStore;
use crate::tensor::{Tape, Tensor, Var};

pub const SEQ2SEQ_MAGIC: [u8; 4] = *b"PCS2";

/// GRU encoder over the history, a two-layer network that conditions the
/// context on static features, and a GRU decoder that starts from a zero go
/// symbol and feeds back its own predictions through a two-layer head.
#[derive(Clone, Debug)]
pub struct Seq2SeqModel {
    config: ModelConfig,
    params: ParamStore,
    statics: StaticEncoder,
    encoder: GruCell,
    condition: [DenseLayer; 2],
    decoder: GruCell,
    head: [DenseLayer; 2],
}

impl Seq2SeqModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = ParamStore::new();
        let h = config.hidden_dim;
        let statics = StaticEncoder::new(&mut p, &config, &mut rng);
        let encoder = GruCell::new(&mut p, "encoder", config.inputs.channels, h, &mut rng);
        let condition = [
            DenseLayer::new(&mut p, "condition.0", h + statics.width(), config.cond_hidden_dim, Activation::Tanh, &mut rng),
            DenseLayer::new(&mut p, "condition.1", config.cond_hidden_dim, h, Activation::Tanh, &mut rng),
        ];
        let dec_in = 1 + if config.future_covariates { config.inputs.future_dim } else { 0 };
        let decoder = GruCell::new(&mut p, "decoder", dec_in, h, &mut rng);
        let head = [
            DenseLayer::new(&mut p, "head.0", h, config.head_hidden_dim, Activation::Tanh, &mut rng),
            DenseLayer::new(&mut p, "head.1", config.head_hidden_dim, 1, Activation::Identity, &mut rng),
        ];
        Ok(Self {
            config,
            params: p,
            statics,
            encoder,
            condition,
            decoder,
            head,
        })
    }

    /// Final encoder state `[b, hidden]` after one step per day of `x` `[b, T, channels]`.
    /// `T = 0` gives the zero state.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.encoder.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "seq2seq encode",
                lhs: shape,
                rhs: vec![self.encoder.input_dim()],
            });
        }
        let (b, t, c) = (shape[0], shape[1], shape[2]);
        let mut state = tape.constant(Tensor::zeros(&[b, self.config.hidden_dim]));
        for step in 0..t {
            let xt = tape.narrow(x, 1, step, 1)?;
            let xt = tape.reshape(xt, &[b, c])?;
            state = self.encoder.step(tape, store, xt, state)?;
        }
        Ok(state)
    }

    /// `ĥ = FFN₂(FFN₁(h_t ‖ x̂))`, the decoder's initial state.
    pub fn condition_context(&self, tape: &mut Tape, store: &ParamStore, h_t: Var, statics: Var) -> Result<Var> {
        let joined = tape.concat(&[h_t, statics], 1)?;
        let a = self.condition[0].forward(tape, store, joined)?;
        self.condition[1].forward(tape, store, a)
    }

    /// Per-step prediction head `f`.
    pub fn head(&self, tape: &mut Tape, store: &ParamStore, state: Var) -> Result<Var> {
        let a = self.head[0].forward(tape, store, state)?;
        self.head[1].forward(tape, store, a)
    }

    /// Runs the decoder for `horizon` steps from `h_hat` `[b, hidden]`.
    ///
    /// Step 1 reads the all-zero go symbol; later steps read the previous
    /// prediction, or zero when `feedback` is false. `future` `[b, horizon, k]`
    /// is appended to each step's input when given.
    pub fn decode_autoregressive(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h_hat: Var,
        future: Option<Var>,
        horizon: usize,
        feedback: bool,
    ) -> Result<Var> {
        let b = tape.shape(h_hat)[0];
        let go = tape.constant(Tensor::zeros(&[b, 1]));
        let mut state = h_hat;
        let mut prev = go;
        let mut outputs = Vec::with_capacity(horizon);
        for step in 0..horizon {
            let input = match future {
                Some(f) => {
                    let k = tape.shape(f)[2];
                    let ft = tape.narrow(f, 1, step, 1)?;
                    let ft = tape.reshape(ft, &[b, k])?;
                    tape.concat(&[prev, ft], 1)?
                }
                None => prev,
            };
            state = self.decoder.step(tape, store, input, state)?;
            let y = self.head(tape, store, state)?;
            outputs.push(y);
            prev = if feedback { y } else { go };
        }
        if outputs.is_empty() {
            return Ok(tape.constant(Tensor::zeros(&[b, 0])));
        }
        tape.concat(&outputs, 1)
    }

    /// Forward pass with an explicit feedback switch.
    pub fn forward_with(&self, tape: &mut Tape, store: &ParamStore, batch: &WindowBatch, feedback: bool) -> Result<Var> {
        check_batch(&self.config, batch)?;
        let x = tape.constant(batch.encoder.clone());
        let h_t = self.encode(tape, store, x)?;
        let statics = self.statics.forward(tape, store, batch)?;
        let h_hat = self.condition_context(tape, store, h_t, statics)?;
        let future = self
            .config
            .future_covariates
            .then(|| tape.constant(batch.future.clone()));
        self.decode_autoregressive(tape, store, h_hat, future, self.config.horizon, feedback)
    }
}

impl Forecaster for Seq2SeqModel {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn magic(&self) -> [u8; 4] {
        SEQ2SEQ_MAGIC
    }

    /// Training and inference are the same autoregressive pass.
    fn forward(&self, tape: &mut Tape, store: &ParamStore, batch: &WindowBatch, _mode: Mode) -> Result<Var> {
        self.forward_with(tape, store, batch, true)
    }
}
