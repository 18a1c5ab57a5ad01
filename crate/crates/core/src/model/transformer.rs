use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{broadcast_time, check_batch, Forecaster, Mode, ModelConfig, StaticEncoder};
use crate::data::WindowBatch;
use crate::error::{Error, Result};
use crate::nn::{positional_encoding, Activation, DenseLayer, LayerNorm, MultiHeadAttention};
use crate::params::ParamStore;
use crate::tensor::{Tape, Tensor, Var};

pub const TRANSFORMER_MAGIC: [u8; 4] = *b"PCTF";

/// Log-space go value at decoder position 0.
const GO_VALUE: f64 = 0.0;

#[derive(Clone, Debug)]
struct FeedForward {
    inner: DenseLayer,
    outer: DenseLayer,
}

impl FeedForward {
    fn new(store: &mut ParamStore, name: &str, d_model: usize, d_ff: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            inner: DenseLayer::new(store, &format!("{name}.ff.0"), d_model, d_ff, Activation::Relu, rng),
            outer: DenseLayer::new(store, &format!("{name}.ff.1"), d_ff, d_model, Activation::Identity, rng),
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let a = self.inner.forward(tape, store, x)?;
        self.outer.forward(tape, store, a)
    }
}

/// `norm(x + sublayer(x))`.
fn add_norm(tape: &mut Tape, store: &ParamStore, norm: &LayerNorm, x: Var, sub: Var) -> Result<Var> {
    let s = tape.add(x, sub)?;
    norm.forward(tape, store, s)
}

#[derive(Clone, Debug)]
struct EncoderBlock {
    attn: MultiHeadAttention,
    norm1: LayerNorm,
    ff: FeedForward,
    norm2: LayerNorm,
}

impl EncoderBlock {
    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let a = self.attn.forward(tape, store, x, x, false)?;
        let x = add_norm(tape, store, &self.norm1, x, a)?;
        let f = self.ff.forward(tape, store, x)?;
        add_norm(tape, store, &self.norm2, x, f)
    }
}

#[derive(Clone, Debug)]
struct DecoderBlock {
    self_attn: MultiHeadAttention,
    norm1: LayerNorm,
    cross_attn: MultiHeadAttention,
    norm2: LayerNorm,
    ff: FeedForward,
    norm3: LayerNorm,
}

impl DecoderBlock {
    fn forward(&self, tape: &mut Tape, store: &ParamStore, y: Var, memory: Var) -> Result<Var> {
        let a = self.self_attn.forward(tape, store, y, y, true)?;
        let y = add_norm(tape, store, &self.norm1, y, a)?;
        let c = self.cross_attn.forward(tape, store, y, memory, false)?;
        let y = add_norm(tape, store, &self.norm2, y, c)?;
        let f = self.ff.forward(tape, store, y)?;
        add_norm(tape, store, &self.norm3, y, f)
    }
}

/// Post-norm encoder/decoder transformer with a scalar regression head.
///
/// Static features are concatenated onto every encoder and decoder position
/// before the input projections.
#[derive(Clone, Debug)]
pub struct TransformerModel {
    config: ModelConfig,
    params: ParamStore,
    statics: StaticEncoder,
    enc_in: DenseLayer,
    dec_in: DenseLayer,
    encoder: Vec<EncoderBlock>,
    decoder: Vec<DecoderBlock>,
    head: DenseLayer,
}

impl TransformerModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = ParamStore::new();
        let d = config.d_model;
        let statics = StaticEncoder::new(&mut p, &config, &mut rng);
        let sw = statics.width();
        let enc_in = DenseLayer::new(&mut p, "enc_in", config.inputs.channels + sw, d, Activation::Identity, &mut rng);
        let dec_in = DenseLayer::new(&mut p, "dec_in", Self::dec_channels(&config) + sw, d, Activation::Identity, &mut rng);
        let mut encoder = Vec::with_capacity(config.n_blocks);
        let mut decoder = Vec::with_capacity(config.n_blocks);
        for i in 0..config.n_blocks {
            let n = format!("encoder.{i}");
            encoder.push(EncoderBlock {
                attn: MultiHeadAttention::new(&mut p, &format!("{n}.attn"), d, config.heads, &mut rng)?,
                norm1: LayerNorm::new(&mut p, &format!("{n}.norm1"), d),
                ff: FeedForward::new(&mut p, &n, d, config.d_ff, &mut rng),
                norm2: LayerNorm::new(&mut p, &format!("{n}.norm2"), d),
            });
        }
        for i in 0..config.n_blocks {
            let n = format!("decoder.{i}");
            decoder.push(DecoderBlock {
                self_attn: MultiHeadAttention::new(&mut p, &format!("{n}.self_attn"), d, config.heads, &mut rng)?,
                norm1: LayerNorm::new(&mut p, &format!("{n}.norm1"), d),
                cross_attn: MultiHeadAttention::new(&mut p, &format!("{n}.cross_attn"), d, config.heads, &mut rng)?,
                norm2: LayerNorm::new(&mut p, &format!("{n}.norm2"), d),
                ff: FeedForward::new(&mut p, &n, d, config.d_ff, &mut rng),
                norm3: LayerNorm::new(&mut p, &format!("{n}.norm3"), d),
            });
        }
        let head = DenseLayer::new(&mut p, "head", d, 1, Activation::Identity, &mut rng);
        Ok(Self {
            config,
            params: p,
            statics,
            enc_in,
            dec_in,
            encoder,
            decoder,
            head,
        })
    }

    fn dec_channels(config: &ModelConfig) -> usize {
        1 + if config.future_covariates { config.inputs.future_dim } else { 0 }
    }

    fn embed(&self, tape: &mut Tape, store: &ParamStore, layer: &DenseLayer, x: Var, statics: Var) -> Result<Var> {
        let t = tape.shape(x)[1];
        let s = broadcast_time(tape, statics, t)?;
        let joined = tape.concat(&[x, s], 2)?;
        let projected = layer.forward(tape, store, joined)?;
        let pe = tape.constant(positional_encoding(t, self.config.d_model)?);
        tape.add(projected, pe)
    }

    /// Memory `[b, T, d_model]` for inputs `x` `[b, T, channels]` and statics `[b, s]`.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, x: Var, statics: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.config.inputs.channels {
            return Err(Error::ShapeMismatch {
                op: "transformer encode",
                lhs: shape,
                rhs: vec![self.config.inputs.channels],
            });
        }
        if shape[1] == 0 || shape[1] > self.config.max_history {
            return Err(Error::Window(format!(
                "encoder length {} outside 1..={}",
                shape[1], self.config.max_history
            )));
        }
        let mut h = self.embed(tape, store, &self.enc_in, x, statics)?;
        for block in &self.encoder {
            h = block.forward(tape, store, h)?;
        }
        Ok(h)
    }

    /// One causal decoder pass over `y_in` `[b, t, dec_channels]`. Returns `[b, t]`.
    pub fn decode(&self, tape: &mut Tape, store: &ParamStore, memory: Var, y_in: Var, statics: Var) -> Result<Var> {
        let shape = tape.shape(y_in).to_vec();
        let (b, t) = (shape[0], shape[1]);
        let mut h = self.embed(tape, store, &self.dec_in, y_in, statics)?;
        for block in &self.decoder {
            h = block.forward(tape, store, h, memory)?;
        }
        let out = self.head.forward(tape, store, h)?;
        tape.reshape(out, &[b, t])
    }

    /// Decoder input for one pass: the shifted value channel, plus future covariates when enabled.
    fn decoder_input(&self, tape: &mut Tape, shifted: Var, future: Option<&Tensor>) -> Result<Var> {
        let (b, t) = (tape.shape(shifted)[0], tape.shape(shifted)[1]);
        let y = tape.reshape(shifted, &[b, t, 1])?;
        match future {
            Some(f) if self.config.future_covariates => {
                let k = f.shape()[2];
                let f = tape.constant(f.clone());
                let f = tape.narrow(f, 1, 0, t)?;
                debug_assert_eq!(tape.shape(f), &[b, t, k]);
                tape.concat(&[y, f], 2)
            }
            _ => Ok(y),
        }
    }

    /// `[b, t]`: the go value followed by `values[.., ..t-1]`.
    pub fn shift_right(values: &Tensor, t: usize) -> Tensor {
        let (b, h) = (values.shape()[0], values.shape()[1]);
        let mut out = vec![GO_VALUE; b * t];
        for r in 0..b {
            for p in 1..t {
                out[r * t + p] = values.data()[r * h + p - 1];
            }
        }
        Tensor::new(vec![b, t], out).expect("shape matches data")
    }

    /// All horizon positions in one pass on the right-shifted `targets` `[b, horizon]`.
    pub fn decode_teacher_forced(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        memory: Var,
        targets: &Tensor,
        future: Option<&Tensor>,
        statics: Var,
    ) -> Result<Var> {
        if targets.shape()[1] != self.config.horizon {
            return Err(Error::ShapeMismatch {
                op: "teacher forcing horizon",
                lhs: targets.shape().to_vec(),
                rhs: vec![self.config.horizon],
            });
        }
        let shifted = tape.constant(Self::shift_right(targets, self.config.horizon));
        let y_in = self.decoder_input(tape, shifted, future)?;
        self.decode(tape, store, memory, y_in, statics)
    }

    /// Position-by-position evaluation: pass `t` sees the prefix of length `t`
    /// of the shifted `targets` and keeps its last output.
    pub fn decode_incremental(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        memory: Var,
        targets: &Tensor,
        future: Option<&Tensor>,
        statics: Var,
    ) -> Result<Var> {
        let h = self.config.horizon;
        let full = Self::shift_right(targets, h);
        let full = tape.constant(full);
        let mut outs = Vec::with_capacity(h);
        for t in 1..=h {
            let prefix = tape.narrow(full, 1, 0, t)?;
            let y_in = self.decoder_input(tape, prefix, future)?;
            let out = self.decode(tape, store, memory, y_in, statics)?;
            outs.push(tape.narrow(out, 1, t - 1, 1)?);
        }
        tape.concat(&outs, 1)
    }

    /// Pass `t` feeds the go value and predictions `1..t` and keeps output `t`.
    pub fn infer_autoregressive(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        memory: Var,
        future: Option<&Tensor>,
        statics: Var,
    ) -> Result<Var> {
        let b = tape.shape(memory)[0];
        let mut preds: Vec<Var> = Vec::with_capacity(self.config.horizon);
        let go = tape.constant(Tensor::full(&[b, 1], GO_VALUE));
        for t in 1..=self.config.horizon {
            let mut parts = vec![go];
            parts.extend_from_slice(&preds);
            let shifted = if parts.len() == 1 { go } else { tape.concat(&parts, 1)? };
            let y_in = self.decoder_input(tape, shifted, future)?;
            let out = self.decode(tape, store, memory, y_in, statics)?;
            preds.push(tape.narrow(out, 1, t - 1, 1)?);
        }
        tape.concat(&preds, 1)
    }

    /// Encoder memory and static features for a batch.
    pub fn prepare(&self, tape: &mut Tape, store: &ParamStore, batch: &WindowBatch) -> Result<(Var, Var)> {
        check_batch(&self.config, batch)?;
        let statics = self.statics.forward(tape, store, batch)?;
        let x = tape.constant(batch.encoder.clone());
        let memory = self.encode(tape, store, x, statics)?;
        Ok((memory, statics))
    }
}

impl Forecaster for TransformerModel {
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
        TRANSFORMER_MAGIC
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, batch: &WindowBatch, mode: Mode) -> Result<Var> {
        let (memory, statics) = self.prepare(tape, store, batch)?;
        match mode {
            Mode::Train => self.decode_teacher_forced(tape, store, memory, &batch.targets, Some(&batch.future), statics),
            Mode::Infer => self.infer_autoregressive(tape, store, memory, Some(&batch.future), statics),
        }
    }
}
