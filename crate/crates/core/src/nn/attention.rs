use rand::Rng;

use super::last_dim_check;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Tape, Tensor, Var};

/// Additive logit for masked (future) positions. Finite so softmax stays
/// NaN-free; `exp(-1e9)` underflows to exactly zero in `f64`.
pub const MASK_LOGIT: f64 = -1e9;

/// `[t, t]` additive mask: 0 on and below the diagonal, [`MASK_LOGIT`] above.
pub fn causal_mask(t: usize) -> Tensor {
    let mut m = Tensor::zeros(&[t, t]);
    for i in 0..t {
        for j in i + 1..t {
            m.data_mut()[i * t + j] = MASK_LOGIT;
        }
    }
    m
}

/// `softmax(Q·Kᵀ / √d_K) · V` over `[b, t, d]` inputs. With `causal`, query
/// position `i` only sees keys at positions `≤ i`.
pub fn scaled_dot_product_attention(tape: &mut Tape, q: Var, k: Var, v: Var, causal: bool) -> Result<Var> {
    let (sq, sk, sv) = (tape.shape(q).to_vec(), tape.shape(k).to_vec(), tape.shape(v).to_vec());
    let ok = sq.len() == 3
        && sk.len() == 3
        && sv.len() == 3
        && sq[0] == sk[0]
        && sk[0] == sv[0]
        && sq[2] == sk[2]
        && sk[1] == sv[1];
    if !ok {
        return Err(Error::ShapeMismatch {
            op: "attention",
            lhs: sq,
            rhs: sk,
        });
    }
    let (tq, tk, d_k) = (sq[1], sk[1], sq[2]);
    if causal && tq != tk {
        return Err(Error::ShapeMismatch {
            op: "causal attention",
            lhs: vec![tq],
            rhs: vec![tk],
        });
    }
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let mut logits = tape.scale(scores, 1.0 / (d_k as f64).sqrt())?;
    if causal {
        let mask = tape.constant(causal_mask(tq));
        logits = tape.add(logits, mask)?;
    }
    let weights = tape.softmax(logits, 2)?;
    tape.matmul(weights, v)
}

/// Multi-head attention with bias-free Q/K/V/output projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    name: String,
    d_model: usize,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, d_model: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::Config(format!(
                "d_model {d_model} is not divisible by {heads} heads"
            )));
        }
        for p in ["w_q", "w_k", "w_v", "w_o"] {
            store.init_glorot(&format!("{name}.{p}"), d_model, d_model, rng);
        }
        Ok(Self {
            name: name.to_string(),
            d_model,
            heads,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn param_name(&self, p: &str) -> String {
        format!("{}.{p}", self.name)
    }

    /// Queries come from `x_q` `[b, tq, d_model]`; keys and values from `x_kv` `[b, tk, d_model]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x_q: Var, x_kv: Var, causal: bool) -> Result<Var> {
        last_dim_check(tape, x_q, self.d_model, "attention query")?;
        last_dim_check(tape, x_kv, self.d_model, "attention key/value")?;
        let w_q = tape.param(store, &self.param_name("w_q"))?;
        let w_k = tape.param(store, &self.param_name("w_k"))?;
        let w_v = tape.param(store, &self.param_name("w_v"))?;
        let w_o = tape.param(store, &self.param_name("w_o"))?;
        let q = tape.matmul(x_q, w_q)?;
        let k = tape.matmul(x_kv, w_k)?;
        let v = tape.matmul(x_kv, w_v)?;
        let d_k = self.d_k();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.narrow(q, 2, h * d_k, d_k)?;
            let kh = tape.narrow(k, 2, h * d_k, d_k)?;
            let vh = tape.narrow(v, 2, h * d_k, d_k)?;
            outs.push(scaled_dot_product_attention(tape, qh, kh, vh, causal)?);
        }
        let joined = if outs.len() == 1 { outs[0] } else { tape.concat(&outs, 2)? };
        tape.matmul(joined, w_o)
    }
}
