use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::data::{Covariates, PanelCube, HORIZON};
use crate::error::{Error, Result};

/// Encoder history length: every day up to the anchor, or a fixed count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HistoryLen {
    Full,
    Days(usize),
}

impl HistoryLen {
    /// Number of input days for a window anchored at `anchor`. `Full` is capped by `cap` when given.
    pub fn resolve(self, anchor: usize, cap: Option<usize>) -> usize {
        match self {
            HistoryLen::Full => cap.map_or(anchor + 1, |c| c.min(anchor + 1)),
            HistoryLen::Days(n) => n,
        }
    }
}

impl std::fmt::Display for HistoryLen {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HistoryLen::Full => write!(f, "full"),
            HistoryLen::Days(n) => write!(f, "{n}"),
        }
    }
}

impl std::str::FromStr for HistoryLen {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("full") {
            return Ok(HistoryLen::Full);
        }
        s.parse()
            .map(HistoryLen::Days)
            .map_err(|_| Error::Config(format!("history length `{s}` is neither `full` nor a day count")))
    }
}

impl Serialize for HistoryLen {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            HistoryLen::Full => s.serialize_str("full"),
            HistoryLen::Days(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for HistoryLen {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Days(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Days(n) => Ok(HistoryLen::Days(n as usize)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Seq2seq,
    Transformer,
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Architecture::Seq2seq => "seq2seq",
            Architecture::Transformer => "transformer",
        })
    }
}

/// Input widths taken from the cube the model is trained on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDims {
    /// Encoder channels: sales plus selected covariates.
    pub channels: usize,
    /// One-hot store and item metadata width.
    pub static_dim: usize,
    pub store_vocab: usize,
    pub item_vocab: usize,
    /// Known-future covariate width.
    pub future_dim: usize,
}

impl InputDims {
    pub fn from_cube(cube: &PanelCube, covariates: &Covariates) -> Self {
        Self {
            channels: 1 + covariates.count(),
            static_dim: cube.static_dim(),
            store_vocab: cube.store_vocab,
            item_vocab: cube.item_vocab,
            future_dim: covariates.future_count(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub history_len: HistoryLen,
    pub horizon: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub cond_hidden_dim: usize,
    pub head_hidden_dim: usize,
    pub d_model: usize,
    pub heads: usize,
    pub n_blocks: usize,
    pub d_ff: usize,
    /// Transformer input cap; `full` history is shortened to this many days.
    pub max_history: usize,
    pub covariates: Covariates,
    /// Feed promo/holiday/oil of the target days to the decoder. Off by default.
    pub future_covariates: bool,
    /// Parameter initialization seed.
    pub seed: u64,
    pub inputs: InputDims,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Seq2seq,
            history_len: HistoryLen::Days(200),
            horizon: HORIZON,
            hidden_dim: 32,
            embed_dim: 4,
            cond_hidden_dim: 32,
            head_hidden_dim: 16,
            d_model: 64,
            heads: 4,
            n_blocks: 2,
            d_ff: 128,
            max_history: 200,
            covariates: Covariates::default(),
            future_covariates: false,
            seed: 0,
            inputs: InputDims::default(),
        }
    }
}

impl ModelConfig {
    pub fn with_inputs(mut self, cube: &PanelCube) -> Self {
        self.inputs = InputDims::from_cube(cube, &self.covariates);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if self.inputs.channels != 1 + self.covariates.count() {
            return Err(Error::Config(format!(
                "input channels {} disagree with the covariate selection ({} + 1)",
                self.inputs.channels,
                self.covariates.count()
            )));
        }
        if self.inputs.store_vocab == 0 || self.inputs.item_vocab == 0 {
            return bad("embedding vocabularies are empty; build the config from a cube");
        }
        match self.architecture {
            Architecture::Seq2seq => {
                if self.hidden_dim == 0 || self.cond_hidden_dim == 0 || self.head_hidden_dim == 0 {
                    return bad("seq2seq layer widths must be positive");
                }
            }
            Architecture::Transformer => {
                if self.d_model == 0 || self.d_model % 2 != 0 {
                    return bad("d_model must be positive and even for the positional encoding");
                }
                if self.heads == 0 || self.d_model % self.heads != 0 {
                    return Err(Error::Config(format!(
                        "d_model {} is not divisible by {} heads",
                        self.d_model, self.heads
                    )));
                }
                if self.d_ff == 0 {
                    return bad("d_ff must be positive");
                }
                if self.history_len == HistoryLen::Days(0) {
                    return bad("the transformer needs at least one history day to attend to");
                }
                if let HistoryLen::Days(n) = self.history_len {
                    if n > self.max_history {
                        return Err(Error::Config(format!(
                            "history {n} exceeds the transformer cap {}",
                            self.max_history
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Shortens an explicit transformer history to the cap. Returns whether it changed.
    pub fn clamp_history(&mut self) -> bool {
        match (self.architecture, self.history_len) {
            (Architecture::Transformer, HistoryLen::Days(n)) if n > self.max_history => {
                self.history_len = HistoryLen::Days(self.max_history);
                true
            }
            _ => false,
        }
    }

    /// History cap applied when resolving `full`.
    pub fn history_cap(&self) -> Option<usize> {
        match self.architecture {
            Architecture::Seq2seq => None,
            Architecture::Transformer => Some(self.max_history),
        }
    }

    pub fn history_for(&self, anchor: usize) -> usize {
        self.history_len.resolve(anchor, self.history_cap())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn digest(&self) -> Result<[u8; 32]> {
        Ok(Sha256::digest(self.to_toml()?.as_bytes()).into())
    }
}
