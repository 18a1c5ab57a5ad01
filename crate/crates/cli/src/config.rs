use std::path::Path;

use anyhow::Context;
use clap::ValueEnum;
use panelcast_core::data::{PanelCube, SplitSpec};
use panelcast_core::eval::{EvalConfig, TrainConfig};
use panelcast_core::model::{Architecture, HistoryLen, ModelConfig};
use panelcast_core::Error;
use serde::{Deserialize, Serialize};

/// Days of history the trimmed seq2seq and the transformer read.
pub const TRIMMED_HISTORY: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    /// Seq2seq over the full history.
    Seq2seq,
    /// Seq2seq over the latest 200 days.
    Seq2seqTrimmed,
    Transformer,
}

impl ModelKind {
    pub fn architecture(self) -> Architecture {
        match self {
            ModelKind::Seq2seq | ModelKind::Seq2seqTrimmed => Architecture::Seq2seq,
            ModelKind::Transformer => Architecture::Transformer,
        }
    }

    pub fn default_history(self) -> HistoryLen {
        match self {
            ModelKind::Seq2seq => HistoryLen::Full,
            ModelKind::Seq2seqTrimmed | ModelKind::Transformer => HistoryLen::Days(TRIMMED_HISTORY),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Seq2seq => "seq2seq",
            ModelKind::Seq2seqTrimmed => "seq2seq-trimmed",
            ModelKind::Transformer => "transformer",
        }
    }
}

/// How a cube's days are divided when it is not the full competition range.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitOptions {
    /// Earliest training anchor. Defaults to the smallest day that fits the history.
    pub min_anchor: Option<usize>,
    /// Unused days between the training end and validation.
    pub gap: usize,
}

/// The `--config` file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub split: SplitOptions,
    /// Whether `[model] history_len` appeared in the file.
    #[serde(skip)]
    pub history_given: bool,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, Error> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let value: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.history_given = value
            .get("model")
            .and_then(|m| m.as_table())
            .is_some_and(|m| m.contains_key("history_len"));
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    /// The model config for `kind` on `cube`. The preset history applies
    /// unless the file set one; transformer histories are clamped to the cap.
    pub fn model_for(&self, kind: ModelKind, cube: &PanelCube) -> Result<(ModelConfig, bool), Error> {
        let mut m = self.model.clone();
        m.architecture = kind.architecture();
        if !self.history_given {
            m.history_len = kind.default_history();
        }
        let clamped = m.clamp_history();
        let m = m.with_inputs(cube);
        m.validate()?;
        Ok((m, clamped))
    }
}

/// Smallest anchor at which every config's history lies inside the panel.
pub fn min_anchor_for(models: &[&ModelConfig]) -> usize {
    models
        .iter()
        .map(|m| match m.history_len {
            HistoryLen::Days(n) => n.saturating_sub(1),
            HistoryLen::Full => 0,
        })
        .max()
        .unwrap_or(0)
}

pub fn split_for(cube: &PanelCube, horizon: usize, opts: &SplitOptions, models: &[&ModelConfig]) -> Result<SplitSpec, Error> {
    let min_anchor = opts.min_anchor.unwrap_or_else(|| min_anchor_for(models));
    SplitSpec::for_panel(cube.origin, cube.n_days, horizon, min_anchor, opts.gap)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_given_is_detected() {
        assert!(!RunConfig::parse("[train]\nepochs = 3").unwrap().history_given);
        let c = RunConfig::parse("[model]\nhistory_len = 75").unwrap();
        assert!(c.history_given);
        assert_eq!(c.model.history_len, HistoryLen::Days(75));
        assert!(RunConfig::parse("[model]\nunknown = 1").is_err());
        assert!(RunConfig::parse("[nonsense]").is_err());
    }

    #[test]
    fn min_anchor_covers_the_longest_history() {
        let a = ModelConfig {
            history_len: HistoryLen::Days(75),
            ..ModelConfig::default()
        };
        let b = ModelConfig {
            history_len: HistoryLen::Full,
            ..ModelConfig::default()
        };
        assert_eq!(min_anchor_for(&[&a, &b]), 74);
        assert_eq!(min_anchor_for(&[&b]), 0);
    }
}
