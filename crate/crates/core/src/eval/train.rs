use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::evaluate::forecast_window;
use super::metrics::rmsle;
use super::optim::{clip_global_norm, mse_loss, Adam, AdamConfig};
use crate::data::{build_batch, sample_anchor, AnchorMode, PanelCube, SplitSpec};
use crate::error::{Error, Result};
use crate::model::{Forecaster, HistoryLen, Mode};
use crate::params::ParamStore;
use crate::tensor::Tape;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm cap.
    pub clip_norm: f64,
    pub epochs: usize,
    /// An epoch is this many sampled batches.
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// Draw each batch's anchor uniformly from the training range. When
    /// off, every batch uses the latest anchor so targets end at the train end.
    pub random_max_time_step: bool,
    pub seed: u64,
    /// Series per inference batch during evaluation.
    pub eval_chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            clip_norm: 5.0,
            epochs: 50,
            batches_per_epoch: 20,
            batch_size: 64,
            patience: 10,
            random_max_time_step: true,
            seed: 0,
            eval_chunk: 512,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.batches_per_epoch == 0 || self.epochs == 0 {
            return Err(Error::Config("epochs, batches_per_epoch and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.clip_norm > 0.0 && self.eps > 0.0) {
            return Err(Error::Config("lr, clip_norm and eps must be positive".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean log-space MSE over the epoch's batches.
    pub train_loss: f64,
    pub val_rmsle: f64,
    /// Best validation RMSLE so far, including this epoch.
    pub best_val_rmsle: f64,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub epoch: usize,
    pub optimizer: Adam,
    pub best_val_rmsle: f64,
    pub best_epoch: usize,
    pub patience_left: usize,
    pub seed: u64,
    pub history: Vec<EpochRecord>,
    pub best_params: ParamStore,
    pub stopped_early: bool,
}

/// RMSLE of `model` on the validation window over every series.
pub fn validation_rmsle(model: &dyn Forecaster, cube: &PanelCube, spec: &SplitSpec, chunk: usize) -> Result<f64> {
    let anchor = spec.eval_anchor(crate::data::Period::Validation)?;
    let f = forecast_window(model, cube, anchor, &cube.series(), chunk)?;
    rmsle(&f.pred_linear(), &f.actual_linear())
}

pub fn train(model: &mut dyn Forecaster, cube: &PanelCube, spec: &SplitSpec, cfg: &TrainConfig) -> Result<TrainState> {
    train_observed(model, cube, spec, cfg, &mut |_| {})
}

/// Trains with Adam on log-space MSE, keeping the parameters of the epoch
/// with the lowest validation RMSLE. The model ends holding those parameters.
pub fn train_observed(
    model: &mut dyn Forecaster,
    cube: &PanelCube,
    spec: &SplitSpec,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainState> {
    cfg.validate()?;
    spec.validate()?;
    let mcfg = model.config().clone();
    if mcfg.horizon != spec.horizon {
        return Err(Error::Config(format!(
            "model horizon {} differs from the split horizon {}",
            mcfg.horizon, spec.horizon
        )));
    }
    if spec.validation.end >= cube.n_days {
        return Err(Error::Config(format!(
            "validation ends on day {} but the cube has {} days",
            spec.validation.end, cube.n_days
        )));
    }
    let (lo, _) = spec.train_anchor_range()?;
    if let HistoryLen::Days(n) = mcfg.history_len {
        if n > lo + 1 {
            return Err(Error::Config(format!(
                "history of {n} days does not fit before the earliest anchor {lo}"
            )));
        }
    }
    let series = cube.series();
    if series.is_empty() {
        return Err(Error::Degenerate("cube has no series".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mode = if cfg.random_max_time_step {
        AnchorMode::Random
    } else {
        AnchorMode::Latest
    };
    let mut state = TrainState {
        epoch: 0,
        optimizer: Adam::new(cfg.adam()),
        best_val_rmsle: f64::INFINITY,
        best_epoch: 0,
        patience_left: cfg.patience,
        seed: cfg.seed,
        history: Vec::new(),
        best_params: model.params().clone(),
        stopped_early: false,
    };
    let per_batch = cfg.batch_size.min(series.len());
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        for b in 0..cfg.batches_per_epoch {
            let anchor = sample_anchor(spec, &mut rng, mode)?;
            spec.check_train_anchor(anchor)?;
            let picked: Vec<(usize, usize)> = sample(&mut rng, series.len(), per_batch)
                .into_iter()
                .map(|k| series[k])
                .collect();
            let batch = build_batch(cube, anchor, &picked, mcfg.history_for(anchor), &mcfg.covariates, mcfg.horizon)?;
            debug_assert!(batch.target_days().end() <= &spec.train_end);

            let mut tape = Tape::new();
            let pred = model.forward(&mut tape, model.params(), &batch, Mode::Train)?;
            let target = tape.constant(batch.targets.clone());
            let loss = mse_loss(&mut tape, pred, target)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, batch: b, loss: value });
            }
            let mut grads = tape.backward(loss)?.params(model.params());
            let norm = clip_global_norm(&mut grads, cfg.clip_norm);
            if !norm.is_finite() {
                return Err(Error::Divergence { epoch, batch: b, loss: norm });
            }
            state.optimizer.update(model.params_mut(), &grads)?;
            loss_sum += value;
        }
        let val = validation_rmsle(model, cube, spec, cfg.eval_chunk)?;
        if !val.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: cfg.batches_per_epoch,
                loss: val,
            });
        }
        state.epoch = epoch;
        if val < state.best_val_rmsle {
            state.best_val_rmsle = val;
            state.best_epoch = epoch;
            state.best_params = model.params().clone();
            state.patience_left = cfg.patience;
        } else {
            state.patience_left = state.patience_left.saturating_sub(1);
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / cfg.batches_per_epoch as f64,
            val_rmsle: val,
            best_val_rmsle: state.best_val_rmsle,
        };
        on_epoch(&record);
        state.history.push(record);
        if state.patience_left == 0 {
            state.stopped_early = true;
            break;
        }
    }
    model.params_mut().assign_from(&state.best_params)?;
    Ok(state)
}
