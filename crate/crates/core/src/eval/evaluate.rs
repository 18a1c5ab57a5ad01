use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{rmsle, to_linear, MaleVariant, Metrics};
use crate::data::{build_batch, PanelCube, Period, SplitSpec};
use crate::error::{Error, Result};
use crate::model::Forecaster;

/// Predictions and actuals for every requested series at one anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct Forecast {
    pub period: Option<Period>,
    pub anchor: usize,
    pub horizon: usize,
    pub series: Vec<(usize, usize)>,
    /// `[series, horizon]` row-major, log space.
    pub pred_log: Vec<f64>,
    pub actual_log: Vec<f64>,
    /// One weight per series.
    pub weights: Vec<f64>,
}

impl Forecast {
    pub fn pred_linear(&self) -> Vec<f64> {
        to_linear(&self.pred_log)
    }

    pub fn actual_linear(&self) -> Vec<f64> {
        to_linear(&self.actual_log)
    }

    /// Weights repeated over the horizon, aligned with the flattened predictions.
    pub fn cell_weights(&self) -> Vec<f64> {
        self.weights
            .iter()
            .flat_map(|&w| std::iter::repeat_n(w, self.horizon))
            .collect()
    }

    pub fn metrics(&self, male: MaleVariant) -> Result<Metrics> {
        Metrics::compute(&self.pred_linear(), &self.actual_linear(), &self.cell_weights(), male)
    }

    /// Grouping keys (1-based day offset, store id, item id) per flattened cell.
    pub fn keys(&self, cube: &PanelCube) -> Vec<ErrorKey> {
        self.series
            .iter()
            .flat_map(|&(s, i)| {
                (1..=self.horizon).map(move |d| ErrorKey {
                    day_offset: d,
                    store: cube.store_ids[s],
                    item: cube.item_ids[i],
                })
            })
            .collect()
    }
}

/// Forecasts `series` from `anchor`, `chunk` series per batch.
pub fn forecast_window(
    model: &dyn Forecaster,
    cube: &PanelCube,
    anchor: usize,
    series: &[(usize, usize)],
    chunk: usize,
) -> Result<Forecast> {
    let cfg = model.config();
    let history = cfg.history_for(anchor);
    let mut out = Forecast {
        period: None,
        anchor,
        horizon: cfg.horizon,
        series: series.to_vec(),
        pred_log: Vec::with_capacity(series.len() * cfg.horizon),
        actual_log: Vec::with_capacity(series.len() * cfg.horizon),
        weights: Vec::with_capacity(series.len()),
    };
    for part in series.chunks(chunk.max(1)) {
        let batch = build_batch(cube, anchor, part, history, &cfg.covariates, cfg.horizon)?;
        let pred = model.predict(&batch)?;
        out.pred_log.extend_from_slice(pred.data());
        out.actual_log.extend_from_slice(batch.targets.data());
        out.weights.extend_from_slice(&batch.weights);
    }
    Ok(out)
}

/// Forecasts every series for an evaluation period.
pub fn forecast_period(
    model: &dyn Forecaster,
    cube: &PanelCube,
    spec: &SplitSpec,
    period: Period,
    chunk: usize,
) -> Result<Forecast> {
    if model.config().horizon != spec.horizon {
        return Err(Error::Config(format!(
            "model horizon {} differs from the split horizon {}",
            model.config().horizon,
            spec.horizon
        )));
    }
    let mut f = forecast_window(model, cube, spec.eval_anchor(period)?, &cube.series(), chunk)?;
    f.period = Some(period);
    Ok(f)
}

/// How the average baseline's constant is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AverageSpace {
    /// `expm1(mean(log1p(y)))`.
    #[default]
    Log,
    /// `mean(y)`.
    Linear,
}

/// Linear-space sales of every cell on days `0..=train_end`.
pub fn training_sales(cube: &PanelCube, spec: &SplitSpec) -> Vec<f64> {
    let last = spec.train_end.min(cube.n_days.saturating_sub(1));
    cube.series()
        .into_iter()
        .flat_map(|(s, i)| (0..=last).map(move |d| (s, i, d)))
        .map(|(s, i, d)| cube.target_at(s, i, d).exp_m1().max(0.0))
        .collect()
}

/// The single constant predicted everywhere by the average baseline.
pub fn baseline_average(train_sales: &[f64], space: AverageSpace) -> Result<f64> {
    if train_sales.is_empty() {
        return Err(Error::Degenerate("average baseline over no training values".into()));
    }
    let n = train_sales.len() as f64;
    Ok(match space {
        AverageSpace::Log => (train_sales.iter().map(|v| v.ln_1p()).sum::<f64>() / n).exp_m1(),
        AverageSpace::Linear => train_sales.iter().sum::<f64>() / n,
    })
}

/// A random permutation of the evaluation actuals.
pub fn baseline_random(actuals: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
    if actuals.is_empty() {
        return Err(Error::Degenerate("random baseline over no actuals".into()));
    }
    let mut p = actuals.to_vec();
    p.shuffle(rng);
    Ok(p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ErrorKey {
    /// 1-based position in the forecast horizon.
    pub day_offset: usize,
    pub store: u64,
    pub item: u64,
}

/// RMSLE grouped by forecast day, store and item.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub per_day: Vec<f64>,
    pub per_store: BTreeMap<u64, f64>,
    pub per_item: BTreeMap<u64, f64>,
}

pub fn decompose_errors(pred: &[f64], actual: &[f64], keys: &[ErrorKey], horizon: usize) -> Result<Decomposition> {
    if keys.len() != pred.len() || pred.len() != actual.len() {
        return Err(Error::ShapeMismatch {
            op: "decompose keys",
            lhs: vec![pred.len(), actual.len()],
            rhs: vec![keys.len()],
        });
    }
    let mut day: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); horizon];
    let mut store: BTreeMap<u64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut item: BTreeMap<u64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((k, &p), &a) in keys.iter().zip(pred).zip(actual) {
        if k.day_offset == 0 || k.day_offset > horizon {
            return Err(Error::Format(format!("day offset {} outside 1..={horizon}", k.day_offset)));
        }
        for g in [&mut day[k.day_offset - 1], store.entry(k.store).or_default(), item.entry(k.item).or_default()] {
            g.0.push(p);
            g.1.push(a);
        }
    }
    let per_day = day
        .iter()
        .enumerate()
        .map(|(d, (p, a))| {
            if p.is_empty() {
                Err(Error::Format(format!("no predictions for day offset {}", d + 1)))
            } else {
                rmsle(p, a)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let table = |m: BTreeMap<u64, (Vec<f64>, Vec<f64>)>| -> Result<BTreeMap<u64, f64>> {
        m.into_iter().map(|(k, (p, a))| Ok((k, rmsle(&p, &a)?))).collect()
    };
    Ok(Decomposition {
        per_day,
        per_store: table(store)?,
        per_item: table(item)?,
    })
}
