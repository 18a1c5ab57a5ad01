use serde::{Deserialize, Serialize};

use super::cube::PanelCube;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which time-dependent exogenous channels feed the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Covariates {
    pub oil: bool,
    pub holidays: bool,
    pub transactions: bool,
    pub promotions: bool,
}

impl Default for Covariates {
    fn default() -> Self {
        Self {
            oil: true,
            holidays: true,
            transactions: true,
            promotions: true,
        }
    }
}

impl Covariates {
    pub fn none() -> Self {
        Self {
            oil: false,
            holidays: false,
            transactions: false,
            promotions: false,
        }
    }

    /// Encoder channels besides the sales history.
    pub fn count(&self) -> usize {
        [self.oil, self.holidays, self.transactions, self.promotions]
            .iter()
            .filter(|&&b| b)
            .count()
    }

    /// Channels known ahead of time. Transactions are only observed after the fact.
    pub fn future_count(&self) -> usize {
        [self.oil, self.holidays, self.promotions].iter().filter(|&&b| b).count()
    }
}

/// One minibatch anchored at a single day.
///
/// The encoder window covers days `(anchor − history, anchor]` and the
/// targets cover `(anchor, anchor + horizon]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    pub anchor: usize,
    pub history: usize,
    pub series: Vec<(usize, usize)>,
    /// `[b, history, 1 + k]`: `log1p` sales then the selected covariates.
    pub encoder: Tensor,
    /// `[b, s]` one-hot store and item metadata.
    pub static_features: Tensor,
    pub store_rows: Vec<usize>,
    pub item_rows: Vec<usize>,
    /// `[b, horizon]` in log space.
    pub targets: Tensor,
    pub weights: Vec<f64>,
    /// `[b, horizon, kf]` known-future covariates for the target days.
    pub future: Tensor,
}

impl WindowBatch {
    pub fn size(&self) -> usize {
        self.series.len()
    }

    pub fn horizon(&self) -> usize {
        self.targets.shape()[1]
    }

    /// Day indices covered by the targets.
    pub fn target_days(&self) -> std::ops::RangeInclusive<usize> {
        self.anchor + 1..=self.anchor + self.horizon()
    }
}

fn covariate_values(cube: &PanelCube, cov: &Covariates, store: usize, item: usize, day: usize, future: bool) -> impl Iterator<Item = f64> {
    let mut out = [0.0; 4];
    let mut n = 0;
    let mut push = |on: bool, v: f64| {
        if on {
            out[n] = v;
            n += 1;
        }
    };
    push(cov.oil, cube.oil[day]);
    push(cov.holidays, cube.holiday[store * cube.n_days + day]);
    push(cov.transactions && !future, cube.transactions[store * cube.n_days + day]);
    push(cov.promotions, cube.promo[cube.cell(store, item, day)]);
    out.into_iter().take(n)
}

/// Slices windows for `series` around `anchor`.
pub fn build_batch(
    cube: &PanelCube,
    anchor: usize,
    series: &[(usize, usize)],
    history: usize,
    covariates: &Covariates,
    horizon: usize,
) -> Result<WindowBatch> {
    if series.is_empty() {
        return Err(Error::Window("empty series sample".into()));
    }
    if history > anchor + 1 {
        return Err(Error::Window(format!(
            "history of {history} days does not fit before anchor {anchor}"
        )));
    }
    if anchor + horizon >= cube.n_days {
        return Err(Error::Window(format!(
            "targets {}..={} run past the last day {}",
            anchor + 1,
            anchor + horizon,
            cube.n_days.saturating_sub(1)
        )));
    }
    if let Some(&(s, i)) = series.iter().find(|&&(s, i)| s >= cube.n_stores || i >= cube.n_items) {
        return Err(Error::Window(format!("series ({s}, {i}) is not in the cube")));
    }
    let b = series.len();
    let channels = 1 + covariates.count();
    let kf = covariates.future_count();
    let first = anchor + 1 - history;

    let mut encoder = Vec::with_capacity(b * history * channels);
    let mut static_features = Vec::with_capacity(b * cube.static_dim());
    let mut targets = Vec::with_capacity(b * horizon);
    let mut future = Vec::with_capacity(b * horizon * kf);
    for &(s, i) in series {
        for day in first..=anchor {
            encoder.push(cube.target_at(s, i, day));
            encoder.extend(covariate_values(cube, covariates, s, i, day, false));
        }
        static_features.extend_from_slice(&cube.store_static[s * cube.store_static_dim..(s + 1) * cube.store_static_dim]);
        static_features.extend_from_slice(&cube.item_static[i * cube.item_static_dim..(i + 1) * cube.item_static_dim]);
        for day in anchor + 1..=anchor + horizon {
            targets.push(cube.target_at(s, i, day));
            future.extend(covariate_values(cube, covariates, s, i, day, true));
        }
    }
    Ok(WindowBatch {
        anchor,
        history,
        series: series.to_vec(),
        encoder: Tensor::new(vec![b, history, channels], encoder)?,
        static_features: Tensor::new(vec![b, cube.static_dim()], static_features)?,
        store_rows: series.iter().map(|&(s, _)| cube.store_embed[s]).collect(),
        item_rows: series.iter().map(|&(_, i)| cube.item_embed[i]).collect(),
        targets: Tensor::new(vec![b, horizon], targets)?,
        weights: series.iter().map(|&(_, i)| cube.weight(i)).collect(),
        future: Tensor::new(vec![b, horizon, kf], future)?,
    })
}
