//! Error metrics on linear-space sales, all under the natural logarithm of `value + 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outer transform of the mean absolute log error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaleVariant {
    /// `sqrt(mean |log(ŷ+1) − log(y+1)|)`, the published definition.
    #[default]
    Sqrt,
    /// Plain mean absolute log error. Not the published definition.
    NoSqrt,
}

fn log_errors<'a>(pred: &'a [f64], actual: &'a [f64]) -> Result<impl Iterator<Item = f64> + 'a> {
    if pred.len() != actual.len() {
        return Err(Error::ShapeMismatch {
            op: "metric",
            lhs: vec![pred.len()],
            rhs: vec![actual.len()],
        });
    }
    if pred.is_empty() {
        return Err(Error::Degenerate("metric over zero samples".into()));
    }
    if let Some(&v) = pred.iter().chain(actual).find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::Domain { op: "metric", value: v });
    }
    Ok(pred.iter().zip(actual).map(|(p, a)| p.ln_1p() - a.ln_1p()))
}

/// Root mean squared logarithmic error.
pub fn rmsle(pred: &[f64], actual: &[f64]) -> Result<f64> {
    let n = pred.len() as f64;
    Ok((log_errors(pred, actual)?.map(|e| e * e).sum::<f64>() / n).sqrt())
}

/// Weighted RMSLE: `sqrt(Σ wᵢ eᵢ² / Σ wᵢ)`.
pub fn rmswle(pred: &[f64], actual: &[f64], weights: &[f64]) -> Result<f64> {
    if weights.len() != pred.len() {
        return Err(Error::ShapeMismatch {
            op: "rmswle weights",
            lhs: vec![pred.len()],
            rhs: vec![weights.len()],
        });
    }
    if let Some(&w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
        return Err(Error::Domain { op: "rmswle weight", value: w });
    }
    let num: f64 = log_errors(pred, actual)?.zip(weights).map(|(e, w)| w * e * e).sum();
    let den: f64 = weights.iter().sum();
    Ok((num / den).sqrt())
}

pub fn male(pred: &[f64], actual: &[f64]) -> Result<f64> {
    male_with(pred, actual, MaleVariant::Sqrt)
}

pub fn male_with(pred: &[f64], actual: &[f64], variant: MaleVariant) -> Result<f64> {
    let n = pred.len() as f64;
    let mean = log_errors(pred, actual)?.map(f64::abs).sum::<f64>() / n;
    Ok(match variant {
        MaleVariant::Sqrt => mean.sqrt(),
        MaleVariant::NoSqrt => mean,
    })
}

/// The three reported metrics for one evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmsle: f64,
    pub rmswle: f64,
    pub male: f64,
}

impl Metrics {
    pub fn compute(pred: &[f64], actual: &[f64], weights: &[f64], variant: MaleVariant) -> Result<Self> {
        Ok(Self {
            rmsle: rmsle(pred, actual)?,
            rmswle: rmswle(pred, actual, weights)?,
            male: male_with(pred, actual, variant)?,
        })
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "rmsle" => Some(self.rmsle),
            "rmswle" => Some(self.rmswle),
            "male" => Some(self.male),
            _ => None,
        }
    }

    pub const NAMES: [&'static str; 3] = ["rmsle", "rmswle", "male"];
}

/// Model output in log space to non-negative linear-space sales.
pub fn to_linear(log_values: &[f64]) -> Vec<f64> {
    log_values.iter().map(|v| v.exp_m1().max(0.0)).collect()
}
