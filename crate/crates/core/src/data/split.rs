use chrono::NaiveDate;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HORIZON: usize = 16;

/// First calendar day of the panel (day index 0).
pub fn favorita_origin() -> NaiveDate {
    NaiveDate::from_ymd_opt(2013, 1, 1).expect("valid date")
}

pub fn day_index(origin: NaiveDate, date: NaiveDate) -> i64 {
    (date - origin).num_days()
}

pub fn day_date(origin: NaiveDate, day: usize) -> NaiveDate {
    origin + chrono::Days::new(day as u64)
}

/// Inclusive range of day indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DaySpan {
    pub start: usize,
    pub end: usize,
}

impl DaySpan {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn contains(&self, day: usize) -> bool {
        (self.start..=self.end).contains(&day)
    }
}

/// Evaluation windows addressable by the harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Period {
    Validation,
    Test(u8),
}

impl std::fmt::Display for Period {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Period::Validation => write!(f, "validation"),
            Period::Test(k) => write!(f, "{k}"),
        }
    }
}

/// Train / validation / test layout over day indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub origin: NaiveDate,
    /// Last day (inclusive) any training anchor, target or statistic may touch.
    pub train_end: usize,
    pub validation: DaySpan,
    pub test_periods: Vec<DaySpan>,
    /// Earliest allowed anchor day.
    pub min_anchor: usize,
    pub horizon: usize,
}

impl SplitSpec {
    /// Train through 2017-05-27, validate 2017-06-13..06-28, test on three
    /// consecutive 16-day periods from 2017-06-29 to 2017-08-15, anchors no
    /// earlier than 2013-10-29.
    pub fn favorita() -> Self {
        let origin = favorita_origin();
        let d = |y, m, dd| {
            let date = NaiveDate::from_ymd_opt(y, m, dd).expect("valid date");
            day_index(origin, date) as usize
        };
        let spec = Self {
            origin,
            train_end: d(2017, 5, 27),
            validation: DaySpan {
                start: d(2017, 6, 13),
                end: d(2017, 6, 28),
            },
            test_periods: vec![
                DaySpan {
                    start: d(2017, 6, 29),
                    end: d(2017, 7, 14),
                },
                DaySpan {
                    start: d(2017, 7, 15),
                    end: d(2017, 7, 30),
                },
                DaySpan {
                    start: d(2017, 7, 31),
                    end: d(2017, 8, 15),
                },
            ],
            min_anchor: d(2013, 10, 29),
            horizon: HORIZON,
        };
        debug_assert!(spec.validate().is_ok());
        spec
    }

    /// Same layout scaled to an `n_days` panel: the last three horizons are
    /// the test periods, the one before is validation, then `gap` unused days,
    /// and everything earlier is training.
    pub fn for_days(n_days: usize, horizon: usize, min_anchor: usize, gap: usize) -> Result<Self> {
        let needed = 4 * horizon + gap + 1;
        if n_days < needed {
            return Err(Error::Config(format!("{n_days} days cannot hold the evaluation layout ({needed} needed)")));
        }
        let p3_end = n_days - 1;
        let span = |end: usize| DaySpan {
            start: end + 1 - horizon,
            end,
        };
        let p3 = span(p3_end);
        let p2 = span(p3.start - 1);
        let p1 = span(p2.start - 1);
        let validation = span(p1.start - 1);
        let spec = Self {
            origin: favorita_origin(),
            train_end: validation.start - 1 - gap,
            validation,
            test_periods: vec![p1, p2, p3],
            min_anchor,
            horizon,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The layout for a panel starting on `origin`: the fixed calendar when
    /// the panel is exactly the full competition range, otherwise
    /// [`SplitSpec::for_days`] re-based on `origin`.
    pub fn for_panel(origin: NaiveDate, n_days: usize, horizon: usize, min_anchor: usize, gap: usize) -> Result<Self> {
        let full = Self::favorita();
        if origin == full.origin && horizon == full.horizon && n_days == full.test_periods[2].end + 1 {
            return Ok(full);
        }
        let mut spec = Self::for_days(n_days, horizon, min_anchor, gap)?;
        spec.origin = origin;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        let mut prev_end = self.train_end;
        for (name, span) in std::iter::once(("validation", &self.validation))
            .chain(self.test_periods.iter().map(|s| ("test period", s)))
        {
            if span.start <= prev_end {
                return Err(Error::Config(format!("{name} {span:?} overlaps or precedes an earlier span")));
            }
            if span.len() != self.horizon {
                return Err(Error::Config(format!(
                    "{name} {span:?} is {} days, expected {}",
                    span.len(),
                    self.horizon
                )));
            }
            prev_end = span.end;
        }
        if self.train_end < self.min_anchor + self.horizon {
            return Err(Error::Config(format!(
                "no training anchor fits: min anchor {} + horizon {} > train end {}",
                self.min_anchor, self.horizon, self.train_end
            )));
        }
        Ok(())
    }

    pub fn span(&self, period: Period) -> Result<DaySpan> {
        match period {
            Period::Validation => Ok(self.validation),
            Period::Test(k) => self
                .test_periods
                .get((k as usize).wrapping_sub(1))
                .copied()
                .ok_or_else(|| Error::Config(format!("no test period {k}"))),
        }
    }

    /// The anchor for an evaluation window is the day before it starts.
    pub fn eval_anchor(&self, period: Period) -> Result<usize> {
        Ok(self.span(period)?.start - 1)
    }

    pub fn periods(&self) -> Vec<Period> {
        (1..=self.test_periods.len() as u8).map(Period::Test).collect()
    }

    /// Inclusive `[min, max]` range of training anchors: targets never pass `train_end`.
    pub fn train_anchor_range(&self) -> Result<(usize, usize)> {
        let max = self
            .train_end
            .checked_sub(self.horizon)
            .filter(|&m| m >= self.min_anchor)
            .ok_or_else(|| {
                Error::EmptyRange(format!(
                    "anchors in [{}, {} - {}]",
                    self.min_anchor, self.train_end, self.horizon
                ))
            })?;
        Ok((self.min_anchor, max))
    }

    /// Errors unless `anchor` is a legal training anchor.
    pub fn check_train_anchor(&self, anchor: usize) -> Result<()> {
        let (lo, hi) = self.train_anchor_range()?;
        if !(lo..=hi).contains(&anchor) {
            return Err(Error::Window(format!("training anchor {anchor} outside [{lo}, {hi}]")));
        }
        Ok(())
    }
}

/// How a batch anchor is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorMode {
    /// Uniform over the training anchor range (random max time step).
    Random,
    /// The latest training anchor, so targets end exactly at `train_end`.
    Latest,
    Fixed(usize),
}

/// Draws the most recent input day of a batch.
pub fn sample_anchor(spec: &SplitSpec, rng: &mut impl Rng, mode: AnchorMode) -> Result<usize> {
    match mode {
        AnchorMode::Random => {
            let (lo, hi) = spec.train_anchor_range()?;
            Ok(rng.random_range(lo..=hi))
        }
        AnchorMode::Latest => Ok(spec.train_anchor_range()?.1),
        AnchorMode::Fixed(day) => Ok(day),
    }
}
