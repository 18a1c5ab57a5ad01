//! Desk-scale synthetic panels with weekly seasonality, a yearly cycle, a
//! linear trend, an optional level shift, long-tailed series scales and
//! zero inflation.

use std::f64::consts::TAU;
use std::path::Path;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use super::cube::{center_scale, cube_from_sales, NormStats, PanelCube};
use super::ingest::{
    HolidayEvent, ItemMeta, OilRecord, RawSalesRecord, RawTables, StoreMeta, TransactionRecord, HOLIDAYS_HEADER,
    ITEMS_HEADER, OIL_HEADER, STORES_HEADER, TRAIN_HEADER, TRANSACTIONS_HEADER,
};
use super::split::{day_date, favorita_origin};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub stores: usize,
    pub items: usize,
    pub days: usize,
    /// Probability that a cell is forced to zero sales.
    pub sparsity: f64,
    pub seed: u64,
    /// `weekly(d) = 1 + weekly_amplitude · sin(2πd/7)`.
    pub weekly_amplitude: f64,
    pub yearly_amplitude: f64,
    /// Relative level change per 365 days.
    pub trend: f64,
    /// Series scales are `LogNormal(scale_mu, scale_sigma)`.
    pub scale_mu: f64,
    pub scale_sigma: f64,
    /// Multiply every rate by `regime_shift_factor` from this day on.
    pub regime_shift_day: Option<usize>,
    pub regime_shift_factor: f64,
    pub perishable_fraction: f64,
    pub promo_rate: f64,
    pub promo_lift: f64,
    pub holiday_rate: f64,
    pub holiday_lift: f64,
    /// Last day used for covariate normalization. Defaults to the last day.
    pub fit_through: Option<usize>,
    pub start: NaiveDate,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            stores: 2,
            items: 2,
            days: 400,
            sparsity: 0.1,
            seed: 0,
            weekly_amplitude: 0.3,
            yearly_amplitude: 0.1,
            trend: 0.0,
            scale_mu: 1.5,
            scale_sigma: 1.0,
            regime_shift_day: None,
            regime_shift_factor: 1.0,
            perishable_fraction: 0.3,
            promo_rate: 0.0,
            promo_lift: 1.5,
            holiday_rate: 0.0,
            holiday_lift: 1.3,
            fit_through: None,
            start: favorita_origin(),
        }
    }
}

impl SynthConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.stores == 0 || self.items == 0 || self.days == 0 {
            return bad("stores, items and days must be positive".into());
        }
        for (name, p) in [
            ("sparsity", self.sparsity),
            ("perishable_fraction", self.perishable_fraction),
            ("promo_rate", self.promo_rate),
            ("holiday_rate", self.holiday_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if !(0.0..1.0).contains(&self.weekly_amplitude.abs()) || !(0.0..1.0).contains(&self.yearly_amplitude.abs()) {
            return bad("seasonal amplitudes must lie in (-1, 1)".into());
        }
        if !(self.scale_sigma >= 0.0 && self.scale_mu.is_finite()) {
            return bad("scale_sigma must be non-negative and scale_mu finite".into());
        }
        for (name, v) in [
            ("regime_shift_factor", self.regime_shift_factor),
            ("promo_lift", self.promo_lift),
            ("holiday_lift", self.holiday_lift),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} = {v} must be finite and non-negative"));
            }
        }
        if let Some(f) = self.fit_through {
            if f >= self.days {
                return bad(format!("fit_through {f} is past the last day {}", self.days - 1));
            }
        }
        if !self.trend.is_finite() {
            return bad("trend must be finite".into());
        }
        Ok(())
    }

    pub fn weekly(&self, day: usize) -> f64 {
        1.0 + self.weekly_amplitude * (TAU * day as f64 / 7.0).sin()
    }

    /// Deterministic rate multiplier for `day`, excluding the series scale and covariate lifts.
    pub fn profile(&self, day: usize) -> f64 {
        let d = day as f64;
        let trend = (1.0 + self.trend * d / 365.0).max(0.0);
        let yearly = 1.0 + self.yearly_amplitude * (TAU * d / 365.25).sin();
        let shift = match self.regime_shift_day {
            Some(s) if day >= s => self.regime_shift_factor,
            _ => 1.0,
        };
        self.weekly(day) * trend * yearly * shift
    }
}

/// Raw draws shared by the cube and CSV views.
struct Draws {
    sales: Vec<f64>,
    promo: Vec<bool>,
    perishable: Vec<bool>,
    holiday: Vec<bool>,
    oil: Vec<f64>,
    transactions: Vec<f64>,
}

fn draw(cfg: &SynthConfig) -> Result<Draws> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (ns, ni, nd) = (cfg.stores, cfg.items, cfg.days);
    let scale_dist = LogNormal::new(cfg.scale_mu, cfg.scale_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let perishable: Vec<bool> = (0..ni).map(|_| rng.random_bool(cfg.perishable_fraction)).collect();
    let holiday: Vec<bool> = (0..nd).map(|_| rng.random_bool(cfg.holiday_rate)).collect();
    let mut oil = Vec::with_capacity(nd);
    let mut price = 50.0f64;
    for _ in 0..nd {
        price = (price + rng.random_range(-1.0..1.0)).max(1.0);
        oil.push(price);
    }
    let profile: Vec<f64> = (0..nd).map(|d| cfg.profile(d)).collect();
    let mut sales = vec![0.0; ns * ni * nd];
    let mut promo = vec![false; ns * ni * nd];
    for s in 0..ns {
        for i in 0..ni {
            let scale = scale_dist.sample(&mut rng);
            let base = (s * ni + i) * nd;
            for d in 0..nd {
                let on_promo = rng.random_bool(cfg.promo_rate);
                promo[base + d] = on_promo;
                let mut rate = scale * profile[d];
                if on_promo {
                    rate *= cfg.promo_lift;
                }
                if holiday[d] {
                    rate *= cfg.holiday_lift;
                }
                let zero = rng.random_bool(cfg.sparsity);
                sales[base + d] = if zero || rate <= 0.0 {
                    0.0
                } else {
                    Poisson::new(rate)
                        .map_err(|e| Error::Config(format!("rate {rate}: {e}")))?
                        .sample(&mut rng)
                };
            }
        }
    }
    let mut transactions = vec![0.0; ns * nd];
    for s in 0..ns {
        for d in 0..nd {
            let total: f64 = (0..ni).map(|i| sales[(s * ni + i) * nd + d]).sum();
            transactions[s * nd + d] = (total * 0.4).round();
        }
    }
    Ok(Draws {
        sales,
        promo,
        perishable,
        holiday,
        oil,
        transactions,
    })
}

/// Generates a reproducible synthetic cube. Covariate channels are centered
/// and scaled over days `..= fit_through`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<PanelCube> {
    let d = draw(cfg)?;
    let (ns, nd) = (cfg.stores, cfg.days);
    let fit = cfg.fit_through.unwrap_or(nd - 1);
    let mut cube = cube_from_sales(ns, cfg.items, nd, &d.sales, d.perishable)?;
    cube.origin = cfg.start;
    let (oil_mean, oil_std) = center_scale(d.oil[..=fit].iter().copied());
    let (tx_mean, tx_std) =
        center_scale((0..ns).flat_map(|s| d.transactions[s * nd..=s * nd + fit].iter().copied()));
    cube.oil = d.oil.iter().map(|v| (v - oil_mean) / oil_std).collect();
    cube.transactions = d.transactions.iter().map(|v| (v - tx_mean) / tx_std).collect();
    cube.holiday = (0..ns)
        .flat_map(|_| d.holiday.iter().map(|&h| f64::from(u8::from(h))))
        .collect();
    cube.promo = d.promo.iter().map(|&p| f64::from(u8::from(p))).collect();
    // Zero cells are exactly the ones the table form omits.
    cube.fill_fraction = d.sales.iter().filter(|&&v| v == 0.0).count() as f64 / d.sales.len().max(1) as f64;
    cube.norm = NormStats {
        oil_mean,
        oil_std,
        transactions_mean: tx_mean,
        transactions_std: tx_std,
        fitted_through: fit,
    };
    Ok(cube)
}

/// The same draws as [`synth_generate`] in Favorita table form. Zero-sale
/// cells are omitted, as in the published data.
pub fn synth_tables(cfg: &SynthConfig) -> Result<RawTables> {
    let d = draw(cfg)?;
    let (ns, ni, nd) = (cfg.stores, cfg.items, cfg.days);
    let date = |day| day_date(cfg.start, day);
    let mut raw = RawTables::default();
    for s in 0..ns {
        let nbr = s as u32 + 1;
        raw.stores.insert(
            nbr,
            StoreMeta {
                store_nbr: nbr,
                city: format!("City{}", s % 3),
                state: format!("State{}", s % 2),
                store_type: ["A", "B", "C", "D", "E"][s % 5].to_string(),
                cluster: (s % 7) as u32 + 1,
            },
        );
    }
    for (i, &p) in d.perishable.iter().enumerate() {
        let nbr = 100 + i as u64;
        raw.items.insert(
            nbr,
            ItemMeta {
                item_nbr: nbr,
                family: format!("FAMILY{}", i % 4),
                class: 1000 + (i % 9) as u32,
                perishable: p,
            },
        );
    }
    for day in 0..nd {
        for s in 0..ns {
            for i in 0..ni {
                let c = (s * ni + i) * nd + day;
                if d.sales[c] > 0.0 {
                    raw.sales.push(RawSalesRecord {
                        date: date(day),
                        store_nbr: s as u32 + 1,
                        item_nbr: 100 + i as u64,
                        unit_sales: d.sales[c],
                        onpromotion: d.promo[c],
                    });
                }
            }
            raw.transactions.push(TransactionRecord {
                date: date(day),
                store_nbr: s as u32 + 1,
                transactions: d.transactions[s * nd + day],
            });
        }
        raw.oil.push(OilRecord {
            date: date(day),
            price: Some((d.oil[day] * 100.0).round() / 100.0),
        });
        if d.holiday[day] {
            raw.holidays.push(HolidayEvent {
                date: date(day),
                kind: "Holiday".into(),
                locale: "National".into(),
                locale_name: "Ecuador".into(),
                description: format!("Synthetic {day}"),
                transferred: false,
            });
        }
    }
    Ok(raw)
}

/// Writes `raw` as the six Favorita CSV files under `dir`.
pub fn write_csvs(raw: &RawTables, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let open = |name: &str, header: &[&str]| -> Result<(std::path::PathBuf, csv::Writer<std::fs::File>)> {
        let path = dir.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        w.write_record(header).map_err(|e| Error::Format(e.to_string()))?;
        Ok((path, w))
    };
    let fmt_bool = |b: bool| if b { "True" } else { "False" };
    let csv_err = |e: csv::Error| Error::Format(e.to_string());

    let (_, mut w) = open("train.csv", &TRAIN_HEADER)?;
    for (id, r) in raw.sales.iter().enumerate() {
        w.write_record([
            id.to_string(),
            r.date.to_string(),
            r.store_nbr.to_string(),
            r.item_nbr.to_string(),
            r.unit_sales.to_string(),
            fmt_bool(r.onpromotion).to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(dir, e))?;

    let (_, mut w) = open("stores.csv", &STORES_HEADER)?;
    for s in raw.stores.values() {
        w.write_record([
            s.store_nbr.to_string(),
            s.city.clone(),
            s.state.clone(),
            s.store_type.clone(),
            s.cluster.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(dir, e))?;

    let (_, mut w) = open("items.csv", &ITEMS_HEADER)?;
    for i in raw.items.values() {
        w.write_record([
            i.item_nbr.to_string(),
            i.family.clone(),
            i.class.to_string(),
            u8::from(i.perishable).to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(dir, e))?;

    let (_, mut w) = open("transactions.csv", &TRANSACTIONS_HEADER)?;
    for t in &raw.transactions {
        w.write_record([t.date.to_string(), t.store_nbr.to_string(), t.transactions.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(dir, e))?;

    let (_, mut w) = open("oil.csv", &OIL_HEADER)?;
    for o in &raw.oil {
        w.write_record([o.date.to_string(), o.price.map(|p| p.to_string()).unwrap_or_default()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(dir, e))?;

    let (_, mut w) = open("holidays_events.csv", &HOLIDAYS_HEADER)?;
    for h in &raw.holidays {
        w.write_record([
            h.date.to_string(),
            h.kind.clone(),
            h.locale.clone(),
            h.locale_name.clone(),
            h.description.clone(),
            fmt_bool(h.transferred).to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(dir, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ingest::{ingest, DataFiles};

    #[test]
    fn same_seed_same_cube() {
        let cfg = SynthConfig {
            stores: 3,
            items: 4,
            days: 50,
            promo_rate: 0.2,
            holiday_rate: 0.05,
            ..SynthConfig::default()
        };
        assert_eq!(synth_generate(&cfg).unwrap(), synth_generate(&cfg).unwrap());
        let other = SynthConfig { seed: 1, ..cfg.clone() };
        assert_ne!(synth_generate(&cfg).unwrap().target, synth_generate(&other).unwrap().target);
    }

    #[test]
    fn full_sparsity_gives_zero_sales() {
        let cfg = SynthConfig {
            sparsity: 1.0,
            days: 60,
            ..SynthConfig::default()
        };
        assert!(synth_generate(&cfg).unwrap().target.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn weekly_profile_matches_configuration() {
        // 105 series × 98 days = 10,290 series-days, 14 full weeks per series.
        let cfg = SynthConfig {
            stores: 5,
            items: 21,
            days: 98,
            sparsity: 0.0,
            weekly_amplitude: 0.4,
            yearly_amplitude: 0.0,
            scale_mu: 50f64.ln(),
            scale_sigma: 0.3,
            seed: 7,
            ..SynthConfig::default()
        };
        let cube = synth_generate(&cfg).unwrap();
        let mut by_weekday = [0.0; 7];
        for (s, i) in cube.series() {
            for d in 0..cfg.days {
                by_weekday[d % 7] += cube.target_at(s, i, d).exp_m1();
            }
        }
        let total: f64 = by_weekday.iter().sum();
        let expected_total: f64 = (0..7).map(|d| cfg.weekly(d)).sum();
        for (wd, &observed) in by_weekday.iter().enumerate() {
            let observed = observed / total;
            let expected = cfg.weekly(wd) / expected_total;
            assert!(
                ((observed - expected) / expected).abs() < 0.05,
                "weekday {wd}: {observed} vs {expected}"
            );
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        assert!(SynthConfig::from_toml("stores = 0").is_err());
        assert!(SynthConfig::from_toml("sparsity = 1.5").is_err());
        assert!(SynthConfig::from_toml("bogus = 1").is_err());
        let cfg = SynthConfig::from_toml("stores = 3\nitems = 2\ndays = 30\nseed = 9\nweekly_amplitude = 0.2").unwrap();
        assert_eq!((cfg.stores, cfg.items, cfg.days, cfg.seed), (3, 2, 30, 9));
    }

    #[test]
    fn csv_export_reingests() {
        let cfg = SynthConfig {
            days: 20,
            promo_rate: 0.3,
            holiday_rate: 0.2,
            ..SynthConfig::default()
        };
        let raw = synth_tables(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_csvs(&raw, dir.path()).unwrap();
        let back = ingest(&DataFiles::in_dir(dir.path())).unwrap();
        assert_eq!(back.sales, raw.sales);
        assert_eq!(back.stores, raw.stores);
        assert_eq!(back.items, raw.items);
        assert_eq!(back.holidays, raw.holidays);
        assert_eq!(back.transactions, raw.transactions);

        // The dense panel rebuilt from the tables matches the generated cube.
        let spec = crate::data::SplitSpec {
            origin: cfg.start,
            train_end: cfg.days - 1,
            validation: crate::data::DaySpan { start: cfg.days, end: cfg.days + 15 },
            test_periods: Vec::new(),
            min_anchor: 0,
            horizon: 16,
        };
        let rebuilt = crate::data::densify(&back, &spec).unwrap();
        let direct = synth_generate(&cfg).unwrap();
        assert_eq!(rebuilt.target, direct.target);
        assert_eq!(rebuilt.fill_fraction, direct.fill_fraction);
        assert!(direct.fill_fraction > 0.0);
    }
}
