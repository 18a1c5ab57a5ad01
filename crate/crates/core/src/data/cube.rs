//! Dense (store × item × day) panel and its cached binary form.
//!
//! Cached cube layout (little-endian):
//!
//! ```text
//! magic            4 bytes  "PCUB"
//! version          u32      1
//! origin           i64      days since 1970-01-01 of day index 0
//! n_stores         u64
//! n_items          u64
//! n_days           u64
//! store_vocab      u64      embedding rows for stores (row 0 = unknown)
//! item_vocab       u64
//! fitted_through   u64      last day used for normalization statistics
//! fill_fraction    f64
//! store_ids        n_stores × u64
//! item_ids         n_items × u64
//! store_embed      n_stores × u64   embedding row of each store
//! item_embed       n_items × u64
//! perishable       n_items × u8
//! n_channels       u32
//! per channel, in the fixed order target, promo, transactions, oil,
//! holiday, store_static, item_static, norm:
//!   name_len u32, name bytes, ndim u32, dims ndim × u64, data f64 × product(dims)
//! ```
//!
//! `target` and `promo` are `[n_stores, n_items, n_days]`, `transactions`
//! and `holiday` are `[n_stores, n_days]`, `oil` is `[n_days]`, the static
//! blocks are one-hot matrices and `norm` holds
//! `[oil_mean, oil_std, transactions_mean, transactions_std]`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;

use super::ingest::{vocabulary, RawTables};
use super::split::{day_index, favorita_origin, SplitSpec};
use crate::error::{Error, Result};
use crate::params::{read_f64, read_u32, read_u64};

pub const CUBE_MAGIC: [u8; 4] = *b"PCUB";
pub const CUBE_VERSION: u32 = 1;
pub const PERISHABLE_WEIGHT: f64 = 1.25;

/// Centering/scaling statistics for the numeric covariates, fitted on
/// training days only.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormStats {
    pub oil_mean: f64,
    pub oil_std: f64,
    pub transactions_mean: f64,
    pub transactions_std: f64,
    pub fitted_through: usize,
}

impl NormStats {
    fn identity(fitted_through: usize) -> Self {
        Self {
            oil_mean: 0.0,
            oil_std: 1.0,
            transactions_mean: 0.0,
            transactions_std: 1.0,
            fitted_through,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PanelCube {
    pub origin: NaiveDate,
    pub n_stores: usize,
    pub n_items: usize,
    pub n_days: usize,
    pub store_ids: Vec<u64>,
    pub item_ids: Vec<u64>,
    /// Embedding row per store; 0 is reserved for ids unseen in training.
    pub store_embed: Vec<usize>,
    pub item_embed: Vec<usize>,
    pub store_vocab: usize,
    pub item_vocab: usize,
    pub perishable: Vec<bool>,
    /// `log1p(max(sales, 0))`, `[store][item][day]`.
    pub target: Vec<f64>,
    pub promo: Vec<f64>,
    /// Normalized, `[store][day]`.
    pub transactions: Vec<f64>,
    /// Normalized, `[day]`.
    pub oil: Vec<f64>,
    pub holiday: Vec<f64>,
    /// One-hot store metadata, `[store][store_static_dim]`.
    pub store_static: Vec<f64>,
    pub store_static_dim: usize,
    pub item_static: Vec<f64>,
    pub item_static_dim: usize,
    pub norm: NormStats,
    /// Share of cells that had no sales record.
    pub fill_fraction: f64,
}

impl PanelCube {
    #[inline]
    pub fn cell(&self, store: usize, item: usize, day: usize) -> usize {
        (store * self.n_items + item) * self.n_days + day
    }

    pub fn target_at(&self, store: usize, item: usize, day: usize) -> f64 {
        self.target[self.cell(store, item, day)]
    }

    pub fn n_series(&self) -> usize {
        self.n_stores * self.n_items
    }

    /// All `(store, item)` pairs in row-major order.
    pub fn series(&self) -> Vec<(usize, usize)> {
        (0..self.n_stores)
            .flat_map(|s| (0..self.n_items).map(move |i| (s, i)))
            .collect()
    }

    pub fn static_dim(&self) -> usize {
        self.store_static_dim + self.item_static_dim
    }

    pub fn weight(&self, item: usize) -> f64 {
        if self.perishable[item] {
            PERISHABLE_WEIGHT
        } else {
            1.0
        }
    }

    pub fn day_of(&self, date: NaiveDate) -> Option<usize> {
        usize::try_from(day_index(self.origin, date)).ok().filter(|&d| d < self.n_days)
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date");
        w.write_all(&CUBE_MAGIC)?;
        w.write_all(&CUBE_VERSION.to_le_bytes())?;
        w.write_all(&day_index(epoch, self.origin).to_le_bytes())?;
        for v in [
            self.n_stores,
            self.n_items,
            self.n_days,
            self.store_vocab,
            self.item_vocab,
            self.norm.fitted_through,
        ] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&self.fill_fraction.to_le_bytes())?;
        for &id in self.store_ids.iter().chain(&self.item_ids) {
            w.write_all(&id.to_le_bytes())?;
        }
        for &e in self.store_embed.iter().chain(&self.item_embed) {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for &p in &self.perishable {
            w.write_all(&[u8::from(p)])?;
        }
        let norm = [
            self.norm.oil_mean,
            self.norm.oil_std,
            self.norm.transactions_mean,
            self.norm.transactions_std,
        ];
        let (s, i, d) = (self.n_stores, self.n_items, self.n_days);
        let channels: [(&str, Vec<usize>, &[f64]); 8] = [
            ("target", vec![s, i, d], &self.target),
            ("promo", vec![s, i, d], &self.promo),
            ("transactions", vec![s, d], &self.transactions),
            ("oil", vec![d], &self.oil),
            ("holiday", vec![s, d], &self.holiday),
            ("store_static", vec![s, self.store_static_dim], &self.store_static),
            ("item_static", vec![i, self.item_static_dim], &self.item_static),
            ("norm", vec![4], &norm),
        ];
        w.write_all(&(channels.len() as u32).to_le_bytes())?;
        for (name, dims, data) in channels {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(dims.len() as u32).to_le_bytes())?;
            for dim in dims {
                w.write_all(&(dim as u64).to_le_bytes())?;
            }
            for &v in data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let fmt = |e: std::io::Error| Error::Format(format!("truncated cube: {e}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(fmt)?;
        if magic != CUBE_MAGIC {
            return Err(Error::Format("not a cube file (bad magic)".into()));
        }
        let version = read_u32(r).map_err(fmt)?;
        if version != CUBE_VERSION {
            return Err(Error::Format(format!("unsupported cube version {version}")));
        }
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(fmt)?;
        let origin_days = i64::from_le_bytes(b);
        let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date");
        let origin = epoch
            .checked_add_signed(chrono::Duration::days(origin_days))
            .ok_or_else(|| Error::Format("origin out of range".into()))?;
        let mut u = || read_u64(r).map(|v| v as usize).map_err(fmt);
        let (n_stores, n_items, n_days, store_vocab, item_vocab, fitted_through) = (u()?, u()?, u()?, u()?, u()?, u()?);
        let fill_fraction = read_f64(r).map_err(fmt)?;
        let read_u64s = |r: &mut dyn Read, n| -> Result<Vec<u64>> {
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 8];
                r.read_exact(&mut b).map_err(fmt)?;
                out.push(u64::from_le_bytes(b));
            }
            Ok(out)
        };
        let store_ids = read_u64s(r, n_stores)?;
        let item_ids = read_u64s(r, n_items)?;
        let store_embed = read_u64s(r, n_stores)?.into_iter().map(|v| v as usize).collect();
        let item_embed = read_u64s(r, n_items)?.into_iter().map(|v| v as usize).collect();
        let mut perishable = vec![0u8; n_items];
        r.read_exact(&mut perishable).map_err(fmt)?;

        let n_channels = read_u32(r).map_err(fmt)?;
        let mut channels: HashMap<String, (Vec<usize>, Vec<f64>)> = HashMap::new();
        for _ in 0..n_channels {
            let len = read_u32(r).map_err(fmt)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(fmt)?;
            let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
            let ndim = read_u32(r).map_err(fmt)? as usize;
            let dims = (0..ndim)
                .map(|_| read_u64(r).map(|v| v as usize))
                .collect::<std::io::Result<Vec<_>>>()
                .map_err(fmt)?;
            let n: usize = dims.iter().product();
            let mut raw = vec![0u8; n * 8];
            r.read_exact(&mut raw).map_err(fmt)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            channels.insert(name, (dims, data));
        }
        let mut take = |name: &str, expected: Option<&[usize]>| -> Result<(Vec<usize>, Vec<f64>)> {
            let (dims, data) = channels
                .remove(name)
                .ok_or_else(|| Error::Format(format!("cube is missing channel `{name}`")))?;
            if let Some(e) = expected {
                if dims != e {
                    return Err(Error::Format(format!("channel `{name}` has dims {dims:?}, expected {e:?}")));
                }
            }
            Ok((dims, data))
        };
        let (_, target) = take("target", Some(&[n_stores, n_items, n_days]))?;
        let (_, promo) = take("promo", Some(&[n_stores, n_items, n_days]))?;
        let (_, transactions) = take("transactions", Some(&[n_stores, n_days]))?;
        let (_, oil) = take("oil", Some(&[n_days]))?;
        let (_, holiday) = take("holiday", Some(&[n_stores, n_days]))?;
        let (sd, store_static) = take("store_static", None)?;
        let (id, item_static) = take("item_static", None)?;
        let (_, norm) = take("norm", Some(&[4]))?;
        Ok(Self {
            origin,
            n_stores,
            n_items,
            n_days,
            store_ids,
            item_ids,
            store_embed,
            item_embed,
            store_vocab,
            item_vocab,
            perishable: perishable.into_iter().map(|p| p != 0).collect(),
            target,
            promo,
            transactions,
            oil,
            holiday,
            store_static,
            store_static_dim: sd.get(1).copied().unwrap_or(0),
            item_static,
            item_static_dim: id.get(1).copied().unwrap_or(0),
            norm: NormStats {
                oil_mean: norm[0],
                oil_std: norm[1],
                transactions_mean: norm[2],
                transactions_std: norm[3],
                fitted_through,
            },
            fill_fraction,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut std::io::BufReader::new(file))
    }
}

/// Mean and standard deviation of `values`; a zero deviation becomes 1 so scaling is a no-op.
pub(crate) fn center_scale(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
    for v in values {
        n += 1;
        sum += v;
        sq += v * v;
    }
    if n == 0 {
        return (0.0, 1.0);
    }
    let mean = sum / n as f64;
    let var = (sq / n as f64 - mean * mean).max(0.0);
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

/// One-hot encodes `rows` where each row is a list of categorical values,
/// one per column. Returns the flat matrix and its width.
pub(crate) fn one_hot(rows: &[Vec<String>]) -> (Vec<f64>, usize) {
    let n_cols = rows.first().map_or(0, Vec::len);
    let vocabs: Vec<Vec<String>> = (0..n_cols).map(|c| vocabulary(rows.iter().map(|r| &r[c]))).collect();
    let width: usize = vocabs.iter().map(Vec::len).sum();
    let mut out = vec![0.0; rows.len() * width];
    for (r, row) in rows.iter().enumerate() {
        let mut offset = 0;
        for (c, value) in row.iter().enumerate() {
            let pos = vocabs[c].binary_search(value).expect("value in its own vocabulary");
            out[r * width + offset + pos] = 1.0;
            offset += vocabs[c].len();
        }
    }
    (out, width)
}

/// Linear (pre-clamp) sales grid `[store][item][day]` plus the promotion grid,
/// with absent records left at zero. Duplicate records for a cell add up.
pub struct LinearGrid {
    pub store_ids: Vec<u64>,
    pub item_ids: Vec<u64>,
    pub n_days: usize,
    pub sales: Vec<f64>,
    pub promo: Vec<f64>,
    pub present: Vec<bool>,
}

pub fn linear_grid(raw: &RawTables, origin: NaiveDate) -> Result<LinearGrid> {
    let store_ids: Vec<u64> = vocabulary(raw.sales.iter().map(|r| &r.store_nbr))
        .into_iter()
        .map(u64::from)
        .collect();
    let item_ids: Vec<u64> = vocabulary(raw.sales.iter().map(|r| &r.item_nbr));
    let mut last = 0i64;
    for r in &raw.sales {
        let d = day_index(origin, r.date);
        if d < 0 {
            return Err(Error::Window(format!("sales date {} precedes origin {origin}", r.date)));
        }
        last = last.max(d);
    }
    let n_days = if raw.sales.is_empty() { 0 } else { last as usize + 1 };
    let store_pos: HashMap<u64, usize> = store_ids.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let item_pos: HashMap<u64, usize> = item_ids.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let n = store_ids.len() * item_ids.len() * n_days;
    let mut sales = vec![0.0; n];
    let mut promo = vec![0.0; n];
    let mut present = vec![false; n];
    for r in &raw.sales {
        let s = store_pos[&u64::from(r.store_nbr)];
        let i = item_pos[&r.item_nbr];
        let d = day_index(origin, r.date) as usize;
        let cell = (s * item_ids.len() + i) * n_days + d;
        sales[cell] += r.unit_sales;
        present[cell] = true;
        if r.onpromotion {
            promo[cell] = 1.0;
        }
    }
    Ok(LinearGrid {
        store_ids,
        item_ids,
        n_days,
        sales,
        promo,
        present,
    })
}

/// Builds the dense panel: zero-fills absent cells, clamps returns to zero,
/// log-transforms the target, aligns covariates and fits normalization on
/// days `<= spec.train_end` only.
pub fn densify(raw: &RawTables, spec: &SplitSpec) -> Result<PanelCube> {
    let origin = spec.origin;
    let grid = linear_grid(raw, origin)?;
    let (n_stores, n_items, n_days) = (grid.store_ids.len(), grid.item_ids.len(), grid.n_days);

    let target: Vec<f64> = grid.sales.iter().map(|&v| v.max(0.0).ln_1p()).collect();
    let filled = grid.present.iter().filter(|p| !**p).count();
    let fill_fraction = if grid.present.is_empty() {
        0.0
    } else {
        filled as f64 / grid.present.len() as f64
    };

    // Embedding rows: ids with any training-span record get 1..; the rest share row 0.
    let mut seen_store = vec![false; n_stores];
    let mut seen_item = vec![false; n_items];
    for s in 0..n_stores {
        for i in 0..n_items {
            let base = (s * n_items + i) * n_days;
            let upto = (spec.train_end + 1).min(n_days);
            if grid.present[base..base + upto].iter().any(|&p| p) {
                seen_store[s] = true;
                seen_item[i] = true;
            }
        }
    }
    let embed = |seen: &[bool]| -> (Vec<usize>, usize) {
        let mut next = 1;
        let rows = seen
            .iter()
            .map(|&s| {
                if s {
                    next += 1;
                    next - 1
                } else {
                    0
                }
            })
            .collect();
        (rows, next)
    };
    let (store_embed, store_vocab) = embed(&seen_store);
    let (item_embed, item_vocab) = embed(&seen_item);

    let store_meta: Vec<_> = grid
        .store_ids
        .iter()
        .map(|id| &raw.stores[&(*id as u32)])
        .collect();
    let item_meta: Vec<_> = grid.item_ids.iter().map(|id| &raw.items[id]).collect();

    // Oil: align to days, forward-fill, then back-fill the head.
    let mut oil = vec![f64::NAN; n_days];
    for rec in &raw.oil {
        if let (Ok(d), Some(p)) = (usize::try_from(day_index(origin, rec.date)), rec.price) {
            if d < n_days {
                oil[d] = p;
            }
        }
    }
    let mut last = f64::NAN;
    for v in oil.iter_mut() {
        if v.is_nan() {
            *v = last;
        } else {
            last = *v;
        }
    }
    let first = oil.iter().copied().find(|v| !v.is_nan()).unwrap_or(0.0);
    for v in oil.iter_mut().take_while(|v| v.is_nan()) {
        *v = first;
    }

    let store_pos: HashMap<u32, usize> = grid
        .store_ids
        .iter()
        .enumerate()
        .map(|(i, &s)| (s as u32, i))
        .collect();
    let mut transactions = vec![0.0; n_stores * n_days];
    for rec in &raw.transactions {
        if let (Some(&s), Ok(d)) = (store_pos.get(&rec.store_nbr), usize::try_from(day_index(origin, rec.date))) {
            if d < n_days {
                transactions[s * n_days + d] = rec.transactions;
            }
        }
    }

    let mut holiday = vec![0.0; n_stores * n_days];
    for ev in raw.holidays.iter().filter(|e| !e.transferred && e.kind != "Work Day") {
        let Ok(d) = usize::try_from(day_index(origin, ev.date)) else { continue };
        if d >= n_days {
            continue;
        }
        for (s, meta) in store_meta.iter().enumerate() {
            let applies = match ev.locale.as_str() {
                "National" => true,
                "Regional" => meta.state == ev.locale_name,
                "Local" => meta.city == ev.locale_name,
                _ => false,
            };
            if applies {
                holiday[s * n_days + d] = 1.0;
            }
        }
    }

    let fit_upto = (spec.train_end + 1).min(n_days);
    let (oil_mean, oil_std) = center_scale(oil[..fit_upto].iter().copied());
    let (transactions_mean, transactions_std) = center_scale(
        (0..n_stores).flat_map(|s| transactions[s * n_days..s * n_days + fit_upto].iter().copied()),
    );
    oil.iter_mut().for_each(|v| *v = (*v - oil_mean) / oil_std);
    transactions
        .iter_mut()
        .for_each(|v| *v = (*v - transactions_mean) / transactions_std);

    let store_rows: Vec<Vec<String>> = store_meta
        .iter()
        .map(|m| vec![m.city.clone(), m.state.clone(), m.store_type.clone(), m.cluster.to_string()])
        .collect();
    let item_rows: Vec<Vec<String>> = item_meta
        .iter()
        .map(|m| vec![m.family.clone(), m.class.to_string(), m.perishable.to_string()])
        .collect();
    let (store_static, store_static_dim) = one_hot(&store_rows);
    let (item_static, item_static_dim) = one_hot(&item_rows);

    Ok(PanelCube {
        origin,
        n_stores,
        n_items,
        n_days,
        store_ids: grid.store_ids,
        item_ids: grid.item_ids,
        store_embed,
        item_embed,
        store_vocab,
        item_vocab,
        perishable: item_meta.iter().map(|m| m.perishable).collect(),
        target,
        promo: grid.promo,
        transactions,
        oil,
        holiday,
        store_static,
        store_static_dim,
        item_static,
        item_static_dim,
        norm: NormStats {
            oil_mean,
            oil_std,
            transactions_mean,
            transactions_std,
            fitted_through: spec.train_end,
        },
        fill_fraction,
    })
}

/// Builds a cube directly from a dense linear sales grid, with no exogenous
/// channels (zeros) and every series treated as seen in training. Used by
/// tests and the synthetic generator.
pub fn cube_from_sales(
    n_stores: usize,
    n_items: usize,
    n_days: usize,
    sales: &[f64],
    perishable: Vec<bool>,
) -> Result<PanelCube> {
    if sales.len() != n_stores * n_items * n_days || perishable.len() != n_items {
        return Err(Error::ShapeMismatch {
            op: "cube_from_sales",
            lhs: vec![n_stores, n_items, n_days],
            rhs: vec![sales.len(), perishable.len()],
        });
    }
    let store_rows: Vec<Vec<String>> = (0..n_stores).map(|s| vec![format!("store{s}")]).collect();
    let item_rows: Vec<Vec<String>> = (0..n_items)
        .map(|i| vec![format!("item{i}"), perishable[i].to_string()])
        .collect();
    let (store_static, store_static_dim) = one_hot(&store_rows);
    let (item_static, item_static_dim) = one_hot(&item_rows);
    Ok(PanelCube {
        origin: favorita_origin(),
        n_stores,
        n_items,
        n_days,
        store_ids: (1..=n_stores as u64).collect(),
        item_ids: (1..=n_items as u64).collect(),
        store_embed: (1..=n_stores).collect(),
        item_embed: (1..=n_items).collect(),
        store_vocab: n_stores + 1,
        item_vocab: n_items + 1,
        perishable,
        target: sales.iter().map(|&v| v.max(0.0).ln_1p()).collect(),
        promo: vec![0.0; sales.len()],
        transactions: vec![0.0; n_stores * n_days],
        oil: vec![0.0; n_days],
        holiday: vec![0.0; n_stores * n_days],
        store_static,
        store_static_dim,
        item_static,
        item_static_dim,
        norm: NormStats::identity(n_days.saturating_sub(1)),
        fill_fraction: 0.0,
    })
}
