//! Parsing of the Favorita CSV family.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::error::{Error, Result};

pub const TRAIN_HEADER: [&str; 6] = ["id", "date", "store_nbr", "item_nbr", "unit_sales", "onpromotion"];
pub const STORES_HEADER: [&str; 5] = ["store_nbr", "city", "state", "type", "cluster"];
pub const ITEMS_HEADER: [&str; 4] = ["item_nbr", "family", "class", "perishable"];
pub const TRANSACTIONS_HEADER: [&str; 3] = ["date", "store_nbr", "transactions"];
pub const OIL_HEADER: [&str; 2] = ["date", "dcoilwtico"];
pub const HOLIDAYS_HEADER: [&str; 6] = ["date", "type", "locale", "locale_name", "description", "transferred"];

#[derive(Clone, Debug, PartialEq)]
pub struct RawSalesRecord {
    pub date: NaiveDate,
    pub store_nbr: u32,
    pub item_nbr: u64,
    /// Negative values are returns.
    pub unit_sales: f64,
    /// Blank in the source is read as `false`.
    pub onpromotion: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoreMeta {
    pub store_nbr: u32,
    pub city: String,
    pub state: String,
    pub store_type: String,
    pub cluster: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ItemMeta {
    pub item_nbr: u64,
    pub family: String,
    pub class: u32,
    pub perishable: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransactionRecord {
    pub date: NaiveDate,
    pub store_nbr: u32,
    pub transactions: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OilRecord {
    pub date: NaiveDate,
    /// Missing prices are blank in the source.
    pub price: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HolidayEvent {
    pub date: NaiveDate,
    pub kind: String,
    pub locale: String,
    pub locale_name: String,
    pub description: String,
    pub transferred: bool,
}

#[derive(Clone, Debug, Default)]
pub struct RawTables {
    pub sales: Vec<RawSalesRecord>,
    pub stores: BTreeMap<u32, StoreMeta>,
    pub items: BTreeMap<u64, ItemMeta>,
    pub transactions: Vec<TransactionRecord>,
    pub oil: Vec<OilRecord>,
    pub holidays: Vec<HolidayEvent>,
}

/// Row counts per file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub sales: usize,
    pub stores: usize,
    pub items: usize,
    pub transactions: usize,
    pub oil: usize,
    pub holidays: usize,
}

impl RawTables {
    pub fn report(&self) -> IngestReport {
        IngestReport {
            sales: self.sales.len(),
            stores: self.stores.len(),
            items: self.items.len(),
            transactions: self.transactions.len(),
            oil: self.oil.len(),
            holidays: self.holidays.len(),
        }
    }
}

/// Paths of the six input files inside a data directory.
#[derive(Clone, Debug)]
pub struct DataFiles {
    pub train: PathBuf,
    pub stores: PathBuf,
    pub items: PathBuf,
    pub transactions: PathBuf,
    pub oil: PathBuf,
    pub holidays: PathBuf,
}

impl DataFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            train: dir.join("train.csv"),
            stores: dir.join("stores.csv"),
            items: dir.join("items.csv"),
            transactions: dir.join("transactions.csv"),
            oil: dir.join("oil.csv"),
            holidays: dir.join("holidays_events.csv"),
        }
    }

    pub fn all(&self) -> [&PathBuf; 6] {
        [
            &self.train,
            &self.stores,
            &self.items,
            &self.transactions,
            &self.oil,
            &self.holidays,
        ]
    }
}

struct Rows {
    path: PathBuf,
    reader: csv::Reader<std::fs::File>,
}

impl Rows {
    fn open(path: &Path, header: &[&str]) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
        let found: Vec<String> = reader
            .headers()
            .map_err(|e| Error::Malformed {
                path: path.to_path_buf(),
                line: 1,
                message: e.to_string(),
            })?
            .iter()
            .map(|s| s.trim().to_string())
            .collect();
        if found.iter().map(String::as_str).ne(header.iter().copied()) {
            return Err(Error::Header {
                path: path.to_path_buf(),
                expected: header.iter().map(|s| s.to_string()).collect(),
                found,
            });
        }
        Ok(Self {
            path: path.to_path_buf(),
            reader,
        })
    }

    /// Calls `f` with each record and its 1-based line number.
    fn for_each(mut self, mut f: impl FnMut(&Field<'_>) -> Result<()>) -> Result<()> {
        let mut record = csv::StringRecord::new();
        loop {
            match self.reader.read_record(&mut record) {
                Ok(false) => return Ok(()),
                Ok(true) => {
                    let line = record.position().map_or(0, |p| p.line());
                    f(&Field {
                        path: &self.path,
                        line,
                        record: &record,
                    })?;
                }
                Err(e) => {
                    let line = e.position().map_or(0, |p| p.line());
                    return Err(Error::Malformed {
                        path: self.path.clone(),
                        line,
                        message: e.to_string(),
                    });
                }
            }
        }
    }
}

struct Field<'a> {
    path: &'a Path,
    line: u64,
    record: &'a csv::StringRecord,
}

impl Field<'_> {
    fn err(&self, message: String) -> Error {
        Error::Malformed {
            path: self.path.to_path_buf(),
            line: self.line,
            message,
        }
    }

    fn str(&self, i: usize, name: &str) -> Result<&str> {
        self.record
            .get(i)
            .map(str::trim)
            .ok_or_else(|| self.err(format!("missing column `{name}`")))
    }

    fn parse<T: std::str::FromStr>(&self, i: usize, name: &str) -> Result<T> {
        let raw = self.str(i, name)?;
        raw.parse()
            .map_err(|_| self.err(format!("column `{name}`: cannot parse {raw:?}")))
    }

    fn date(&self, i: usize) -> Result<NaiveDate> {
        let raw = self.str(i, "date")?;
        NaiveDate::parse_from_str(raw, "%Y-%m-%d").map_err(|_| self.err(format!("column `date`: bad date {raw:?}")))
    }

    fn bool_or_blank(&self, i: usize, name: &str) -> Result<Option<bool>> {
        match self.str(i, name)? {
            "" => Ok(None),
            "True" | "true" | "1" => Ok(Some(true)),
            "False" | "false" | "0" => Ok(Some(false)),
            other => Err(self.err(format!("column `{name}`: bad boolean {other:?}"))),
        }
    }

    fn finite(&self, i: usize, name: &str) -> Result<f64> {
        let v: f64 = self.parse(i, name)?;
        if !v.is_finite() {
            return Err(self.err(format!("column `{name}`: non-finite value")));
        }
        Ok(v)
    }
}

/// Reads and validates the six CSV files. Every sales row must reference a
/// store and item present in the metadata files.
pub fn ingest(files: &DataFiles) -> Result<RawTables> {
    if let Some(missing) = files.all().into_iter().find(|p| !p.exists()) {
        return Err(Error::io(
            missing.clone(),
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    let mut tables = RawTables::default();

    Rows::open(&files.stores, &STORES_HEADER)?.for_each(|f| {
        let meta = StoreMeta {
            store_nbr: f.parse(0, "store_nbr")?,
            city: f.str(1, "city")?.to_string(),
            state: f.str(2, "state")?.to_string(),
            store_type: f.str(3, "type")?.to_string(),
            cluster: f.parse(4, "cluster")?,
        };
        if tables.stores.insert(meta.store_nbr, meta).is_some() {
            return Err(f.err("duplicate store".into()));
        }
        Ok(())
    })?;

    Rows::open(&files.items, &ITEMS_HEADER)?.for_each(|f| {
        let meta = ItemMeta {
            item_nbr: f.parse(0, "item_nbr")?,
            family: f.str(1, "family")?.to_string(),
            class: f.parse(2, "class")?,
            perishable: f
                .bool_or_blank(3, "perishable")?
                .ok_or_else(|| f.err("column `perishable` is blank".into()))?,
        };
        if tables.items.insert(meta.item_nbr, meta).is_some() {
            return Err(f.err("duplicate item".into()));
        }
        Ok(())
    })?;

    Rows::open(&files.train, &TRAIN_HEADER)?.for_each(|f| {
        let rec = RawSalesRecord {
            date: f.date(1)?,
            store_nbr: f.parse(2, "store_nbr")?,
            item_nbr: f.parse(3, "item_nbr")?,
            unit_sales: f.finite(4, "unit_sales")?,
            onpromotion: f.bool_or_blank(5, "onpromotion")?.unwrap_or(false),
        };
        if !tables.stores.contains_key(&rec.store_nbr) {
            return Err(f.err(format!("store {} has no metadata", rec.store_nbr)));
        }
        if !tables.items.contains_key(&rec.item_nbr) {
            return Err(f.err(format!("item {} has no metadata", rec.item_nbr)));
        }
        tables.sales.push(rec);
        Ok(())
    })?;

    Rows::open(&files.transactions, &TRANSACTIONS_HEADER)?.for_each(|f| {
        tables.transactions.push(TransactionRecord {
            date: f.date(0)?,
            store_nbr: f.parse(1, "store_nbr")?,
            transactions: f.finite(2, "transactions")?,
        });
        Ok(())
    })?;

    Rows::open(&files.oil, &OIL_HEADER)?.for_each(|f| {
        let raw = f.str(1, "dcoilwtico")?;
        let price = if raw.is_empty() {
            None
        } else {
            Some(f.finite(1, "dcoilwtico")?)
        };
        tables.oil.push(OilRecord { date: f.date(0)?, price });
        Ok(())
    })?;

    Rows::open(&files.holidays, &HOLIDAYS_HEADER)?.for_each(|f| {
        tables.holidays.push(HolidayEvent {
            date: f.date(0)?,
            kind: f.str(1, "type")?.to_string(),
            locale: f.str(2, "locale")?.to_string(),
            locale_name: f.str(3, "locale_name")?.to_string(),
            description: f.str(4, "description")?.to_string(),
            transferred: f.bool_or_blank(5, "transferred")?.unwrap_or(false),
        });
        Ok(())
    })?;

    Ok(tables)
}

/// Sorted distinct values, used to build one-hot vocabularies.
pub(crate) fn vocabulary<'a, T: Ord + Clone + 'a>(values: impl Iterator<Item = &'a T>) -> Vec<T> {
    values.cloned().collect::<BTreeSet<_>>().into_iter().collect()
}
