//! Favorita ingestion, densification, splits, window batches and synthetic panels.

pub mod batch;
pub mod cube;
pub mod ingest;
pub mod split;
pub mod synth;

pub use batch::{build_batch, Covariates, WindowBatch};
pub use cube::{cube_from_sales, densify, linear_grid, LinearGrid, NormStats, PanelCube, PERISHABLE_WEIGHT};
pub use ingest::{ingest, DataFiles, IngestReport, RawTables};
pub use split::{day_date, day_index, sample_anchor, AnchorMode, DaySpan, Period, SplitSpec, HORIZON};
pub use synth::{synth_generate, synth_tables, write_csvs, SynthConfig};
