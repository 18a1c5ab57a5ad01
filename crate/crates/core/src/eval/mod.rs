//! Metrics, training, evaluation and multi-run ablations.

pub mod ablate;
pub mod evaluate;
pub mod metrics;
pub mod optim;
pub mod stats;
pub mod train;

pub use ablate::{
    ablate, baseline_rows, evaluate_model, parallel_map, repeat_runs, run_once, summarize, thread_count, train_run, EvalConfig,
    PeriodOutcome, Report, RunOutcome, Variant, REPORT_FILES,
};
pub use evaluate::{
    baseline_average, baseline_random, decompose_errors, forecast_period, forecast_window, training_sales, AverageSpace,
    Decomposition, ErrorKey, Forecast,
};
pub use metrics::{male, male_with, rmsle, rmswle, to_linear, MaleVariant, Metrics};
pub use optim::{clip_global_norm, mse_loss, Adam, AdamConfig};
pub use stats::{anova_oneway, welch_ttest, Anova, TTest};
pub use train::{train, train_observed, validation_rmsle, EpochRecord, TrainConfig, TrainState};
