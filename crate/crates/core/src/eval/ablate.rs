//! Repeated seeded runs, configuration sweeps and the tabular report.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::evaluate::{
    baseline_average, baseline_random, decompose_errors, forecast_period, training_sales, AverageSpace, Decomposition,
    ErrorKey, Forecast,
};
use super::metrics::{rmsle, MaleVariant, Metrics};
use super::stats::{anova_oneway, mean, sample_std, welch_ttest};
use super::train::{train, EpochRecord, TrainConfig};
use crate::data::{PanelCube, Period, SplitSpec};
use crate::error::{Error, Result};
use crate::model::{Forecaster, Model, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub male: MaleVariant,
    pub average_space: AverageSpace,
    /// Two-tailed significance level for comparisons against the reference configuration.
    pub alpha: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            male: MaleVariant::Sqrt,
            average_space: AverageSpace::Log,
            alpha: 0.05,
        }
    }
}

/// One configuration in a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    /// Label in the report's `config` column.
    pub label: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Variant {
    /// The variant with both seeds offset by `run`.
    pub fn for_run(&self, run: usize) -> Variant {
        let mut v = self.clone();
        v.model.seed = self.model.seed.wrapping_add(run as u64);
        v.train.seed = self.train.seed.wrapping_add(run as u64);
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeriodOutcome {
    pub period: Period,
    pub metrics: Metrics,
    pub daily: Vec<f64>,
    pub forecast: Forecast,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub label: String,
    pub model: String,
    pub run: usize,
    pub best_val_rmsle: f64,
    pub best_epoch: usize,
    pub epochs: usize,
    pub history: Vec<EpochRecord>,
    pub periods: Vec<PeriodOutcome>,
}

/// Evaluates a trained model on `periods`.
pub fn evaluate_model(
    model: &dyn Forecaster,
    cube: &PanelCube,
    spec: &SplitSpec,
    periods: &[Period],
    eval: &EvalConfig,
    chunk: usize,
) -> Result<Vec<PeriodOutcome>> {
    periods
        .iter()
        .map(|&period| {
            let forecast = forecast_period(model, cube, spec, period, chunk)?;
            let metrics = forecast.metrics(eval.male)?;
            let d = decompose_errors(
                &forecast.pred_linear(),
                &forecast.actual_linear(),
                &forecast.keys(cube),
                forecast.horizon,
            )?;
            Ok(PeriodOutcome {
                period,
                metrics,
                daily: d.per_day,
                forecast,
            })
        })
        .collect()
}

/// Trains one fresh model for `variant` and evaluates it on the test periods.
pub fn run_once(variant: &Variant, run: usize, cube: &PanelCube, spec: &SplitSpec, eval: &EvalConfig) -> Result<RunOutcome> {
    train_run(variant, run, cube, spec, eval).map(|(_, o)| o)
}

/// [`run_once`], also returning the trained model.
pub fn train_run(
    variant: &Variant,
    run: usize,
    cube: &PanelCube,
    spec: &SplitSpec,
    eval: &EvalConfig,
) -> Result<(Model, RunOutcome)> {
    let v = variant.for_run(run);
    let mut model = Model::new(v.model.clone())?;
    let state = train(&mut model, cube, spec, &v.train)?;
    let periods = evaluate_model(&model, cube, spec, &spec.periods(), eval, v.train.eval_chunk)?;
    let outcome = RunOutcome {
        label: v.label.clone(),
        model: v.model.architecture.to_string(),
        run,
        best_val_rmsle: state.best_val_rmsle,
        best_epoch: state.best_epoch,
        epochs: state.epoch,
        history: state.history,
        periods,
    };
    Ok((model, outcome))
}

/// Worker count: `PANELCAST_THREADS` when set, else the available parallelism.
pub fn thread_count() -> usize {
    std::env::var("PANELCAST_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Maps `f` over `items` on up to `threads` scoped workers, preserving order.
pub fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = threads.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= items.len() {
                    break;
                }
                let r = f(&items[k]);
                *slots[k].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every slot filled"))
        .collect()
}

/// `runs` seeded repetitions of one variant.
pub fn repeat_runs(
    variant: &Variant,
    runs: usize,
    cube: &PanelCube,
    spec: &SplitSpec,
    eval: &EvalConfig,
    threads: usize,
) -> Result<Vec<RunOutcome>> {
    let ids: Vec<usize> = (0..runs).collect();
    parallel_map(&ids, threads, |&r| run_once(variant, r, cube, spec, eval))
        .into_iter()
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub period: String,
    pub model: String,
    pub config: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DailyRow {
    pub period: String,
    pub day_offset: usize,
    pub rmsle: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupRow {
    pub dimension: String,
    pub key: u64,
    pub rmsle: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignificanceRow {
    pub period: String,
    pub config: String,
    pub reference: String,
    pub metric: String,
    pub t: f64,
    pub p: f64,
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnovaRow {
    pub period: String,
    pub f: f64,
    pub p: f64,
}

/// Everything a sweep reports.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub results: Vec<ResultRow>,
    /// Per-day RMSLE of the reference configuration, mean and std over runs.
    pub daily: Vec<DailyRow>,
    /// Per-store and per-item RMSLE of the reference configuration, pooled over periods and runs.
    pub groups: Vec<GroupRow>,
    pub significance: Vec<SignificanceRow>,
    /// Daily-RMSLE ANOVA across configurations, per period.
    pub anova: Vec<AnovaRow>,
}

fn push_metric_rows(rows: &mut Vec<ResultRow>, period: Period, model: &str, config: &str, samples: &[Metrics]) {
    for name in Metrics::NAMES {
        let v: Vec<f64> = samples.iter().map(|m| m.get(name).expect("known metric")).collect();
        rows.push(ResultRow {
            period: period.to_string(),
            model: model.to_string(),
            config: config.to_string(),
            metric: name.to_string(),
            mean: mean(&v),
            std: sample_std(&v),
        });
    }
}

/// Average and random baseline rows. The random baseline is repeated `runs` times.
pub fn baseline_rows(
    cube: &PanelCube,
    spec: &SplitSpec,
    periods: &[Period],
    eval: &EvalConfig,
    runs: usize,
    seed: u64,
) -> Result<Vec<ResultRow>> {
    let constant = baseline_average(&training_sales(cube, spec), eval.average_space)?;
    let series = cube.series();
    let mut rows = Vec::new();
    for &period in periods {
        let span = spec.span(period)?;
        let mut actual = Vec::with_capacity(series.len() * span.len());
        let mut weights = Vec::with_capacity(actual.capacity());
        for &(s, i) in &series {
            for day in span.start..=span.end {
                actual.push(cube.target_at(s, i, day).exp_m1().max(0.0));
                weights.push(cube.weight(i));
            }
        }
        let avg = Metrics::compute(&vec![constant; actual.len()], &actual, &weights, eval.male)?;
        push_metric_rows(&mut rows, period, "baseline", "average", &[avg]);
        let random = (0..runs.max(1))
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
                let p = baseline_random(&actual, &mut rng)?;
                Metrics::compute(&p, &actual, &weights, eval.male)
            })
            .collect::<Result<Vec<_>>>()?;
        push_metric_rows(&mut rows, period, "baseline", "random", &random);
    }
    Ok(rows)
}

/// Builds the report for completed runs, grouped by variant label in `order`.
pub fn summarize(
    outcomes: &[RunOutcome],
    order: &[String],
    reference: &str,
    cube: &PanelCube,
    eval: &EvalConfig,
) -> Result<Report> {
    let mut by_label: BTreeMap<&str, Vec<&RunOutcome>> = BTreeMap::new();
    for o in outcomes {
        by_label.entry(&o.label).or_default().push(o);
    }
    let reference_runs = by_label
        .get(reference)
        .ok_or_else(|| Error::Config(format!("reference configuration `{reference}` has no runs")))?;
    let periods: Vec<Period> = reference_runs[0].periods.iter().map(|p| p.period).collect();
    let mut report = Report::default();

    for (pi, &period) in periods.iter().enumerate() {
        for label in order {
            let Some(runs) = by_label.get(label.as_str()) else { continue };
            let samples: Vec<Metrics> = runs.iter().map(|r| r.periods[pi].metrics).collect();
            push_metric_rows(&mut report.results, period, &runs[0].model, label, &samples);
            if label != reference && runs.len() >= 2 && reference_runs.len() >= 2 {
                for name in Metrics::NAMES {
                    let a: Vec<f64> = samples.iter().map(|m| m.get(name).expect("known metric")).collect();
                    let b: Vec<f64> = reference_runs
                        .iter()
                        .map(|r| r.periods[pi].metrics.get(name).expect("known metric"))
                        .collect();
                    // Zero variance on both sides has no defined statistic; skip the row.
                    if let Ok(t) = welch_ttest(&a, &b, eval.alpha) {
                        report.significance.push(SignificanceRow {
                            period: period.to_string(),
                            config: label.clone(),
                            reference: reference.to_string(),
                            metric: name.to_string(),
                            t: t.t,
                            p: t.p,
                            significant: t.significant,
                        });
                    }
                }
            }
        }
        // Per-day RMSLE of the reference, mean ± std over runs.
        let horizon = reference_runs[0].periods[pi].daily.len();
        for d in 0..horizon {
            let v: Vec<f64> = reference_runs.iter().map(|r| r.periods[pi].daily[d]).collect();
            report.daily.push(DailyRow {
                period: period.to_string(),
                day_offset: d + 1,
                rmsle: mean(&v),
                std: sample_std(&v),
            });
        }
        // Do the configurations differ in average daily error? One group of daily means per configuration.
        let groups: Vec<Vec<f64>> = order
            .iter()
            .filter_map(|l| by_label.get(l.as_str()))
            .map(|runs| {
                (0..horizon)
                    .map(|d| mean(&runs.iter().map(|r| r.periods[pi].daily[d]).collect::<Vec<_>>()))
                    .collect()
            })
            .collect();
        if groups.len() >= 2 {
            if let Ok(a) = anova_oneway(&groups) {
                report.anova.push(AnovaRow {
                    period: period.to_string(),
                    f: a.f,
                    p: a.p,
                });
            }
        }
    }

    let (mut pred, mut actual, mut keys) = (Vec::new(), Vec::new(), Vec::<ErrorKey>::new());
    for r in reference_runs {
        for p in &r.periods {
            pred.extend(p.forecast.pred_linear());
            actual.extend(p.forecast.actual_linear());
            keys.extend(p.forecast.keys(cube));
        }
    }
    if !pred.is_empty() {
        let horizon = reference_runs[0].periods[0].forecast.horizon;
        let Decomposition { per_store, per_item, .. } = decompose_errors(&pred, &actual, &keys, horizon)?;
        for (dimension, table) in [("store", per_store), ("item", per_item)] {
            for (key, rmsle) in table {
                report.groups.push(GroupRow {
                    dimension: dimension.to_string(),
                    key,
                    rmsle,
                });
            }
        }
    }
    Ok(report)
}

/// Runs every variant `runs` times and reports metrics and significance
/// against `variants[reference]`. Baseline rows come from [`baseline_rows`].
pub fn ablate(
    variants: &[Variant],
    reference: usize,
    runs: usize,
    cube: &PanelCube,
    spec: &SplitSpec,
    eval: &EvalConfig,
    threads: usize,
) -> Result<Report> {
    if variants.is_empty() || reference >= variants.len() || runs == 0 {
        return Err(Error::Config("a sweep needs variants, a valid reference and at least one run".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    if let Some(dup) = variants.iter().find(|v| !seen.insert(&v.label)) {
        return Err(Error::Config(format!("duplicate configuration label `{}`", dup.label)));
    }
    let jobs: Vec<(usize, usize)> = (0..variants.len()).flat_map(|v| (0..runs).map(move |r| (v, r))).collect();
    let outcomes = parallel_map(&jobs, threads, |&(v, r)| run_once(&variants[v], r, cube, spec, eval))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let order: Vec<String> = variants.iter().map(|v| v.label.clone()).collect();
    summarize(&outcomes, &order, &variants[reference].label, cube, eval)
}

/// Shortest representation that parses back to the same value.
fn num(v: f64) -> String {
    format!("{v}")
}

/// Every file [`Report::write_csvs`] can emit.
pub const REPORT_FILES: [&str; 5] = ["results.csv", "daily.csv", "groups.csv", "significance.csv", "anova.csv"];

impl Report {
    /// Writes `results.csv`, `daily.csv`, `groups.csv`, `significance.csv`
    /// and `anova.csv` into `dir`, each preceded by `preamble` lines when given.
    pub fn write_csvs(&self, dir: &Path, preamble: Option<&str>) -> Result<Vec<std::path::PathBuf>> {
        self.write_files(dir, preamble, &REPORT_FILES)
    }

    /// Writes only the files in `names`, a subset of [`REPORT_FILES`].
    pub fn write_files(&self, dir: &Path, preamble: Option<&str>, names: &[&str]) -> Result<Vec<std::path::PathBuf>> {
        if let Some(bad) = names.iter().find(|n| !REPORT_FILES.contains(n)) {
            return Err(Error::Config(format!("unknown report file `{bad}`")));
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let mut emit = |name: &str, header: &[&str], rows: Vec<Vec<String>>| -> Result<()> {
            if !names.contains(&name) {
                return Ok(());
            }
            let path = dir.join(name);
            let mut file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            if let Some(p) = preamble {
                writeln!(file, "{p}").map_err(|e| Error::io(&path, e))?;
            }
            let mut w = csv::Writer::from_writer(file);
            w.write_record(header).map_err(|e| Error::Format(e.to_string()))?;
            for r in rows {
                w.write_record(&r).map_err(|e| Error::Format(e.to_string()))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            written.push(path);
            Ok(())
        };
        emit(
            "results.csv",
            &["period", "model", "config", "metric", "mean", "std"],
            self.results
                .iter()
                .map(|r| vec![r.period.clone(), r.model.clone(), r.config.clone(), r.metric.clone(), num(r.mean), num(r.std)])
                .collect(),
        )?;
        emit(
            "daily.csv",
            &["period", "day_offset", "rmsle", "std"],
            self.daily
                .iter()
                .map(|r| vec![r.period.clone(), r.day_offset.to_string(), num(r.rmsle), num(r.std)])
                .collect(),
        )?;
        emit(
            "groups.csv",
            &["dimension", "key", "rmsle"],
            self.groups
                .iter()
                .map(|r| vec![r.dimension.clone(), r.key.to_string(), num(r.rmsle)])
                .collect(),
        )?;
        emit(
            "significance.csv",
            &["period", "config", "reference", "metric", "t", "p", "significant"],
            self.significance
                .iter()
                .map(|r| {
                    vec![
                        r.period.clone(),
                        r.config.clone(),
                        r.reference.clone(),
                        r.metric.clone(),
                        num(r.t),
                        num(r.p),
                        r.significant.to_string(),
                    ]
                })
                .collect(),
        )?;
        emit(
            "anova.csv",
            &["period", "f", "p"],
            self.anova.iter().map(|r| vec![r.period.clone(), num(r.f), num(r.p)]).collect(),
        )?;
        Ok(written)
    }
}

/// RMSLE of a single forecast, for callers that only need the headline number.
pub fn forecast_rmsle(f: &Forecast) -> Result<f64> {
    rmsle(&f.pred_linear(), &f.actual_linear())
}
