use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use panelcast_core::data::{
    densify, ingest as read_tables, synth_generate, synth_tables, write_csvs, DataFiles, DaySpan, PanelCube, Period,
    SplitSpec, SynthConfig, HORIZON,
};
use panelcast_core::eval::{
    baseline_rows, evaluate_model, parallel_map, summarize, thread_count, train_run, Report, RunOutcome, Variant,
    REPORT_FILES,
};
use panelcast_core::model::{Forecaster, HistoryLen, Model, ModelConfig};
use panelcast_core::Error;

use crate::config::{split_for, ModelKind, RunConfig, SplitOptions};
use crate::manifest::{digest_bytes, digest_files, RunManifest};
use crate::{PeriodArg, Sweep};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn config_digest(path: Option<&Path>) -> anyhow::Result<String> {
    Ok(match path {
        Some(p) => digest_files(&[p.to_path_buf()])?,
        None => digest_bytes(b""),
    })
}

fn sidecar_manifest(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Model-config sidecar written next to each checkpoint.
pub fn sidecar_config(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".config.toml");
    PathBuf::from(name)
}

fn print_summary(cube: &PanelCube) {
    println!(
        "stores {} items {} days {} fill fraction {:.4}",
        cube.n_stores, cube.n_items, cube.n_days, cube.fill_fraction
    );
}

/// Split used only to fit normalization when a panel is too short for the
/// evaluation layout: everything counts as training.
fn fit_all_split(origin: chrono::NaiveDate, n_days: usize) -> SplitSpec {
    SplitSpec {
        origin,
        train_end: n_days.saturating_sub(1),
        validation: DaySpan {
            start: n_days,
            end: n_days + HORIZON - 1,
        },
        test_periods: Vec::new(),
        min_anchor: 0,
        horizon: HORIZON,
    }
}

pub fn ingest(data_dir: &Path, out: &Path, config: Option<&Path>, args: Vec<String>) -> anyhow::Result<()> {
    let cfg = RunConfig::load(config)?;
    let files = DataFiles::in_dir(data_dir);
    let inputs: Vec<PathBuf> = files.all().into_iter().cloned().collect();
    let raw = read_tables(&files)?;
    let (Some(first), Some(last)) = (
        raw.sales.iter().map(|r| r.date).min(),
        raw.sales.iter().map(|r| r.date).max(),
    ) else {
        return Err(Error::Format(format!("{} has no sales rows", files.train.display())).into());
    };
    let n_days = (last - first).num_days() as usize + 1;
    let spec = match SplitSpec::for_panel(first, n_days, HORIZON, 0, cfg.split.gap) {
        Ok(s) => s,
        Err(_) => {
            eprintln!("note: {n_days} days cannot hold the evaluation layout; normalization uses every day");
            fit_all_split(first, n_days)
        }
    };
    let cube = densify(&raw, &spec)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    cube.save(out)?;
    let r = raw.report();
    println!(
        "read {} sales, {} stores, {} items, {} transactions, {} oil, {} holiday rows",
        r.sales, r.stores, r.items, r.transactions, r.oil, r.holidays
    );
    println!("days {first} to {last}");
    print_summary(&cube);

    let mut m = RunManifest::new(
        "ingest",
        args,
        config_digest(config)?,
        digest_files(&inputs)?,
        Vec::new(),
    );
    m.outputs.push(out.to_path_buf());
    m.write(&sidecar_manifest(out))?;
    Ok(())
}

pub fn synth(config: Option<&Path>, out: &Path, csv_dir: Option<&Path>, args: Vec<String>) -> anyhow::Result<()> {
    let mut cfg = match config {
        Some(p) => SynthConfig::load(p)?,
        None => SynthConfig::default(),
    };
    cfg.validate()?;
    if cfg.fit_through.is_none() {
        // Keep covariate scaling off the evaluation days when the default layout fits.
        if let Ok(spec) = SplitSpec::for_panel(cfg.start, cfg.days, HORIZON, 0, 0) {
            cfg.fit_through = Some(spec.train_end);
        }
    }
    let cube = synth_generate(&cfg)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    cube.save(out)?;
    let mut m = RunManifest::new("synth", args, config_digest(config)?, digest_bytes(b""), vec![cfg.seed]);
    m.outputs.push(out.to_path_buf());
    if let Some(dir) = csv_dir {
        write_csvs(&synth_tables(&cfg)?, dir)?;
        m.outputs.push(dir.to_path_buf());
    }
    print_summary(&cube);
    m.write(&sidecar_manifest(out))?;
    Ok(())
}

fn load_cube(path: &Path) -> anyhow::Result<PanelCube> {
    PanelCube::load(path).with_context(|| format!("loading cube {}", path.display()))
}

fn warn_on_leakage(cube: &PanelCube, spec: &SplitSpec) {
    if cube.norm.fitted_through > spec.train_end {
        eprintln!(
            "warning: cube covariates were scaled through day {}, past the training end {}",
            cube.norm.fitted_through, spec.train_end
        );
    }
}

fn prepare_out_dir(dir: &Path) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    Ok(dir.join("manifest.json"))
}

fn write_report(report: &Report, dir: &Path, preamble: &str, names: &[&str], m: &mut RunManifest) -> anyhow::Result<()> {
    m.outputs.extend(report.write_files(dir, Some(preamble), names)?);
    Ok(())
}

fn write_text(path: &Path, text: &str, m: &mut RunManifest) -> anyhow::Result<()> {
    std::fs::write(path, text).map_err(io_err(path))?;
    m.outputs.push(path.to_path_buf());
    Ok(())
}

pub struct TrainArgs {
    pub cube: PathBuf,
    pub model: ModelKind,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub runs: usize,
    pub no_trick: bool,
    pub out_dir: PathBuf,
}

pub fn train(a: &TrainArgs, args: Vec<String>) -> anyhow::Result<()> {
    if a.runs == 0 {
        return Err(Error::Config("--runs must be at least 1".into()).into());
    }
    let cfg = RunConfig::load(a.config.as_deref())?;
    let cube = load_cube(&a.cube)?;
    let (mut model, clamped) = cfg.model_for(a.model, &cube)?;
    if clamped {
        eprintln!("note: transformer history shortened to {} days", model.max_history);
    }
    let mut train = cfg.train.clone();
    if a.no_trick {
        train.random_max_time_step = false;
    }
    let seed = a.seed.unwrap_or(train.seed);
    model.seed = seed;
    train.seed = seed;
    let spec = split_for(&cube, model.horizon, &cfg.split, &[&model])?;
    warn_on_leakage(&cube, &spec);

    let mut label = a.model.label().to_string();
    if a.no_trick {
        label.push_str(":no-trick");
    }
    let variant = Variant {
        label: label.clone(),
        model,
        train,
    };
    let manifest_path = prepare_out_dir(&a.out_dir)?;
    let seeds: Vec<u64> = (0..a.runs).map(|r| seed.wrapping_add(r as u64)).collect();
    let mut m = RunManifest::new(
        "train",
        args,
        config_digest(a.config.as_deref())?,
        digest_files(&[a.cube.clone()])?,
        seeds.clone(),
    );
    let preamble = m.preamble(&manifest_path);

    let ids: Vec<usize> = (0..a.runs).collect();
    let trained = parallel_map(&ids, thread_count(), |&r| train_run(&variant, r, &cube, &spec, &cfg.eval))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let mut outcomes = Vec::with_capacity(trained.len());
    let mut runs_csv = format!("{preamble}\nrun,seed,epochs,best_epoch,best_val_rmsle,checkpoint\n");
    let mut curves = format!("{preamble}\nrun,epoch,train_loss,val_rmsle,best_val_rmsle\n");
    for (model, outcome) in trained {
        let ckpt = a.out_dir.join(format!("run{}.ckpt", outcome.run));
        model.save(&ckpt)?;
        let sidecar = sidecar_config(&ckpt);
        std::fs::write(&sidecar, model.config().to_toml()?).map_err(io_err(&sidecar))?;
        m.outputs.extend([ckpt.clone(), sidecar]);
        let _ = writeln!(
            runs_csv,
            "{},{},{},{},{},{}",
            outcome.run,
            seeds[outcome.run],
            outcome.epochs,
            outcome.best_epoch,
            outcome.best_val_rmsle,
            ckpt.display()
        );
        for e in &outcome.history {
            let _ = writeln!(
                curves,
                "{},{},{},{},{}",
                outcome.run, e.epoch, e.train_loss, e.val_rmsle, e.best_val_rmsle
            );
        }
        println!(
            "run {}: {} epochs, best validation RMSLE {:.5} at epoch {}",
            outcome.run, outcome.epochs, outcome.best_val_rmsle, outcome.best_epoch
        );
        outcomes.push(outcome);
    }
    let report = summarize(&outcomes, std::slice::from_ref(&label), &label, &cube, &cfg.eval)?;
    write_report(&report, &a.out_dir, &preamble, &["results.csv", "daily.csv", "groups.csv"], &mut m)?;
    write_text(&a.out_dir.join("runs.csv"), &runs_csv, &mut m)?;
    write_text(&a.out_dir.join("curves.csv"), &curves, &mut m)?;
    print_results(&report);
    m.write(&manifest_path)?;
    Ok(())
}

fn print_results(report: &Report) {
    for r in &report.results {
        println!(
            "{:<10} {:<11} {:<22} {:<6} {:.5} ± {:.5}",
            r.period, r.model, r.config, r.metric, r.mean, r.std
        );
    }
}

pub struct EvaluateArgs {
    pub cube: PathBuf,
    pub checkpoint: PathBuf,
    pub model_config: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub period: PeriodArg,
    pub baselines: bool,
    pub out_dir: PathBuf,
}

pub fn evaluate(a: &EvaluateArgs, args: Vec<String>) -> anyhow::Result<()> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let cube = load_cube(&a.cube)?;
    let model_path = a.model_config.clone().unwrap_or_else(|| sidecar_config(&a.checkpoint));
    let text = std::fs::read_to_string(&model_path).map_err(io_err(&model_path))?;
    let mcfg = ModelConfig::from_toml(&text).with_context(|| format!("in {}", model_path.display()))?;
    let mut model = Model::new(mcfg.clone())?;
    model
        .load_params(&a.checkpoint)
        .with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let expected = mcfg.clone().with_inputs(&cube).inputs;
    if mcfg.inputs != expected {
        return Err(Error::Config(format!(
            "checkpoint was trained on a cube with inputs {:?}, this cube gives {expected:?}",
            mcfg.inputs
        ))
        .into());
    }
    let spec = split_for(&cube, mcfg.horizon, &SplitOptions { min_anchor: Some(0), ..cfg.split }, &[])?;
    let periods = match a.period {
        PeriodArg::P1 => vec![Period::Test(1)],
        PeriodArg::P2 => vec![Period::Test(2)],
        PeriodArg::P3 => vec![Period::Test(3)],
        PeriodArg::All => spec.periods(),
        PeriodArg::Validation => vec![Period::Validation],
    };
    for &p in &periods {
        let span = spec.span(p)?;
        println!(
            "period {p}: days {}..={} ({} to {})",
            span.start,
            span.end,
            cube.origin + chrono::Days::new(span.start as u64),
            cube.origin + chrono::Days::new(span.end as u64)
        );
    }

    let manifest_path = prepare_out_dir(&a.out_dir)?;
    let mut m = RunManifest::new(
        "evaluate",
        args,
        config_digest(a.config.as_deref())?,
        digest_files(&[a.cube.clone(), a.checkpoint.clone(), model_path])?,
        vec![mcfg.seed],
    );
    let preamble = m.preamble(&manifest_path);
    let label = a
        .checkpoint
        .file_stem()
        .map_or_else(|| "checkpoint".to_string(), |s| s.to_string_lossy().into_owned());
    let outcome = RunOutcome {
        label: label.clone(),
        model: mcfg.architecture.to_string(),
        run: 0,
        best_val_rmsle: f64::NAN,
        best_epoch: 0,
        epochs: 0,
        history: Vec::new(),
        periods: evaluate_model(&model, &cube, &spec, &periods, &cfg.eval, cfg.train.eval_chunk)?,
    };
    let mut report = summarize(std::slice::from_ref(&outcome), std::slice::from_ref(&label), &label, &cube, &cfg.eval)?;
    if a.baselines {
        let mut rows = baseline_rows(&cube, &spec, &periods, &cfg.eval, 1, cfg.train.seed)?;
        rows.append(&mut report.results);
        report.results = rows;
    }
    write_report(&report, &a.out_dir, &preamble, &["results.csv", "daily.csv", "groups.csv"], &mut m)?;
    print_results(&report);
    m.write(&manifest_path)?;
    Ok(())
}

pub struct AblateArgs {
    pub cube: PathBuf,
    pub sweep: Sweep,
    pub model: ModelKind,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub runs: usize,
    pub baselines: bool,
    pub out_dir: PathBuf,
}

/// History lengths of the length sweep, reference first.
pub const LENGTH_SWEEP: [HistoryLen; 6] = [
    HistoryLen::Full,
    HistoryLen::Days(200),
    HistoryLen::Days(75),
    HistoryLen::Days(10),
    HistoryLen::Days(1),
    HistoryLen::Days(0),
];

fn sweep_variants(a: &AblateArgs, cfg: &RunConfig, cube: &PanelCube, seed: u64) -> anyhow::Result<Vec<Variant>> {
    let (mut base, _) = cfg.model_for(a.model, cube)?;
    base.seed = seed;
    let mut train = cfg.train.clone();
    train.seed = seed;
    let variants = match a.sweep {
        Sweep::Trick => [("on", true), ("off", false)]
            .into_iter()
            .map(|(label, trick)| Variant {
                label: label.into(),
                model: base.clone(),
                train: panelcast_core::eval::TrainConfig {
                    random_max_time_step: trick,
                    ..train.clone()
                },
            })
            .collect(),
        Sweep::Length => {
            if a.model == ModelKind::Transformer {
                return Err(Error::Config("the length sweep applies to the seq2seq models".into()).into());
            }
            LENGTH_SWEEP
                .iter()
                .map(|&h| {
                    let model = ModelConfig {
                        history_len: h,
                        ..base.clone()
                    };
                    model.validate()?;
                    Ok(Variant {
                        label: h.to_string(),
                        model,
                        train: train.clone(),
                    })
                })
                .collect::<Result<Vec<_>, Error>>()?
        }
    };
    Ok(variants)
}

pub fn ablate(a: &AblateArgs, args: Vec<String>) -> anyhow::Result<()> {
    if a.runs == 0 {
        return Err(Error::Config("--runs must be at least 1".into()).into());
    }
    let cfg = RunConfig::load(a.config.as_deref())?;
    let cube = load_cube(&a.cube)?;
    let seed = a.seed.unwrap_or(cfg.train.seed);
    let variants = sweep_variants(a, &cfg, &cube, seed)?;
    let models: Vec<&ModelConfig> = variants.iter().map(|v| &v.model).collect();
    let spec = split_for(&cube, variants[0].model.horizon, &cfg.split, &models)?;
    warn_on_leakage(&cube, &spec);

    let manifest_path = prepare_out_dir(&a.out_dir)?;
    let seeds: Vec<u64> = (0..a.runs).map(|r| seed.wrapping_add(r as u64)).collect();
    let mut m = RunManifest::new(
        "ablate",
        args,
        config_digest(a.config.as_deref())?,
        digest_files(&[a.cube.clone()])?,
        seeds,
    );
    let preamble = m.preamble(&manifest_path);
    let mut report =
        panelcast_core::eval::ablate(&variants, 0, a.runs, &cube, &spec, &cfg.eval, thread_count())?;
    if a.baselines {
        let mut rows = baseline_rows(&cube, &spec, &spec.periods(), &cfg.eval, a.runs, seed)?;
        rows.append(&mut report.results);
        report.results = rows;
    }
    write_report(&report, &a.out_dir, &preamble, &REPORT_FILES, &mut m)?;
    print_results(&report);
    for s in &report.significance {
        if s.metric == "rmsle" {
            println!(
                "period {:>2} {} vs {}: t = {:.3}, p = {:.4}{}",
                s.period,
                s.config,
                s.reference,
                s.t,
                s.p,
                if s.significant { " *" } else { "" }
            );
        }
    }
    m.write(&manifest_path)?;
    Ok(())
}
