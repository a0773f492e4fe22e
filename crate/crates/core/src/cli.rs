//! Command-line front end: config merging, subcommand dispatch and exit codes.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::diagnostics::{
    augmented_outlier_count, basin_indicator_fraction, d_condition, hessian_min_eigenvalue, theoretical_tau, TauMode,
};
use crate::error::{Error, Result};
use crate::estimators::{fit_two_stage, FitConfig, FitResult, ScaleMode};
use crate::io::{
    aggregate_table, bias_table, coefficient_table, cv_table, describe_fit, load_csv, mean_trace_table, mse_table,
    normality_table, rate_table, replicate_table, residual_table, resolve_output, trace_table, write_report,
    Provenance, Table, TabularFile,
};
use crate::linalg::{median, quantile};
use crate::loss::{LossFamily, LossSpec};
use crate::model_selection::{default_grid, holdout_split, median_cv, CvOutcome, CvSpec, DEFAULT_FOLDS};
use crate::simulation::{
    bias_curve, convergence_trace_experiment, generate_dataset, mse_distribution, normality_from_spec, preset,
    rate_experiment, run_replicates, ContaminationSpec, DesignSpec, ExperimentSpec, NoiseSpec, Strategy, DEFAULT_SEED,
    PRESETS,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "welsch", version, about = "Robust linear regression with the Welsch loss")]
pub struct Cli {
    /// TOML configuration file; command-line flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one estimator on a CSV file.
    Fit(FitArgs),
    /// Run an experiment specification.
    Simulate(SimulateArgs),
    /// Bias of each estimator against the contamination proportion.
    BiasCurve(PresetArgs),
    /// Per-replicate squared errors.
    Mse(PresetArgs),
    /// Error along gradient-descent iterates.
    Trace(PresetArgs),
    /// Median error against sample size.
    Rate(PresetArgs),
    /// Distribution of √n(β̂ − β*) on clean data.
    Normality(PresetArgs),
    /// Median-based cross-validation of the tuning constant.
    Cv(CvArgs),
    /// Basin fraction, Hessian eigenvalue, o′ and the D-condition for a fit.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleArg {
    /// σ = 1
    Unit,
    /// σ = 1.4826·MAD of the LAD residuals
    Mad,
}

impl From<ScaleArg> for ScaleMode {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Unit => ScaleMode::FixedUnit,
            ScaleArg::Mad => ScaleMode::MadOfLadResiduals,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Response column (default "y").
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub delimiter: Option<char>,
    /// Drop non-numeric columns instead of rejecting the file.
    #[arg(long)]
    pub drop_non_numeric: bool,
    /// Keep features on their raw scale.
    #[arg(long)]
    pub no_standardize: bool,
    /// Do not prepend an intercept column.
    #[arg(long)]
    pub no_intercept: bool,
}

#[derive(Debug, Clone, Args)]
pub struct LossArgs {
    #[arg(long)]
    pub loss: Option<String>,
    /// Tuning constant (τ, γ, c, Hampel a or q), or `auto` for median cross-validation.
    #[arg(long, visible_alias = "tau")]
    pub tuning: Option<String>,
    #[arg(long, value_enum)]
    pub scale: Option<ScaleArg>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub loss: LossArgs,
    /// Fraction of rows held out as a test set.
    #[arg(long)]
    pub holdout: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output prefix: writes <out>.coefficients.csv and <out>.residuals.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML file holding an experiment specification at top level.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PresetArgs {
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long, value_enum)]
    pub scale: Option<ScaleArg>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// CSV to diagnose; without it a dataset is simulated and o′ is exact.
    #[command(flatten)]
    pub data: DataArgs,
    /// Welsch τ, or `auto` (cross-validated for CSV data, the contamination-count rule for simulated data).
    #[arg(long)]
    pub tau: Option<String>,
    #[arg(long, value_enum)]
    pub scale: Option<ScaleArg>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub proportion: Option<f64>,
    #[arg(long)]
    pub magnitude: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Constant C of the D-condition.
    #[arg(long)]
    pub c: Option<f64>,
}

/// Optional keys of the TOML configuration file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub preset: Option<String>,
    pub replicates: Option<usize>,
    pub holdout: Option<f64>,
    /// Cross-validate the tuning constant of `fit.loss`.
    pub auto_tune: Option<bool>,
    pub data: Option<DataSection>,
    pub fit: Option<FitConfig<f64>>,
    pub cv: Option<CvSection>,
    pub experiment: Option<ExperimentSpec>,
    pub diagnose: Option<DiagnoseSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    pub target: Option<String>,
    pub delimiter: Option<char>,
    pub drop_non_numeric: Option<bool>,
    pub standardize: Option<bool>,
    pub intercept: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvSection {
    pub folds: Option<usize>,
    pub grid: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseSection {
    pub n: Option<usize>,
    pub p: Option<usize>,
    pub proportion: Option<f64>,
    pub magnitude: Option<f64>,
    pub c: Option<f64>,
}

pub fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

/// Resolved input-file settings, recorded in provenance.
#[derive(Debug, Clone, Serialize)]
pub struct DataConfig {
    pub file: TabularFile,
    pub standardize: bool,
    pub intercept: bool,
}

fn resolve_data(args: &DataArgs, section: Option<&DataSection>) -> Result<DataConfig> {
    let empty = DataSection::default();
    let s = section.unwrap_or(&empty);
    let path = args
        .data
        .clone()
        .or_else(|| s.path.clone())
        .ok_or_else(|| Error::config("data: no input file (pass --data or set data.path)"))?;
    let mut file = TabularFile::new(path);
    if let Some(t) = args.target.clone().or_else(|| s.target.clone()) {
        file.target = t;
    }
    if let Some(d) = args.delimiter.or(s.delimiter) {
        file.delimiter = d;
    }
    file.drop_non_numeric = args.drop_non_numeric || s.drop_non_numeric.unwrap_or(false);
    Ok(DataConfig {
        file,
        standardize: if args.no_standardize { false } else { s.standardize.unwrap_or(true) },
        intercept: if args.no_intercept { false } else { s.intercept.unwrap_or(true) },
    })
}

/// The provenance file stores seeds as TOML integers, which are signed.
fn check_seed(seed: u64) -> Result<u64> {
    if seed > i64::MAX as u64 {
        Err(Error::config(format!("seed must be at most {}, got {seed}", i64::MAX)))
    } else {
        Ok(seed)
    }
}

fn resolve_seed(flag: Option<u64>, cfg: &ConfigFile) -> Result<u64> {
    check_seed(flag.or(cfg.seed).unwrap_or(DEFAULT_SEED))
}

fn resolve_out(flag: Option<&PathBuf>, cfg: &ConfigFile, default: &str) -> PathBuf {
    resolve_output(flag.or(cfg.out.as_ref()).map_or(Path::new(default), |p| p.as_path()))
}

/// `<dir>/<stem>.<suffix>.csv` next to `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "report".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.{suffix}.csv"))
}

enum Tuning {
    Auto,
    Value(f64),
}

fn parse_tuning(s: &str) -> Result<Tuning> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(Tuning::Auto);
    }
    s.parse::<f64>()
        .map(Tuning::Value)
        .map_err(|_| Error::config(format!("--tuning expects a number or `auto`, got `{s}`")))
}

#[derive(Debug, Clone, Serialize)]
pub struct FitRun {
    pub data: DataConfig,
    pub fit: FitConfig<f64>,
    pub auto_tune: bool,
    pub cv: Option<CvSpec>,
    pub holdout: Option<f64>,
    pub seed: u64,
    pub out: PathBuf,
}

fn resolve_fit_config(
    loss: Option<&str>,
    tuning: Option<&str>,
    scale: Option<ScaleArg>,
    cfg: &ConfigFile,
    default_scale: ScaleMode,
) -> Result<(FitConfig<f64>, bool)> {
    let mut fit = cfg
        .fit
        .clone()
        .unwrap_or_else(|| FitConfig::new(LossSpec::default_for(LossFamily::Welsch)).with_scale_mode(default_scale));
    if let Some(name) = loss {
        let family: LossFamily = name.parse()?;
        if family != fit.loss.family() {
            fit.loss = LossSpec::default_for(family);
        }
    }
    let mut auto = cfg.auto_tune.unwrap_or(false);
    match tuning.map(parse_tuning).transpose()? {
        Some(Tuning::Auto) => auto = true,
        Some(Tuning::Value(v)) => {
            auto = false;
            fit.loss = fit.loss.with_tuning(v)?;
        }
        None => {}
    }
    if let Some(s) = scale {
        fit.scale_mode = s.into();
    }
    if auto && fit.loss.tuning().is_none() {
        return Err(Error::config(format!("loss {} has no tuning constant for `auto`", fit.loss.family())));
    }
    fit.validate()?;
    Ok((fit, auto))
}

fn resolve_cv(folds: Option<usize>, grid: Option<&Vec<f64>>, cfg: &ConfigFile, seed: u64) -> Option<CvSpec> {
    let section = cfg.cv.as_ref();
    let grid = grid.cloned().or_else(|| section.and_then(|s| s.grid.clone()))?;
    let folds = folds.or_else(|| section.and_then(|s| s.folds)).unwrap_or(DEFAULT_FOLDS);
    Some(CvSpec::new(grid).with_folds(folds).with_seed(seed))
}

/// CV spec with the grid filled in from the family default when none was given.
fn complete_cv(
    spec: Option<CvSpec>,
    folds: usize,
    seed: u64,
    family: LossFamily,
    data: &Dataset<f64>,
) -> Result<CvSpec> {
    match spec {
        Some(s) => Ok(s),
        None => Ok(CvSpec::new(default_grid(family, data.n(), data.p())?).with_folds(folds).with_seed(seed)),
    }
}

fn cv_folds(flag: Option<usize>, cfg: &ConfigFile) -> usize {
    flag.or_else(|| cfg.cv.as_ref().and_then(|s| s.folds)).unwrap_or(DEFAULT_FOLDS)
}

pub fn run_fit(args: &FitArgs, cfg: &ConfigFile) -> Result<()> {
    let seed = resolve_seed(args.seed, cfg)?;
    let data_cfg = resolve_data(&args.data, cfg.data.as_ref())?;
    let (fit_cfg, auto) = resolve_fit_config(
        args.loss.loss.as_deref(),
        args.loss.tuning.as_deref(),
        args.loss.scale,
        cfg,
        ScaleMode::MadOfLadResiduals,
    )?;
    let holdout = args.holdout.or(cfg.holdout);
    if let Some(h) = holdout {
        if !(h > 0.0 && h < 1.0) {
            return Err(Error::config(format!("holdout must lie in (0, 1), got {h}")));
        }
    }
    let folds = cv_folds(args.folds, cfg);
    let cv = resolve_cv(args.folds, args.grid.as_ref(), cfg, seed);
    if let Some(spec) = &cv {
        spec.validate()?;
    }
    let mut run = FitRun {
        data: data_cfg,
        fit: fit_cfg,
        auto_tune: auto,
        cv,
        holdout,
        seed,
        out: resolve_out(args.out.as_ref(), cfg, "fit"),
    };

    let (data, transform) = load_csv(&run.data.file, run.data.standardize, run.data.intercept)?;
    let (train_idx, test_idx) = match run.holdout {
        Some(h) => {
            let (a, b) = holdout_split(data.n(), h, seed)?;
            (a, Some(b))
        }
        None => ((0..data.n()).collect(), None),
    };
    let train = data.select(&train_idx);
    let mut cv_outcome = None;
    if run.auto_tune {
        let spec = complete_cv(run.cv.take(), folds, seed, run.fit.loss.family(), &train)?;
        let outcome = median_cv(&train, &spec, &run.fit)?;
        println!("cross-validated {}: {}", tuning_name(&run.fit.loss), outcome.chosen);
        run.fit.loss = run.fit.loss.with_tuning(outcome.chosen)?;
        run.cv = Some(spec);
        cv_outcome = Some(outcome);
    }
    let fit = fit_two_stage(&train, &run.fit)?;
    print!("{}", describe_fit(&fit, &transform.column_names()));

    let prov = Provenance::new("fit", Some(seed), &run);
    let coef_path = sibling_prefix(&run.out, "coefficients");
    write_report(&coefficient_table(&fit, &transform), &coef_path, &prov)?;
    let res_path = sibling_prefix(&run.out, "residuals");
    write_report(&residual_table(&train, &fit.beta), &res_path, &prov)?;
    println!("wrote {} and {}", coef_path.display(), res_path.display());
    if let Some(test_idx) = test_idx {
        let test = data.select(&test_idx);
        let abs: Vec<f64> = test.residuals(&fit.beta).iter().map(|r| r.abs()).collect();
        println!("test median |residual|: {:.6}", median(&abs).unwrap_or(f64::NAN));
        let path = sibling_prefix(&run.out, "test_residuals");
        write_report(&residual_table(&test, &fit.beta), &path, &prov)?;
        println!("wrote {}", path.display());
    }
    if let Some(outcome) = cv_outcome {
        let path = sibling_prefix(&run.out, "cv");
        write_report(&cv_table(&outcome), &path, &prov)?;
    }
    Ok(())
}

/// `<prefix>.<what>.csv`
fn sibling_prefix(prefix: &Path, what: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(format!(".{what}.csv"));
    PathBuf::from(s)
}

fn tuning_name(loss: &LossSpec<f64>) -> &'static str {
    match loss {
        LossSpec::Welsch { .. } => "tau",
        LossSpec::Huber { .. } => "gamma",
        LossSpec::Tukey { .. } => "c",
        LossSpec::Hampel { .. } => "a",
        LossSpec::Pinball { .. } => "q",
        LossSpec::Absolute | LossSpec::Squared => "none",
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CvRun {
    pub data: DataConfig,
    pub fit: FitConfig<f64>,
    pub cv: Option<CvSpec>,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn run_cv(args: &CvArgs, cfg: &ConfigFile) -> Result<()> {
    let seed = resolve_seed(args.seed, cfg)?;
    let data_cfg = resolve_data(&args.data, cfg.data.as_ref())?;
    let (fit_cfg, _) = resolve_fit_config(args.loss.as_deref(), None, args.scale, cfg, ScaleMode::MadOfLadResiduals)?;
    if fit_cfg.loss.tuning().is_none() {
        return Err(Error::config(format!("loss {} has no tuning constant", fit_cfg.loss.family())));
    }
    let folds = cv_folds(args.folds, cfg);
    let cv = resolve_cv(args.folds, args.grid.as_ref(), cfg, seed);
    if let Some(spec) = &cv {
        spec.validate()?;
    }
    let mut run = CvRun { data: data_cfg, fit: fit_cfg, cv, seed, out: resolve_out(args.out.as_ref(), cfg, "cv.csv") };
    let (data, _) = load_csv(&run.data.file, run.data.standardize, run.data.intercept)?;
    let spec = complete_cv(run.cv.take(), folds, seed, run.fit.loss.family(), &data)?;
    let outcome = median_cv(&data, &spec, &run.fit)?;
    run.cv = Some(spec);
    print_cv(&outcome, &run.fit.loss);
    write_report(&cv_table(&outcome), &run.out, &Provenance::new("cv", Some(seed), &run))?;
    println!("wrote {}", run.out.display());
    Ok(())
}

fn print_cv(outcome: &CvOutcome, loss: &LossSpec<f64>) {
    println!("{:>14} {:>14}", tuning_name(loss), "median_cv");
    for r in &outcome.rows {
        let mark = if r.candidate == outcome.chosen { " *" } else { "" };
        match r.aggregate {
            Some(a) => println!("{:>14.6e} {:>14.6e}{mark}", r.candidate, a),
            None => println!("{:>14.6e} {:>14}", r.candidate, "failed"),
        }
    }
    println!("chosen: {}", outcome.chosen);
}

/// Experiment taken from, in order of precedence: `--spec`, `--preset`, the
/// config file's `[experiment]`, the config file's `preset`, the command default.
fn resolve_experiment(
    spec_file: Option<&Path>,
    preset_flag: Option<&str>,
    replicates: Option<usize>,
    seed_flag: Option<u64>,
    cfg: &ConfigFile,
    default_preset: &str,
) -> Result<(ExperimentSpec, String)> {
    let (mut spec, source) = if let Some(path) = spec_file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let spec: ExperimentSpec =
            toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        (spec, path.display().to_string())
    } else if let Some(name) = preset_flag {
        (preset(name, None)?, name.to_string())
    } else if let Some(spec) = &cfg.experiment {
        (spec.clone(), "config".to_string())
    } else {
        let name = cfg.preset.as_deref().unwrap_or(default_preset);
        (preset(name, None)?, name.to_string())
    };
    if let Some(seed) = seed_flag.or(cfg.seed) {
        spec.base_seed = seed;
    }
    check_seed(spec.base_seed)?;
    if let Some(r) = replicates.or(cfg.replicates) {
        spec.replicates = r;
    }
    spec.validate()?;
    Ok((spec, source))
}

#[derive(Debug, Serialize)]
struct ExperimentRun<'a> {
    source: &'a str,
    out: &'a Path,
    experiment: &'a ExperimentSpec,
}

fn write_experiment(command: &str, table: &Table, out: &Path, spec: &ExperimentSpec, source: &str) -> Result<()> {
    let run = ExperimentRun { source, out, experiment: spec };
    write_report(table, out, &Provenance::new(command, Some(spec.base_seed), &run))?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn run_simulate(args: &SimulateArgs, cfg: &ConfigFile) -> Result<()> {
    let (spec, source) = resolve_experiment(
        args.spec.as_deref(),
        args.preset.as_deref(),
        args.replicates,
        args.seed,
        cfg,
        "fig1a-desk",
    )?;
    let out = resolve_out(args.out.as_ref(), cfg, "simulate.csv");
    let report = run_replicates(&spec)?;
    print_aggregates(&report.aggregates);
    write_experiment("simulate", &aggregate_table(&report.aggregates), &out, &spec, &source)?;
    let rows = sibling(&out, "replicates");
    write_experiment("simulate", &replicate_table(&report.rows, spec.p), &rows, &spec, &source)
}

fn print_aggregates(aggs: &[crate::simulation::Aggregate]) {
    println!(
        "{:>6} {:>9} {:>12} {:>6} {:>12} {:>12} {:>12}",
        "n", "outliers", "estimator", "fails", "bias", "median_l2", "median_sq"
    );
    for a in aggs {
        println!(
            "{:>6} {:>9} {:>12} {:>6} {:>12.4e} {:>12.4e} {:>12.4e}",
            a.n, a.outliers, a.estimator, a.failures, a.bias, a.median_l2, a.median_sq
        );
    }
}

pub fn run_preset_command(command: &str, args: &PresetArgs, cfg: &ConfigFile) -> Result<()> {
    let (default_preset, default_out) = match command {
        "bias-curve" => ("fig1a-desk", "bias_curve.csv"),
        "mse" => ("fig5-desk", "mse.csv"),
        "trace" => ("fig4-desk", "trace.csv"),
        "rate" => ("rate-desk", "rate.csv"),
        "normality" => ("normality-desk", "normality.csv"),
        other => unreachable!("no preset command `{other}`"),
    };
    let (spec, source) =
        resolve_experiment(None, args.preset.as_deref(), args.replicates, args.seed, cfg, default_preset)?;
    let out = resolve_out(args.out.as_ref(), cfg, default_out);
    info!("running {command} with {source}, {} replicates", spec.replicates);
    match command {
        "bias-curve" => {
            let (points, report) = bias_curve(&spec)?;
            let table = bias_table(&points);
            print!("{}", table.to_csv_string());
            write_experiment(command, &table, &out, &spec, &source)?;
            write_experiment(
                command,
                &replicate_table(&report.rows, spec.p),
                &sibling(&out, "replicates"),
                &spec,
                &source,
            )
        }
        "mse" => {
            let (table, report) = mse_distribution(&spec)?;
            println!("{:>9} {:>12} {:>14} {:>14}", "outliers", "estimator", "median_mse", "q90_mse");
            for ((o, name), v) in &table {
                println!(
                    "{o:>9} {name:>12} {:>14.6e} {:>14.6e}",
                    median(v).unwrap_or(f64::NAN),
                    quantile(v, 0.9).unwrap_or(f64::NAN)
                );
            }
            write_experiment(command, &mse_table(&table), &out, &spec, &source)?;
            write_experiment(
                command,
                &aggregate_table(&report.aggregates),
                &sibling(&out, "aggregates"),
                &spec,
                &source,
            )
        }
        "trace" => {
            let report = convergence_trace_experiment(&spec)?;
            for (name, trace) in &report.mean_trace {
                let last = trace.last().copied().unwrap_or(f64::NAN);
                println!(
                    "{name:>12}: mean error {:.6} at iteration 0, {last:.6} at iteration {}",
                    trace[0],
                    trace.len() - 1
                );
            }
            write_experiment(command, &trace_table(&report), &out, &spec, &source)?;
            write_experiment(command, &mean_trace_table(&report), &sibling(&out, "mean"), &spec, &source)
        }
        "rate" => {
            let (points, report) = rate_experiment(&spec)?;
            let table = rate_table(&points);
            print!("{}", table.to_csv_string());
            write_experiment(command, &table, &out, &spec, &source)?;
            write_experiment(
                command,
                &replicate_table(&report.rows, spec.p),
                &sibling(&out, "replicates"),
                &spec,
                &source,
            )
        }
        "normality" => {
            let report = normality_from_spec(&spec)?;
            println!("mean: {:?}", report.mean);
            for row in &report.covariance {
                println!("cov:  {row:?}");
            }
            println!("ks:   {:?}", report.ks);
            if report.failures > 0 {
                warn!("{} replicates failed and were excluded", report.failures);
            }
            write_experiment(command, &normality_table(&report), &out, &spec, &source)
        }
        _ => unreachable!(),
    }
}

/// Summary printed by `diagnose`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnosis {
    pub n: usize,
    pub p: usize,
    pub tau: f64,
    pub scale: f64,
    pub status: String,
    pub basin_fraction: f64,
    pub hessian_min_eigenvalue: f64,
    /// Exact |O′| for simulated data, #{τ(r̂/σ̂)² > 1/2} otherwise.
    pub o_prime: usize,
    pub o_prime_exact: bool,
    pub d_min: Option<f64>,
}

impl Diagnosis {
    fn print(&self) {
        println!("n: {}  p: {}", self.n, self.p);
        println!("tau: {}  scale: {}", self.tau, self.scale);
        println!("fit status: {}", self.status);
        println!("basin_fraction: {:.6}", self.basin_fraction);
        println!("hessian_min_eigenvalue: {:.6e}", self.hessian_min_eigenvalue);
        let kind = if self.o_prime_exact { "exact" } else { "residual estimate" };
        println!("o_prime: {} ({kind})", self.o_prime);
        match self.d_min {
            Some(d) => println!(
                "d_min: {d:.6}  basin_fraction >= d_min: {}",
                if self.basin_fraction >= d { "yes" } else { "no" }
            ),
            None => println!("d_min: undefined for o' = {}", self.o_prime),
        }
    }
}

/// Basin fraction and Hessian on the residual scale the fit used.
fn diagnose_fit(data: &Dataset<f64>, fit: &FitResult<f64>, tau: f64) -> Result<(f64, f64, usize)> {
    let sigma = fit.scale;
    let scaled = data.with_response(data.y().iter().map(|y| y / sigma).collect())?;
    let beta: Vec<f64> = fit.beta.iter().map(|b| b / sigma).collect();
    let basin = basin_indicator_fraction(&scaled, &beta, tau)?;
    let lambda = hessian_min_eigenvalue(&scaled, &beta, tau)?;
    let outside = scaled.residuals(&beta).iter().filter(|r| tau * *r * *r > 0.5).count();
    Ok((basin, lambda, outside))
}

pub fn run_diagnose(args: &DiagnoseArgs, cfg: &ConfigFile) -> Result<Diagnosis> {
    let seed = resolve_seed(args.seed, cfg)?;
    let section = cfg.diagnose.as_ref();
    let c = args.c.or_else(|| section.and_then(|s| s.c)).unwrap_or(1.0);
    let tau_arg = args.tau.as_deref().map(parse_tuning).transpose()?;
    let use_csv = args.data.data.is_some() || cfg.data.as_ref().is_some_and(|d| d.path.is_some());
    let diagnosis = if use_csv {
        let data_cfg = resolve_data(&args.data, cfg.data.as_ref())?;
        let (data, _) = load_csv(&data_cfg.file, data_cfg.standardize, data_cfg.intercept)?;
        let mut fit_cfg = FitConfig::new(LossSpec::welsch(1.0)?)
            .with_scale_mode(args.scale.map_or(ScaleMode::MadOfLadResiduals, Into::into));
        let tau = match tau_arg {
            Some(Tuning::Value(t)) => t,
            _ => {
                let spec = CvSpec::new(default_grid(LossFamily::Welsch, data.n(), data.p())?).with_seed(seed);
                median_cv(&data, &spec, &fit_cfg)?.chosen
            }
        };
        fit_cfg.loss = LossSpec::welsch(tau)?;
        let fit = fit_two_stage(&data, &fit_cfg)?;
        let (basin, lambda, o_prime) = diagnose_fit(&data, &fit, tau)?;
        Diagnosis {
            n: data.n(),
            p: data.p(),
            tau,
            scale: fit.scale,
            status: fit.status.label(),
            basin_fraction: basin,
            hessian_min_eigenvalue: lambda,
            o_prime,
            o_prime_exact: false,
            d_min: d_condition(data.n(), data.p(), o_prime, c).ok(),
        }
    } else {
        let n = args.n.or_else(|| section.and_then(|s| s.n)).unwrap_or(1000);
        let p = args.p.or_else(|| section.and_then(|s| s.p)).unwrap_or(5);
        let proportion = args.proportion.or_else(|| section.and_then(|s| s.proportion)).unwrap_or(0.0);
        let magnitude = args.magnitude.or_else(|| section.and_then(|s| s.magnitude)).unwrap_or(100.0);
        if n <= p {
            return Err(Error::config(format!("diagnose: n = {n} must exceed p = {p}")));
        }
        let contamination = ContaminationSpec::proportion(proportion, magnitude, Strategy::SignAligned);
        contamination.validate(n, p)?;
        let o = contamination.outlier_count(n);
        let tau = match tau_arg {
            Some(Tuning::Value(t)) => t,
            _ => theoretical_tau(n, o, 0.05, 2.0, 1.0, TauMode::Prop2)?,
        };
        let beta_star = crate::simulation::default_beta_star(p);
        let (data, truth) = generate_dataset(
            n,
            &beta_star,
            DesignSpec::GaussianIsotropic,
            &NoiseSpec::default(),
            &contamination,
            seed,
        )?;
        let mut fit_cfg = FitConfig::new(LossSpec::welsch(tau)?);
        if let Some(s) = args.scale {
            fit_cfg.scale_mode = s.into();
        }
        let fit = fit_two_stage(&data, &fit_cfg)?;
        let (basin, lambda, _) = diagnose_fit(&data, &fit, tau)?;
        let o_prime = augmented_outlier_count(&data, &truth, tau)?;
        Diagnosis {
            n,
            p,
            tau,
            scale: fit.scale,
            status: fit.status.label(),
            basin_fraction: basin,
            hessian_min_eigenvalue: lambda,
            o_prime,
            o_prime_exact: true,
            d_min: d_condition(n, p, o_prime, c).ok(),
        }
    };
    diagnosis.print();
    Ok(diagnosis)
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
pub fn cli_main<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Fit(a) => run_fit(a, &cfg),
        Command::Simulate(a) => run_simulate(a, &cfg),
        Command::BiasCurve(a) => run_preset_command("bias-curve", a, &cfg),
        Command::Mse(a) => run_preset_command("mse", a, &cfg),
        Command::Trace(a) => run_preset_command("trace", a, &cfg),
        Command::Rate(a) => run_preset_command("rate", a, &cfg),
        Command::Normality(a) => run_preset_command("normality", a, &cfg),
        Command::Cv(a) => run_cv(a, &cfg),
        Command::Diagnose(a) => run_diagnose(a, &cfg).map(|_| ()),
    }
}

/// Names accepted by `--preset`.
pub fn preset_names() -> &'static [&'static str] {
    &PRESETS
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sibling_names() {
        assert_eq!(sibling(Path::new("out/bias.csv"), "replicates"), PathBuf::from("out/bias.replicates.csv"));
        assert_eq!(sibling_prefix(Path::new("out/fit"), "residuals"), PathBuf::from("out/fit.residuals.csv"));
    }

    #[test]
    fn tuning_parse() {
        assert!(matches!(parse_tuning("AUTO"), Ok(Tuning::Auto)));
        assert!(matches!(parse_tuning("0.5"), Ok(Tuning::Value(v)) if v == 0.5));
        assert!(matches!(parse_tuning("x"), Err(Error::Config(_))));
    }

    #[test]
    fn oversized_seed_is_config_error() {
        assert!(matches!(check_seed(u64::MAX), Err(Error::Config(_))));
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(cli_main(["welsch", "frobnicate"]), EXIT_CONFIG);
        assert_eq!(cli_main(["welsch", "fit", "--bogus"]), EXIT_CONFIG);
        assert_eq!(cli_main(["welsch", "fit"]), EXIT_CONFIG);
    }
}
