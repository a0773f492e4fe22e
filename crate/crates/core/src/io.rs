//! CSV ingestion, report tables and provenance files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimators::FitResult;
use crate::linalg::Matrix;
use crate::model_selection::CvOutcome;
use crate::simulation::{Aggregate, BiasPoint, MseTable, NormalityReport, RatePoint, ReplicateRow, TraceReport};

/// Environment variable naming the default directory for relative output paths.
pub const OUT_DIR_ENV: &str = "WELSCH_OUT_DIR";

/// A delimited text file with a header row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularFile {
    pub path: PathBuf,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default = "default_target")]
    pub target: String,
    /// Drop columns whose first cell is not a number instead of rejecting the file.
    #[serde(default)]
    pub drop_non_numeric: bool,
}

fn default_delimiter() -> char {
    ','
}

fn default_target() -> String {
    "y".into()
}

impl TabularFile {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into(), delimiter: default_delimiter(), target: default_target(), drop_non_numeric: false }
    }

    pub fn with_target(mut self, target: impl Into<String>) -> Self {
        self.target = target.into();
        self
    }

    pub fn dropping_non_numeric(mut self, drop: bool) -> Self {
        self.drop_non_numeric = drop;
        self
    }
}

/// How the design columns were derived from the file, for mapping coefficients
/// back to original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    /// Feature column names in design order (intercept excluded).
    pub features: Vec<String>,
    pub dropped: Vec<String>,
    pub target: String,
    pub standardized: bool,
    pub intercept: bool,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Features left unscaled because their sample sd is zero.
    pub constant: Vec<String>,
}

impl TransformRecord {
    /// Design column names including the intercept.
    pub fn column_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.features.len() + 1);
        if self.intercept {
            out.push("(intercept)".to_string());
        }
        out.extend(self.features.iter().cloned());
        out
    }

    /// Coefficients on the raw feature scale: (intercept, slopes).
    ///
    /// Standardizing shifts the intercept by −Σ b_j m_j / s_j, which appears as
    /// a nonzero intercept even when the design had none.
    pub fn to_original(&self, beta: &[f64]) -> (f64, Vec<f64>) {
        let (mut b0, slopes) = if self.intercept { (beta[0], &beta[1..]) } else { (0.0, beta) };
        if !self.standardized {
            return (b0, slopes.to_vec());
        }
        let raw: Vec<f64> = slopes
            .iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(&b, (&m, &s))| {
                b0 -= b * m / s;
                b / s
            })
            .collect();
        (b0, raw)
    }
}

fn parse_cell(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads `file` into a dataset.
///
/// Every non-target column whose first cell is numeric becomes a feature;
/// other columns are rejected unless `drop_non_numeric` is set. Features are
/// optionally standardized to mean 0 and sd 1 (sample sd, denominator n − 1),
/// and an intercept column of ones is optionally prepended.
pub fn load_csv(file: &TabularFile, standardize: bool, add_intercept: bool) -> Result<(Dataset<f64>, TransformRecord)> {
    let data_err = |message: String| Error::Data { path: file.path.clone(), message };
    if !file.delimiter.is_ascii() {
        return Err(Error::config(format!("delimiter `{}` is not an ASCII character", file.delimiter)));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(file.delimiter as u8)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(&file.path)
        .map_err(|e| csv_error(&file.path, e))?;
    let header: Vec<String> =
        reader.headers().map_err(|e| csv_error(&file.path, e))?.iter().map(str::to_string).collect();
    let records: Vec<csv::StringRecord> =
        reader.records().collect::<std::result::Result<_, _>>().map_err(|e| csv_error(&file.path, e))?;
    if records.is_empty() {
        return Err(data_err("file has no data rows".into()));
    }
    let target = header
        .iter()
        .position(|h| *h == file.target)
        .ok_or_else(|| data_err(format!("target column `{}` not found in header", file.target)))?;

    let mut features = Vec::new();
    let mut dropped = Vec::new();
    for (j, name) in header.iter().enumerate() {
        if j == target {
            continue;
        }
        if parse_cell(records[0].get(j).unwrap_or("")).is_some() {
            features.push(j);
        } else if file.drop_non_numeric {
            dropped.push(name.clone());
        } else {
            return Err(data_err(format!("column `{name}` is not numeric; pass --drop-non-numeric to drop it")));
        }
    }
    if features.is_empty() {
        return Err(data_err("no numeric feature columns".into()));
    }

    let n = records.len();
    let mut y = Vec::with_capacity(n);
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n); features.len()];
    for (i, rec) in records.iter().enumerate() {
        // Header is line 1, so data row i sits on line i + 2.
        let cell = |j: usize| {
            let raw = rec.get(j).unwrap_or("");
            parse_cell(raw).ok_or_else(|| {
                data_err(format!("row {}, column `{}`: cannot parse `{raw}` as a finite number", i + 2, header[j]))
            })
        };
        y.push(cell(target)?);
        for (col, &j) in cols.iter_mut().zip(&features) {
            col.push(cell(j)?);
        }
    }

    let mut means = vec![0.0; cols.len()];
    let mut sds = vec![1.0; cols.len()];
    let mut constant = Vec::new();
    for (k, col) in cols.iter_mut().enumerate() {
        let m = col.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        if var == 0.0 {
            constant.push(header[features[k]].clone());
            continue;
        }
        if standardize {
            let s = var.sqrt();
            means[k] = m;
            sds[k] = s;
            col.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
    }

    let p = cols.len() + usize::from(add_intercept);
    let mut x = Matrix::zeros(n, p);
    for i in 0..n {
        let row = x.row_mut(i);
        let offset = usize::from(add_intercept);
        if add_intercept {
            row[0] = 1.0;
        }
        for (k, col) in cols.iter().enumerate() {
            row[offset + k] = col[i];
        }
    }
    let record = TransformRecord {
        features: features.iter().map(|&j| header[j].clone()).collect(),
        dropped,
        target: file.target.clone(),
        standardized: standardize,
        intercept: add_intercept,
        means,
        sds,
        constant,
    };
    Ok((Dataset::new(x, y)?, record))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let message = match e.position() {
        Some(pos) => format!("line {}: {e}", pos.line()),
        None => e.to_string(),
    };
    Error::Data { path: path.to_path_buf(), message }
}

/// A report cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(u64),
    Text(String),
    Missing,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            // 17 significant digits round-trip every f64 exactly.
            Cell::Float(v) if v.is_finite() => format!("{v:.16e}"),
            Cell::Float(v) => v.to_string(),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Missing => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Missing, Cell::Float)
    }
}

/// Column-ordered table written as CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }
}

/// What produced a report: recorded next to it as `<file>.provenance.toml`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance<C: Serialize> {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Seed actually used, including when it was defaulted.
    pub seed: Option<u64>,
    pub config: C,
}

impl<C: Serialize> Provenance<C> {
    pub fn new(command: &str, seed: Option<u64>, config: C) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config,
        }
    }
}

pub fn provenance_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".provenance.toml");
    PathBuf::from(s)
}

/// Relative paths are placed under `$WELSCH_OUT_DIR` when it is set.
pub fn resolve_output(path: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if path.is_relative() && !dir.is_empty() => PathBuf::from(dir).join(path),
        _ => path.to_path_buf(),
    }
}

/// Writes `table` to `path` and its provenance next to it.
pub fn write_report<C: Serialize>(table: &Table, path: &Path, provenance: &Provenance<C>) -> Result<()> {
    write_text(path, &table.to_csv_string())?;
    let prov = toml::to_string(provenance).map_err(|e| Error::Numerical(format!("serializing provenance: {e}")))?;
    write_text(&provenance_path(path), &prov)
}

pub fn write_text(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Reads a report back as (header, rows of raw strings).
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.iter().map(str::to_string).collect();
    let rows = reader
        .records()
        .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| csv_error(path, e))?;
    Ok((header, rows))
}

pub fn replicate_table(rows: &[ReplicateRow], p: usize) -> Table {
    let mut header: Vec<String> =
        ["n", "proportion", "outliers", "replicate", "estimator", "tau", "l2_error", "sq_error"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    header.extend((1..=p).map(|j| format!("dev_{j}")));
    header
        .extend(["stage1_iters", "stage2_iters", "basin_init", "basin_final", "status"].iter().map(|s| s.to_string()));
    let mut t = Table::new(header);
    for r in rows {
        let mut row: Vec<Cell> = vec![
            r.n.into(),
            r.proportion.into(),
            r.outliers.into(),
            r.replicate.into(),
            r.estimator.as_str().into(),
            r.tau.into(),
            r.l2_error.into(),
            r.sq_error.into(),
        ];
        row.extend(r.deviation.iter().map(|&d| Cell::Float(d)));
        row.extend([
            r.stage1_iters.into(),
            r.stage2_iters.into(),
            r.basin_init.into(),
            r.basin_final.into(),
            r.status.as_str().into(),
        ]);
        t.push(row);
    }
    t
}

pub fn aggregate_table(aggs: &[Aggregate]) -> Table {
    let mut t = Table::new([
        "n",
        "proportion",
        "outliers",
        "estimator",
        "successes",
        "failures",
        "bias",
        "mean_l2",
        "median_l2",
        "median_sq",
        "q10_l2",
        "q90_l2",
    ]);
    for a in aggs {
        t.push(vec![
            a.n.into(),
            a.proportion.into(),
            a.outliers.into(),
            a.estimator.as_str().into(),
            a.successes.into(),
            a.failures.into(),
            a.bias.into(),
            a.mean_l2.into(),
            a.median_l2.into(),
            a.median_sq.into(),
            a.q10_l2.into(),
            a.q90_l2.into(),
        ]);
    }
    t
}

/// Wide bias table: one row per proportion, one `bias_<estimator>` column per estimator.
pub fn bias_table(points: &[BiasPoint]) -> Table {
    let mut names: Vec<&str> = Vec::new();
    for p in points {
        if !names.contains(&p.estimator.as_str()) {
            names.push(&p.estimator);
        }
    }
    let mut header = vec!["proportion".to_string(), "outliers".to_string()];
    header.extend(names.iter().map(|n| format!("bias_{n}")));
    let mut t = Table::new(header);
    let mut i = 0;
    while i < points.len() {
        let level = points[i].proportion;
        let block: Vec<&BiasPoint> = points[i..].iter().take_while(|p| p.proportion == level).collect();
        i += block.len();
        let mut row = vec![Cell::Float(level), block[0].outliers.into()];
        row.extend(
            names
                .iter()
                .map(|n| block.iter().find(|p| p.estimator == *n).map_or(Cell::Missing, |p| Cell::Float(p.bias))),
        );
        t.push(row);
    }
    t
}

pub fn mse_table(table: &MseTable) -> Table {
    let mut t = Table::new(["outliers", "estimator", "index", "sq_error"]);
    for ((o, name), values) in table {
        for (k, &v) in values.iter().enumerate() {
            t.push(vec![(*o).into(), name.as_str().into(), k.into(), v.into()]);
        }
    }
    t
}

pub fn rate_table(points: &[RatePoint]) -> Table {
    let mut t = Table::new(["n", "outliers", "estimator", "median_error"]);
    for p in points {
        t.push(vec![p.n.into(), p.outliers.into(), p.estimator.as_str().into(), p.median_error.into()]);
    }
    t
}

pub fn trace_table(report: &TraceReport) -> Table {
    let mut t = Table::new(["replicate", "estimator", "iteration", "error"]);
    for p in &report.points {
        t.push(vec![p.replicate.into(), p.estimator.as_str().into(), p.iteration.into(), p.error.into()]);
    }
    t
}

pub fn mean_trace_table(report: &TraceReport) -> Table {
    let mut t = Table::new(["estimator", "iteration", "mean_error"]);
    for (name, trace) in &report.mean_trace {
        for (k, &v) in trace.iter().enumerate() {
            t.push(vec![name.as_str().into(), k.into(), v.into()]);
        }
    }
    t
}

/// One row per successful replicate with √n(β̂ − β*) per coordinate.
pub fn normality_table(report: &NormalityReport) -> Table {
    let p = report.mean.len();
    let mut header = vec!["index".to_string()];
    header.extend((1..=p).map(|j| format!("z_{j}")));
    let mut t = Table::new(header);
    for (k, z) in report.scaled.iter().enumerate() {
        let mut row = vec![Cell::from(k)];
        row.extend(z.iter().map(|&v| Cell::Float(v)));
        t.push(row);
    }
    t
}

pub fn cv_table(outcome: &CvOutcome) -> Table {
    let k = outcome.rows.first().map_or(0, |r| r.fold_scores.len());
    let mut header = vec!["candidate".to_string()];
    header.extend((1..=k).map(|f| format!("fold_{f}")));
    header.extend(["aggregate".to_string(), "chosen".to_string()]);
    let mut t = Table::new(header);
    for r in &outcome.rows {
        let mut row = vec![Cell::Float(r.candidate)];
        row.extend(r.fold_scores.iter().map(|&s| Cell::from(s)));
        row.push(r.aggregate.into());
        row.push(Cell::Int(u64::from(r.candidate == outcome.chosen)));
        t.push(row);
    }
    t
}

/// Coefficients in standardized (design) and original units.
pub fn coefficient_table(fit: &FitResult<f64>, transform: &TransformRecord) -> Table {
    let mut t = Table::new(["term", "design_coef", "original_coef"]);
    let (b0, raw) = transform.to_original(&fit.beta);
    let names = transform.column_names();
    let offset = usize::from(transform.intercept);
    if !transform.intercept {
        t.push(vec!["(intercept)".into(), Cell::Missing, b0.into()]);
    }
    for (k, name) in names.iter().enumerate() {
        let original = if transform.intercept && k == 0 { b0 } else { raw[k - offset] };
        t.push(vec![name.as_str().into(), fit.beta[k].into(), original.into()]);
    }
    t
}

pub fn residual_table(data: &Dataset<f64>, beta: &[f64]) -> Table {
    let mut t = Table::new(["row", "observed", "fitted", "residual"]);
    let fitted = data.predict(beta);
    for (i, (&y, f)) in data.y().iter().zip(fitted).enumerate() {
        t.push(vec![i.into(), y.into(), f.into(), (y - f).into()]);
    }
    t
}

/// Human-readable summary of a fit for the terminal.
pub fn describe_fit(fit: &FitResult<f64>, names: &[String]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "status: {}", fit.status.label());
    let _ = writeln!(s, "stage1_iters: {}  stage2_iters: {}", fit.stage1_iters, fit.stage2_iters);
    let _ = writeln!(s, "scale: {:.6}  objective: {:.10e}", fit.scale, fit.objective);
    if let Some(b) = fit.basin_fraction {
        let _ = writeln!(s, "basin_fraction: {b:.4}");
    }
    for (name, b) in names.iter().zip(&fit.beta) {
        let _ = writeln!(s, "  {name:>16} {b:+.8e}");
    }
    s
}
