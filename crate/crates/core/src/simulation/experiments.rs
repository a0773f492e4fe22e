use std::collections::BTreeMap;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::generate::{
    default_beta_star, generate_dataset, mix_seed, ContaminationSpec, DesignSpec, NoiseSpec, Strategy,
};
use crate::dataset::Dataset;
use crate::diagnostics::{theoretical_tau, TauMode};
use crate::error::{Error, Result};
use crate::estimators::{fit_two_stage, FitConfig, FitResult};
use crate::linalg::{median, norm2, quantile, sub};
use crate::loss::LossSpec;
use crate::optimizer::{Method, OptimizerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    BiasCurve,
    MseDistribution,
    ConvergenceTrace,
    RateCurve,
    Normality,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::BiasCurve => "bias_curve",
            Self::MseDistribution => "mse_distribution",
            Self::ConvergenceTrace => "convergence_trace",
            Self::RateCurve => "rate_curve",
            Self::Normality => "normality",
        }
    }
}

/// Welsch τ computed per sweep point from (n, o).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauRule {
    pub mode: TauMode,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_ell")]
    pub ell: f64,
    #[serde(default = "default_constant")]
    pub c: f64,
}

fn default_delta() -> f64 {
    0.05
}

fn default_ell() -> f64 {
    2.0
}

fn default_constant() -> f64 {
    1.0
}

impl TauRule {
    pub fn new(mode: TauMode) -> Self {
        Self { mode, delta: default_delta(), ell: default_ell(), c: default_constant() }
    }

    pub fn resolve(&self, n: usize, o: usize) -> Result<f64> {
        theoretical_tau(n, o, self.delta, self.ell, self.c, self.mode)
    }
}

/// One estimator column of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    pub name: String,
    pub fit: FitConfig<f64>,
    /// Overrides the Welsch τ inside `fit` at every sweep point.
    #[serde(default)]
    pub tau_rule: Option<TauRule>,
}

impl EstimatorSpec {
    pub fn new(name: impl Into<String>, loss: LossSpec<f64>) -> Self {
        Self { name: name.into(), fit: FitConfig::new(loss), tau_rule: None }
    }

    pub fn welsch_rule(name: impl Into<String>, rule: TauRule) -> Self {
        Self { tau_rule: Some(rule), ..Self::new(name, LossSpec::Welsch { tau: 1.0 }) }
    }

    pub fn with_optimizer(mut self, opt: OptimizerConfig<f64>) -> Self {
        self.fit.optimizer = opt;
        self
    }

    /// Fit configuration at sample size n with o outliers.
    pub fn resolve(&self, n: usize, o: usize) -> Result<FitConfig<f64>> {
        let mut cfg = self.fit.clone();
        if let Some(rule) = &self.tau_rule {
            if !matches!(cfg.loss, LossSpec::Welsch { .. }) {
                return Err(Error::config(format!(
                    "estimator `{}`: tau_rule only applies to the welsch loss",
                    self.name
                )));
            }
            cfg.loss = LossSpec::Welsch { tau: rule.resolve(n, o)? };
        }
        Ok(cfg)
    }
}

/// Contamination levels swept by an experiment, given as proportions or as counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContaminationPlan {
    #[serde(default)]
    pub proportions: Vec<f64>,
    #[serde(default)]
    pub counts: Vec<usize>,
    #[serde(default = "default_magnitude")]
    pub magnitude: f64,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub direction: Option<Vec<f64>>,
}

fn default_magnitude() -> f64 {
    100.0
}

impl Default for ContaminationPlan {
    fn default() -> Self {
        Self::proportions(vec![0.0], default_magnitude(), Strategy::default())
    }
}

impl ContaminationPlan {
    pub fn proportions(proportions: Vec<f64>, magnitude: f64, strategy: Strategy) -> Self {
        Self { proportions, counts: Vec::new(), magnitude, strategy, direction: None }
    }

    pub fn counts(counts: Vec<usize>, magnitude: f64, strategy: Strategy) -> Self {
        Self { counts, ..Self::proportions(Vec::new(), magnitude, strategy) }
    }

    fn levels(&self) -> Vec<ContaminationSpec> {
        let base = ContaminationSpec {
            proportion: 0.0,
            count: None,
            magnitude: self.magnitude,
            strategy: self.strategy,
            direction: self.direction.clone(),
        };
        if self.counts.is_empty() {
            self.proportions.iter().map(|&proportion| ContaminationSpec { proportion, ..base.clone() }).collect()
        } else {
            self.counts.iter().map(|&o| ContaminationSpec { count: Some(o), ..base.clone() }).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub n: Vec<usize>,
    pub p: usize,
    /// Defaults to (1, …, 1)/√p.
    #[serde(default)]
    pub beta_star: Option<Vec<f64>>,
    #[serde(default)]
    pub design: DesignSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub contamination: ContaminationPlan,
    pub estimators: Vec<EstimatorSpec>,
    pub replicates: usize,
    #[serde(default = "default_seed")]
    pub base_seed: u64,
}

pub const DEFAULT_SEED: u64 = 20_240_601;

fn default_seed() -> u64 {
    DEFAULT_SEED
}

impl ExperimentSpec {
    pub fn beta_star(&self) -> Vec<f64> {
        self.beta_star.clone().unwrap_or_else(|| default_beta_star(self.p))
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::config("p must be at least 1"));
        }
        if self.n.is_empty() {
            return Err(Error::config("n must list at least one sample size"));
        }
        if let Some(&n) = self.n.iter().find(|&&n| n <= self.p) {
            return Err(Error::config(format!("n = {n} must exceed p = {}", self.p)));
        }
        if self.replicates == 0 {
            return Err(Error::config("replicates must be at least 1"));
        }
        if let Some(b) = &self.beta_star {
            if b.len() != self.p {
                return Err(Error::config(format!("beta_star has length {}, expected p = {}", b.len(), self.p)));
            }
        }
        self.noise.validate()?;
        let plan = &self.contamination;
        if plan.proportions.is_empty() == plan.counts.is_empty() {
            return Err(Error::config("contamination needs exactly one of `proportions` or `counts`"));
        }
        for &n in &self.n {
            for level in plan.levels() {
                level.validate(n, self.p)?;
            }
        }
        if self.estimators.is_empty() {
            return Err(Error::config("estimators must not be empty"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for est in &self.estimators {
            if !seen.insert(est.name.as_str()) {
                return Err(Error::config(format!("duplicate estimator name `{}`", est.name)));
            }
            est.fit.validate().map_err(|e| Error::config(format!("estimators.{}: {e}", est.name)))?;
            for &n in &self.n {
                for level in plan.levels() {
                    est.resolve(n, level.outlier_count(n))?;
                }
            }
        }
        Ok(())
    }

    /// Sweep points in report order: n outer, contamination level inner.
    fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for &n in &self.n {
            for level in self.contamination.levels() {
                let o = level.outlier_count(n);
                let proportion = if level.count.is_some() { o as f64 / n as f64 } else { level.proportion };
                out.push(SweepPoint { n, proportion, outliers: o, contamination: level });
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
struct SweepPoint {
    n: usize,
    proportion: f64,
    outliers: usize,
    contamination: ContaminationSpec,
}

/// One (sweep point, replicate, estimator) fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub n: usize,
    pub proportion: f64,
    pub outliers: usize,
    pub replicate: usize,
    pub estimator: String,
    /// τ actually used (Welsch only).
    pub tau: Option<f64>,
    pub l2_error: f64,
    pub sq_error: f64,
    /// β̂ − β*
    pub deviation: Vec<f64>,
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub basin_init: Option<f64>,
    pub basin_final: Option<f64>,
    pub status: String,
}

impl ReplicateRow {
    pub fn succeeded(&self) -> bool {
        !self.status.starts_with("error")
    }
}

/// Summary of one (sweep point, estimator) cell over its replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub proportion: f64,
    pub outliers: usize,
    pub estimator: String,
    pub successes: usize,
    pub failures: usize,
    /// ‖mean over replicates of (β̂ − β*)‖
    pub bias: f64,
    pub mean_l2: f64,
    pub median_l2: f64,
    pub median_sq: f64,
    pub q10_l2: f64,
    pub q90_l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub rows: Vec<ReplicateRow>,
    pub aggregates: Vec<Aggregate>,
}

impl ExperimentReport {
    pub fn aggregate(&self, n: usize, outliers: usize, estimator: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.n == n && a.outliers == outliers && a.estimator == estimator)
    }
}

fn row_from_fit(
    point: &SweepPoint,
    replicate: usize,
    name: &str,
    tau: Option<f64>,
    beta_star: &[f64],
    fit: Result<FitResult<f64>>,
) -> ReplicateRow {
    let base = ReplicateRow {
        n: point.n,
        proportion: point.proportion,
        outliers: point.outliers,
        replicate,
        estimator: name.to_string(),
        tau,
        l2_error: f64::NAN,
        sq_error: f64::NAN,
        deviation: vec![f64::NAN; beta_star.len()],
        stage1_iters: 0,
        stage2_iters: 0,
        basin_init: None,
        basin_final: None,
        status: String::new(),
    };
    match fit {
        Ok(fit) => {
            let deviation = sub(&fit.beta, beta_star);
            let l2 = norm2(&deviation);
            ReplicateRow {
                l2_error: l2,
                sq_error: l2 * l2,
                deviation,
                stage1_iters: fit.stage1_iters,
                stage2_iters: fit.stage2_iters,
                basin_init: fit.basin_fraction_init,
                basin_final: fit.basin_fraction,
                status: fit.status.label(),
                ..base
            }
        }
        Err(e) => ReplicateRow { status: format!("error: {e}"), ..base },
    }
}

fn fit_all(
    spec: &ExperimentSpec,
    point: &SweepPoint,
    replicate: usize,
    data: &Dataset<f64>,
    beta_star: &[f64],
) -> Vec<(ReplicateRow, Option<FitResult<f64>>)> {
    spec.estimators
        .iter()
        .map(|est| {
            let cfg = est.resolve(point.n, point.outliers);
            let (tau, fit) = match cfg {
                Ok(cfg) => {
                    let tau = match cfg.loss {
                        LossSpec::Welsch { tau } => Some(tau),
                        _ => None,
                    };
                    (tau, fit_two_stage(data, &cfg))
                }
                Err(e) => (None, Err(e)),
            };
            let kept = fit.as_ref().ok().cloned();
            (row_from_fit(point, replicate, &est.name, tau, beta_star, fit), kept)
        })
        .collect()
}

/// Runs every estimator on every replicate of every sweep point.
///
/// Replicate r uses seed mix_seed(base_seed, r) at every sweep point, so
/// points are compared on common random numbers. Failed fits are kept as rows
/// with an `error: …` status.
pub fn run_replicates(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let beta_star = spec.beta_star();
    let points = spec.points();
    let tasks: Vec<(usize, usize)> =
        (0..points.len()).flat_map(|pi| (0..spec.replicates).map(move |r| (pi, r))).collect();
    let rows: Vec<Vec<ReplicateRow>> = tasks
        .par_iter()
        .map(|&(pi, r)| {
            let point = &points[pi];
            let seed = mix_seed(spec.base_seed, r as u64);
            match generate_dataset(point.n, &beta_star, spec.design, &spec.noise, &point.contamination, seed) {
                Ok((data, _)) => fit_all(spec, point, r, &data, &beta_star).into_iter().map(|(row, _)| row).collect(),
                Err(e) => {
                    let msg = e.to_string();
                    spec.estimators
                        .iter()
                        .map(|est| {
                            let err = Err(Error::Numerical(format!("data generation: {msg}")));
                            row_from_fit(point, r, &est.name, None, &beta_star, err)
                        })
                        .collect()
                }
            }
        })
        .collect();
    // par_iter().collect() keeps task order, which is already (point, replicate, estimator).
    let rows: Vec<ReplicateRow> = rows.into_iter().flatten().collect();
    debug!("experiment {} produced {} rows", spec.kind.as_str(), rows.len());
    let aggregates = aggregate_rows(spec, &rows);
    Ok(ExperimentReport { spec: spec.clone(), rows, aggregates })
}

/// Per-cell summaries in (n, level, estimator) order.
pub fn aggregate_rows(spec: &ExperimentSpec, rows: &[ReplicateRow]) -> Vec<Aggregate> {
    let p = spec.p;
    let mut out = Vec::new();
    for point in spec.points() {
        for est in &spec.estimators {
            let cell: Vec<&ReplicateRow> = rows
                .iter()
                .filter(|r| r.n == point.n && r.outliers == point.outliers && r.estimator == est.name)
                .collect();
            let ok: Vec<&ReplicateRow> = cell.iter().copied().filter(|r| r.succeeded()).collect();
            let k = ok.len();
            let (bias, mean_l2, median_l2, median_sq, q10, q90) = if k == 0 {
                (f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN)
            } else {
                let mut mean_dev = vec![0.0; p];
                for r in &ok {
                    for (m, d) in mean_dev.iter_mut().zip(&r.deviation) {
                        *m += d;
                    }
                }
                mean_dev.iter_mut().for_each(|m| *m /= k as f64);
                let l2: Vec<f64> = ok.iter().map(|r| r.l2_error).collect();
                let sq: Vec<f64> = ok.iter().map(|r| r.sq_error).collect();
                (
                    norm2(&mean_dev),
                    l2.iter().sum::<f64>() / k as f64,
                    median(&l2).unwrap_or(f64::NAN),
                    median(&sq).unwrap_or(f64::NAN),
                    quantile(&l2, 0.1).unwrap_or(f64::NAN),
                    quantile(&l2, 0.9).unwrap_or(f64::NAN),
                )
            };
            out.push(Aggregate {
                n: point.n,
                proportion: point.proportion,
                outliers: point.outliers,
                estimator: est.name.clone(),
                successes: k,
                failures: cell.len() - k,
                bias,
                mean_l2,
                median_l2,
                median_sq,
                q10_l2: q10,
                q90_l2: q90,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasPoint {
    pub proportion: f64,
    pub outliers: usize,
    pub estimator: String,
    pub bias: f64,
}

/// ‖E(β̂) − β*‖ per (proportion, estimator), sorted by proportion.
pub fn bias_curve(spec: &ExperimentSpec) -> Result<(Vec<BiasPoint>, ExperimentReport)> {
    let report = run_replicates(spec)?;
    let mut table: Vec<BiasPoint> = report
        .aggregates
        .iter()
        .map(|a| BiasPoint {
            proportion: a.proportion,
            outliers: a.outliers,
            estimator: a.estimator.clone(),
            bias: a.bias,
        })
        .collect();
    // Stable sort keeps estimator order within a proportion.
    table.sort_by(|a, b| a.proportion.total_cmp(&b.proportion));
    Ok((table, report))
}

/// Per-replicate ‖β̂ − β*‖² for each estimator, keyed by (outlier count, estimator).
pub type MseTable = BTreeMap<(usize, String), Vec<f64>>;

pub fn mse_distribution(spec: &ExperimentSpec) -> Result<(MseTable, ExperimentReport)> {
    let report = run_replicates(spec)?;
    let mut table = MseTable::new();
    for row in report.rows.iter().filter(|r| r.succeeded()) {
        table.entry((row.outliers, row.estimator.clone())).or_default().push(row.sq_error);
    }
    Ok((table, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: usize,
    pub outliers: usize,
    pub estimator: String,
    pub median_error: f64,
}

/// Median ‖β̂ − β*‖ per (n, contamination level, estimator).
pub fn rate_experiment(spec: &ExperimentSpec) -> Result<(Vec<RatePoint>, ExperimentReport)> {
    let report = run_replicates(spec)?;
    let table = report
        .aggregates
        .iter()
        .map(|a| RatePoint { n: a.n, outliers: a.outliers, estimator: a.estimator.clone(), median_error: a.median_l2 })
        .collect();
    Ok((table, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub replicate: usize,
    pub estimator: String,
    pub iteration: usize,
    /// ‖β_k − β*‖
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceReport {
    /// Every recorded iterate, sorted by (replicate, estimator, iteration).
    pub points: Vec<TracePoint>,
    /// Per-estimator mean error at each iteration; shorter traces hold their final value.
    pub mean_trace: BTreeMap<String, Vec<f64>>,
    /// Rows of the underlying fits (single sweep point).
    pub rows: Vec<ReplicateRow>,
}

/// Error ‖β_k − β*‖ along the stage-2 iterates, starting from the stage-1 output.
///
/// Every estimator is forced to record its iterates. Only the first n and the
/// first contamination level of `spec` are used.
pub fn convergence_trace_experiment(spec: &ExperimentSpec) -> Result<TraceReport> {
    spec.validate()?;
    let mut spec = spec.clone();
    spec.n.truncate(1);
    spec.contamination.proportions.truncate(1);
    spec.contamination.counts.truncate(1);
    for est in &mut spec.estimators {
        est.fit.optimizer.record_iterates = true;
    }
    let beta_star = spec.beta_star();
    let point = spec.points().remove(0);
    let per_rep: Vec<(Vec<TracePoint>, Vec<ReplicateRow>)> = (0..spec.replicates)
        .into_par_iter()
        .map(|r| {
            let seed = mix_seed(spec.base_seed, r as u64);
            let (data, _) =
                generate_dataset(point.n, &beta_star, spec.design, &spec.noise, &point.contamination, seed)?;
            let mut pts = Vec::new();
            let mut rows = Vec::new();
            for (row, fit) in fit_all(&spec, &point, r, &data, &beta_star) {
                if let Some(fit) = fit {
                    for rec in &fit.trace.records {
                        let it = rec.iterate.as_ref().expect("iterates recorded");
                        pts.push(TracePoint {
                            replicate: r,
                            estimator: row.estimator.clone(),
                            iteration: rec.iteration,
                            error: norm2(&sub(it, &beta_star)),
                        });
                    }
                }
                rows.push(row);
            }
            Ok((pts, rows))
        })
        .collect::<Result<_>>()?;
    let mut points = Vec::new();
    let mut rows = Vec::new();
    for (p, r) in per_rep {
        points.extend(p);
        rows.extend(r);
    }
    let mut mean_trace = BTreeMap::new();
    for est in &spec.estimators {
        let traces: Vec<Vec<f64>> = (0..spec.replicates)
            .map(|r| {
                points
                    .iter()
                    .filter(|p| p.replicate == r && p.estimator == est.name)
                    .map(|p| p.error)
                    .collect::<Vec<f64>>()
            })
            .filter(|t| !t.is_empty())
            .collect();
        let len = traces.iter().map(Vec::len).max().unwrap_or(0);
        let mean: Vec<f64> =
            (0..len).map(|k| traces.iter().map(|t| t[k.min(t.len() - 1)]).sum::<f64>() / traces.len() as f64).collect();
        mean_trace.insert(est.name.clone(), mean);
    }
    Ok(TraceReport { points, mean_trace, rows })
}

/// Gradient-descent optimizer used by the trace experiment.
pub fn trace_optimizer(step: f64, iters: usize) -> OptimizerConfig<f64> {
    OptimizerConfig {
        method: Method::GradientDescent,
        gd_step: step,
        max_iters: iters,
        grad_tol: f64::MIN_POSITIVE,
        step_tol: f64::MIN_POSITIVE,
        record_iterates: true,
        ..OptimizerConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalityReport {
    /// √n(β̂ − β*) per successful replicate.
    pub scaled: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Sample covariance (denominator k − 1), row-major p×p.
    pub covariance: Vec<Vec<f64>>,
    /// Kolmogorov–Smirnov distance of each coordinate to N(0, 1).
    pub ks: Vec<f64>,
    pub failures: usize,
}

/// √n(β̂ − β*) for clean data with τ_n = log(n)/n.
pub fn normality_experiment(n: usize, p: usize, replicates: usize, base_seed: u64) -> Result<NormalityReport> {
    let spec = ExperimentSpec {
        kind: ExperimentKind::Normality,
        n: vec![n],
        p,
        beta_star: None,
        design: DesignSpec::GaussianIsotropic,
        noise: NoiseSpec::Gaussian,
        contamination: ContaminationPlan::default(),
        estimators: vec![EstimatorSpec::welsch_rule("welsch", TauRule::new(TauMode::Asymptotic))],
        replicates,
        base_seed,
    };
    normality_from_spec(&spec)
}

/// Normality summary of the first estimator at the first sweep point of `spec`.
pub fn normality_from_spec(spec: &ExperimentSpec) -> Result<NormalityReport> {
    let report = run_replicates(spec)?;
    let first = &spec.estimators[0].name;
    let n0 = spec.n[0];
    let o0 = report.aggregates[0].outliers;
    let cell: Vec<&ReplicateRow> =
        report.rows.iter().filter(|r| r.n == n0 && r.outliers == o0 && &r.estimator == first).collect();
    let root_n = (n0 as f64).sqrt();
    let scaled: Vec<Vec<f64>> =
        cell.iter().filter(|r| r.succeeded()).map(|r| r.deviation.iter().map(|d| d * root_n).collect()).collect();
    let failures = cell.len() - scaled.len();
    let k = scaled.len();
    if k < 2 {
        return Err(Error::Numerical("fewer than two successful replicates".into()));
    }
    let p = spec.p;
    let mean: Vec<f64> = (0..p).map(|j| scaled.iter().map(|s| s[j]).sum::<f64>() / k as f64).collect();
    let covariance: Vec<Vec<f64>> = (0..p)
        .map(|a| {
            (0..p)
                .map(|b| scaled.iter().map(|s| (s[a] - mean[a]) * (s[b] - mean[b])).sum::<f64>() / (k - 1) as f64)
                .collect()
        })
        .collect();
    let ks = (0..p).map(|j| ks_standard_normal(&scaled.iter().map(|s| s[j]).collect::<Vec<_>>())).collect();
    Ok(NormalityReport { scaled, mean, covariance, ks, failures })
}

/// sup_x |F_k(x) − Φ(x)| for the empirical CDF F_k of `sample`.
pub fn ks_standard_normal(sample: &[f64]) -> f64 {
    let normal = Normal::standard();
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / k).abs().max(((i + 1) as f64 / k - f).abs())
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> ExperimentSpec {
        ExperimentSpec {
            kind: ExperimentKind::BiasCurve,
            n: vec![60],
            p: 2,
            beta_star: None,
            design: DesignSpec::GaussianIsotropic,
            noise: NoiseSpec::Gaussian,
            contamination: ContaminationPlan::proportions(vec![0.0, 0.1], 50.0, Strategy::SignAligned),
            estimators: vec![
                EstimatorSpec::new("ols", LossSpec::Squared),
                EstimatorSpec::welsch_rule("welsch", TauRule::new(TauMode::Prop2)),
            ],
            replicates: 4,
            base_seed: 3,
        }
    }

    #[test]
    fn rows_are_ordered_and_complete() {
        let report = run_replicates(&small_spec()).unwrap();
        assert_eq!(report.rows.len(), 2 * 4 * 2);
        let keys: Vec<(usize, usize, String)> =
            report.rows.iter().map(|r| (r.outliers, r.replicate, r.estimator.clone())).collect();
        assert_eq!(keys[0], (0, 0, "ols".to_string()));
        assert_eq!(keys[1], (0, 0, "welsch".to_string()));
        assert_eq!(keys[2], (0, 1, "ols".to_string()));
        assert_eq!(keys.last().unwrap().0, 6);
        assert!(report.rows.iter().all(|r| r.succeeded() && r.l2_error.is_finite()));
        assert_eq!(report.aggregates.len(), 4);
    }

    #[test]
    fn tau_rule_tracks_outlier_count() {
        let report = run_replicates(&small_spec()).unwrap();
        let welsch: Vec<&ReplicateRow> = report.rows.iter().filter(|r| r.estimator == "welsch").collect();
        let t0 = welsch.iter().find(|r| r.outliers == 0).unwrap().tau.unwrap();
        let t6 = welsch.iter().find(|r| r.outliers == 6).unwrap().tau.unwrap();
        assert!((t0 - theoretical_tau(60, 0, 0.05, 2.0, 1.0, TauMode::Prop2).unwrap()).abs() < 1e-15);
        assert!(t6 > t0);
    }

    #[test]
    fn validation_names_problems() {
        let mut s = small_spec();
        s.replicates = 0;
        assert!(matches!(s.validate(), Err(Error::Config(_))));
        let mut s = small_spec();
        s.estimators.push(EstimatorSpec::new("ols", LossSpec::Absolute));
        assert!(s.validate().unwrap_err().to_string().contains("duplicate"));
        let mut s = small_spec();
        s.estimators[0].tau_rule = Some(TauRule::new(TauMode::Debias));
        assert!(s.validate().is_err());
        let mut s = small_spec();
        s.contamination.counts = vec![3];
        assert!(s.validate().is_err());
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let normal = Normal::standard();
        let k = 400;
        let sample: Vec<f64> = (0..k).map(|i| normal.inverse_cdf((i as f64 + 0.5) / k as f64)).collect();
        let d = ks_standard_normal(&sample);
        assert!((d - 0.5 / k as f64).abs() < 1e-9, "{d}");
        let shifted: Vec<f64> = sample.iter().map(|x| x + 10.0).collect();
        assert!(ks_standard_normal(&shifted) > 0.99);
    }

    #[test]
    fn trace_starts_at_stage_one_output() {
        let mut spec = small_spec();
        spec.kind = ExperimentKind::ConvergenceTrace;
        spec.contamination = ContaminationPlan::proportions(vec![0.1], 50.0, Strategy::RandomShift);
        spec.estimators =
            vec![EstimatorSpec::new("huber", LossSpec::huber(1.0).unwrap()).with_optimizer(trace_optimizer(0.5, 20))];
        spec.replicates = 2;
        let report = convergence_trace_experiment(&spec).unwrap();
        let first: Vec<&TracePoint> = report.points.iter().filter(|p| p.replicate == 0).collect();
        assert_eq!(first[0].iteration, 0);
        assert_eq!(first.len(), 21);
        assert_eq!(report.mean_trace["huber"].len(), 21);
    }
}
