//! Regression estimators: OLS, the LAD warm start, the Welsch M-estimator, the
//! comparator M-estimators, and the two-stage procedure tying LAD to Welsch.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::diagnostics::basin_indicator_fraction;
use crate::error::{Error, Result};
use crate::linalg::{distance, median, norm2, solve_dense, solve_spd};
use crate::loss::LossSpec;
use crate::optimizer::{minimize, Objective, OptimTrace, OptimizerConfig, Termination, TraceRecord};
use crate::scalar::Scalar;

/// How residuals are standardized before the loss is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// σ = 1, the simulated model's unit-variance noise.
    FixedUnit,
    /// σ = 1.4826·MAD of the LAD residuals.
    MadOfLadResiduals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct FitConfig<T> {
    pub loss: LossSpec<T>,
    /// Stage 1 stops once the median absolute residual drops below this value;
    /// 0 runs LAD to convergence.
    #[serde(default = "default_c")]
    pub algorithm1_c: T,
    #[serde(default = "default_lad_iters")]
    pub lad_max_iters: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig<T>,
    #[serde(default = "default_scale_mode")]
    pub scale_mode: ScaleMode,
}

fn default_c<T: Scalar>() -> T {
    T::one()
}

fn default_lad_iters() -> usize {
    100
}

fn default_scale_mode() -> ScaleMode {
    ScaleMode::FixedUnit
}

impl<T: Scalar> FitConfig<T> {
    pub fn new(loss: LossSpec<T>) -> Self {
        Self {
            loss,
            algorithm1_c: default_c(),
            lad_max_iters: default_lad_iters(),
            optimizer: OptimizerConfig::default(),
            scale_mode: default_scale_mode(),
        }
    }

    pub fn with_scale_mode(mut self, mode: ScaleMode) -> Self {
        self.scale_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.optimizer.validate()?;
        if !(self.algorithm1_c >= T::zero() && self.algorithm1_c.is_finite()) {
            return Err(Error::config(format!("algorithm1_c must be nonnegative, got {}", self.algorithm1_c)));
        }
        if self.lad_max_iters == 0 {
            return Err(Error::config("lad_max_iters must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitStatus {
    pub termination: Termination,
    /// False when the stage-1 median criterion was not reached within its
    /// iteration budget (stage 2 still ran).
    pub stage1_criterion_met: bool,
}

impl FitStatus {
    pub fn is_converged(&self) -> bool {
        self.termination.is_converged()
    }

    pub fn label(&self) -> String {
        if self.stage1_criterion_met {
            self.termination.as_str().to_string()
        } else {
            format!("{}+stage1_unmet", self.termination.as_str())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<T> {
    pub beta: Vec<T>,
    /// σ̂ the residuals were divided by.
    pub scale: T,
    /// (1/n)·Σρ(r_i/σ̂) at `beta`.
    pub objective: T,
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    /// Fraction of observations with τ(r_i/σ̂)² ≤ 1/2 at `beta` (Welsch fits only).
    pub basin_fraction: Option<T>,
    /// The same fraction at the stage-1 output.
    pub basin_fraction_init: Option<T>,
    pub trace: OptimTrace<T>,
    pub status: FitStatus,
}

/// Empirical risk (1/n)·Σρ((y_i − x_iᵀβ)/σ) with its gradient.
///
/// For the Welsch loss this is f(β) = (1/(τn))·Σ(1 − exp(−τ r_i²/2)) when σ = 1.
#[derive(Debug, Clone, Copy)]
pub struct MObjective<'a, T> {
    data: &'a Dataset<T>,
    loss: LossSpec<T>,
    scale: T,
}

impl<'a, T: Scalar> MObjective<'a, T> {
    pub fn new(data: &'a Dataset<T>, loss: LossSpec<T>, scale: T) -> Self {
        Self { data, loss, scale }
    }

    pub fn welsch(data: &'a Dataset<T>, tau: T) -> Self {
        Self::new(data, LossSpec::Welsch { tau }, T::one())
    }
}

impl<T: Scalar> Objective<T> for MObjective<'_, T> {
    fn value_grad(&self, beta: &[T], grad: &mut [T]) -> T {
        grad.iter_mut().for_each(|g| *g = T::zero());
        let inv_s = T::one() / self.scale;
        let mut total = T::zero();
        for (row, &yi) in self.data.x().row_iter().zip(self.data.y()) {
            let u = (yi - crate::linalg::dot(row, beta)) * inv_s;
            total += self.loss.rho_unchecked(u);
            let psi = self.loss.psi_unchecked(u);
            for (g, &xij) in grad.iter_mut().zip(row) {
                *g -= psi * xij;
            }
        }
        let n = T::from_usize_lossy(self.data.n());
        let gscale = inv_s / n;
        grad.iter_mut().for_each(|g| *g *= gscale);
        total / n
    }

    fn value(&self, beta: &[T]) -> T {
        let inv_s = T::one() / self.scale;
        let total: T = self.data.residuals(beta).into_iter().map(|r| self.loss.rho_unchecked(r * inv_s)).sum();
        total / T::from_usize_lossy(self.data.n())
    }
}

/// Gradient of the Welsch objective, −(1/n)·Σ x_i r_i exp(−τ r_i²/2).
pub fn welsch_gradient<T: Scalar>(data: &Dataset<T>, beta: &[T], tau: T) -> Vec<T> {
    let mut g = vec![T::zero(); data.p()];
    MObjective::welsch(data, tau).value_grad(beta, &mut g);
    g
}

/// Ordinary least squares through the normal equations.
pub fn fit_ols<T: Scalar>(data: &Dataset<T>) -> Result<Vec<T>> {
    let gram = data.x().weighted_gram(None);
    let rhs = data.x().tr_mul_vec(data.y());
    solve_spd(&gram, &rhs).ok_or_else(|| Error::Singular { iteration: 0, context: "XᵀX is rank deficient".into() })
}

/// Output of the stage-1 LAD loop.
#[derive(Debug, Clone, PartialEq)]
pub struct LadFit<T> {
    pub beta: Vec<T>,
    pub iterations: usize,
    /// Median absolute residual fell below `c`.
    pub criterion_met: bool,
    /// The IRLS iterates stopped moving.
    pub converged: bool,
}

/// Relative step size below which the IRLS loops are considered converged.
const IRLS_TOL: f64 = 1e-13;

/// Smoothing floor of the IRLS weights 1/max(|r|, ε): ε = 1e−8·scale(y).
fn irls_floor<T: Scalar>(y: &[T]) -> T {
    let s = estimate_scale(y).unwrap_or_else(|_| {
        let m = y.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        if m > T::zero() {
            m
        } else {
            T::one()
        }
    });
    T::lit(1e-8) * s
}

/// LAD by iteratively reweighted least squares, one weighted solve per step.
///
/// Iterates while the median absolute residual is at least `c`, stopping early
/// when the iterates converge or after `max_iters` steps. `c = 0` disables the
/// median criterion and runs to convergence, finishing with an exact vertex
/// search.
pub fn fit_lad<T: Scalar>(data: &Dataset<T>, init: &[T], c: T, max_iters: usize) -> Result<LadFit<T>> {
    data.check_beta(init, "LAD initial point")?;
    if data.n() <= data.p() {
        return Err(Error::domain(format!("LAD needs n > p, got n = {} and p = {}", data.n(), data.p())));
    }
    if !(c >= T::zero()) {
        return Err(Error::config("LAD median threshold must be nonnegative"));
    }
    let eps = irls_floor(data.y());
    let mut beta = init.to_vec();
    let mut iterations = 0;
    loop {
        let r = data.residuals(&beta);
        let abs: Vec<T> = r.iter().map(|v| v.abs()).collect();
        let med = median(&abs).expect("n >= 1");
        if med < c {
            return Ok(LadFit { beta, iterations, criterion_met: true, converged: false });
        }
        if iterations == max_iters {
            return Ok(LadFit { beta, iterations, criterion_met: false, converged: false });
        }
        let w: Vec<T> = abs.iter().map(|&a| T::one() / a.max(eps)).collect();
        let next = weighted_ls(data, &w).ok_or_else(|| Error::Singular {
            iteration: iterations + 1,
            context: "weighted normal equations of the LAD step".into(),
        })?;
        iterations += 1;
        let moved = distance(&next, &beta);
        beta = next;
        // Running to convergence: finish exactly once IRLS is close enough to
        // seed the vertex search.
        if c == T::zero() && (iterations % 10 == 0 || iterations == max_iters) {
            if let Some(vertex) = vertex_descent(data, T::lit(0.5), &beta, 20 * data.n()) {
                return Ok(LadFit { beta: vertex, iterations, criterion_met: false, converged: true });
            }
        }
        if moved <= T::lit(IRLS_TOL) * (T::one() + norm2(&beta)) {
            let r = data.residuals(&beta);
            let med = median(&r.iter().map(|v| v.abs()).collect::<Vec<_>>()).expect("n >= 1");
            return Ok(LadFit { beta, iterations, criterion_met: med < c, converged: true });
        }
    }
}

fn weighted_ls<T: Scalar>(data: &Dataset<T>, w: &[T]) -> Option<Vec<T>> {
    let gram = data.x().weighted_gram(Some(w));
    let wy: Vec<T> = w.iter().zip(data.y()).map(|(&a, &b)| a * b).collect();
    let rhs = data.x().tr_mul_vec(&wy);
    solve_spd(&gram, &rhs)
}

/// Welsch M-estimator minimized by the configured optimizer from `init`.
pub fn fit_welsch<T: Scalar>(data: &Dataset<T>, tau: T, init: &[T], opt: &OptimizerConfig<T>) -> Result<FitResult<T>> {
    if !(tau > T::zero() && tau.is_finite()) {
        return Err(Error::config(format!("welsch tau must be positive, got {tau}")));
    }
    fit_m_estimator(data, &LossSpec::Welsch { tau }, init, opt)
}

/// M-estimator for any loss family with unit scale.
///
/// Smooth losses go through the optimizer; the absolute and pinball losses
/// are solved by ε-smoothed IRLS.
pub fn fit_m_estimator<T: Scalar>(
    data: &Dataset<T>,
    spec: &LossSpec<T>,
    init: &[T],
    opt: &OptimizerConfig<T>,
) -> Result<FitResult<T>> {
    fit_m_estimator_scaled(data, spec, T::one(), init, opt)
}

/// As [`fit_m_estimator`] with residuals divided by `scale`.
pub fn fit_m_estimator_scaled<T: Scalar>(
    data: &Dataset<T>,
    spec: &LossSpec<T>,
    scale: T,
    init: &[T],
    opt: &OptimizerConfig<T>,
) -> Result<FitResult<T>> {
    spec.validate()?;
    opt.validate()?;
    data.check_beta(init, "initial point")?;
    if !(scale > T::zero() && scale.is_finite()) {
        return Err(Error::config(format!("scale must be positive, got {scale}")));
    }
    let objective = MObjective::new(data, *spec, scale);
    let (beta, trace) =
        if spec.is_smooth() { minimize(&objective, init, opt)? } else { irls_nonsmooth(data, spec, scale, init, opt)? };
    let value = objective.value(&beta);
    let basin = match *spec {
        LossSpec::Welsch { tau } => Some(basin_indicator_fraction(data, &beta, tau / (scale * scale))?),
        _ => None,
    };
    Ok(FitResult {
        stage2_iters: trace.iterations(),
        status: FitStatus { termination: trace.status, stage1_criterion_met: true },
        beta,
        scale,
        objective: value,
        stage1_iters: 0,
        basin_fraction: basin,
        basin_fraction_init: None,
        trace,
    })
}

/// IRLS for the absolute and pinball losses with weights ψ-slope/max(|r|, ε).
///
/// Every few IRLS steps the iterate seeds an exact vertex descent; the first
/// certified optimum ends the loop.
fn irls_nonsmooth<T: Scalar>(
    data: &Dataset<T>,
    spec: &LossSpec<T>,
    scale: T,
    init: &[T],
    opt: &OptimizerConfig<T>,
) -> Result<(Vec<T>, OptimTrace<T>)> {
    const VERTEX_EVERY: usize = 10;
    let q = match *spec {
        LossSpec::Pinball { q } => q,
        _ => T::lit(0.5),
    };
    let objective = MObjective::new(data, *spec, scale);
    let eps = irls_floor(data.y());
    let mut beta = init.to_vec();
    let mut grad = vec![T::zero(); data.p()];
    let record = |k: usize, beta: &[T], grad: &mut [T]| TraceRecord {
        iteration: k,
        value: objective.value_grad(beta, grad),
        grad_norm: norm2(grad),
        iterate: opt.record_iterates.then(|| beta.to_vec()),
    };
    let mut trace = OptimTrace { records: vec![record(0, &beta, &mut grad)], status: Termination::MaxIters };
    for k in 1..=opt.max_iters {
        let w: Vec<T> = data
            .residuals(&beta)
            .into_iter()
            .map(|r| {
                let slope = if r < T::zero() { T::one() - q } else { q };
                slope / r.abs().max(eps)
            })
            .collect();
        let next = weighted_ls(data, &w).ok_or_else(|| Error::Singular {
            iteration: k,
            context: "weighted normal equations of the IRLS step".into(),
        })?;
        let moved = distance(&next, &beta);
        beta = next;
        let converged = moved <= opt.step_tol.max(T::lit(IRLS_TOL)) * (T::one() + norm2(&beta));
        if k % VERTEX_EVERY == 0 || converged || k == opt.max_iters {
            if let Some(vertex) = vertex_descent(data, q, &beta, 20 * data.n()) {
                beta = vertex;
                trace.records.push(record(k, &beta, &mut grad));
                trace.status = Termination::ConvergedStep;
                break;
            }
        }
        trace.records.push(record(k, &beta, &mut grad));
        if converged {
            trace.status = Termination::ConvergedStep;
            break;
        }
    }
    Ok((beta, trace))
}

/// Exact minimizer of Σρ_q(y_i − x_iᵀβ) by basis exchange, started from the p
/// observations with the smallest residuals at `start`.
///
/// A basis h of p interpolated rows is optimal when the multipliers g solving
/// X_hᵀg = −Σ_{i∉h} x_i ρ'_q(r_i) all lie in [q − 1, q]. Otherwise the most
/// violating row leaves the basis along the edge that keeps the others
/// interpolated, and the objective, piecewise linear along that edge, is
/// minimized by scanning its breakpoints. Returns `None` on a singular basis or
/// when `max_pivots` is exhausted.
fn vertex_descent<T: Scalar>(data: &Dataset<T>, q: T, start: &[T], max_pivots: usize) -> Option<Vec<T>> {
    let (n, p) = (data.n(), data.p());
    let r0 = data.residuals(start);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.select_nth_unstable_by(p - 1, |&a, &b| r0[a].abs().partial_cmp(&r0[b].abs()).expect("finite"));
    let mut basis = idx[..p].to_vec();
    let mut in_basis = vec![false; n];
    basis.iter().for_each(|&i| in_basis[i] = true);
    let slack = T::lit(1e-10);
    for _ in 0..max_pivots {
        let xh = data.x().select_rows(&basis);
        let yh: Vec<T> = basis.iter().map(|&i| data.y()[i]).collect();
        let beta = solve_dense(&xh, &yh, false)?;
        let r = data.residuals(&beta);
        let mut rhs = vec![T::zero(); p];
        for (i, row) in data.x().row_iter().enumerate() {
            if !in_basis[i] {
                let slope = if r[i] > T::zero() { q } else { q - T::one() };
                for (acc, &x) in rhs.iter_mut().zip(row) {
                    *acc -= slope * x;
                }
            }
        }
        let g = solve_dense(&xh, &rhs, true)?;
        let (mut leave, mut worst) = (0, T::zero());
        for (j, &gj) in g.iter().enumerate() {
            let v = (q - T::one() - gj).max(gj - q);
            if v > worst {
                worst = v;
                leave = j;
            }
        }
        if worst <= slack {
            return Some(beta);
        }
        // Move with x_leaveᵀd = s so the leaving residual becomes −s·t.
        let s = if g[leave] < q - T::one() { T::one() } else { -T::one() };
        let mut e = vec![T::zero(); p];
        e[leave] = s;
        let d = solve_dense(&xh, &e, false)?;
        let mut slope = if s > T::zero() { g[leave] + T::one() - q } else { q - g[leave] };
        let mut breaks: Vec<(T, usize, T)> = Vec::new();
        for (i, row) in data.x().row_iter().enumerate() {
            if in_basis[i] {
                continue;
            }
            let a = crate::linalg::dot(row, &d);
            if a == T::zero() {
                continue;
            }
            let t = r[i] / a;
            if t >= T::zero() {
                breaks.push((t, i, a.abs()));
            }
        }
        breaks.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite").then(x.1.cmp(&y.1)));
        let mut enter = None;
        for &(_, i, a) in &breaks {
            slope += a;
            if slope >= T::zero() {
                enter = Some(i);
                break;
            }
        }
        let enter = enter?;
        in_basis[basis[leave]] = false;
        in_basis[enter] = true;
        basis[leave] = enter;
    }
    None
}

/// Two-stage fit: LAD from β₀ = 0 until the median criterion holds, then the
/// configured M-estimator started from the LAD output.
pub fn fit_two_stage<T: Scalar>(data: &Dataset<T>, cfg: &FitConfig<T>) -> Result<FitResult<T>> {
    cfg.validate()?;
    if data.n() <= data.p() {
        return Err(Error::domain(format!("two-stage fit needs n > p, got n = {} and p = {}", data.n(), data.p())));
    }
    let zero = vec![T::zero(); data.p()];
    let (lad, scale, stage1_ok) = match cfg.scale_mode {
        ScaleMode::FixedUnit => {
            let lad = fit_lad(data, &zero, cfg.algorithm1_c, cfg.lad_max_iters)?;
            let ok = if cfg.algorithm1_c == T::zero() { lad.converged } else { lad.criterion_met };
            (lad, T::one(), ok)
        }
        ScaleMode::MadOfLadResiduals => {
            // Without a known noise scale the median threshold has no units, so
            // stage 1 runs the LAD iteration to convergence instead.
            let lad = fit_lad(data, &zero, T::zero(), cfg.lad_max_iters)?;
            let sigma = estimate_scale(&data.residuals(&lad.beta))?;
            let ok = lad.converged;
            (lad, sigma, ok)
        }
    };
    if !stage1_ok {
        warn!("stage 1 stopped after {} iterations without meeting its criterion; continuing", lad.iterations);
    }
    let mut result = match cfg.loss {
        LossSpec::Squared => {
            let beta = fit_ols(data)?;
            let objective = MObjective::new(data, cfg.loss, scale);
            let mut grad = vec![T::zero(); data.p()];
            let value = objective.value_grad(&beta, &mut grad);
            FitResult {
                trace: OptimTrace {
                    records: vec![TraceRecord { iteration: 0, value, grad_norm: norm2(&grad), iterate: None }],
                    status: Termination::ConvergedGrad,
                },
                beta,
                scale,
                objective: value,
                stage1_iters: 0,
                stage2_iters: 0,
                basin_fraction: None,
                basin_fraction_init: None,
                status: FitStatus { termination: Termination::ConvergedGrad, stage1_criterion_met: true },
            }
        }
        loss => fit_m_estimator_scaled(data, &loss, scale, &lad.beta, &cfg.optimizer)?,
    };
    result.stage1_iters = lad.iterations;
    result.status.stage1_criterion_met = stage1_ok;
    if let LossSpec::Welsch { tau } = cfg.loss {
        result.basin_fraction_init = Some(basin_indicator_fraction(data, &lad.beta, tau / (scale * scale))?);
    }
    Ok(result)
}

/// 1.4826·MAD, falling back to the sample standard deviation when the MAD is 0.
pub fn estimate_scale<T: Scalar>(residuals: &[T]) -> Result<T> {
    if residuals.len() < 2 {
        return Err(Error::domain("scale estimation needs at least two residuals"));
    }
    if residuals.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite residual"));
    }
    let med = median(residuals).expect("nonempty");
    let dev: Vec<T> = residuals.iter().map(|&r| (r - med).abs()).collect();
    let mad = median(&dev).expect("nonempty");
    if mad > T::zero() {
        return Ok(T::lit(1.4826) * mad);
    }
    let n = T::from_usize_lossy(residuals.len());
    let mean = residuals.iter().copied().sum::<T>() / n;
    let var = residuals.iter().map(|&r| (r - mean) * (r - mean)).sum::<T>() / (n - T::one());
    if var > T::zero() {
        Ok(var.sqrt())
    } else {
        Err(Error::Degenerate("all residuals are identical".into()))
    }
}
