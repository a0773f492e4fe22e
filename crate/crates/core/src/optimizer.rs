//! Smooth unconstrained minimization: L-BFGS with a weak-Wolfe line search,
//! fixed-step gradient descent, and a central finite-difference gradient.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm2};
use crate::scalar::Scalar;

/// Differentiable objective. Writes the gradient into `grad` and returns the value.
pub trait Objective<T: Scalar> {
    fn value_grad(&self, x: &[T], grad: &mut [T]) -> T;

    fn value(&self, x: &[T]) -> T {
        let mut g = vec![T::zero(); x.len()];
        self.value_grad(x, &mut g)
    }
}

/// Adapts a closure `Fn(&[T], &mut [T]) -> T` into an [`Objective`].
pub struct FnObjective<F>(pub F);

impl<T: Scalar, F: Fn(&[T], &mut [T]) -> T> Objective<T> for FnObjective<F> {
    fn value_grad(&self, x: &[T], grad: &mut [T]) -> T {
        (self.0)(x, grad)
    }
}

impl<T: Scalar, O: Objective<T> + ?Sized> Objective<T> for &O {
    fn value_grad(&self, x: &[T], grad: &mut [T]) -> T {
        (**self).value_grad(x, grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lbfgs,
    GradientDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct OptimizerConfig<T> {
    pub method: Method,
    /// L-BFGS history length.
    pub memory: usize,
    pub max_iters: usize,
    /// Stop once ‖∇f‖ ≤ grad_tol.
    pub grad_tol: T,
    /// Stop once ‖x_{k+1} − x_k‖ ≤ step_tol.
    pub step_tol: T,
    pub wolfe_c1: T,
    pub wolfe_c2: T,
    /// Initial fixed step of gradient descent.
    pub gd_step: T,
    /// Keep a copy of every iterate in the trace.
    pub record_iterates: bool,
}

impl<T: Scalar> Default for OptimizerConfig<T> {
    fn default() -> Self {
        Self {
            method: Method::Lbfgs,
            memory: 10,
            max_iters: 500,
            grad_tol: T::lit(1e-8),
            step_tol: T::lit(1e-12),
            wolfe_c1: T::lit(1e-4),
            wolfe_c2: T::lit(0.9),
            gd_step: T::lit(0.1),
            record_iterates: false,
        }
    }
}

impl<T: Scalar> OptimizerConfig<T> {
    pub fn gradient_descent(step: T, max_iters: usize) -> Self {
        Self { method: Method::GradientDescent, gd_step: step, max_iters, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let zero = T::zero();
        if !(zero < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < T::one()) {
            return Err(Error::config(format!(
                "optimizer: need 0 < wolfe_c1 < wolfe_c2 < 1, got {} and {}",
                self.wolfe_c1, self.wolfe_c2
            )));
        }
        if self.memory == 0 {
            return Err(Error::config("optimizer.memory must be at least 1"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("optimizer.max_iters must be at least 1"));
        }
        for (name, v) in [("grad_tol", self.grad_tol), ("step_tol", self.step_tol), ("gd_step", self.gd_step)] {
            if !(v > zero && v.is_finite()) {
                return Err(Error::config(format!("optimizer.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ConvergedGrad,
    ConvergedStep,
    MaxIters,
    LineSearchFailure,
}

impl Termination {
    pub fn is_converged(self) -> bool {
        matches!(self, Termination::ConvergedGrad | Termination::ConvergedStep)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Termination::ConvergedGrad => "converged_grad",
            Termination::ConvergedStep => "converged_step",
            Termination::MaxIters => "max_iters",
            Termination::LineSearchFailure => "line_search_failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord<T> {
    pub iteration: usize,
    pub value: T,
    pub grad_norm: T,
    pub iterate: Option<Vec<T>>,
}

/// Per-iteration history of a minimization run. Record 0 is the initial point.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimTrace<T> {
    pub records: Vec<TraceRecord<T>>,
    pub status: Termination,
}

impl<T: Scalar> OptimTrace<T> {
    fn new() -> Self {
        Self { records: Vec::new(), status: Termination::MaxIters }
    }

    fn push(&mut self, iteration: usize, value: T, grad: &[T], x: &[T], keep: bool) {
        self.records.push(TraceRecord { iteration, value, grad_norm: norm2(grad), iterate: keep.then(|| x.to_vec()) });
    }

    /// Number of completed iterations (records after the initial one).
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn final_value(&self) -> Option<T> {
        self.records.last().map(|r| r.value)
    }

    pub fn final_grad_norm(&self) -> Option<T> {
        self.records.last().map(|r| r.grad_norm)
    }
}

/// Parameters of [`wolfe_line_search`].
#[derive(Debug, Clone, Copy)]
pub struct WolfeParams<T> {
    pub c1: T,
    pub c2: T,
    pub initial_step: T,
    pub max_bisections: usize,
}

impl<T: Scalar> Default for WolfeParams<T> {
    fn default() -> Self {
        Self { c1: T::lit(1e-4), c2: T::lit(0.9), initial_step: T::one(), max_bisections: 60 }
    }
}

/// Accepted step together with the objective state at the new point.
#[derive(Debug, Clone)]
pub struct LineSearchStep<T> {
    pub step: T,
    pub point: Vec<T>,
    pub value: T,
    pub grad: Vec<T>,
    pub evaluations: usize,
}

#[derive(Debug)]
enum SearchFailure {
    Exhausted { saw_non_finite: bool },
}

/// Finds a step `t` along `direction` satisfying the weak Wolfe conditions
///
/// * f(x + t d) ≤ f(x) + c1 t ∇f(x)ᵀd
/// * ∇f(x + t d)ᵀd ≥ c2 ∇f(x)ᵀd
///
/// by bracketing: expand while the curvature condition fails, bisect once the
/// sufficient decrease condition fails.
pub fn wolfe_line_search<T: Scalar, O: Objective<T> + ?Sized>(
    objective: &O,
    point: &[T],
    direction: &[T],
    params: &WolfeParams<T>,
) -> Result<LineSearchStep<T>> {
    if !(T::zero() < params.c1 && params.c1 < params.c2 && params.c2 < T::one()) {
        return Err(Error::config("line search needs 0 < c1 < c2 < 1"));
    }
    let mut g0 = vec![T::zero(); point.len()];
    let f0 = objective.value_grad(point, &mut g0);
    if !f0.is_finite() || g0.iter().any(|g| !g.is_finite()) {
        return Err(Error::domain("objective not finite at line-search origin"));
    }
    let slope = dot(&g0, direction);
    if !(slope < T::zero()) {
        return Err(Error::LineSearch(format!("direction is not a descent direction (gradient·direction = {slope})")));
    }
    search(objective, point, f0, slope, direction, params).map_err(|e| match e {
        SearchFailure::Exhausted { .. } => {
            Error::LineSearch(format!("no Wolfe step found within {} bisections", params.max_bisections))
        }
    })
}

fn search<T: Scalar, O: Objective<T> + ?Sized>(
    objective: &O,
    x: &[T],
    f0: T,
    slope0: T,
    d: &[T],
    params: &WolfeParams<T>,
) -> std::result::Result<LineSearchStep<T>, SearchFailure> {
    let mut lo = T::zero();
    let mut hi = T::infinity();
    let mut t = params.initial_step;
    let mut trial = vec![T::zero(); x.len()];
    let mut grad = vec![T::zero(); x.len()];
    let mut saw_non_finite = false;
    let two = T::lit(2.0);
    for evals in 1..=params.max_bisections.max(1) {
        trial.copy_from_slice(x);
        axpy(t, d, &mut trial);
        let f = objective.value_grad(&trial, &mut grad);
        let finite = f.is_finite() && grad.iter().all(|g| g.is_finite());
        if !finite {
            saw_non_finite = true;
            hi = t;
        } else if f > f0 + params.c1 * t * slope0 || !(f < f0 || t == T::zero()) {
            hi = t;
        } else if dot(&grad, d) < params.c2 * slope0 {
            lo = t;
        } else {
            return Ok(LineSearchStep { step: t, point: trial, value: f, grad, evaluations: evals });
        }
        t = if hi.is_finite() { (lo + hi) / two } else { lo * two };
    }
    Err(SearchFailure::Exhausted { saw_non_finite })
}

/// Minimizes `objective` from `init`.
///
/// Returns the final point and its trace. A line-search breakdown is reported
/// through `trace.status` with the best iterate so far; a non-finite value at
/// the start, or a breakdown caused by non-finite evaluations, is an error
/// carrying the last finite iterate.
pub fn minimize<T: Scalar, O: Objective<T> + ?Sized>(
    objective: &O,
    init: &[T],
    config: &OptimizerConfig<T>,
) -> Result<(Vec<T>, OptimTrace<T>)> {
    config.validate()?;
    match config.method {
        Method::Lbfgs => lbfgs(objective, init, config),
        Method::GradientDescent => gradient_descent(objective, init, config),
    }
}

fn start<T: Scalar, O: Objective<T> + ?Sized>(objective: &O, init: &[T]) -> Result<(T, Vec<T>)> {
    let mut g = vec![T::zero(); init.len()];
    let f = objective.value_grad(init, &mut g);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) || init.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { iterations: 0, last_good: init.iter().map(|v| v.as_f64()).collect() });
    }
    Ok((f, g))
}

/// Two-loop recursion: returns −H∇f for the limited-memory inverse Hessian H.
fn two_loop<T: Scalar>(grad: &[T], history: &VecDeque<(Vec<T>, Vec<T>, T)>) -> Vec<T> {
    let mut q: Vec<T> = grad.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = *rho * dot(s, &q);
        axpy(-a, y, &mut q);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = *rho * dot(y, &q);
        axpy(a - b, s, &mut q);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

fn lbfgs<T: Scalar, O: Objective<T> + ?Sized>(
    objective: &O,
    init: &[T],
    config: &OptimizerConfig<T>,
) -> Result<(Vec<T>, OptimTrace<T>)> {
    let keep = config.record_iterates;
    let (mut f, mut g) = start(objective, init)?;
    let mut x = init.to_vec();
    let mut trace = OptimTrace::new();
    trace.push(0, f, &g, &x, keep);
    if norm2(&g) <= config.grad_tol {
        trace.status = Termination::ConvergedGrad;
        return Ok((x, trace));
    }
    let mut history: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::with_capacity(config.memory);
    let screen = T::lit(1e-10);
    for k in 1..=config.max_iters {
        let mut d = two_loop(&g, &history);
        if !(dot(&g, &d) < T::zero()) {
            history.clear();
            d = g.iter().map(|v| -*v).collect();
        }
        // Without curvature history the direction is −∇f, so cap the first
        // trial step at unit length.
        let initial_step = if history.is_empty() { T::one().min(T::one() / norm2(&g)) } else { T::one() };
        let params = WolfeParams { c1: config.wolfe_c1, c2: config.wolfe_c2, initial_step, max_bisections: 60 };
        let slope = dot(&g, &d);
        let accepted = match search(objective, &x, f, slope, &d, &params) {
            Ok(step) => step,
            Err(SearchFailure::Exhausted { saw_non_finite }) => {
                if saw_non_finite {
                    return Err(Error::NonFinite {
                        iterations: k - 1,
                        last_good: x.iter().map(|v| v.as_f64()).collect(),
                    });
                }
                trace.status = Termination::LineSearchFailure;
                return Ok((x, trace));
            }
        };
        let s: Vec<T> = accepted.point.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let y: Vec<T> = accepted.grad.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &y);
        let step_norm = norm2(&s);
        if sy > screen * step_norm * norm2(&y) {
            if history.len() == config.memory {
                history.pop_front();
            }
            history.push_back((s, y, T::one() / sy));
        }
        x = accepted.point;
        f = accepted.value;
        g = accepted.grad;
        trace.push(k, f, &g, &x, keep);
        if norm2(&g) <= config.grad_tol {
            trace.status = Termination::ConvergedGrad;
            return Ok((x, trace));
        }
        if step_norm <= config.step_tol {
            trace.status = Termination::ConvergedStep;
            return Ok((x, trace));
        }
    }
    trace.status = Termination::MaxIters;
    Ok((x, trace))
}

/// Fixed-step gradient descent; the step is halved whenever it would increase
/// the objective and kept otherwise.
fn gradient_descent<T: Scalar, O: Objective<T> + ?Sized>(
    objective: &O,
    init: &[T],
    config: &OptimizerConfig<T>,
) -> Result<(Vec<T>, OptimTrace<T>)> {
    const MAX_HALVINGS: usize = 60;
    let keep = config.record_iterates;
    let (mut f, mut g) = start(objective, init)?;
    let mut x = init.to_vec();
    let mut trace = OptimTrace::new();
    trace.push(0, f, &g, &x, keep);
    if norm2(&g) <= config.grad_tol {
        trace.status = Termination::ConvergedGrad;
        return Ok((x, trace));
    }
    let mut eta = config.gd_step;
    let mut trial = vec![T::zero(); x.len()];
    let mut g_new = vec![T::zero(); x.len()];
    for k in 1..=config.max_iters {
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            trial.copy_from_slice(&x);
            axpy(-eta, &g, &mut trial);
            let f_new = objective.value_grad(&trial, &mut g_new);
            if f_new.is_finite() && g_new.iter().all(|v| v.is_finite()) && f_new <= f {
                let step = eta * norm2(&g);
                std::mem::swap(&mut x, &mut trial);
                std::mem::swap(&mut g, &mut g_new);
                f = f_new;
                trace.push(k, f, &g, &x, keep);
                if norm2(&g) <= config.grad_tol {
                    trace.status = Termination::ConvergedGrad;
                    return Ok((x, trace));
                }
                if step <= config.step_tol {
                    trace.status = Termination::ConvergedStep;
                    return Ok((x, trace));
                }
                accepted = true;
                break;
            }
            eta *= T::lit(0.5);
        }
        if !accepted {
            trace.status = Termination::LineSearchFailure;
            return Ok((x, trace));
        }
    }
    trace.status = Termination::MaxIters;
    Ok((x, trace))
}

/// Central-difference gradient with step `h` in every coordinate.
pub fn finite_diff_gradient<T: Scalar, F: Fn(&[T]) -> T>(f: F, point: &[T], h: T) -> Result<Vec<T>> {
    if !(h > T::zero()) {
        return Err(Error::domain("finite-difference step must be positive"));
    }
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let xi = x[i];
        x[i] = xi + h;
        let fp = f(&x);
        x[i] = xi - h;
        let fm = f(&x);
        x[i] = xi;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::domain(format!("non-finite evaluation in coordinate {i}")));
        }
        grad.push((fp - fm) / (h + h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(b: Vec<f64>) -> impl Objective<f64> {
        FnObjective(move |x: &[f64], g: &mut [f64]| {
            let mut f = 0.0;
            for i in 0..x.len() {
                g[i] = x[i] - b[i];
                f += 0.5 * g[i] * g[i];
            }
            f
        })
    }

    fn rosenbrock() -> impl Objective<f64> {
        FnObjective(|x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        })
    }

    #[test]
    fn quadratic_minimum() {
        let obj = quadratic(vec![1.0, 2.0]);
        let cfg = OptimizerConfig::default();
        let (x, trace) = minimize(&obj, &[0.0, 0.0], &cfg).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-9 && (x[1] - 2.0).abs() < 1e-9);
        assert_eq!(trace.status, Termination::ConvergedGrad);
        assert!(trace.final_grad_norm().unwrap() <= cfg.grad_tol);
    }

    #[test]
    fn rosenbrock_from_standard_start() {
        let cfg = OptimizerConfig { memory: 10, ..OptimizerConfig::default() };
        let (x, trace) = minimize(&rosenbrock(), &[-1.2, 1.0], &cfg).unwrap();
        assert!(trace.status.is_converged(), "{:?}", trace.status);
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6, "{x:?}");
        assert!(trace.iterations() <= cfg.max_iters);
        for w in trace.records.windows(2) {
            assert!(w[1].value < w[0].value);
        }
    }

    #[test]
    fn first_direction_is_steepest_descent() {
        let g = vec![3.0, -4.0];
        let d = two_loop(&g, &VecDeque::new());
        assert_eq!(d, vec![-3.0, 4.0]);
    }

    #[test]
    fn exact_quadratic_step_accepted() {
        let obj = quadratic(vec![2.0, -1.0]);
        let x = [0.0, 0.0];
        let mut g = [0.0; 2];
        obj.value_grad(&x, &mut g);
        let d: Vec<f64> = g.iter().map(|v| -v).collect();
        let step = wolfe_line_search(&obj, &x, &d, &WolfeParams::default()).unwrap();
        assert_eq!(step.step, 1.0);
        assert_eq!(step.point, vec![2.0, -1.0]);
    }

    #[test]
    fn ascent_direction_rejected() {
        let obj = quadratic(vec![1.0]);
        let err = wolfe_line_search(&obj, &[0.0], &[-1.0], &WolfeParams::default()).unwrap_err();
        assert!(matches!(err, Error::LineSearch(_)));
    }

    #[test]
    fn welsch_plateau_slice_decreases() {
        // 1D slice of a Welsch sum with one far point sitting on the plateau.
        let pts = [0.0, 0.3, -0.2, 25.0];
        let tau = 1.0;
        let obj = FnObjective(move |x: &[f64], g: &mut [f64]| {
            let mut f = 0.0;
            g[0] = 0.0;
            for &p in &pts {
                let r = p - x[0];
                let w = (-0.5 * tau * r * r).exp();
                f += (1.0 - w) / tau;
                g[0] -= r * w;
            }
            f
        });
        let x0 = [3.0];
        let mut g0 = [0.0];
        let f0 = obj.value_grad(&x0, &mut g0);
        let step = wolfe_line_search(&obj, &x0, &[-g0[0]], &WolfeParams::default()).unwrap();
        assert!(step.value < f0);
        assert!(step.value <= f0 + 1e-4 * step.step * (-g0[0] * g0[0]));
    }

    #[test]
    fn gradient_descent_converges_on_quadratic() {
        let obj = quadratic(vec![1.0, 2.0]);
        let cfg = OptimizerConfig::gradient_descent(0.5, 500);
        let (x, trace) = minimize(&obj, &[0.0, 0.0], &cfg).unwrap();
        assert!(trace.status.is_converged());
        assert!((x[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn gradient_descent_halves_oversized_step() {
        let obj = quadratic(vec![1.0]);
        let cfg = OptimizerConfig::gradient_descent(5.0, 200);
        let (x, trace) = minimize(&obj, &[0.0], &cfg).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-7);
        for w in trace.records.windows(2) {
            assert!(w[1].value <= w[0].value);
        }
    }

    #[test]
    fn non_finite_start_is_error() {
        let obj = FnObjective(|_x: &[f64], g: &mut [f64]| {
            g[0] = 0.0;
            f64::NAN
        });
        let err = minimize(&obj, &[1.0], &OptimizerConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { iterations: 0, .. }));
    }

    #[test]
    fn nan_wall_reports_last_good_iterate() {
        // Finite only on x < 0.5 with its minimum beyond the wall.
        let obj = FnObjective(|x: &[f64], g: &mut [f64]| {
            if x[0] >= 0.5 {
                g[0] = f64::NAN;
                return f64::NAN;
            }
            g[0] = -1.0;
            -x[0]
        });
        match minimize(&obj, &[0.0], &OptimizerConfig::default()) {
            Err(Error::NonFinite { last_good, .. }) => assert!(last_good[0] < 0.5),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn deterministic_trace() {
        let cfg = OptimizerConfig::default();
        let a = minimize(&rosenbrock(), &[-1.2, 1.0], &cfg).unwrap();
        let b = minimize(&rosenbrock(), &[-1.2, 1.0], &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        let cfg = OptimizerConfig::<f64> { wolfe_c1: 0.95, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = OptimizerConfig::<f64> { memory: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn finite_differences() {
        let g = finite_diff_gradient(|x: &[f64]| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
        let z = finite_diff_gradient(|_x: &[f64]| 4.2, &[1.0, -2.0], 1e-5).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-9));
        assert!(finite_diff_gradient(|x: &[f64]| x[0], &[1.0], 0.0).is_err());
        assert!(finite_diff_gradient(|_x: &[f64]| f64::NAN, &[1.0], 1e-3).is_err());
    }
}
