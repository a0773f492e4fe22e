//! Quantities from the convergence theory: the basin 𝒪_τ, the ball 𝒥_c, the
//! augmented outlier set, the D-condition, τ selectors, the exact Hessian and the
//! deviation bound. All bound-valued outputs hold only up to absolute constants.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{distance, symmetric_eigenvalues, Matrix};
use crate::scalar::Scalar;

/// Ground truth of a simulated dataset: y = Xβ* + θ + ξ.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthMeta<T> {
    pub beta_star: Vec<T>,
    pub outlier_indices: BTreeSet<usize>,
    pub theta: Vec<T>,
    pub noise: Vec<T>,
}

impl<T: Scalar> TruthMeta<T> {
    /// Builds the metadata, taking the outlier set to be the support of θ.
    pub fn new(beta_star: Vec<T>, theta: Vec<T>, noise: Vec<T>) -> Result<Self> {
        if theta.len() != noise.len() {
            return Err(Error::domain("theta and noise lengths differ"));
        }
        let outlier_indices = theta.iter().enumerate().filter(|(_, t)| **t != T::zero()).map(|(i, _)| i).collect();
        Ok(Self { beta_star, outlier_indices, theta, noise })
    }

    pub fn outlier_count(&self) -> usize {
        self.outlier_indices.len()
    }

    pub(crate) fn check(&self, data: &Dataset<T>) -> Result<()> {
        if self.beta_star.len() != data.p() || self.theta.len() != data.n() || self.noise.len() != data.n() {
            return Err(Error::domain("truth metadata does not match the dataset dimensions"));
        }
        if self.outlier_indices.iter().any(|&i| i >= data.n()) {
            return Err(Error::domain("outlier index out of range"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasinParams<T> {
    pub tau: T,
    #[serde(rename = "D")]
    pub d: T,
}

impl<T: Scalar> BasinParams<T> {
    pub fn new(tau: T, d: T) -> Result<Self> {
        if !(tau > T::zero() && tau.is_finite()) {
            return Err(Error::domain(format!("tau must be positive, got {tau}")));
        }
        if !(d > T::zero() && d < T::one()) {
            return Err(Error::domain(format!("D must lie in (0, 1), got {d}")));
        }
        Ok(Self { tau, d })
    }

    /// β lies in 𝒪_τ when its basin fraction reaches D.
    pub fn contains(&self, data: &Dataset<T>, beta: &[T]) -> Result<bool> {
        Ok(basin_indicator_fraction(data, beta, self.tau)? >= self.d)
    }
}

fn check_tau<T: Scalar>(tau: T) -> Result<()> {
    if tau > T::zero() && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("tau must be positive, got {tau}")))
    }
}

/// (1/n)·#{i : τ r_i² ≤ 1/2}, equivalently the fraction with exp(−τr_i²/2) ≥ e^{−1/4}.
pub fn basin_indicator_fraction<T: Scalar>(data: &Dataset<T>, beta: &[T], tau: T) -> Result<T> {
    check_tau(tau)?;
    data.check_beta(beta, "beta")?;
    let half = T::lit(0.5);
    let hits = data.residuals(beta).into_iter().filter(|&r| tau * r * r <= half).count();
    Ok(T::from_usize_lossy(hits) / T::from_usize_lossy(data.n()))
}

/// Closed ball 𝒥_c = {β : ‖β − β*‖ ≤ c}.
pub fn ball_membership<T: Scalar>(beta: &[T], beta_star: &[T], c: T) -> Result<bool> {
    if beta.len() != beta_star.len() {
        return Err(Error::domain("beta and beta_star lengths differ"));
    }
    if !(c > T::zero()) {
        return Err(Error::domain(format!("radius must be positive, got {c}")));
    }
    Ok(distance(beta, beta_star) <= c)
}

/// |O′| with O′ = {i : (y_i − x_iᵀβ*)² ≥ 1/(2τ)} ∪ O.
pub fn augmented_outlier_count<T: Scalar>(data: &Dataset<T>, truth: &TruthMeta<T>, tau: T) -> Result<usize> {
    check_tau(tau)?;
    truth.check(data)?;
    let threshold = T::one() / (T::lit(2.0) * tau);
    Ok(data
        .residuals(&truth.beta_star)
        .into_iter()
        .enumerate()
        .filter(|&(i, r)| r * r >= threshold || truth.outlier_indices.contains(&i))
        .count())
}

/// Smallest D with p + 2o′(1 + log(n/(2o′))) ≤ Dn/C². Values ≥ 1 mean the
/// condition is vacuous.
pub fn d_condition(n: usize, p: usize, o_prime: usize, c: f64) -> Result<f64> {
    if o_prime == 0 {
        return Err(Error::domain("o' must be at least 1"));
    }
    if 2 * o_prime > n {
        return Err(Error::domain(format!("o' = {o_prime} exceeds n/2 = {}", n as f64 / 2.0)));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::domain(format!("C must be positive, got {c}")));
    }
    let n = n as f64;
    let o = o_prime as f64;
    Ok(c * c * (p as f64 + 2.0 * o * (1.0 + (n / (2.0 * o)).ln())) / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauMode {
    /// C((o + log(1/δ))/n)^{2/ℓ}
    Prop2,
    /// C·log(1/δ)/n
    Debias,
    /// C·log(n)/n
    Asymptotic,
}

impl std::str::FromStr for TauMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prop2" => Ok(Self::Prop2),
            "debias" => Ok(Self::Debias),
            "asymptotic" => Ok(Self::Asymptotic),
            _ => Err(Error::config(format!("unknown tau mode '{s}' (expected prop2, debias or asymptotic)"))),
        }
    }
}

fn check_tau_inputs(n: usize, delta: f64, ell: f64, c: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::domain("n must be at least 1"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    if ell.is_nan() || ell < 2.0 {
        return Err(Error::domain(format!("ell must be at least 2, got {ell}")));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::domain(format!("C must be positive, got {c}")));
    }
    Ok(())
}

/// τ from the theory. `ell = f64::INFINITY` gives 2/ℓ = 0, so prop2 returns C.
pub fn theoretical_tau(n: usize, o: usize, delta: f64, ell: f64, c: f64, mode: TauMode) -> Result<f64> {
    check_tau_inputs(n, delta, ell, c)?;
    let nf = n as f64;
    let log_inv_delta = -delta.ln();
    let tau = match mode {
        TauMode::Prop2 => c * ((o as f64 + log_inv_delta) / nf).powf(2.0 / ell),
        TauMode::Debias => c * log_inv_delta / nf,
        TauMode::Asymptotic => c * nf.ln() / nf,
    };
    if tau > 0.0 && tau.is_finite() {
        Ok(tau)
    } else {
        Err(Error::domain(format!("tau formula gave {tau} for n = {n}")))
    }
}

/// ∇²f(β) = (1/n)Σ w_i x_i x_iᵀ − (τ/n)Σ r_i² w_i x_i x_iᵀ with w_i = exp(−τr_i²/2).
pub fn welsch_hessian<T: Scalar>(data: &Dataset<T>, beta: &[T], tau: T) -> Result<Matrix<T>> {
    check_tau(tau)?;
    data.check_beta(beta, "beta")?;
    let p = data.p();
    let half = T::lit(0.5);
    let mut first = Matrix::<T>::zeros(p, p);
    let mut second = Matrix::zeros(p, p);
    for (row, r) in data.x().row_iter().zip(data.residuals(beta)) {
        let w = (-(tau * r * r * half)).exp();
        let v = tau * r * r * w;
        for j in 0..p {
            for k in 0..=j {
                let xx = row[j] * row[k];
                first.row_mut(j)[k] += w * xx;
                second.row_mut(j)[k] += v * xx;
            }
        }
    }
    let inv_n = T::one() / T::from_usize_lossy(data.n());
    let mut h = Matrix::zeros(p, p);
    for j in 0..p {
        for k in 0..=j {
            let val = (first[(j, k)] - second[(j, k)]) * inv_n;
            h.row_mut(j)[k] = val;
            h.row_mut(k)[j] = val;
        }
    }
    Ok(h)
}

pub fn hessian_min_eigenvalue<T: Scalar>(data: &Dataset<T>, beta: &[T], tau: T) -> Result<T> {
    if data.p() > 500 {
        return Err(Error::domain("dense eigendecomposition limited to p <= 500"));
    }
    let h = welsch_hessian(data, beta, tau)?;
    Ok(symmetric_eigenvalues(&h)?[0])
}

/// C1[(o/n)^{1−1/ℓ}√log(en/(2o)) + √(p/n) + √(log(1/δ)/n · log(en/(2log(1/δ))))],
/// with the first term dropped when o = 0.
pub fn deviation_bound(n: usize, p: usize, o: usize, delta: f64, ell: f64, c1: f64) -> Result<f64> {
    check_tau_inputs(n, delta, ell, c1)?;
    let nf = n as f64;
    let e = std::f64::consts::E;
    let contamination = if o == 0 {
        0.0
    } else {
        let of = o as f64;
        (of / nf).powf(1.0 - 1.0 / ell) * (e * nf / (2.0 * of)).ln().max(0.0).sqrt()
    };
    let clean = (p as f64 / nf).sqrt();
    let l = -delta.ln();
    let confidence = (l / nf * (e * nf / (2.0 * l)).ln().max(0.0)).sqrt();
    Ok(c1 * (contamination + clean + confidence))
}
