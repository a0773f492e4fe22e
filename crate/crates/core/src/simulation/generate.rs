use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Pareto, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::diagnostics::TruthMeta;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, Matrix};

/// Noise law, always standardized to mean 0 and variance 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    Gaussian,
    Pareto { shape: f64 },
    Student { df: f64 },
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::Pareto { shape: 2.5 }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::Gaussian => Ok(()),
            NoiseSpec::Pareto { shape } if shape > 2.0 && shape.is_finite() => Ok(()),
            NoiseSpec::Student { df } if df > 2.0 && df.is_finite() => Ok(()),
            NoiseSpec::Pareto { shape } => {
                Err(Error::config(format!("noise.shape must exceed 2 for finite variance, got {shape}")))
            }
            NoiseSpec::Student { df } => {
                Err(Error::config(format!("noise.df must exceed 2 for finite variance, got {df}")))
            }
        }
    }

    /// One standardized draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseSpec::Gaussian => rng.sample(StandardNormal),
            NoiseSpec::Pareto { shape } => {
                let a = shape;
                let mean = a / (a - 1.0);
                let sd = (a / ((a - 1.0) * (a - 1.0) * (a - 2.0))).sqrt();
                let draw = Pareto::new(1.0, a).expect("validated shape").sample(rng);
                (draw - mean) / sd
            }
            NoiseSpec::Student { df } => {
                let draw = StudentT::new(df).expect("validated df").sample(rng);
                draw * ((df - 2.0) / df).sqrt()
            }
        }
    }

    /// P(|ξ| ≥ t) for the standardized law.
    pub fn two_sided_tail(&self, t: f64) -> f64 {
        use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
        if t <= 0.0 {
            return 1.0;
        }
        match *self {
            NoiseSpec::Gaussian => 2.0 * Normal::standard().sf(t),
            NoiseSpec::Pareto { shape: a } => {
                let mean = a / (a - 1.0);
                let sd = (a / ((a - 1.0) * (a - 1.0) * (a - 2.0))).sqrt();
                let survival = |x: f64| if x <= 1.0 { 1.0 } else { x.powf(-a) };
                // ξ ≥ t ⇔ P ≥ mean + sd·t and ξ ≤ −t ⇔ P ≤ mean − sd·t.
                let upper = survival(mean + sd * t);
                let lower = 1.0 - survival(mean - sd * t);
                upper + lower.max(0.0)
            }
            NoiseSpec::Student { df } => {
                let scale = (df / (df - 2.0)).sqrt();
                let dist = StudentsT::new(0.0, 1.0, df).expect("validated df");
                2.0 * dist.sf(t * scale)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignSpec {
    /// Standard normal entries.
    #[default]
    GaussianIsotropic,
    /// ±1 entries.
    Rademacher,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// o uniformly chosen rows get ±M with random signs.
    RandomShift,
    /// The o rows with the largest |x_iᵀu| get M·sign(x_iᵀu).
    #[default]
    SignAligned,
    /// o uniformly chosen rows get θ_i = −2x_iᵀβ*, flipping the sign of the signal.
    ResponseFlip,
}

/// How θ is built for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContaminationSpec {
    /// o = ⌊proportion·n⌋ unless `count` is given.
    #[serde(default)]
    pub proportion: f64,
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default = "default_magnitude")]
    pub magnitude: f64,
    #[serde(default)]
    pub strategy: Strategy,
    /// Direction u for sign_aligned; defaults to β*/‖β*‖.
    #[serde(default)]
    pub direction: Option<Vec<f64>>,
}

fn default_magnitude() -> f64 {
    100.0
}

impl Default for ContaminationSpec {
    fn default() -> Self {
        Self::clean()
    }
}

impl ContaminationSpec {
    pub fn clean() -> Self {
        Self {
            proportion: 0.0,
            count: None,
            magnitude: default_magnitude(),
            strategy: Strategy::default(),
            direction: None,
        }
    }

    pub fn proportion(proportion: f64, magnitude: f64, strategy: Strategy) -> Self {
        Self { proportion, magnitude, strategy, ..Self::clean() }
    }

    pub fn count(count: usize, magnitude: f64, strategy: Strategy) -> Self {
        Self { count: Some(count), magnitude, strategy, ..Self::clean() }
    }

    /// Number of contaminated rows for a sample of size n.
    pub fn outlier_count(&self, n: usize) -> usize {
        match self.count {
            Some(o) => o,
            // The nudge keeps products such as 0.29·100 from rounding down.
            None => (self.proportion * n as f64 + 1e-9).floor() as usize,
        }
    }

    pub fn validate(&self, n: usize, p: usize) -> Result<()> {
        if !(0.0..0.5).contains(&self.proportion) {
            return Err(Error::config(format!(
                "contamination.proportion must lie in [0, 0.5), got {}",
                self.proportion
            )));
        }
        if let Some(o) = self.count {
            if 2 * o >= n {
                return Err(Error::config(format!("contamination.count = {o} must be below n/2 = {}", n as f64 / 2.0)));
            }
        }
        if !(self.magnitude > 0.0 && self.magnitude.is_finite()) {
            return Err(Error::config(format!("contamination.magnitude must be positive, got {}", self.magnitude)));
        }
        if let Some(u) = &self.direction {
            if u.len() != p {
                return Err(Error::config(format!("contamination.direction has length {}, expected p = {p}", u.len())));
            }
            if !(norm2(u) > 0.0) || u.iter().any(|v| !v.is_finite()) {
                return Err(Error::config("contamination.direction must be a finite nonzero vector"));
            }
        }
        Ok(())
    }
}

/// The default truth (1, …, 1)/√p.
pub fn default_beta_star(p: usize) -> Vec<f64> {
    vec![1.0 / (p as f64).sqrt(); p]
}

/// splitmix64 finalizer applied to base_seed XOR replicate.
pub fn mix_seed(base_seed: u64, replicate: u64) -> u64 {
    let mut z = (base_seed ^ replicate).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws y = Xβ* + θ + ξ.
///
/// Randomness is consumed in a fixed order (design, noise, a row permutation,
/// signs) so that datasets sharing a seed but differing in contamination
/// share X and ξ, and random_shift outlier sets are nested as o grows.
pub fn generate_dataset(
    n: usize,
    beta_star: &[f64],
    design: DesignSpec,
    noise: &NoiseSpec,
    contamination: &ContaminationSpec,
    seed: u64,
) -> Result<(Dataset<f64>, TruthMeta<f64>)> {
    let p = beta_star.len();
    if n == 0 || p == 0 {
        return Err(Error::config("n and p must be at least 1"));
    }
    if beta_star.iter().any(|b| !b.is_finite()) {
        return Err(Error::config("beta_star must be finite"));
    }
    noise.validate()?;
    contamination.validate(n, p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let entries: Vec<f64> = (0..n * p)
        .map(|_| match design {
            DesignSpec::GaussianIsotropic => rng.sample(StandardNormal),
            DesignSpec::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        })
        .collect();
    let x = Matrix::from_row_major(n, p, entries)?;
    let xi: Vec<f64> = (0..n).map(|_| noise.sample(&mut rng)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let signs: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();

    let o = contamination.outlier_count(n);
    let m = contamination.magnitude;
    let mut theta = vec![0.0; n];
    if o > 0 {
        match contamination.strategy {
            Strategy::RandomShift => {
                for &i in &order[..o] {
                    theta[i] = m * signs[i];
                }
            }
            Strategy::SignAligned => {
                let u = match &contamination.direction {
                    Some(u) => u.clone(),
                    None => {
                        let norm = norm2(beta_star);
                        if norm == 0.0 {
                            return Err(Error::config("sign_aligned needs contamination.direction when beta_star = 0"));
                        }
                        beta_star.iter().map(|b| b / norm).collect()
                    }
                };
                let proj: Vec<f64> = x.row_iter().map(|row| dot(row, &u)).collect();
                let mut ranked: Vec<usize> = (0..n).collect();
                // Ties broken by row index for determinism.
                ranked.sort_by(|&a, &b| proj[b].abs().total_cmp(&proj[a].abs()).then(a.cmp(&b)));
                for &i in &ranked[..o] {
                    let s = if proj[i] < 0.0 { -1.0 } else { 1.0 };
                    theta[i] = m * s;
                }
            }
            Strategy::ResponseFlip => {
                let chosen: Vec<usize> =
                    order.iter().copied().filter(|&i| dot(x.row(i), beta_star) != 0.0).take(o).collect();
                if chosen.len() < o {
                    return Err(Error::config(format!(
                        "response_flip needs {o} rows with x_iᵀβ* ≠ 0, found {}",
                        chosen.len()
                    )));
                }
                for i in chosen {
                    theta[i] = -2.0 * dot(x.row(i), beta_star);
                }
            }
        }
    }
    let signal = x.mul_vec(beta_star);
    let y: Vec<f64> = (0..n).map(|i| signal[i] + theta[i] + xi[i]).collect();
    let data = Dataset::new(x, y)?;
    let truth = TruthMeta::new(beta_star.to_vec(), theta, xi)?;
    Ok((data, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_mix_is_deterministic_and_spreads() {
        assert_eq!(mix_seed(7, 3), mix_seed(7, 3));
        assert_ne!(mix_seed(7, 3), mix_seed(7, 4));
        assert_ne!(mix_seed(0, 0), 0);
    }

    #[test]
    fn clean_has_no_outliers() {
        let (d, t) = generate_dataset(
            50,
            &default_beta_star(3),
            DesignSpec::GaussianIsotropic,
            &NoiseSpec::Gaussian,
            &ContaminationSpec::clean(),
            1,
        )
        .unwrap();
        assert_eq!(d.n(), 50);
        assert!(t.outlier_indices.is_empty());
        assert!(t.theta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rademacher_entries() {
        let (d, _) = generate_dataset(
            20,
            &[1.0, 0.0],
            DesignSpec::Rademacher,
            &NoiseSpec::Gaussian,
            &ContaminationSpec::clean(),
            9,
        )
        .unwrap();
        assert!(d.x().as_slice().iter().all(|v| v.abs() == 1.0));
    }

    #[test]
    fn contamination_shares_design_and_noise() {
        let b = default_beta_star(4);
        let gen = |prop: f64| {
            generate_dataset(
                200,
                &b,
                DesignSpec::GaussianIsotropic,
                &NoiseSpec::default(),
                &ContaminationSpec::proportion(prop, 50.0, Strategy::RandomShift),
                11,
            )
            .unwrap()
        };
        let (d1, t1) = gen(0.05);
        let (d2, t2) = gen(0.1);
        assert_eq!(d1.x(), d2.x());
        assert_eq!(t1.noise, t2.noise);
        assert!(t1.outlier_indices.is_subset(&t2.outlier_indices));
        assert_eq!(t2.outlier_count(), 20);
    }

    #[test]
    fn response_flip_negates_signal() {
        let b = default_beta_star(2);
        let (d, t) = generate_dataset(
            40,
            &b,
            DesignSpec::GaussianIsotropic,
            &NoiseSpec::Gaussian,
            &ContaminationSpec::count(4, 1.0, Strategy::ResponseFlip),
            5,
        )
        .unwrap();
        assert_eq!(t.outlier_count(), 4);
        for &i in &t.outlier_indices {
            let s = dot(d.x().row(i), &b);
            assert!((d.y()[i] - (-s + t.noise[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let b = default_beta_star(2);
        let bad = [
            ContaminationSpec::proportion(0.5, 1.0, Strategy::RandomShift),
            ContaminationSpec::proportion(0.1, -1.0, Strategy::RandomShift),
            ContaminationSpec::count(10, 1.0, Strategy::RandomShift),
        ];
        for c in bad {
            let r = generate_dataset(20, &b, DesignSpec::GaussianIsotropic, &NoiseSpec::Gaussian, &c, 0);
            assert!(matches!(r, Err(Error::Config(_))), "{c:?}");
        }
        let r = generate_dataset(
            20,
            &b,
            DesignSpec::GaussianIsotropic,
            &NoiseSpec::Pareto { shape: 2.0 },
            &ContaminationSpec::clean(),
            0,
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn outlier_count_rounding() {
        assert_eq!(ContaminationSpec::proportion(0.29, 1.0, Strategy::RandomShift).outlier_count(100), 29);
        assert_eq!(ContaminationSpec::proportion(0.07, 1.0, Strategy::RandomShift).outlier_count(1000), 70);
        assert_eq!(ContaminationSpec::proportion(0.1, 1.0, Strategy::RandomShift).outlier_count(15), 1);
    }

    #[test]
    fn tail_probabilities() {
        assert!((NoiseSpec::Gaussian.two_sided_tail(1.959_963_984_540_054) - 0.05).abs() < 1e-9);
        let p = NoiseSpec::Pareto { shape: 2.5 };
        let (mean, sd) = (5.0 / 3.0, (2.5f64 / (1.5 * 1.5 * 0.5)).sqrt());
        // Support starts at −(mean − 1)/sd ≈ −0.447, so only the upper tail counts here.
        assert!((p.two_sided_tail(2.0) - (mean + 2.0 * sd).powf(-2.5)).abs() < 1e-15);
        let t = 0.3;
        let expected = (mean + t * sd).powf(-2.5) + 1.0 - (mean - t * sd).powf(-2.5);
        assert!((p.two_sided_tail(t) - expected).abs() < 1e-15);
    }
}
