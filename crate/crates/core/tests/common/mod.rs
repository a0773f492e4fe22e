#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use welsch_regression::simulation::{
    default_beta_star, generate_dataset, ContaminationSpec, DesignSpec, NoiseSpec, Strategy,
};
use welsch_regression::{diagnostics::TruthMeta, Dataset, Matrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Gaussian design with Gaussian noise of standard deviation `sd` around `beta`.
pub fn gaussian_fixture(n: usize, beta: &[f64], sd: f64, seed: u64) -> Dataset<f64> {
    let mut r = rng(seed);
    let p = beta.len();
    let mut x = Matrix::zeros(n, p);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row_mut(i);
        for v in row.iter_mut() {
            *v = normal(&mut r);
        }
        let signal: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
        y.push(signal + sd * normal(&mut r));
    }
    Dataset::new(x, y).unwrap()
}

pub fn simulated(
    n: usize,
    p: usize,
    noise: NoiseSpec,
    proportion: f64,
    strategy: Strategy,
    seed: u64,
) -> (Dataset<f64>, TruthMeta<f64>) {
    generate_dataset(
        n,
        &default_beta_star(p),
        DesignSpec::GaussianIsotropic,
        &noise,
        &ContaminationSpec::proportion(proportion, 100.0, strategy),
        seed,
    )
    .unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}
