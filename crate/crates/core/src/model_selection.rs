//! Median-based k-fold cross-validation of the loss tuning constant.

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::diagnostics::{theoretical_tau, TauMode};
use crate::error::{Error, Result};
use crate::estimators::{fit_two_stage, FitConfig};
use crate::linalg::median;
use crate::loss::{LossFamily, LossSpec};
use crate::scalar::Scalar;

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_CV_SEED: u64 = 20_240_601;
const GRID_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvStatistic {
    #[default]
    MedianAbsResidual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvSpec {
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// Candidate tuning constants, strictly increasing.
    pub grid: Vec<f64>,
    #[serde(default)]
    pub statistic: CvStatistic,
    #[serde(default = "default_seed")]
    pub shuffle_seed: u64,
}

fn default_folds() -> usize {
    DEFAULT_FOLDS
}

fn default_seed() -> u64 {
    DEFAULT_CV_SEED
}

impl CvSpec {
    pub fn new(grid: Vec<f64>) -> Self {
        Self { folds: DEFAULT_FOLDS, grid, statistic: CvStatistic::MedianAbsResidual, shuffle_seed: DEFAULT_CV_SEED }
    }

    pub fn with_folds(mut self, folds: usize) -> Self {
        self.folds = folds;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.shuffle_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::config(format!("cv.folds must be at least 2, got {}", self.folds)));
        }
        if self.grid.is_empty() {
            return Err(Error::config("cv.grid must not be empty"));
        }
        if self.grid.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::config("cv.grid entries must be positive finite numbers"));
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("cv.grid must be strictly increasing"));
        }
        Ok(())
    }
}

/// One row of the cross-validation table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvRow {
    pub candidate: f64,
    /// Median |held-out residual| per fold; `None` where the fit failed.
    pub fold_scores: Vec<Option<f64>>,
    /// Median of the successful fold scores; `None` if every fold failed.
    pub aggregate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvOutcome {
    pub chosen: f64,
    pub rows: Vec<CvRow>,
}

impl CvOutcome {
    pub fn chosen_row(&self) -> &CvRow {
        self.rows.iter().find(|r| r.candidate == self.chosen).expect("chosen value comes from the table")
    }
}

/// Validation folds: a seeded shuffle of 0..n cut into `k` contiguous pieces
/// whose sizes differ by at most one.
pub fn fold_partition(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    out
}

/// Seeded train/test split: the first ⌈fraction·n⌉ shuffled indices form the
/// test set. Both halves are returned in increasing index order.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!("holdout fraction must lie in (0, 1), got {fraction}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = ((fraction * n as f64).ceil() as usize).min(n);
    let (mut test, mut train) = (idx[..k].to_vec(), idx[k..].to_vec());
    if test.is_empty() || train.is_empty() {
        return Err(Error::domain(format!("holdout fraction {fraction} leaves an empty split for n = {n}")));
    }
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Picks the tuning constant of `template.loss` minimizing the median over folds
/// of the held-out median absolute residual.
///
/// Each candidate is fitted with the full two-stage procedure on k − 1 folds.
/// Ties go to the smaller candidate.
pub fn median_cv<T: Scalar>(data: &Dataset<T>, cv: &CvSpec, template: &FitConfig<T>) -> Result<CvOutcome> {
    cv.validate()?;
    template.validate()?;
    if template.loss.tuning().is_none() {
        return Err(Error::config(format!("{} loss has no tuning constant to cross-validate", template.loss.family())));
    }
    let n = data.n();
    if n < 2 * cv.folds {
        return Err(Error::domain(format!("cross-validation needs n >= 2·folds, got n = {n} with {} folds", cv.folds)));
    }
    let folds = fold_partition(n, cv.folds, cv.shuffle_seed);
    let mut fold_of = vec![0; n];
    for (f, members) in folds.iter().enumerate() {
        for &i in members {
            fold_of[i] = f;
        }
    }
    let tasks: Vec<(usize, usize)> = (0..cv.grid.len()).flat_map(|c| (0..cv.folds).map(move |f| (c, f))).collect();
    let scores: Vec<Option<f64>> = tasks
        .par_iter()
        .map(|&(c, f)| {
            let candidate = cv.grid[c];
            let score = score_fold(data, template, candidate, &fold_of, f, &folds[f]);
            score.map_err(|e| warn!("cv candidate {candidate} fold {f} failed: {e}")).ok()
        })
        .collect();

    let rows: Vec<CvRow> = cv
        .grid
        .iter()
        .enumerate()
        .map(|(c, &candidate)| {
            let fold_scores = scores[c * cv.folds..(c + 1) * cv.folds].to_vec();
            let ok: Vec<f64> = fold_scores.iter().flatten().copied().collect();
            let aggregate = median(&ok);
            if aggregate.is_none() {
                warn!("cv candidate {candidate} excluded: every fold fit failed");
            }
            CvRow { candidate, fold_scores, aggregate }
        })
        .collect();

    let mut best: Option<(f64, f64)> = None;
    for row in &rows {
        if let Some(a) = row.aggregate {
            if best.is_none_or(|(_, b)| a < b) {
                best = Some((row.candidate, a));
            }
        }
    }
    match best {
        Some((chosen, _)) => Ok(CvOutcome { chosen, rows }),
        None => Err(Error::Selection("every candidate failed on every fold".into())),
    }
}

fn score_fold<T: Scalar>(
    data: &Dataset<T>,
    template: &FitConfig<T>,
    candidate: f64,
    fold_of: &[usize],
    fold: usize,
    held_out: &[usize],
) -> Result<f64> {
    let train: Vec<usize> = (0..data.n()).filter(|&i| fold_of[i] != fold).collect();
    let mut cfg = template.clone();
    cfg.loss = template.loss.with_tuning(T::lit(candidate))?;
    let fit = fit_two_stage(&data.select(&train), &cfg)?;
    let test = data.select(held_out);
    let abs: Vec<f64> = test.residuals(&fit.beta).into_iter().map(|r| r.as_f64().abs()).collect();
    median(&abs)
        .filter(|s| s.is_finite())
        .ok_or_else(|| Error::Numerical(format!("non-finite held-out score for candidate {candidate}")))
}

/// Twelve log-spaced candidates spanning two decades either side of a
/// family-specific anchor.
///
/// The Welsch anchor is the theoretical τ for o = 0.05n outliers at δ = 0.05;
/// the other redescending and Huber-type families are anchored at their default
/// constants.
pub fn default_grid(family: LossFamily, n: usize, p: usize) -> Result<Vec<f64>> {
    if n == 0 || p == 0 {
        return Err(Error::domain("default_grid needs n, p >= 1"));
    }
    let (anchor, lo, hi) = match family {
        LossFamily::Welsch => {
            (theoretical_tau(n, (0.05 * n as f64).floor() as usize, 0.05, 2.0, 1.0, TauMode::Prop2)?, 0.01, 100.0)
        }
        LossFamily::Huber | LossFamily::Tukey | LossFamily::Hampel => {
            let anchor = LossSpec::<f64>::default_for(family).tuning().expect("family has a tuning constant");
            (anchor, 0.1, 10.0)
        }
        LossFamily::Pinball | LossFamily::Absolute | LossFamily::Squared => {
            return Err(Error::config(format!("{family} loss has no cross-validated scale constant")))
        }
    };
    let (a, b) = ((lo * anchor).ln(), (hi * anchor).ln());
    let step = (b - a) / (GRID_LEN - 1) as f64;
    Ok((0..GRID_LEN).map(|i| (a + step * i as f64).exp()).collect())
}
