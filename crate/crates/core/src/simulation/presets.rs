//! Named desk-scale experiment configurations mirroring the numerical section.

use super::experiments::{
    trace_optimizer, ContaminationPlan, EstimatorSpec, ExperimentKind, ExperimentSpec, TauRule, DEFAULT_SEED,
};
use super::generate::{DesignSpec, NoiseSpec, Strategy};
use crate::diagnostics::TauMode;
use crate::error::{Error, Result};
use crate::loss::{LossFamily, LossSpec};

pub const PRESETS: [&str; 7] =
    ["fig1a-desk", "fig4-desk", "fig5-desk", "fig7-desk", "rate-desk", "debias-desk", "normality-desk"];

fn welsch() -> EstimatorSpec {
    EstimatorSpec::welsch_rule("welsch", TauRule::new(TauMode::Prop2))
}

fn comparator(family: LossFamily) -> EstimatorSpec {
    EstimatorSpec::new(family.name(), LossSpec::default_for(family))
}

fn quantile(q: f64) -> EstimatorSpec {
    EstimatorSpec::new(format!("qr_{q}"), LossSpec::Pinball { q })
}

fn base(kind: ExperimentKind, n: Vec<usize>, replicates: usize) -> ExperimentSpec {
    ExperimentSpec {
        kind,
        n,
        p: 5,
        beta_star: None,
        design: DesignSpec::GaussianIsotropic,
        noise: NoiseSpec::Pareto { shape: 2.5 },
        contamination: ContaminationPlan::default(),
        estimators: Vec::new(),
        replicates,
        base_seed: DEFAULT_SEED,
    }
}

fn mse_at(proportion: f64) -> ExperimentSpec {
    ExperimentSpec {
        contamination: ContaminationPlan::proportions(vec![proportion], 100.0, Strategy::SignAligned),
        estimators: vec![
            welsch(),
            comparator(LossFamily::Huber),
            comparator(LossFamily::Tukey),
            comparator(LossFamily::Hampel),
        ],
        ..base(ExperimentKind::MseDistribution, vec![1000], 1000)
    }
}

/// Looks up a preset by name; `seed` replaces the default base seed.
pub fn preset(name: &str, seed: Option<u64>) -> Result<ExperimentSpec> {
    let mut spec = match name {
        "fig1a-desk" => ExperimentSpec {
            contamination: ContaminationPlan::proportions(
                vec![0.0, 0.02, 0.04, 0.06, 0.08, 0.10],
                100.0,
                Strategy::SignAligned,
            ),
            estimators: vec![
                welsch(),
                comparator(LossFamily::Huber),
                quantile(0.1),
                quantile(0.5),
                quantile(0.9),
                comparator(LossFamily::Tukey),
                comparator(LossFamily::Hampel),
            ],
            ..base(ExperimentKind::BiasCurve, vec![1000], 500)
        },
        "fig4-desk" => {
            let gd = trace_optimizer(0.5, 100);
            // Both descents start from the converged LAD fit.
            let from_lad = |mut e: EstimatorSpec| {
                e.fit.algorithm1_c = 0.0;
                e.with_optimizer(gd)
            };
            ExperimentSpec {
                contamination: ContaminationPlan::proportions(vec![0.1], 100.0, Strategy::SignAligned),
                estimators: vec![from_lad(welsch()), from_lad(comparator(LossFamily::Huber))],
                ..base(ExperimentKind::ConvergenceTrace, vec![1000], 50)
            }
        }
        "fig5-desk" => mse_at(0.1),
        "fig7-desk" => mse_at(0.2),
        "rate-desk" => ExperimentSpec {
            contamination: ContaminationPlan::proportions(vec![0.0], 100.0, Strategy::SignAligned),
            estimators: vec![welsch()],
            ..base(ExperimentKind::RateCurve, vec![500, 2000], 200)
        },
        "debias-desk" => ExperimentSpec {
            contamination: ContaminationPlan::proportions(vec![0.0, 0.1], 1000.0, Strategy::SignAligned),
            estimators: vec![EstimatorSpec::welsch_rule("welsch", TauRule::new(TauMode::Debias))],
            ..base(ExperimentKind::MseDistribution, vec![1000], 200)
        },
        "normality-desk" => ExperimentSpec {
            p: 3,
            noise: NoiseSpec::Gaussian,
            estimators: vec![EstimatorSpec::welsch_rule("welsch", TauRule::new(TauMode::Asymptotic))],
            ..base(ExperimentKind::Normality, vec![5000], 1000)
        },
        other => return Err(Error::config(format!("unknown preset `{other}` (available: {})", PRESETS.join(", ")))),
    };
    if let Some(s) = seed {
        spec.base_seed = s;
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_validates() {
        for name in PRESETS {
            preset(name, None).unwrap().validate().unwrap();
        }
        assert!(preset("nope", None).is_err());
        assert_eq!(preset("fig5-desk", Some(9)).unwrap().base_seed, 9);
    }
}
