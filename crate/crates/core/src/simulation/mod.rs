//! Synthetic data under the contaminated linear model and the replicate
//! runners behind the bias, MSE, trace, rate and normality experiments.

mod experiments;
mod generate;
mod presets;

pub use experiments::{
    aggregate_rows, bias_curve, convergence_trace_experiment, ks_standard_normal, mse_distribution,
    normality_experiment, normality_from_spec, rate_experiment, run_replicates, trace_optimizer, Aggregate, BiasPoint,
    ContaminationPlan, EstimatorSpec, ExperimentKind, ExperimentReport, ExperimentSpec, MseTable, NormalityReport,
    RatePoint, ReplicateRow, TauRule, TracePoint, TraceReport, DEFAULT_SEED,
};
pub use generate::{default_beta_star, generate_dataset, mix_seed, ContaminationSpec, DesignSpec, NoiseSpec, Strategy};
pub use presets::{preset, PRESETS};
