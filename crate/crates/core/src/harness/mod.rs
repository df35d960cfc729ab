//! Experiment orchestration: configuration, data preparation, training in
//! individual or global mode, test-set evaluation, policy selection and
//! CSV/SVG export.

mod config;
mod evaluate;
mod experiment;
mod features;
pub mod plot;
mod report;

pub use config::{ExperimentConfig, Mode, Preset};
pub use evaluate::{
    compute_cdf, evaluate_checkpoint, evaluate_policy, evaluate_policy_traced, select_optimal,
    test_set, Case, EvaluationRecord,
};
pub use experiment::{
    cluster_data, env_for, evaluate_saved, generate_data, policy_groups, prepare,
    reference_provider, run_experiment, run_in, train_policy, worker_pool, ExperimentOutcome,
    PolicyRun, Prepared, RunManifest, SeedRun, StageRecord, WORKERS_ENV,
};
pub use features::{FeatureProvider, ReferenceSimulation};
pub use report::{
    cluster_rows, clusters_from_rows, eps_tag, evaluation_rows, median_case, read_csv,
    render_reports, write_bhp_trace, write_cdfs, write_csv, write_evaluation, BhpRow, CdfRow,
    ClusterRow, EvaluationRow,
};

#[cfg(test)]
mod tests;
