//! Simulation study: data-generating process with logistic discontinuation, the
//! true-effect oracle, the replication runner and frequentist metrics.

mod scenario;
mod simulate;
mod study;

pub use scenario::{
    ArmDropout, DropoutModel, EstimatorSpec, Hypothesis, IceLevel, OutcomeModel, ScenarioConfig,
};
pub use simulate::{simulate_patterns, simulate_trial, true_effect_oracle, OracleEffect};
pub use study::{
    compute_metrics, is_null, replication_gibbs_config, replication_record, run_replication,
    run_study, scenario_oracle, write_replications_csv, EstimatorMetrics, EstimatorResult,
    MetricsReport, ReplicationResult, StudyOutput, REPLICATION_HEADER,
};
