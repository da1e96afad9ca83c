//! Experiment configuration, runs, metric files and the acceptance suite.

pub mod acceptance;
pub mod config;
pub mod metrics;
pub mod random;
pub mod run;

pub use acceptance::{run_acceptance_suite, AcceptanceReport, CriterionResult, Tier};
pub use config::{DiStart, DiscretizedDoubleIntegrator, EnvConfig, ExperimentConfig, KeyValues, Learner};
pub use metrics::{write_aggregate_csv, write_seed_csv, METRIC_COLUMNS};
pub use run::{
    export_feasible_set, oracle_report, run_experiment, run_experiment_file, DoubleIntegratorSetup, GridSetup, RunReport,
    SeedResult, OUTPUT_ROOT_VAR,
};
