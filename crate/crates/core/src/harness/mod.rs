//! Experiment orchestration: configs, training runs with their data sources,
//! validation provisioning, multi-seed studies and reports.

pub mod artifacts;
pub mod config;
pub mod provision;
pub mod report;
pub mod run;
pub mod stats;
pub mod study;

pub use artifacts::{execute_run, RunSummary};
pub use config::{DataSource, ExperimentConfig, ProviderSpec, RawConfig, SizeTag};
pub use provision::{load_validation, provision_validation_buffer, validation_path, ProvisionOptions, SeedRegistry};
pub use run::{evaluate, random_policy_returns, run_experiment, run_fraction_switch, run_standard, run_tandem, RunOutput};
pub use stats::{mean_ci95, MeanCi};
pub use study::{run_study, StudyManifest};
