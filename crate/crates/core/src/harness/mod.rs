//! Scenario files, suite runs, step-limit sweeps and report aggregation.

mod random;
mod scenario;
mod suite;

pub use random::random_scenario;
pub use scenario::{
    load_dir, load_scenario, DeploymentSpec, LoadError, NodeSpec, PvcSpec, RulesSpec, Scenario, SchemaError, ServiceSpec,
    StorageClassSpec,
};
pub use suite::{run_scenario, run_suite, sweep_csv, sweep_step_limit, PolicyKind, SuiteError, SuiteReport, SweepRow};
