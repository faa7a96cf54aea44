//! Transactional no-regression kernel for autonomous failure mitigation.
//!
//! The crate is organized bottom-up:
//!
//! * [`cluster`] is a deterministic simulated cluster: resources, the
//!   reconciler, fault injection, the synthetic workload and the severity
//!   metric.
//! * [`command`] parses kubectl-style command strings, confines them and
//!   synthesizes inverse commands.
//! * [`undo`] holds the stack of inverse actions used for rollback.
//! * [`txn`] runs checkpointed transactions with severity-monotone
//!   commit/abort under a single-writer lock.
//! * [`oracle`] implements the termination oracles.
//! * [`policy`] contains the pluggable decision makers (scripted playbooks,
//!   random fuzzers, external processes).
//! * [`orchestrator`] drives an episode through the control-flow state
//!   machine, and [`harness`] runs suites and sweeps over scenario files.
//!
//! The key safety property is checked end to end: every externally visible
//! severity value in an episode stays at or below the baseline severity
//! observed when the fault was detected.

pub mod cluster;
pub mod command;
pub mod harness;
pub mod oracle;
pub mod orchestrator;
pub mod policy;
pub mod txn;
pub mod undo;

pub use cluster::{ClusterRules, ClusterState, Severity, SeverityWeights};
pub use command::{Command, LintVerdict, Role};
pub use harness::{Scenario, SuiteReport};
pub use orchestrator::{Ablation, EpisodeReport, RunConfig};
