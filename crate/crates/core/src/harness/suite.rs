use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Scenario;
use crate::orchestrator::{run_episode, EpisodeError, EpisodeReport, RunConfig};
use crate::policy::{ExternalPolicy, Policy, RandomPolicy, ScriptedPolicy};

/// Which decision maker drives each episode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PolicyKind {
    /// The scenario's playbook.
    Scripted,
    /// Random writes, seeded per scenario from `seed`.
    Random { seed: u64, max_len: usize },
    /// A process speaking the framed protocol on stdin/stdout.
    External { program: String, args: Vec<String>, timeout: Duration },
}

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("{scenario}: {source}")]
    Episode { scenario: String, source: EpisodeError },
    #[error("{scenario}: {message}")]
    Policy { scenario: String, message: String },
    #[error("step limits must be strictly ascending: {0:?}")]
    LimitsNotAscending(Vec<usize>),
}

fn make_policy(scenario: &Scenario, index: usize, kind: &PolicyKind, k: usize) -> Result<Box<dyn Policy>, SuiteError> {
    let fail = |message: String| SuiteError::Policy { scenario: scenario.id.clone(), message };
    Ok(match kind {
        PolicyKind::Scripted => Box::new(ScriptedPolicy::new(&scenario.load_playbook().map_err(fail)?)),
        PolicyKind::Random { seed, max_len } => {
            Box::new(RandomPolicy::new(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index as u64), (*max_len).min(k)))
        }
        PolicyKind::External { program, args, timeout } => {
            Box::new(ExternalPolicy::spawn(program, args, *timeout, k).map_err(|e| fail(e.to_string()))?)
        }
    })
}

/// Runs one scenario.
pub fn run_scenario(
    scenario: &Scenario,
    index: usize,
    kind: &PolicyKind,
    config: &RunConfig,
) -> Result<EpisodeReport, SuiteError> {
    let mut policy = make_policy(scenario, index, kind, config.k)?;
    run_episode(&scenario.setup(), policy.as_mut(), config)
        .map_err(|source| SuiteError::Episode { scenario: scenario.id.clone(), source })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub rows: Vec<EpisodeReport>,
    pub total: usize,
    pub solved: usize,
    /// `None` for an empty suite.
    pub success_rate: Option<f64>,
    pub mean_steps: Option<f64>,
    pub mean_wall_ms: Option<f64>,
    /// Retries used to number of episodes.
    pub retry_histogram: BTreeMap<usize, usize>,
}

impl SuiteReport {
    /// Aggregates rows; the only way a report is built.
    pub fn from_rows(rows: Vec<EpisodeReport>) -> SuiteReport {
        let total = rows.len();
        let solved = rows.iter().filter(|r| r.solved).count();
        let mean = |f: &dyn Fn(&EpisodeReport) -> f64| (total > 0).then(|| rows.iter().map(f).sum::<f64>() / total as f64);
        let mut retry_histogram = BTreeMap::new();
        for r in &rows {
            *retry_histogram.entry(r.retries).or_insert(0) += 1;
        }
        SuiteReport {
            total,
            solved,
            success_rate: (total > 0).then(|| solved as f64 / total as f64),
            mean_steps: mean(&|r| r.steps as f64),
            mean_wall_ms: mean(&|r| r.wall_ms as f64),
            retry_histogram,
            rows,
        }
    }
}

/// Runs every scenario in parallel; rows keep the input order.
pub fn run_suite(scenarios: &[Scenario], config: &RunConfig, kind: &PolicyKind) -> Result<SuiteReport, SuiteError> {
    let rows = scenarios.par_iter().enumerate().map(|(i, s)| run_scenario(s, i, kind, config)).collect::<Result<Vec<_>, _>>()?;
    Ok(SuiteReport::from_rows(rows))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub limit: usize,
    pub solved: usize,
    pub total: usize,
    pub success_rate: Option<f64>,
    pub mean_steps: Option<f64>,
}

/// One suite run per step limit.
pub fn sweep_step_limit(
    scenarios: &[Scenario],
    config: &RunConfig,
    kind: &PolicyKind,
    limits: &[usize],
) -> Result<Vec<SweepRow>, SuiteError> {
    if limits.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SuiteError::LimitsNotAscending(limits.to_vec()));
    }
    limits
        .iter()
        .map(|&limit| {
            let cfg = RunConfig { step_limit: Some(limit), ..config.clone() };
            let report = run_suite(scenarios, &cfg, kind)?;
            Ok(SweepRow {
                limit,
                solved: report.solved,
                total: report.total,
                success_rate: report.success_rate,
                mean_steps: report.mean_steps,
            })
        })
        .collect()
}

/// `limit,solved,total,success_rate` with a header line.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("limit,solved,total,success_rate\n");
    for r in rows {
        let rate = r.success_rate.map(|x| format!("{x:.4}")).unwrap_or_default();
        writeln!(out, "{},{},{},{rate}", r.limit, r.solved, r.total).expect("writing to a String");
    }
    out
}
