//! Termination oracles. Each one is weak on its own; validation succeeds
//! only when all three pass.

use serde::{Deserialize, Serialize};

use crate::cluster::{
    health_report, run_workload, ClusterRules, ClusterState, HealthReport, ObjectKey, PodPhase, PvcStatus, WorkloadReport,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OracleName {
    Alert,
    Workload,
    Health,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleVerdict {
    pub name: OracleName,
    pub pass: bool,
    pub issues: Vec<String>,
}

impl OracleVerdict {
    fn from_issues(name: OracleName, issues: Vec<String>) -> Self {
        OracleVerdict { name, pass: issues.is_empty(), issues }
    }
}

/// Passes iff no alert is firing.
pub fn alert_oracle(report: &HealthReport) -> OracleVerdict {
    OracleVerdict::from_issues(OracleName::Alert, report.alerts.iter().cloned().collect())
}

/// Passes iff every probe request succeeded.
pub fn workload_oracle(wl: &WorkloadReport) -> OracleVerdict {
    let issues =
        if wl.failed_requests == 0 { Vec::new() } else { vec![format!("  Non-2xx or 3xx responses: {}", wl.failed_requests)] };
    OracleVerdict::from_issues(OracleName::Workload, issues)
}

/// Passes iff every pod is Running, every claim Bound and every node
/// healthy and schedulable.
pub fn health_oracle(state: &ClusterState) -> OracleVerdict {
    let mut issues = Vec::new();
    if state.crashed {
        issues.push("Cluster is unreachable".to_owned());
        return OracleVerdict::from_issues(OracleName::Health, issues);
    }
    for pod in state.pods.values() {
        let container = state
            .deployments
            .get(&ObjectKey::new(&pod.namespace, &pod.owner))
            .map_or(pod.owner.as_str(), |d| d.container.as_str());
        match pod.phase {
            PodPhase::Running => {}
            PodPhase::Pending => issues.push(format!("Pod {} is in Pending state", pod.name)),
            phase => issues.push(format!("Container {container} is in {phase}")),
        }
    }
    for pvc in state.pvcs.values().filter(|p| p.status == PvcStatus::Pending) {
        issues.push(format!("PersistentVolumeClaim {} is in Pending state", pvc.name));
    }
    for node in state.nodes.values() {
        if !node.healthy {
            issues.push(format!("Node {} is NotReady", node.name));
        } else if !node.schedulable {
            issues.push(format!("Node {} is unschedulable", node.name));
        }
    }
    OracleVerdict::from_issues(OracleName::Health, issues)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Validation {
    Success,
    Fail(Vec<String>),
}

impl Validation {
    pub fn is_success(&self) -> bool {
        matches!(self, Validation::Success)
    }

    pub fn issues(&self) -> &[String] {
        match self {
            Validation::Success => &[],
            Validation::Fail(issues) => issues,
        }
    }
}

/// All three verdicts for `state` under the probe `wl`, in reporting order
/// (workload, health, alert).
pub fn verdicts(state: &ClusterState, wl: &WorkloadReport) -> [OracleVerdict; 3] {
    [workload_oracle(wl), health_oracle(state), alert_oracle(&health_report(state, wl))]
}

/// Conjunction of the three oracles. Issues are concatenated in reporting
/// order.
pub fn combined_validate(state: &ClusterState, wl: &WorkloadReport) -> Validation {
    let issues: Vec<String> = verdicts(state, wl).into_iter().flat_map(|v| v.issues).collect();
    if issues.is_empty() {
        Validation::Success
    } else {
        Validation::Fail(issues)
    }
}

/// Runs a fresh `requests`-request probe and validates.
pub fn validate(rules: &ClusterRules, state: &ClusterState, requests: usize, seed: u64) -> (Validation, WorkloadReport) {
    let wl = run_workload(rules, state, requests, seed);
    (combined_validate(state, &wl), wl)
}
