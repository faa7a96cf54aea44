use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::workload::count_failures;
use super::{ClusterRules, ClusterState, PodPhase, PvcStatus, Severity, SeverityWeights, WorkloadReport};

/// Alert set, SLA-violation set and capacity-loss set. Identifiers carry a
/// kind prefix (`pod/`, `pvc/`, `cluster/`, `req/`, `node/`) so the three
/// sets never share an identifier.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthReport {
    pub alerts: BTreeSet<String>,
    pub sla_violations: BTreeSet<String>,
    pub capacity_losses: BTreeSet<String>,
}

impl HealthReport {
    pub fn is_empty(&self) -> bool {
        self.alerts.is_empty() && self.sla_violations.is_empty() && self.capacity_losses.is_empty()
    }
}

/// One alert per pod not Running and per Pending claim, one SLA violation per
/// failed request, one capacity loss per unhealthy or cordoned node.
pub fn health_report(state: &ClusterState, wl: &WorkloadReport) -> HealthReport {
    let mut report = HealthReport::default();
    if state.crashed {
        report.alerts.insert("cluster/unreachable".to_owned());
    } else {
        for pod in state.pods.values().filter(|p| p.phase != PodPhase::Running) {
            report.alerts.insert(format!("pod/{}/{}", pod.namespace, pod.name));
        }
        for pvc in state.pvcs.values().filter(|p| p.status == PvcStatus::Pending) {
            report.alerts.insert(format!("pvc/{}/{}", pvc.namespace, pvc.name));
        }
        for node in state.nodes.values().filter(|n| !n.healthy || !n.schedulable) {
            report.capacity_losses.insert(format!("node/{}", node.name));
        }
    }
    for trace in wl.traces.iter().filter(|t| t.failed()) {
        report.sla_violations.insert(format!("req/{}", trace.request_id));
    }
    report
}

/// Severity of `state` under a `probe`-request workload. Equal to
/// `Severity::of(&health_report(state, &run_workload(..)), ..)` for every
/// seed, without building traces.
pub fn measure(rules: &ClusterRules, state: &ClusterState, weights: &SeverityWeights, probe: usize) -> Severity {
    if state.crashed {
        return Severity::Infinite;
    }
    let alerts = state.pods.values().filter(|p| p.phase != PodPhase::Running).count()
        + state.pvcs.values().filter(|p| p.status == PvcStatus::Pending).count();
    let losses = state.nodes.values().filter(|n| !n.healthy || !n.schedulable).count();
    let violations = count_failures(rules, state, probe);
    let count = |n: usize| num_rational::Ratio::from_integer(n as i128);
    Severity::Finite(
        weights.alerts * count(alerts) + weights.sla_violations * count(violations) + weights.capacity_losses * count(losses),
    )
}
