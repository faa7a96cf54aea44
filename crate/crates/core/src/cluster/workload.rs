use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClusterRules, ClusterState, ObjectKey};

/// One entry of the request mix: a path through the service call graph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestType {
    pub name: String,
    pub path: Vec<String>,
    pub weight: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WorkloadModel {
    /// Caller service to the services it invokes.
    pub call_graph: BTreeMap<String, Vec<String>>,
    pub requests: Vec<RequestType>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub service: String,
    /// The downstream call in progress (or `respond` at the end of the path).
    pub operation: String,
    pub error: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub request_id: String,
    pub request: String,
    pub spans: Vec<Span>,
}

impl Trace {
    pub fn failed(&self) -> bool {
        self.spans.iter().any(|s| s.error)
    }

    pub fn first_error(&self) -> Option<&Span> {
        self.spans.iter().find(|s| s.error)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadReport {
    pub total_requests: usize,
    pub failed_requests: usize,
    pub traces: Vec<Trace>,
}

impl WorkloadModel {
    /// Exact apportionment of `n` requests over the mix (largest remainder,
    /// ties to the earlier entry).
    pub fn apportion(&self, n: usize) -> Vec<usize> {
        let total: u64 = self.requests.iter().map(|r| u64::from(r.weight)).sum();
        if total == 0 {
            return vec![0; self.requests.len()];
        }
        let mut counts = Vec::with_capacity(self.requests.len());
        let mut remainders = Vec::with_capacity(self.requests.len());
        for (i, r) in self.requests.iter().enumerate() {
            let exact = n as u64 * u64::from(r.weight);
            counts.push((exact / total) as usize);
            remainders.push((exact % total, i));
        }
        let assigned: usize = counts.iter().sum();
        remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in remainders.iter().take(n - assigned) {
            counts[i] += 1;
        }
        counts
    }
}

/// Whether the service can answer: it exists, routes to the right port of
/// its deployment, and that deployment has a running pod.
pub(crate) fn service_available(rules: &ClusterRules, state: &ClusterState, service: &str) -> bool {
    if state.crashed {
        return false;
    }
    let Some(svc) = state.services.get(&ObjectKey::new(&rules.namespace, service)) else {
        return false;
    };
    let Some(dep) = state.deployments.get(&ObjectKey::new(&svc.namespace, &svc.selector)) else {
        return false;
    };
    svc.target_port == dep.container_port && state.running_pods(&dep.namespace, &dep.name) > 0
}

/// Index of the first unavailable service on `path`, if any.
fn failure_point(rules: &ClusterRules, state: &ClusterState, path: &[String]) -> Option<usize> {
    path.iter().position(|svc| !service_available(rules, state, svc))
}

/// Number of failing requests out of `n`. Depends only on the apportioned
/// counts, not on request order.
pub(crate) fn count_failures(rules: &ClusterRules, state: &ClusterState, n: usize) -> usize {
    let counts = rules.workload.apportion(n);
    rules
        .workload
        .requests
        .iter()
        .zip(counts)
        .filter(|(r, _)| failure_point(rules, state, &r.path).is_some())
        .map(|(_, c)| c)
        .sum()
}

/// Simulates `n` requests over the request mix. Request order is a seeded
/// shuffle of the exact apportionment, so the failure count is the same for
/// every seed.
pub fn run_workload(rules: &ClusterRules, state: &ClusterState, n: usize, seed: u64) -> WorkloadReport {
    let counts = rules.workload.apportion(n);
    let mut sequence: Vec<usize> = counts.iter().enumerate().flat_map(|(i, &c)| std::iter::repeat_n(i, c)).collect();
    sequence.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let outcomes: Vec<Option<usize>> = rules.workload.requests.iter().map(|r| failure_point(rules, state, &r.path)).collect();

    let mut traces = Vec::with_capacity(sequence.len());
    let mut failed = 0;
    for (id, &ty) in sequence.iter().enumerate() {
        let request = &rules.workload.requests[ty];
        let path = &request.path;
        let mut spans: Vec<Span> = Vec::with_capacity(path.len());
        let reached = outcomes[ty].unwrap_or(path.len());
        for (i, service) in path.iter().enumerate().take(reached.max(1)) {
            let operation = path.get(i + 1).cloned().unwrap_or_else(|| "respond".to_owned());
            spans.push(Span { service: service.clone(), operation, error: false });
        }
        if let Some(at) = outcomes[ty] {
            failed += 1;
            // The caller of the unavailable service records the error; when
            // the entry service itself is down, its own span does.
            let idx = at.saturating_sub(1);
            spans.truncate(idx + 1);
            spans[idx].error = true;
        }
        traces.push(Trace { request_id: format!("req-{id}"), request: request.name.clone(), spans });
    }

    WorkloadReport { total_requests: sequence.len(), failed_requests: failed, traces }
}
