//! Decision makers for detection, diagnosis and mitigation.
//!
//! Policies see the cluster only through an [`ObservationBundle`], built
//! from read-class queries, and answer with a [`MitigationPlan`] of concrete
//! command texts. Plans are parsed and linted before anything executes.

mod bootstrap;
mod external;
mod random;
mod reflect;
mod scripted;

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{ClusterRules, ClusterState, ObjectKey, PodPhase, PvcStatus, WorkloadReport};
use crate::command::{lint, parse, Command, Role};

pub use bootstrap::{bootstrap_localize, Suspect};
pub use external::{ExternalPolicy, Frame, PolicyRequest, DEFAULT_TIMEOUT};
pub use random::RandomPolicy;
pub use reflect::{reflect, ReflectionNote};
pub use scripted::{Playbook, PlaybookEntry, ScriptedPolicy};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PodRow {
    pub name: String,
    pub phase: PodPhase,
    pub restarts: u32,
}

/// A resource the policy may name in commands.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InventoryItem {
    pub kind: String,
    pub name: String,
    /// Container name of a deployment, port of a service.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// Everything a policy sees in one round.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationBundle {
    pub namespace: String,
    pub alerts: Vec<String>,
    pub pods: Vec<PodRow>,
    /// Service to recent log lines, filtered to errors and panics.
    pub logs: BTreeMap<String, Vec<String>>,
    pub events: Vec<String>,
    pub suspects: Vec<Suspect>,
    pub total_requests: usize,
    pub failed_requests: usize,
    pub inventory: Vec<InventoryItem>,
    pub reflection: Option<ReflectionNote>,
    /// Notes from rounds before the latest one; empty under thought dropout.
    #[serde(default)]
    pub memory: Vec<ReflectionNote>,
}

impl ObservationBundle {
    /// All textual evidence, one item per line, for pattern matching.
    pub fn evidence(&self) -> String {
        let mut out: Vec<String> = self.alerts.clone();
        out.extend(self.events.iter().cloned());
        for (svc, lines) in &self.logs {
            out.extend(lines.iter().map(|l| format!("{svc}: {l}")));
        }
        out.extend(self.suspects.iter().map(|s| format!("suspect {} -> {}", s.service, s.operation)));
        if self.failed_requests > 0 {
            out.push(format!("failed requests: {}/{}", self.failed_requests, self.total_requests));
        }
        out.join("\n")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Detection {
    Anomalous,
    Healthy,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MitigationPlan {
    pub intent: String,
    pub commands: Vec<String>,
    #[serde(default)]
    pub expected_effect: String,
}

impl MitigationPlan {
    /// One-line summary used in reflection notes.
    pub fn summary(&self) -> String {
        let first_lines: Vec<&str> = self.commands.iter().map(|c| c.lines().next().unwrap_or("")).collect();
        format!("{} [{}]", self.intent, first_lines.join("; "))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("playbook has no plan for attempt {0}")]
    PlaybookExhausted(usize),
    #[error("no response from the external policy within {0} ms")]
    ProtocolTimeout(u128),
    #[error("malformed plan: {0}")]
    MalformedPlan(String),
    #[error("plan has {len} commands, the window allows {k}")]
    PlanTooLong { len: usize, k: usize },
    #[error("reflection needs at least one issue")]
    NoIssues,
    #[error("policy i/o: {0}")]
    Io(String),
}

/// Detection, planning and memory of one decision maker.
pub trait Policy: Send {
    fn name(&self) -> &str;

    /// Default: anomalous iff an alert fires or a request failed.
    fn detect(&mut self, obs: &ObservationBundle) -> Detection {
        default_detect(obs)
    }

    /// Plan for the 1-based `attempt`.
    fn propose(&mut self, obs: &ObservationBundle, attempt: usize) -> Result<MitigationPlan, PolicyError>;

    /// Drops all memory except what arrives in the next observation.
    fn forget(&mut self) {}
}

pub fn default_detect(obs: &ObservationBundle) -> Detection {
    if obs.alerts.is_empty() && obs.failed_requests == 0 {
        Detection::Healthy
    } else {
        Detection::Anomalous
    }
}

/// Parses and lints every command as the writer role.
pub fn validate_plan(plan: &MitigationPlan, k: usize) -> Result<Vec<Command>, PolicyError> {
    if plan.commands.len() > k {
        return Err(PolicyError::PlanTooLong { len: plan.commands.len(), k });
    }
    plan.commands
        .iter()
        .map(|text| {
            let cmd = parse(text).map_err(|e| PolicyError::MalformedPlan(e.reason()))?;
            let verdict = lint(&cmd, Role::Writer);
            if verdict.allowed {
                Ok(cmd)
            } else {
                Err(PolicyError::MalformedPlan(verdict.reason))
            }
        })
        .collect()
}

fn log_filter() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)error|panic").expect("static regex"))
}

/// Builds the observation for `state`. Reads only.
pub fn observe(
    rules: &ClusterRules,
    state: &ClusterState,
    wl: &WorkloadReport,
    reflection: Option<ReflectionNote>,
    memory: Vec<ReflectionNote>,
) -> ObservationBundle {
    let report = crate::cluster::health_report(state, wl);
    let mut obs = ObservationBundle {
        namespace: rules.namespace.clone(),
        alerts: report.alerts.into_iter().collect(),
        suspects: bootstrap_localize(&wl.traces),
        total_requests: wl.total_requests,
        failed_requests: wl.failed_requests,
        reflection,
        memory,
        ..Default::default()
    };
    if state.crashed {
        obs.events.push("Unable to connect to the server: connection refused".into());
        return obs;
    }
    obs.pods = state.pods.values().map(|p| PodRow { name: p.name.clone(), phase: p.phase, restarts: p.restarts }).collect();
    obs.events = events(state);

    let mut raw: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for pod in state.pods.values() {
        let d = &state.deployments[&ObjectKey::new(&pod.namespace, &pod.owner)];
        let lines = raw.entry(pod.owner.clone()).or_default();
        lines.push(format!("INF cmd/{}/main.go:74 > Starting server...", pod.owner));
        match pod.phase {
            PodPhase::CrashLoopBackOff => match rules
                .depends_on
                .get(&pod.owner)
                .and_then(|deps| deps.iter().find(|dep| state.running_pods(&pod.namespace, dep) == 0))
            {
                Some(dep) => lines.push(format!("ERROR {}: dependency {dep} unavailable", pod.owner)),
                None => lines.push(format!("panic: {}: image {} failed to start", d.container, d.image)),
            },
            PodPhase::Error => lines.push(format!("ERROR {}: container terminated", d.container)),
            _ => {}
        }
    }
    for trace in wl.traces.iter().filter(|t| t.failed()) {
        let Some(span) = trace.first_error() else { continue };
        let callee = &span.operation;
        let line = match state.services.get(&ObjectKey::new(&rules.namespace, callee)) {
            Some(svc) => format!("ERROR {}: dial tcp {callee}:{}: connect: connection refused", span.service, svc.port),
            None if callee == "respond" => format!("ERROR {}: no endpoints available", span.service),
            None => format!("ERROR {}: lookup {callee}: no such host", span.service),
        };
        let lines = raw.entry(span.service.clone()).or_default();
        if !lines.contains(&line) {
            lines.push(line);
        }
    }
    obs.logs = raw
        .into_iter()
        .map(|(svc, lines)| (svc, lines.into_iter().filter(|l| log_filter().is_match(l)).collect::<Vec<_>>()))
        .filter(|(_, lines)| !lines.is_empty())
        .collect();

    obs.inventory = inventory(state);
    obs
}

fn inventory(state: &ClusterState) -> Vec<InventoryItem> {
    let item = |kind: &str, name: &str| InventoryItem { kind: kind.into(), name: name.into(), detail: None };
    let mut out = Vec::new();
    out.extend(state.nodes.keys().map(|n| item("node", n)));
    out.extend(
        state.deployments.values().map(|d| InventoryItem { detail: Some(d.container.clone()), ..item("deployment", &d.name) }),
    );
    out.extend(state.services.values().map(|s| InventoryItem { detail: Some(s.port.to_string()), ..item("service", &s.name) }));
    out.extend(state.pvcs.values().map(|p| item("persistentvolumeclaim", &p.name)));
    out.extend(state.storage_classes.keys().map(|n| item("storageclass", n)));
    out.extend(state.pods.keys().map(|n| item("pod", n)));
    out
}

/// Scheduler and controller events explaining unhealthy objects.
fn events(state: &ClusterState) -> Vec<String> {
    let mut out = Vec::new();
    let nodes = state.nodes.len();
    for pvc in state.pvcs.values().filter(|p| p.status == PvcStatus::Pending) {
        match state.storage_classes.get(&pvc.storage_class) {
            None => out.push(format!("storageclass.storage.k8s.io \"{}\" not found", pvc.storage_class)),
            Some(sc) => out.push(format!(
                "waiting for a volume to be created, either by external provisioner \"{}\" or manually created by system administrator",
                sc.provisioner
            )),
        }
    }
    for pod in state.pods.values() {
        let d = &state.deployments[&ObjectKey::new(&pod.namespace, &pod.owner)];
        match pod.phase {
            PodPhase::Pending if pod.node.is_none() => match &d.node_selector {
                Some(_) => out.push(format!(
                    "pod/{}: 0/{nodes} nodes are available: {nodes} node(s) didn't match Pod's node affinity/selector.",
                    pod.name
                )),
                None => out.push(format!("pod/{}: 0/{nodes} nodes are available: {nodes} node(s) were unschedulable.", pod.name)),
            },
            PodPhase::Pending => {
                out.push(format!("pod/{}: pod has unbound immediate PersistentVolumeClaims", pod.name));
            }
            PodPhase::CrashLoopBackOff => {
                out.push(format!("pod/{}: Back-off restarting failed container {}", pod.name, d.container));
            }
            PodPhase::Error => out.push(format!("pod/{}: container {} terminated with Error", pod.name, d.container)),
            PodPhase::Running => {}
        }
    }
    out
}
