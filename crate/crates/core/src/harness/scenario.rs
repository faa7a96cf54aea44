use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{
    inject_fault, reconcile, ClusterRules, ClusterState, CrashRule, Deployment, FaultKind, FaultSpec, Node, ObjectKey, Pvc,
    PvcStatus, RequestType, Service, StorageClass, WorkloadModel,
};
use crate::orchestrator::EpisodeSetup;
use crate::policy::Playbook;

fn yes() -> bool {
    true
}

fn one() -> u32 {
    1
}

fn immediate() -> String {
    "Immediate".into()
}

fn delete() -> String {
    "Delete".into()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub name: String,
    #[serde(default = "yes")]
    pub schedulable: bool,
    #[serde(default = "yes")]
    pub healthy: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentSpec {
    pub name: String,
    #[serde(default = "one")]
    pub replicas: u32,
    pub image: String,
    pub container: String,
    pub port: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_selector: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pvcs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceSpec {
    pub name: String,
    pub port: u16,
    /// Defaults to `port`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_port: Option<u16>,
    /// Deployment the service routes to; defaults to `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selector: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PvcSpec {
    pub name: String,
    pub storage_class: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageClassSpec {
    pub name: String,
    pub provisioner: String,
    #[serde(default = "immediate")]
    pub binding_mode: String,
    #[serde(default = "delete")]
    pub reclaim_policy: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub parameters: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RulesSpec {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub correct_images: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub provisioners: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub depends_on: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub crashing: Vec<CrashRule>,
}

/// A scenario file: the healthy cluster, its workload, the fault to inject
/// and the playbook that mitigates it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub namespace: String,
    pub nodes: Vec<NodeSpec>,
    pub deployments: Vec<DeploymentSpec>,
    #[serde(default)]
    pub services: Vec<ServiceSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pvcs: Vec<PvcSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub storage_classes: Vec<StorageClassSpec>,
    #[serde(default)]
    pub rules: RulesSpec,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub call_graph: BTreeMap<String, Vec<String>>,
    pub requests: Vec<RequestType>,
    pub fault: FaultSpec,
    /// Playbook path, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub playbook: Option<String>,
    pub expected_solvable: bool,
    /// Directory the scenario was loaded from.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("line {line}, column {column}{}: {message}", field.as_ref().map(|f| format!(", field `{f}`")).unwrap_or_default())]
pub struct SchemaError {
    pub line: usize,
    pub column: usize,
    pub field: Option<String>,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Schema { path: PathBuf, source: SchemaError },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

fn schema_error(e: &serde_json::Error) -> SchemaError {
    let message = e.to_string();
    // serde reports the offending field between backticks.
    let field = message.split('`').nth(1).map(str::to_owned);
    let message = message.split(" at line ").next().unwrap_or(&message).to_owned();
    SchemaError { line: e.line(), column: e.column(), field, message }
}

impl Scenario {
    /// Parses scenario JSON. `base_dir` is left empty.
    pub fn from_json(text: &str) -> Result<Scenario, SchemaError> {
        serde_json::from_str(text).map_err(|e| schema_error(&e))
    }

    /// Canonical text: pretty JSON with a trailing newline. Canonical files
    /// load and re-serialize to the same bytes.
    pub fn to_canonical_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("scenarios serialize");
        text.push('\n');
        text
    }

    pub fn is_noop(&self) -> bool {
        self.fault.kind == FaultKind::NoOp
    }

    pub fn rules(&self) -> ClusterRules {
        ClusterRules {
            namespace: self.namespace.clone(),
            correct_images: self.rules.correct_images.clone(),
            provisioners: self.rules.provisioners.clone(),
            depends_on: self.rules.depends_on.clone(),
            crashing: self.rules.crashing.clone(),
            workload: WorkloadModel { call_graph: self.call_graph.clone(), requests: self.requests.clone() },
        }
    }

    /// The healthy initial state, reconciled.
    pub fn initial_state(&self) -> ClusterState {
        let ns = &self.namespace;
        let mut s = ClusterState::default();
        s.namespaces.insert(ns.clone());
        for n in &self.nodes {
            s.nodes.insert(n.name.clone(), Node { name: n.name.clone(), schedulable: n.schedulable, healthy: n.healthy });
        }
        for d in &self.deployments {
            s.deployments.insert(
                ObjectKey::new(ns, &d.name),
                Deployment {
                    name: d.name.clone(),
                    namespace: ns.clone(),
                    desired_replicas: d.replicas,
                    image: d.image.clone(),
                    container: d.container.clone(),
                    container_port: d.port,
                    node_selector: d.node_selector.clone(),
                    pvc_refs: d.pvcs.clone(),
                },
            );
        }
        for svc in &self.services {
            s.services.insert(
                ObjectKey::new(ns, &svc.name),
                Service {
                    name: svc.name.clone(),
                    namespace: ns.clone(),
                    port: svc.port,
                    target_port: svc.target_port.unwrap_or(svc.port),
                    selector: svc.selector.clone().unwrap_or_else(|| svc.name.clone()),
                },
            );
        }
        for p in &self.pvcs {
            s.pvcs.insert(
                ObjectKey::new(ns, &p.name),
                Pvc {
                    name: p.name.clone(),
                    namespace: ns.clone(),
                    storage_class: p.storage_class.clone(),
                    status: PvcStatus::Pending,
                },
            );
        }
        for c in &self.storage_classes {
            s.storage_classes.insert(
                c.name.clone(),
                StorageClass {
                    name: c.name.clone(),
                    provisioner: c.provisioner.clone(),
                    binding_mode: c.binding_mode.clone(),
                    reclaim_policy: c.reclaim_policy.clone(),
                    parameters: c.parameters.clone(),
                },
            );
        }
        reconcile(&self.rules(), &s)
    }

    pub fn setup(&self) -> EpisodeSetup {
        EpisodeSetup { id: self.id.clone(), rules: self.rules(), initial: self.initial_state(), fault: self.fault.clone() }
    }

    /// Loads the referenced playbook; an empty one when none is referenced.
    pub fn load_playbook(&self) -> Result<Playbook, String> {
        match &self.playbook {
            Some(rel) => Playbook::load(&self.base_dir.join(rel)),
            None => Ok(Playbook::default()),
        }
    }

    /// Checks references between parts of the scenario.
    pub fn check(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("id must not be empty".into());
        }
        let mut seen = BTreeSet::new();
        for d in &self.deployments {
            if !seen.insert(&d.name) {
                return Err(format!("duplicate deployment {:?}", d.name));
            }
            for claim in &d.pvcs {
                if !self.pvcs.iter().any(|p| &p.name == claim) {
                    return Err(format!("deployment {:?} mounts unknown claim {claim:?}", d.name));
                }
            }
        }
        for svc in &self.services {
            let target = svc.selector.as_ref().unwrap_or(&svc.name);
            if !self.deployments.iter().any(|d| &d.name == target) {
                return Err(format!("service {:?} selects unknown deployment {target:?}", svc.name));
            }
        }
        for r in &self.requests {
            if r.path.is_empty() {
                return Err(format!("request {:?} has an empty path", r.name));
            }
        }
        inject_fault(&self.rules(), &self.initial_state(), &self.fault).map_err(|e| format!("fault: {e}"))?;
        self.load_playbook()?;
        Ok(())
    }
}

/// Reads, parses and checks a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io { path: path.to_owned(), source })?;
    let mut scenario = Scenario::from_json(&text).map_err(|source| LoadError::Schema { path: path.to_owned(), source })?;
    scenario.base_dir = path.parent().map(Path::to_owned).unwrap_or_default();
    scenario.check().map_err(|message| LoadError::Invalid { path: path.to_owned(), message })?;
    Ok(scenario)
}

/// Loads every `*.json` file directly inside `dir`, sorted by file name.
pub fn load_dir(dir: &Path) -> Result<Vec<Scenario>, LoadError> {
    let entries = std::fs::read_dir(dir).map_err(|source| LoadError::Io { path: dir.to_owned(), source })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_scenario(p)).collect()
}
