//! Deterministic simulated cluster.
//!
//! A [`ClusterState`] is a plain value. Every operation on it (reconcile,
//! writes, fault injection) produces a successor value; nothing here holds
//! shared mutable state. Static scenario semantics that never change during
//! an episode (which image is the correct one, which provisioners exist,
//! which transitions crash the cluster, the request mix) live in
//! [`ClusterRules`].

mod fault;
mod health;
mod reconcile;
mod severity;
mod workload;
mod write;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use fault::{inject_fault, FaultError, FaultKind, FaultSpec};
pub use health::{health_report, measure, HealthReport};
pub use reconcile::{reconcile, settle};
pub use severity::{parse_ratio, Severity, SeverityWeights, WeightError};
pub use workload::{run_workload, RequestType, Span, Trace, WorkloadModel, WorkloadReport};
pub use write::{apply_write, apply_write_unchecked, ApplyError};

use crate::command::{Kind, Verb};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjectKey {
    pub namespace: String,
    pub name: String,
}

impl ObjectKey {
    pub fn new(namespace: impl Into<String>, name: impl Into<String>) -> Self {
        ObjectKey { namespace: namespace.into(), name: name.into() }
    }
}

impl fmt::Display for ObjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.namespace, self.name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub schedulable: bool,
    pub healthy: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deployment {
    pub name: String,
    pub namespace: String,
    pub desired_replicas: u32,
    pub image: String,
    /// Container name, used in health issue strings.
    pub container: String,
    pub container_port: u16,
    pub node_selector: Option<String>,
    pub pvc_refs: Vec<String>,
}

impl Deployment {
    pub fn key(&self) -> ObjectKey {
        ObjectKey::new(&self.namespace, &self.name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PodPhase {
    Pending,
    Running,
    Error,
    CrashLoopBackOff,
}

impl fmt::Display for PodPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PodPhase::Pending => "Pending",
            PodPhase::Running => "Running",
            PodPhase::Error => "Error",
            PodPhase::CrashLoopBackOff => "CrashLoopBackOff",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pod {
    pub name: String,
    pub namespace: String,
    pub owner: String,
    pub ordinal: u32,
    pub phase: PodPhase,
    pub restarts: u32,
    pub node: Option<String>,
    /// Hash of the owning deployment's pod template when the pod was created.
    pub template: u32,
}

impl Pod {
    pub fn slot(&self) -> PodSlot {
        PodSlot { namespace: self.namespace.clone(), owner: self.owner.clone(), ordinal: self.ordinal }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Service {
    pub name: String,
    pub namespace: String,
    pub port: u16,
    pub target_port: u16,
    /// Name of the deployment the service routes to.
    pub selector: String,
}

impl Service {
    pub fn key(&self) -> ObjectKey {
        ObjectKey::new(&self.namespace, &self.name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PvcStatus {
    Pending,
    Bound,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pvc {
    pub name: String,
    pub namespace: String,
    pub storage_class: String,
    pub status: PvcStatus,
}

impl Pvc {
    pub fn key(&self) -> ObjectKey {
        ObjectKey::new(&self.namespace, &self.name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageClass {
    pub name: String,
    pub provisioner: String,
    pub binding_mode: String,
    pub reclaim_policy: String,
    pub parameters: BTreeMap<String, String>,
}

/// Identity of a pod independent of its generated name.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PodSlot {
    pub namespace: String,
    pub owner: String,
    pub ordinal: u32,
}

/// A pod-level fault pinned to a slot. Non-persistent faults clear when the
/// pod in that slot is recreated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PodFault {
    pub persistent: bool,
}

/// Any resource body the command layer can create, overwrite or delete.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Resource {
    Node(Node),
    Deployment(Deployment),
    Service(Service),
    #[serde(rename = "PersistentVolumeClaim")]
    Pvc(Pvc),
    StorageClass(StorageClass),
}

impl Resource {
    pub fn kind(&self) -> Kind {
        match self {
            Resource::Node(_) => Kind::Node,
            Resource::Deployment(_) => Kind::Deployment,
            Resource::Service(_) => Kind::Service,
            Resource::Pvc(_) => Kind::PersistentVolumeClaim,
            Resource::StorageClass(_) => Kind::StorageClass,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Resource::Node(n) => &n.name,
            Resource::Deployment(d) => &d.name,
            Resource::Service(s) => &s.name,
            Resource::Pvc(p) => &p.name,
            Resource::StorageClass(c) => &c.name,
        }
    }

    /// Namespace of namespaced resources; `None` for cluster-scoped ones.
    pub fn namespace(&self) -> Option<&str> {
        match self {
            Resource::Deployment(d) => Some(&d.namespace),
            Resource::Service(s) => Some(&s.namespace),
            Resource::Pvc(p) => Some(&p.namespace),
            Resource::Node(_) | Resource::StorageClass(_) => None,
        }
    }

    pub fn reference(&self) -> ResourceRef {
        ResourceRef { kind: self.kind(), namespace: self.namespace().map(str::to_owned), name: self.name().to_owned() }
    }
}

/// Address of a single resource in the state.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ResourceRef {
    pub kind: Kind,
    pub namespace: Option<String>,
    pub name: String,
}

/// The full simulated cluster, including the crash state (`crashed = true`).
///
/// Equality is deep equality after canonicalization: pods are compared by
/// `(namespace, owner, ordinal)` rather than by their generated names, and
/// restart counters are runtime bookkeeping that does not take part.
#[derive(Clone, Default)]
pub struct ClusterState {
    pub crashed: bool,
    pub nodes: BTreeMap<String, Node>,
    pub namespaces: BTreeSet<String>,
    pub deployments: BTreeMap<ObjectKey, Deployment>,
    pub pods: BTreeMap<String, Pod>,
    pub services: BTreeMap<ObjectKey, Service>,
    pub pvcs: BTreeMap<ObjectKey, Pvc>,
    pub storage_classes: BTreeMap<String, StorageClass>,
    pub pod_faults: BTreeMap<PodSlot, PodFault>,
    pub(crate) next_uid: u64,
}

#[derive(Debug, PartialEq, Eq)]
pub struct CanonicalState<'a> {
    crashed: bool,
    nodes: &'a BTreeMap<String, Node>,
    namespaces: &'a BTreeSet<String>,
    deployments: &'a BTreeMap<ObjectKey, Deployment>,
    services: &'a BTreeMap<ObjectKey, Service>,
    pvcs: &'a BTreeMap<ObjectKey, Pvc>,
    storage_classes: &'a BTreeMap<String, StorageClass>,
    pod_faults: &'a BTreeMap<PodSlot, PodFault>,
    pods: Vec<(&'a str, &'a str, u32, PodPhase, Option<&'a str>)>,
}

impl ClusterState {
    pub fn canonical(&self) -> CanonicalState<'_> {
        let mut pods: Vec<_> =
            self.pods.values().map(|p| (p.namespace.as_str(), p.owner.as_str(), p.ordinal, p.phase, p.node.as_deref())).collect();
        pods.sort();
        CanonicalState {
            crashed: self.crashed,
            nodes: &self.nodes,
            namespaces: &self.namespaces,
            deployments: &self.deployments,
            services: &self.services,
            pvcs: &self.pvcs,
            storage_classes: &self.storage_classes,
            pod_faults: &self.pod_faults,
            pods,
        }
    }

    pub fn crashed_from(mut self) -> Self {
        self.crashed = true;
        self
    }

    pub fn pods_of<'a>(&'a self, namespace: &'a str, owner: &'a str) -> impl Iterator<Item = &'a Pod> + 'a {
        self.pods.values().filter(move |p| p.namespace == namespace && p.owner == owner)
    }

    pub fn running_pods(&self, namespace: &str, owner: &str) -> usize {
        self.pods_of(namespace, owner).filter(|p| p.phase == PodPhase::Running).count()
    }

    pub fn resource(&self, r: &ResourceRef) -> Option<Resource> {
        let key = || ObjectKey::new(r.namespace.clone().unwrap_or_default(), r.name.clone());
        match r.kind {
            Kind::Node => self.nodes.get(&r.name).cloned().map(Resource::Node),
            Kind::StorageClass => self.storage_classes.get(&r.name).cloned().map(Resource::StorageClass),
            Kind::Deployment => self.deployments.get(&key()).cloned().map(Resource::Deployment),
            Kind::Service => self.services.get(&key()).cloned().map(Resource::Service),
            Kind::PersistentVolumeClaim => self.pvcs.get(&key()).cloned().map(Resource::Pvc),
            _ => None,
        }
    }

    /// Writes `body` at `r` (or removes the resource when `body` is `None`).
    /// Does not reconcile.
    pub fn put_resource(&mut self, r: &ResourceRef, body: Option<Resource>) {
        let key = ObjectKey::new(r.namespace.clone().unwrap_or_default(), r.name.clone());
        match (r.kind, body) {
            (Kind::Node, Some(Resource::Node(n))) => {
                self.nodes.insert(r.name.clone(), n);
            }
            (Kind::Node, None) => {
                self.nodes.remove(&r.name);
            }
            (Kind::StorageClass, Some(Resource::StorageClass(c))) => {
                self.storage_classes.insert(r.name.clone(), c);
            }
            (Kind::StorageClass, None) => {
                self.storage_classes.remove(&r.name);
            }
            (Kind::Deployment, Some(Resource::Deployment(d))) => {
                self.deployments.insert(key, d);
            }
            (Kind::Deployment, None) => {
                self.deployments.remove(&key);
            }
            (Kind::Service, Some(Resource::Service(s))) => {
                self.services.insert(key, s);
            }
            (Kind::Service, None) => {
                self.services.remove(&key);
            }
            (Kind::PersistentVolumeClaim, Some(Resource::Pvc(p))) => {
                self.pvcs.insert(key, p);
            }
            (Kind::PersistentVolumeClaim, None) => {
                self.pvcs.remove(&key);
            }
            (kind, body) => panic!("resource body {body:?} does not match kind {kind:?}"),
        }
    }
}

impl PartialEq for ClusterState {
    fn eq(&self, other: &Self) -> bool {
        self.canonical() == other.canonical()
    }
}

impl Eq for ClusterState {}

impl fmt::Debug for ClusterState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClusterState")
            .field("crashed", &self.crashed)
            .field("nodes", &self.nodes.values().collect::<Vec<_>>())
            .field("deployments", &self.deployments.values().collect::<Vec<_>>())
            .field("pods", &self.pods.values().collect::<Vec<_>>())
            .field("services", &self.services.values().collect::<Vec<_>>())
            .field("pvcs", &self.pvcs.values().collect::<Vec<_>>())
            .field("storage_classes", &self.storage_classes.values().collect::<Vec<_>>())
            .field("pod_faults", &self.pod_faults)
            .finish()
    }
}

/// An immutable checkpoint of a [`ClusterState`].
#[derive(Clone, Debug)]
pub struct Snapshot(Arc<ClusterState>);

impl Snapshot {
    pub fn state(&self) -> &ClusterState {
        &self.0
    }
}

pub fn snapshot(state: &ClusterState) -> Snapshot {
    Snapshot(Arc::new(state.clone()))
}

pub fn restore(snap: &Snapshot) -> ClusterState {
    (*snap.0).clone()
}

/// A write transition the scenario declares as crashing the cluster.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrashRule {
    pub verb: Verb,
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

/// Static semantics of a scenario's cluster.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClusterRules {
    /// Namespace used when a command or manifest does not name one.
    pub namespace: String,
    /// Deployment name to the only image that starts successfully. Deployments
    /// absent from the table accept any image.
    pub correct_images: BTreeMap<String, String>,
    /// Provisioners able to bind volumes. Empty means every provisioner works.
    pub provisioners: BTreeSet<String>,
    /// Deployment name to the deployments it needs running to start.
    pub depends_on: BTreeMap<String, Vec<String>>,
    pub crashing: Vec<CrashRule>,
    pub workload: WorkloadModel,
}

impl ClusterRules {
    pub fn provisioner_available(&self, provisioner: &str) -> bool {
        self.provisioners.is_empty() || self.provisioners.contains(provisioner)
    }

    pub fn is_crashing(&self, verb: Verb, kind: Option<Kind>, name: Option<&str>) -> bool {
        self.crashing
            .iter()
            .any(|rule| rule.verb == verb && Some(rule.kind) == kind && rule.name.as_deref().is_none_or(|n| Some(n) == name))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ClusterState {
        let mut s = ClusterState::default();
        s.namespaces.insert("ns".into());
        s.nodes.insert("n1".into(), Node { name: "n1".into(), schedulable: true, healthy: true });
        s.deployments.insert(
            ObjectKey::new("ns", "geo"),
            Deployment {
                name: "geo".into(),
                namespace: "ns".into(),
                desired_replicas: 1,
                image: "geo:v1".into(),
                container: "hotel-reserv-geo".into(),
                container_port: 8083,
                node_selector: None,
                pvc_refs: vec![],
            },
        );
        reconcile(&ClusterRules::default(), &s)
    }

    #[test]
    fn snapshot_restore_round_trip() {
        let s = sample();
        let snap = snapshot(&s);
        assert_eq!(restore(&snap), s);
    }

    #[test]
    fn restore_undoes_later_mutation() {
        let s = sample();
        let snap = snapshot(&s);
        let mut mutated = s.clone();
        mutated.nodes.get_mut("n1").unwrap().schedulable = false;
        assert_ne!(mutated, s);
        assert_eq!(restore(&snap), s);
    }

    #[test]
    fn snapshot_of_crashed_state_stays_crashed() {
        let s = sample().crashed_from();
        assert!(restore(&snapshot(&s)).crashed);
    }

    #[test]
    fn pod_names_do_not_affect_equality() {
        let s = sample();
        let mut renamed = s.clone();
        let pod = renamed.pods.pop_first().unwrap().1;
        renamed.pods.insert("geo-other".into(), Pod { name: "geo-other".into(), restarts: 7, ..pod });
        assert_eq!(renamed, s);
    }
}
