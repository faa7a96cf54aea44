use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{reconcile, ClusterRules, ClusterState, ObjectKey, PodFault, PodSlot};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultKind {
    MissingStorageClass,
    WrongImage,
    TargetPortMisconfig,
    ScaleToZero,
    AssignNonexistentNode,
    PodKillTransient,
    NoOp,
}

/// A fault to inject into an initial state.
///
/// `target` names a storage class (`MissingStorageClass`), a service
/// (`TargetPortMisconfig`) or a deployment (every other kind). Optional
/// `params`: `image`, `target_port`, `node`, `ordinal`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub kind: FaultKind,
    #[serde(default)]
    pub target: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, String>,
    #[serde(default = "default_persistent")]
    pub persistent: bool,
}

fn default_persistent() -> bool {
    true
}

impl FaultSpec {
    pub fn noop() -> Self {
        FaultSpec { kind: FaultKind::NoOp, target: String::new(), params: BTreeMap::new(), persistent: true }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FaultError {
    #[error("fault target {0:?} does not exist")]
    InvalidTarget(String),
    #[error("invalid fault parameter {name}: {value:?}")]
    InvalidParam { name: String, value: String },
}

/// Applies `spec` to `state` and reconciles.
pub fn inject_fault(rules: &ClusterRules, state: &ClusterState, spec: &FaultSpec) -> Result<ClusterState, FaultError> {
    let mut s = state.clone();
    let ns = rules.namespace.clone();
    let missing = || FaultError::InvalidTarget(spec.target.clone());
    let param = |name: &str| spec.params.get(name).cloned();

    match spec.kind {
        FaultKind::NoOp => return Ok(s),
        FaultKind::MissingStorageClass => {
            s.storage_classes.remove(&spec.target).ok_or_else(missing)?;
        }
        FaultKind::WrongImage => {
            let d = s.deployments.get_mut(&ObjectKey::new(&ns, &spec.target)).ok_or_else(missing)?;
            d.image = param("image").unwrap_or_else(|| format!("{}-broken", d.image));
        }
        FaultKind::TargetPortMisconfig => {
            let svc = s.services.get_mut(&ObjectKey::new(&ns, &spec.target)).ok_or_else(missing)?;
            svc.target_port = match param("target_port") {
                Some(v) => v.parse().map_err(|_| FaultError::InvalidParam { name: "target_port".into(), value: v })?,
                None => 9999,
            };
        }
        FaultKind::ScaleToZero => {
            let d = s.deployments.get_mut(&ObjectKey::new(&ns, &spec.target)).ok_or_else(missing)?;
            d.desired_replicas = 0;
        }
        FaultKind::AssignNonexistentNode => {
            let node = param("node").unwrap_or_else(|| "extra-node".to_owned());
            if s.nodes.contains_key(&node) {
                return Err(FaultError::InvalidParam { name: "node".into(), value: node });
            }
            let d = s.deployments.get_mut(&ObjectKey::new(&ns, &spec.target)).ok_or_else(missing)?;
            d.node_selector = Some(node);
        }
        FaultKind::PodKillTransient => {
            let ordinal = match param("ordinal") {
                Some(v) => v.parse().map_err(|_| FaultError::InvalidParam { name: "ordinal".into(), value: v })?,
                None => 0,
            };
            let d = s.deployments.get(&ObjectKey::new(&ns, &spec.target)).ok_or_else(missing)?;
            if ordinal >= d.desired_replicas {
                return Err(FaultError::InvalidParam { name: "ordinal".into(), value: ordinal.to_string() });
            }
            s.pod_faults.insert(
                PodSlot { namespace: ns.clone(), owner: spec.target.clone(), ordinal },
                PodFault { persistent: spec.persistent },
            );
        }
    }
    Ok(reconcile(rules, &s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{Deployment, Node, PodPhase, Pvc, PvcStatus, StorageClass};

    fn base() -> (ClusterRules, ClusterState) {
        let rules = ClusterRules { namespace: "ns".into(), ..Default::default() };
        let mut s = ClusterState::default();
        s.nodes.insert("n".into(), Node { name: "n".into(), schedulable: true, healthy: true });
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
                pvc_refs: vec!["geo-pvc".into()],
            },
        );
        s.pvcs.insert(
            ObjectKey::new("ns", "geo-pvc"),
            Pvc {
                name: "geo-pvc".into(),
                namespace: "ns".into(),
                storage_class: "geo-storage".into(),
                status: PvcStatus::Pending,
            },
        );
        s.storage_classes.insert(
            "geo-storage".into(),
            StorageClass {
                name: "geo-storage".into(),
                provisioner: "rancher.io/local-path".into(),
                binding_mode: "WaitForFirstConsumer".into(),
                reclaim_policy: "Delete".into(),
                parameters: BTreeMap::new(),
            },
        );
        let s = reconcile(&rules, &s);
        (rules, s)
    }

    fn spec(kind: FaultKind, target: &str) -> FaultSpec {
        FaultSpec { kind, target: target.into(), params: BTreeMap::new(), persistent: true }
    }

    #[test]
    fn missing_storage_class_leaves_claim_pending() {
        let (rules, s) = base();
        let out = inject_fault(&rules, &s, &spec(FaultKind::MissingStorageClass, "geo-storage")).unwrap();
        assert!(out.storage_classes.is_empty());
        assert_eq!(out.pvcs.values().next().unwrap().status, PvcStatus::Pending);
    }

    #[test]
    fn noop_is_identity() {
        let (rules, s) = base();
        assert_eq!(inject_fault(&rules, &s, &FaultSpec::noop()).unwrap(), s);
    }

    #[test]
    fn transient_pod_kill_heals_on_recreate() {
        let (rules, s) = base();
        let mut f = spec(FaultKind::PodKillTransient, "geo");
        f.persistent = false;
        let out = inject_fault(&rules, &s, &f).unwrap();
        assert_eq!(out.pods.values().next().unwrap().phase, PodPhase::Error);
        let mut deleted = out.clone();
        deleted.pods.clear();
        let healed = reconcile(&rules, &deleted);
        assert_eq!(healed.pods.values().next().unwrap().phase, PodPhase::Running);
    }

    #[test]
    fn unknown_target_is_rejected() {
        let (rules, s) = base();
        assert_eq!(
            inject_fault(&rules, &s, &spec(FaultKind::ScaleToZero, "nope")),
            Err(FaultError::InvalidTarget("nope".into()))
        );
    }

    #[test]
    fn nonexistent_node_assignment_pends_the_pod() {
        let (rules, s) = base();
        let out = inject_fault(&rules, &s, &spec(FaultKind::AssignNonexistentNode, "geo")).unwrap();
        assert_eq!(out.pods.values().next().unwrap().phase, PodPhase::Pending);
    }
}
