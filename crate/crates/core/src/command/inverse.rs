use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Command, Kind, Patch, Verb};
use crate::cluster::{ClusterRules, ClusterState, Resource, ResourceRef};

/// The undo operator for one write.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[allow(clippy::large_enum_variant)]
pub enum Inverse {
    Command(Command),
    /// Nothing to execute; reconciliation restores the effect.
    Noop {
        reason: String,
    },
}

impl fmt::Display for Inverse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Inverse::Command(c) => write!(f, "{c}"),
            Inverse::Noop { reason } => write!(f, "no-op ({reason})"),
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("no undo operator for {command}: {reason}")]
pub struct NoInverse {
    pub command: String,
    pub reason: String,
}

fn no_inverse(cmd: &Command, reason: &str) -> NoInverse {
    NoInverse { command: cmd.text(), reason: reason.to_owned() }
}

fn namespace_of(rules: &ClusterRules, cmd: &Command) -> String {
    cmd.namespace.clone().unwrap_or_else(|| rules.namespace.clone())
}

fn target(rules: &ClusterRules, cmd: &Command) -> Option<ResourceRef> {
    let kind = cmd.kind?;
    Some(ResourceRef { kind, namespace: kind.namespaced().then(|| namespace_of(rules, cmd)), name: cmd.name.clone()? })
}

/// The manifest `cmd` carries, with its namespace resolved the way
/// `apply_write` resolves it.
pub(crate) fn resolved_manifest(rules: &ClusterRules, cmd: &Command) -> Option<Resource> {
    let mut resource = cmd.manifest.clone()?;
    let ns = namespace_of(rules, cmd);
    match &mut resource {
        Resource::Deployment(d) if d.namespace.is_empty() => d.namespace = ns,
        Resource::Service(s) if s.namespace.is_empty() => s.namespace = ns,
        Resource::Pvc(p) if p.namespace.is_empty() => p.namespace = ns,
        _ => {}
    }
    Some(resource)
}

/// Resources a write may change directly. Pods are derived and not listed.
pub fn touched(rules: &ClusterRules, cmd: &Command) -> Vec<ResourceRef> {
    if let Some(r) = resolved_manifest(rules, cmd) {
        return vec![r.reference()];
    }
    if matches!(cmd.verb, Verb::Cordon | Verb::Uncordon) {
        return cmd.name.iter().map(|n| ResourceRef { kind: Kind::Node, namespace: None, name: n.clone() }).collect();
    }
    match target(rules, cmd) {
        Some(r) if r.kind != Kind::Pod => vec![r],
        _ => Vec::new(),
    }
}

fn restore_manifest(prior: Resource) -> Inverse {
    Inverse::Command(Command::apply(prior))
}

fn without_status(mut r: Resource) -> Resource {
    if let Resource::Pvc(p) = &mut r {
        p.status = crate::cluster::PvcStatus::Pending;
    }
    r
}

/// Builds the command that undoes `cmd` when run right after it, given the
/// state `cmd` is about to run in.
pub fn synthesize_inverse(rules: &ClusterRules, state: &ClusterState, cmd: &Command) -> Result<Inverse, NoInverse> {
    let ns = namespace_of(rules, cmd);
    match cmd.verb {
        Verb::Get | Verb::Describe | Verb::Logs => Ok(Inverse::Noop { reason: "read".into() }),
        Verb::Exec | Verb::Attach | Verb::Edit | Verb::Debug => Err(no_inverse(cmd, "effects are opaque")),
        Verb::Apply | Verb::Create if cmd.manifest.is_some() => {
            let resource = resolved_manifest(rules, cmd).expect("manifest checked");
            match state.resource(&resource.reference()) {
                Some(prior) => Ok(restore_manifest(prior)),
                None => Ok(Inverse::Command(Command::new(Verb::Delete, resource.kind(), resource.name()).in_namespace(ns))),
            }
        }
        Verb::Apply => Err(no_inverse(cmd, "no inline manifest")),
        Verb::Create => {
            let r = target(rules, cmd).ok_or_else(|| no_inverse(cmd, "no target"))?;
            Ok(Inverse::Command(Command::new(Verb::Delete, r.kind, r.name).in_namespace(ns)))
        }
        Verb::Scale => {
            let r = target(rules, cmd).ok_or_else(|| no_inverse(cmd, "no target"))?;
            let Some(Resource::Deployment(d)) = state.resource(&r) else {
                return Err(no_inverse(cmd, "target not found"));
            };
            Ok(Inverse::Command(
                Command::new(Verb::Scale, Kind::Deployment, r.name)
                    .with_flag("--replicas", d.desired_replicas.to_string())
                    .in_namespace(ns),
            ))
        }
        Verb::Patch => {
            let r = target(rules, cmd).ok_or_else(|| no_inverse(cmd, "no target"))?;
            let prior = state.resource(&r).ok_or_else(|| no_inverse(cmd, "target not found"))?;
            let patch = Patch::from_command(cmd).map_err(|e| no_inverse(cmd, &e))?;
            let post = patch.apply(&prior).map_err(|e| no_inverse(cmd, &e))?;
            let exact = patch
                .inverse(&prior)
                .filter(|inv| inv.apply(&post).map(without_status).ok() == Some(without_status(prior.clone())));
            match exact {
                Some(inv) => {
                    let mut c = Command::new(Verb::Patch, r.kind, r.name.clone());
                    if inv.kind == super::patch::PatchType::Merge {
                        c = c.with_flag("--type", "merge");
                    }
                    c = c.with_flag("-p", inv.to_json());
                    if r.kind.namespaced() {
                        c = c.in_namespace(ns);
                    }
                    Ok(Inverse::Command(c))
                }
                None => Ok(restore_manifest(prior)),
            }
        }
        Verb::Delete => {
            let r = target(rules, cmd).ok_or_else(|| no_inverse(cmd, "no target"))?;
            match r.kind {
                Kind::Namespace => Err(no_inverse(cmd, "namespaces are not restorable")),
                Kind::Pod => Ok(Inverse::Noop { reason: "the owning deployment recreates the pod".into() }),
                _ => match state.resource(&r) {
                    Some(prior) => Ok(restore_manifest(prior)),
                    None => Err(no_inverse(cmd, "target not found")),
                },
            }
        }
        Verb::Cordon | Verb::Uncordon => {
            let name = cmd.name.clone().ok_or_else(|| no_inverse(cmd, "no node"))?;
            let node = state.nodes.get(&name).ok_or_else(|| no_inverse(cmd, "target not found"))?;
            let cordon = cmd.verb == Verb::Cordon;
            if node.schedulable != cordon {
                return Ok(Inverse::Noop { reason: "node already in the requested state".into() });
            }
            let opposite = if cordon { Verb::Uncordon } else { Verb::Cordon };
            Ok(Inverse::Command(Command::new(opposite, Kind::Node, name)))
        }
        Verb::RolloutRestart => Ok(Inverse::Noop { reason: "pods are recreated from the unchanged template".into() }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{apply_write, reconcile, Deployment, Node, ObjectKey};
    use crate::command::parse;

    fn base() -> (ClusterRules, ClusterState) {
        let rules = ClusterRules { namespace: "test-hotel-reservation".into(), ..Default::default() };
        let mut s = ClusterState::default();
        s.nodes.insert("node-1".into(), Node { name: "node-1".into(), schedulable: true, healthy: true });
        s.deployments.insert(
            ObjectKey::new("test-hotel-reservation", "geo"),
            Deployment {
                name: "geo".into(),
                namespace: "test-hotel-reservation".into(),
                desired_replicas: 1,
                image: "geo:v2".into(),
                container: "hotel-reserv-geo".into(),
                container_port: 8083,
                node_selector: None,
                pvc_refs: vec![],
            },
        );
        let s = reconcile(&rules, &s);
        (rules, s)
    }

    fn round_trip(text: &str) -> (Inverse, ClusterState, ClusterState) {
        let (rules, s) = base();
        let cmd = parse(text).unwrap();
        let inv = synthesize_inverse(&rules, &s, &cmd).unwrap();
        let post = apply_write(&rules, &s, &cmd).unwrap().state;
        let back = match &inv {
            Inverse::Command(c) => apply_write(&rules, &post, c).unwrap().state,
            Inverse::Noop { .. } => post,
        };
        (inv, s, back)
    }

    #[test]
    fn new_storage_class_is_undone_by_delete() {
        let (inv, s, back) = round_trip(
            "kubectl apply -f - <<EOF\napiVersion: storage.k8s.io/v1\nkind: StorageClass\nmetadata:\n  name: geo-storage\nprovisioner: kubernetes.io/aws-ebs\nparameters:\n  type: gp2\nEOF",
        );
        assert_eq!(inv.to_string(), "kubectl delete storageclass.storage.k8s.io geo-storage -n test-hotel-reservation");
        assert_eq!(back, s);
    }

    #[test]
    fn scale_is_undone_by_prior_count() {
        let (inv, s, back) = round_trip("kubectl scale deployment geo --replicas=0");
        assert_eq!(inv.to_string(), "kubectl scale deployment.apps geo --replicas=1 -n test-hotel-reservation");
        assert_eq!(back, s);
    }

    #[test]
    fn image_patch_is_undone_by_prior_image() {
        let (inv, s, back) = round_trip(
            r#"kubectl patch deployment geo -p '{"spec":{"template":{"spec":{"containers":[{"name":"hotel-reserv-geo","image":"geo:bad"}]}}}}'"#,
        );
        assert!(inv.to_string().contains("geo:v2"), "{inv}");
        assert_eq!(back, s);
    }

    #[test]
    fn owned_pod_delete_is_a_noop() {
        let (_, s) = base();
        let pod = s.pods.keys().next().unwrap().clone();
        let (inv, s, back) = round_trip(&format!("kubectl delete pod {pod}"));
        assert!(matches!(inv, Inverse::Noop { .. }));
        assert_eq!(back, s);
    }

    #[test]
    fn cordon_is_undone_by_uncordon() {
        let (inv, s, back) = round_trip("kubectl cordon node-1");
        assert_eq!(inv.to_string(), "kubectl uncordon node-1");
        assert_eq!(back, s);
    }

    #[test]
    fn deleted_deployment_is_reapplied() {
        let (inv, s, back) = round_trip("kubectl delete deployment geo");
        assert!(inv.to_string().starts_with("kubectl apply -f - <<EOF\n"));
        assert_eq!(back, s);
    }

    #[test]
    fn exec_has_no_inverse() {
        let (rules, s) = base();
        assert!(synthesize_inverse(&rules, &s, &parse("kubectl exec geo -- ls").unwrap()).is_err());
    }
}
