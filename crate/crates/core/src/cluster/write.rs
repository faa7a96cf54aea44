//! Per-verb write transitions.
//!
//! | verb            | kinds                                   | effect                                       |
//! |-----------------|-----------------------------------------|----------------------------------------------|
//! | scale           | deployment                              | sets `desired_replicas`                      |
//! | patch           | deployment, service, pvc, sc, node      | merge patch over the manifest view           |
//! | apply           | deployment, service, pvc, sc, node      | creates or overwrites the inline manifest    |
//! | create          | deployment                              | creates from `--image`, `--replicas`, `--port`|
//! | delete          | pod, deployment, service, pvc, sc, node | removes the resource                         |
//! | cordon/uncordon | node                                    | sets `schedulable`                           |
//! | rollout restart | deployment                              | removes the deployment's pods                |
//!
//! Every successful transition is followed by [`reconcile`].

use thiserror::Error;

use super::{reconcile, ClusterRules, ClusterState, Deployment, ObjectKey, Resource, ResourceRef};
use crate::command::{Command, CommandClass, Kind, Patch, Verb};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Applied {
    pub state: ClusterState,
    /// kubectl-style confirmation, e.g. `deployment.apps/geo scaled`.
    pub message: String,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum ApplyError {
    #[error("The connection to the server was refused - the cluster is unavailable")]
    ClusterUnavailable,
    #[error("error: kubectl {0} does not modify the cluster")]
    NotAWrite(String),
    #[error("Error from server (NotFound): {resource_type} \"{name}\" not found")]
    UnknownTarget { resource_type: String, name: String },
    #[error("Error from server (AlreadyExists): {resource_type} \"{name}\" already exists")]
    AlreadyExists { resource_type: String, name: String },
    #[error("The {kind} \"{name}\" is invalid: {}", render_field_errors(.errors))]
    ImmutableFieldConflict { kind: String, name: String, errors: Vec<String> },
    #[error("error: unknown flag: {0}")]
    UnknownFlag(String),
    #[error("Error from server (Forbidden): {0}")]
    Forbidden(String),
    #[error("error: {0}")]
    Invalid(String),
    #[error("error: kubectl {0} is not supported by the simulated cluster")]
    Unsupported(String),
}

fn render_field_errors(errors: &[String]) -> String {
    match errors {
        [one] => one.clone(),
        many => many.iter().map(|e| format!("\n* {e}")).collect(),
    }
}

const COMMON_FLAGS: &[&str] = &["-n", "--namespace", "--dry-run"];

fn allowed_flags(verb: Verb) -> &'static [&'static str] {
    match verb {
        Verb::Scale => &["--replicas"],
        Verb::Patch => &["-p", "--patch", "--type"],
        Verb::Apply => &["-f", "--filename"],
        Verb::Create => &["-f", "--filename", "--image", "--replicas", "--port"],
        Verb::Delete => &["--grace-period", "--force", "--wait", "--now"],
        _ => &[],
    }
}

fn kind_name(kind: Kind) -> &'static str {
    match kind {
        Kind::Pod => "Pod",
        Kind::Deployment => "Deployment",
        Kind::Service => "Service",
        Kind::PersistentVolumeClaim => "PersistentVolumeClaim",
        Kind::StorageClass => "StorageClass",
        Kind::Node => "Node",
        Kind::Namespace => "Namespace",
        Kind::Event => "Event",
        Kind::Other => "Resource",
    }
}

/// Applies a write to a copy of `state`.
///
/// Fails on crashed states and read commands. Transitions listed as crashing
/// in `rules` succeed and return the crash state.
pub fn apply_write(rules: &ClusterRules, state: &ClusterState, cmd: &Command) -> Result<Applied, ApplyError> {
    if state.crashed {
        return Err(ApplyError::ClusterUnavailable);
    }
    if cmd.class() == CommandClass::Read {
        return Err(ApplyError::NotAWrite(cmd.verb.words().to_owned()));
    }
    let mut applied = apply_write_unchecked(rules, state, cmd)?;
    let (kind, name) = cmd.target();
    if !cmd.is_dry_run() && rules.is_crashing(cmd.verb, kind, name) {
        applied.state.crashed = true;
    }
    Ok(applied)
}

/// Applies a write without the crash gate or crash rules. The undo path uses
/// this to run inverses out of a crash state.
pub fn apply_write_unchecked(rules: &ClusterRules, state: &ClusterState, cmd: &Command) -> Result<Applied, ApplyError> {
    for flag in &cmd.flags {
        if !COMMON_FLAGS.contains(&flag.name.as_str()) && !allowed_flags(cmd.verb).contains(&flag.name.as_str()) {
            return Err(ApplyError::UnknownFlag(flag.name.clone()));
        }
    }
    let mut next = state.clone();
    next.crashed = false;
    let message = transition(rules, &mut next, cmd)?;
    if cmd.is_dry_run() {
        return Ok(Applied { state: state.clone(), message: format!("{message} (dry run)") });
    }
    Ok(Applied { state: reconcile(rules, &next), message })
}

fn namespace_of(rules: &ClusterRules, cmd: &Command) -> String {
    cmd.namespace.clone().unwrap_or_else(|| rules.namespace.clone())
}

fn target_ref(rules: &ClusterRules, cmd: &Command) -> Result<ResourceRef, ApplyError> {
    let kind = cmd.kind.ok_or_else(|| ApplyError::Invalid("you must specify the type of resource".into()))?;
    let name = cmd.name.clone().ok_or_else(|| ApplyError::Invalid("resource name may not be empty".into()))?;
    Ok(ResourceRef { kind, namespace: kind.namespaced().then(|| namespace_of(rules, cmd)), name })
}

fn not_found(r: &ResourceRef) -> ApplyError {
    ApplyError::UnknownTarget { resource_type: r.kind.resource_type().to_owned(), name: r.name.clone() }
}

fn existing(state: &ClusterState, r: &ResourceRef) -> Result<Resource, ApplyError> {
    state.resource(r).ok_or_else(|| not_found(r))
}

fn require_kind(cmd: &Command, r: &ResourceRef, kinds: &[Kind]) -> Result<(), ApplyError> {
    if kinds.contains(&r.kind) {
        Ok(())
    } else {
        let kind = cmd.kind_text.clone().unwrap_or_else(|| r.kind.resource_type().to_owned());
        Err(ApplyError::Unsupported(format!("{} {kind}", cmd.verb.words())))
    }
}

/// Field-level immutability rules for overwrites.
fn check_immutable(old: &Resource, new: &Resource) -> Result<(), ApplyError> {
    let mut errors = Vec::new();
    match (old, new) {
        (Resource::StorageClass(a), Resource::StorageClass(b)) => {
            if a.provisioner != b.provisioner {
                errors.push("provisioner: Forbidden: updates to provisioner are forbidden.".to_owned());
            }
            if a.parameters != b.parameters {
                errors.push("parameters: Forbidden: updates to parameters are forbidden.".to_owned());
            }
            if a.reclaim_policy != b.reclaim_policy {
                errors.push("reclaimPolicy: Forbidden: updates to reclaimPolicy are forbidden.".to_owned());
            }
            if a.binding_mode != b.binding_mode {
                errors.push(format!("volumeBindingMode: Invalid value: \"{}\": field is immutable", b.binding_mode));
            }
        }
        (Resource::Pvc(a), Resource::Pvc(b)) if a.storage_class != b.storage_class => {
            errors.push("spec: Forbidden: spec is immutable after creation except resources.requests".to_owned());
        }
        _ => {}
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(ApplyError::ImmutableFieldConflict { kind: kind_name(old.kind()).to_owned(), name: old.name().to_owned(), errors })
    }
}

/// Puts `new` in place of `old`, keeping derived fields.
fn overwrite(state: &mut ClusterState, old: Option<&Resource>, mut new: Resource) -> Result<&'static str, ApplyError> {
    if let (Some(Resource::Pvc(prev)), Resource::Pvc(next)) = (old, &mut new) {
        next.status = prev.status;
    }
    let verdict = match old {
        Some(prev) if *prev == new => "unchanged",
        Some(prev) => {
            check_immutable(prev, &new)?;
            "configured"
        }
        None => "created",
    };
    state.put_resource(&new.reference(), Some(new));
    Ok(verdict)
}

fn transition(rules: &ClusterRules, s: &mut ClusterState, cmd: &Command) -> Result<String, ApplyError> {
    match cmd.verb {
        Verb::Get | Verb::Describe | Verb::Logs => Err(ApplyError::NotAWrite(cmd.verb.words().to_owned())),
        Verb::Exec | Verb::Attach | Verb::Edit | Verb::Debug => Err(ApplyError::Unsupported(cmd.verb.words().to_owned())),
        Verb::Apply => apply_manifest(rules, s, cmd, false),
        Verb::Create if cmd.manifest.is_some() => apply_manifest(rules, s, cmd, true),
        Verb::Create => {
            let r = target_ref(rules, cmd)?;
            require_kind(cmd, &r, &[Kind::Deployment])?;
            if s.resource(&r).is_some() {
                return Err(ApplyError::AlreadyExists { resource_type: "deployments.apps".into(), name: r.name });
            }
            let image =
                cmd.flag_value(&["--image"]).ok_or_else(|| ApplyError::Invalid("required flag(s) \"image\" not set".into()))?;
            let replicas = match cmd.flag_value(&["--replicas"]) {
                Some(v) => {
                    v.parse().map_err(|_| ApplyError::Invalid(format!("invalid argument {v:?} for \"--replicas\" flag")))?
                }
                None => 1,
            };
            let port = match cmd.flag_value(&["--port"]) {
                Some(v) => v.parse().map_err(|_| ApplyError::Invalid(format!("invalid argument {v:?} for \"--port\" flag")))?,
                None => 80,
            };
            let ns = r.namespace.clone().unwrap_or_default();
            s.deployments.insert(
                ObjectKey::new(&ns, &r.name),
                Deployment {
                    name: r.name.clone(),
                    namespace: ns,
                    desired_replicas: replicas,
                    image: image.to_owned(),
                    container: r.name.clone(),
                    container_port: port,
                    node_selector: None,
                    pvc_refs: Vec::new(),
                },
            );
            Ok(format!("deployment.apps/{} created", r.name))
        }
        Verb::Scale => {
            let r = target_ref(rules, cmd)?;
            require_kind(cmd, &r, &[Kind::Deployment])?;
            let replicas: u32 = cmd
                .flag_value(&["--replicas"])
                .ok_or_else(|| ApplyError::Invalid("required flag(s) \"replicas\" not set".into()))?
                .parse()
                .map_err(|_| ApplyError::Invalid("--replicas must be a non-negative integer".into()))?;
            let key = ObjectKey::new(r.namespace.clone().unwrap_or_default(), r.name.clone());
            let d = s.deployments.get_mut(&key).ok_or_else(|| not_found(&r))?;
            d.desired_replicas = replicas;
            Ok(format!("deployment.apps/{} scaled", r.name))
        }
        Verb::Patch => {
            let r = target_ref(rules, cmd)?;
            require_kind(
                cmd,
                &r,
                &[Kind::Deployment, Kind::Service, Kind::PersistentVolumeClaim, Kind::StorageClass, Kind::Node],
            )?;
            let old = existing(s, &r)?;
            let patch = Patch::from_command(cmd).map_err(ApplyError::Invalid)?;
            let new = patch.apply(&old).map_err(ApplyError::Invalid)?;
            let verdict = match overwrite(s, Some(&old), new)? {
                "unchanged" => "patched (no change)",
                _ => "patched",
            };
            Ok(format!("{}/{} {verdict}", r.kind.resource_type(), r.name))
        }
        Verb::Delete => {
            let r = target_ref(rules, cmd)?;
            match r.kind {
                Kind::Namespace => Err(ApplyError::Forbidden(format!("namespace \"{}\" may not be deleted", r.name))),
                Kind::Pod => {
                    let ns = r.namespace.clone().unwrap_or_default();
                    match s.pods.get(&r.name) {
                        Some(p) if p.namespace == ns => {
                            s.pods.remove(&r.name);
                            Ok(format!("pod \"{}\" deleted", r.name))
                        }
                        _ => Err(not_found(&r)),
                    }
                }
                Kind::Deployment | Kind::Service | Kind::PersistentVolumeClaim | Kind::StorageClass | Kind::Node => {
                    existing(s, &r)?;
                    s.put_resource(&r, None);
                    Ok(format!("{} \"{}\" deleted", r.kind.resource_type(), r.name))
                }
                _ => Err(require_kind(cmd, &r, &[]).unwrap_err()),
            }
        }
        Verb::Cordon | Verb::Uncordon => {
            let name = cmd.name.clone().ok_or_else(|| ApplyError::Invalid("node name may not be empty".into()))?;
            let node = s
                .nodes
                .get_mut(&name)
                .ok_or_else(|| ApplyError::UnknownTarget { resource_type: "nodes".into(), name: name.clone() })?;
            let cordon = cmd.verb == Verb::Cordon;
            let word = if cordon { "cordoned" } else { "uncordoned" };
            if node.schedulable != cordon {
                return Ok(format!("node/{name} already {word}"));
            }
            node.schedulable = !cordon;
            Ok(format!("node/{name} {word}"))
        }
        Verb::RolloutRestart => {
            let r = target_ref(rules, cmd)?;
            require_kind(cmd, &r, &[Kind::Deployment])?;
            existing(s, &r)?;
            let ns = r.namespace.clone().unwrap_or_default();
            s.pods.retain(|_, p| !(p.namespace == ns && p.owner == r.name));
            Ok(format!("deployment.apps/{} restarted", r.name))
        }
    }
}

fn apply_manifest(rules: &ClusterRules, s: &mut ClusterState, cmd: &Command, create_only: bool) -> Result<String, ApplyError> {
    let mut resource = cmd.manifest.clone().ok_or_else(|| ApplyError::Invalid("must specify one of -f and -k".into()))?;
    let ns = namespace_of(rules, cmd);
    let declared = match &mut resource {
        Resource::Deployment(d) => Some(&mut d.namespace),
        Resource::Service(svc) => Some(&mut svc.namespace),
        Resource::Pvc(p) => Some(&mut p.namespace),
        Resource::Node(_) | Resource::StorageClass(_) => None,
    };
    if let Some(declared) = declared {
        if declared.is_empty() {
            *declared = ns.clone();
        } else if cmd.namespace.as_deref().is_some_and(|n| n != declared) {
            return Err(ApplyError::Invalid(format!(
                "the namespace from the provided object \"{declared}\" does not match the namespace \"{ns}\". You must pass '--namespace={declared}' to perform this operation."
            )));
        }
    }
    let r = resource.reference();
    let old = s.resource(&r);
    if create_only && old.is_some() {
        return Err(ApplyError::AlreadyExists { resource_type: r.kind.resource_type().to_owned(), name: r.name });
    }
    let verdict = overwrite(s, old.as_ref(), resource)?;
    Ok(format!("{}/{} {verdict}", r.kind.resource_type(), r.name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{CrashRule, Node, PodPhase, Pvc, PvcStatus, StorageClass};
    use crate::command::parse;
    use std::collections::BTreeMap;

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
                image: "geo:v1".into(),
                container: "hotel-reserv-geo".into(),
                container_port: 8083,
                node_selector: None,
                pvc_refs: vec!["geo-pvc".into()],
            },
        );
        s.pvcs.insert(
            ObjectKey::new("test-hotel-reservation", "geo-pvc"),
            Pvc {
                name: "geo-pvc".into(),
                namespace: "test-hotel-reservation".into(),
                storage_class: "geo-storage".into(),
                status: PvcStatus::Pending,
            },
        );
        (rules.clone(), reconcile(&rules, &s))
    }

    fn run(rules: &ClusterRules, s: &ClusterState, text: &str) -> Result<Applied, ApplyError> {
        apply_write(rules, s, &parse(text).unwrap())
    }

    const CLASS_AWS: &str = "kubectl apply -f - <<EOF\napiVersion: storage.k8s.io/v1\nkind: StorageClass\nmetadata:\n  name: geo-storage\nprovisioner: kubernetes.io/aws-ebs\nparameters:\n  type: gp2\nEOF";
    const CLASS_LOCAL: &str = "kubectl apply -f - <<EOF\napiVersion: storage.k8s.io/v1\nkind: StorageClass\nmetadata:\n  name: geo-storage\nprovisioner: rancher.io/local-path\nvolumeBindingMode: WaitForFirstConsumer\nEOF";

    #[test]
    fn scale_to_zero_removes_pods() {
        let (rules, s) = base();
        let out = run(&rules, &s, "kubectl scale deployment geo --replicas=0").unwrap();
        assert_eq!(out.message, "deployment.apps/geo scaled");
        assert!(out.state.pods.is_empty());
    }

    #[test]
    fn deleting_an_owned_pod_recreates_it_under_a_new_name() {
        let (rules, s) = base();
        let old = s.pods.keys().next().unwrap().clone();
        let out = run(&rules, &s, &format!("kubectl delete pod {old} -n test-hotel-reservation")).unwrap();
        assert_eq!(out.state.pods.len(), 1);
        assert!(!out.state.pods.contains_key(&old));
        assert_eq!(out.state, s);
    }

    #[test]
    fn applying_a_class_binds_the_claim() {
        let (rules, s) = base();
        let out = run(&rules, &s, CLASS_LOCAL).unwrap();
        assert_eq!(out.message, "storageclass.storage.k8s.io/geo-storage created");
        assert_eq!(out.state.pvcs.values().next().unwrap().status, PvcStatus::Bound);
        assert_eq!(out.state.pods.values().next().unwrap().phase, PodPhase::Running);
    }

    #[test]
    fn changing_provisioner_is_an_immutable_field_conflict() {
        let (rules, s) = base();
        let first = run(&rules, &s, CLASS_AWS).unwrap().state;
        let err = run(&rules, &first, CLASS_LOCAL).unwrap_err();
        assert_eq!(
            err.to_string(),
            "The StorageClass \"geo-storage\" is invalid: \n* provisioner: Forbidden: updates to provisioner are forbidden.\n* parameters: Forbidden: updates to parameters are forbidden.\n* volumeBindingMode: Invalid value: \"WaitForFirstConsumer\": field is immutable"
        );
        let mut only_provisioner = first.clone();
        only_provisioner.storage_classes.get_mut("geo-storage").unwrap().parameters = BTreeMap::new();
        only_provisioner.storage_classes.get_mut("geo-storage").unwrap().binding_mode = "WaitForFirstConsumer".into();
        let err = run(&rules, &only_provisioner, CLASS_LOCAL).unwrap_err();
        assert_eq!(
            err.to_string(),
            "The StorageClass \"geo-storage\" is invalid: provisioner: Forbidden: updates to provisioner are forbidden."
        );
    }

    #[test]
    fn reapplying_the_same_manifest_is_unchanged() {
        let (rules, s) = base();
        let first = run(&rules, &s, CLASS_LOCAL).unwrap().state;
        let again = run(&rules, &first, CLASS_LOCAL).unwrap();
        assert_eq!(again.message, "storageclass.storage.k8s.io/geo-storage unchanged");
        assert_eq!(again.state, first);
    }

    #[test]
    fn unknown_flag_is_reported_like_kubectl() {
        let (rules, s) = base();
        let err =
            run(&rules, &s, "kubectl create storageclass geo-storage --provisioner=kubernetes.io/no-provisioner").unwrap_err();
        assert_eq!(err.to_string(), "error: unknown flag: --provisioner");
    }

    #[test]
    fn missing_target_is_not_found() {
        let (rules, s) = base();
        let err = run(&rules, &s, "kubectl scale deployment nope --replicas=1").unwrap_err();
        assert_eq!(err.to_string(), "Error from server (NotFound): deployment.apps \"nope\" not found");
    }

    #[test]
    fn declared_crashing_transition_yields_the_crash_state() {
        let (mut rules, s) = base();
        rules.crashing.push(CrashRule { verb: Verb::Delete, kind: Kind::Node, name: Some("node-1".into()) });
        let out = run(&rules, &s, "kubectl delete node node-1").unwrap();
        assert!(out.state.crashed);
        assert_eq!(run(&rules, &out.state, "kubectl cordon node-1"), Err(ApplyError::ClusterUnavailable));
    }

    #[test]
    fn dry_run_flag_leaves_state_alone() {
        let (rules, s) = base();
        let out = run(&rules, &s, "kubectl scale deployment geo --replicas=3 --dry-run=server").unwrap();
        assert_eq!(out.state, s);
        assert!(out.message.ends_with("(dry run)"));
    }

    #[test]
    fn cordon_moves_pods_off_the_node() {
        let (rules, mut s) = base();
        s.storage_classes.insert(
            "geo-storage".into(),
            StorageClass {
                name: "geo-storage".into(),
                provisioner: "p".into(),
                binding_mode: "Immediate".into(),
                reclaim_policy: "Delete".into(),
                parameters: BTreeMap::new(),
            },
        );
        let s = reconcile(&rules, &s);
        let out = run(&rules, &s, "kubectl cordon node-1").unwrap();
        assert_eq!(out.message, "node/node-1 cordoned");
        assert_eq!(out.state.pods.values().next().unwrap().phase, PodPhase::Pending);
    }

    #[test]
    fn namespace_deletion_is_forbidden() {
        let (rules, s) = base();
        assert!(matches!(run(&rules, &s, "kubectl delete namespace test-hotel-reservation"), Err(ApplyError::Forbidden(_))));
    }

    #[test]
    fn rollout_restart_recreates_pods() {
        let (rules, s) = base();
        let out = run(&rules, &s, "kubectl rollout restart deployment geo").unwrap();
        assert_eq!(out.state, s);
        assert_ne!(out.state.pods.keys().collect::<Vec<_>>(), s.pods.keys().collect::<Vec<_>>());
    }
}
