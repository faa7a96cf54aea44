use std::collections::BTreeSet;

use super::{ClusterRules, ClusterState, Deployment, Pod, PodPhase, PodSlot, PvcStatus};

const NAME_ALPHABET: &[u8] = b"bcdfghjklmnpqrstvwxz2456789";

/// Drives actual state toward declared state.
///
/// Synchronous and total on non-crashed states; crashed states are returned
/// unchanged. Scheduling is a pure function of the declared resources, so
/// `reconcile(reconcile(s)) == reconcile(s)` holds exactly, pod names
/// included.
pub fn reconcile(rules: &ClusterRules, state: &ClusterState) -> ClusterState {
    let mut s = state.clone();
    if s.crashed {
        return s;
    }

    for pvc in s.pvcs.values_mut() {
        let bound =
            s.storage_classes.get(&pvc.storage_class).is_some_and(|class| rules.provisioner_available(&class.provisioner));
        pvc.status = if bound { PvcStatus::Bound } else { PvcStatus::Pending };
    }

    // Drop pods whose owner is gone, whose ordinal is past the desired count,
    // or whose template or placement no longer matches.
    let mut removed = Vec::new();
    s.pods.retain(|_, pod| {
        let keep = s.deployments.get(&super::ObjectKey::new(&pod.namespace, &pod.owner)).is_some_and(|d| {
            pod.ordinal < d.desired_replicas
                && pod.template == template_hash(d)
                && pod.node == placement(&s.nodes, d, pod.ordinal)
        });
        if !keep {
            removed.push(pod.slot());
        }
        keep
    });
    for slot in removed {
        clear_transient(&mut s, &slot);
    }

    let occupied: BTreeSet<PodSlot> = s.pods.values().map(Pod::slot).collect();
    let deployments: Vec<Deployment> = s.deployments.values().cloned().collect();
    for d in &deployments {
        for ordinal in 0..d.desired_replicas {
            let slot = PodSlot { namespace: d.namespace.clone(), owner: d.name.clone(), ordinal };
            if occupied.contains(&slot) {
                continue;
            }
            clear_transient(&mut s, &slot);
            let template = template_hash(d);
            let name = format!("{}-{:08x}-{}", d.name, template, pod_suffix(s.next_uid));
            s.next_uid += 1;
            s.pods.insert(
                name.clone(),
                Pod {
                    name,
                    namespace: d.namespace.clone(),
                    owner: d.name.clone(),
                    ordinal,
                    phase: PodPhase::Pending,
                    restarts: 0,
                    node: placement(&s.nodes, d, ordinal),
                    template,
                },
            );
        }
    }

    assign_phases(rules, &mut s);
    s
}

/// Advances simulated time: each step bumps the restart counter of every
/// failing container.
pub fn settle(state: &ClusterState, steps: u32) -> ClusterState {
    let mut s = state.clone();
    if s.crashed {
        return s;
    }
    for pod in s.pods.values_mut() {
        if matches!(pod.phase, PodPhase::CrashLoopBackOff | PodPhase::Error) {
            pod.restarts += steps;
        }
    }
    s
}

fn clear_transient(s: &mut ClusterState, slot: &PodSlot) {
    if s.pod_faults.get(slot).is_some_and(|f| !f.persistent) {
        s.pod_faults.remove(slot);
    }
}

fn assign_phases(rules: &ClusterRules, s: &mut ClusterState) {
    let names: Vec<String> = s.pods.keys().cloned().collect();
    for name in &names {
        let pod = &s.pods[name];
        let d = &s.deployments[&super::ObjectKey::new(&pod.namespace, &pod.owner)];
        let phase = if s.pod_faults.contains_key(&pod.slot()) {
            PodPhase::Error
        } else if pod.node.is_none()
            || d.pvc_refs
                .iter()
                .any(|claim| s.pvcs.get(&super::ObjectKey::new(&d.namespace, claim)).is_none_or(|p| p.status != PvcStatus::Bound))
        {
            PodPhase::Pending
        } else if rules.correct_images.get(&d.name).is_some_and(|img| *img != d.image) {
            PodPhase::CrashLoopBackOff
        } else {
            PodPhase::Running
        };
        s.pods.get_mut(name).unwrap().phase = phase;
    }

    // Greatest fixpoint: a running pod whose dependencies have no running
    // pod falls into CrashLoopBackOff, which may in turn starve others.
    loop {
        let mut changed = false;
        for name in &names {
            let pod = &s.pods[name];
            if pod.phase != PodPhase::Running {
                continue;
            }
            let starved = rules
                .depends_on
                .get(&pod.owner)
                .is_some_and(|deps| deps.iter().any(|dep| s.running_pods(&pod.namespace, dep) == 0));
            if starved {
                s.pods.get_mut(name).unwrap().phase = PodPhase::CrashLoopBackOff;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
}

/// Node for the pod at `ordinal`: the selected node if it can take pods,
/// otherwise round-robin over schedulable healthy nodes.
fn placement(nodes: &std::collections::BTreeMap<String, super::Node>, d: &Deployment, ordinal: u32) -> Option<String> {
    match &d.node_selector {
        Some(sel) => nodes.get(sel).filter(|n| n.schedulable && n.healthy).map(|n| n.name.clone()),
        None => {
            let ready: Vec<&String> = nodes.values().filter(|n| n.schedulable && n.healthy).map(|n| &n.name).collect();
            if ready.is_empty() {
                None
            } else {
                Some(ready[ordinal as usize % ready.len()].clone())
            }
        }
    }
}

pub(crate) fn template_hash(d: &Deployment) -> u32 {
    // FNV-1a over the pod template fields.
    let mut h: u32 = 0x811c_9dc5;
    let mut feed = |bytes: &[u8]| {
        for b in bytes {
            h ^= u32::from(*b);
            h = h.wrapping_mul(0x0100_0193);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0100_0193);
    };
    feed(d.image.as_bytes());
    feed(d.container.as_bytes());
    feed(&d.container_port.to_be_bytes());
    feed(d.node_selector.as_deref().unwrap_or("").as_bytes());
    for claim in &d.pvc_refs {
        feed(claim.as_bytes());
    }
    h
}

fn pod_suffix(mut uid: u64) -> String {
    let base = NAME_ALPHABET.len() as u64;
    let mut out = Vec::with_capacity(5);
    for _ in 0..5 {
        out.push(NAME_ALPHABET[(uid % base) as usize]);
        uid /= base;
    }
    String::from_utf8(out).unwrap()
}
