use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scenario::{DeploymentSpec, NodeSpec, PvcSpec, RulesSpec, ServiceSpec, StorageClassSpec};
use super::Scenario;
use crate::cluster::{CrashRule, FaultKind, FaultSpec, RequestType};
use crate::command::{Kind, Verb};

const SERVICES: &[&str] = &["search", "geo", "profile", "rate", "user", "reservation", "recommendation"];
const LOCAL: &str = "rancher.io/local-path";

/// A random hotel-style scenario with a random fault. Some are solvable by
/// a single write, some need several, and some declare crashing
/// transitions.
pub fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ns = "test-hotel-reservation".to_owned();

    let nodes: Vec<NodeSpec> =
        (1..=rng.gen_range(1..=3)).map(|i| NodeSpec { name: format!("node-{i}"), schedulable: true, healthy: true }).collect();

    let mut names: Vec<&str> = SERVICES.to_vec();
    names.shuffle(&mut rng);
    names.truncate(rng.gen_range(1..=4));
    names.insert(0, "frontend");

    let with_pvc = rng.gen_bool(0.5).then(|| names[rng.gen_range(0..names.len())]);
    let deployments: Vec<DeploymentSpec> = names
        .iter()
        .enumerate()
        .map(|(i, name)| DeploymentSpec {
            name: name.to_string(),
            replicas: rng.gen_range(1..=3),
            image: format!("{name}:v1"),
            container: format!("hotel-reserv-{name}"),
            port: 8080 + i as u16,
            node_selector: None,
            pvcs: if with_pvc == Some(name) { vec![format!("{name}-pvc")] } else { vec![] },
        })
        .collect();
    let services: Vec<ServiceSpec> = deployments
        .iter()
        .map(|d| ServiceSpec { name: d.name.clone(), port: d.port, target_port: None, selector: None })
        .collect();

    let mut call_graph: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut requests = Vec::new();
    for (i, name) in names.iter().enumerate().skip(1) {
        call_graph.entry("frontend".into()).or_default().push(name.to_string());
        let mut path = vec!["frontend".to_owned(), name.to_string()];
        if let Some(next) = names.get(i + 1).filter(|_| rng.gen_bool(0.4)) {
            call_graph.entry(name.to_string()).or_default().push(next.to_string());
            path.push(next.to_string());
        }
        requests.push(RequestType { name: format!("req-{name}"), path, weight: rng.gen_range(1..=5) });
    }
    if requests.is_empty() {
        requests.push(RequestType { name: "index".into(), path: vec!["frontend".into()], weight: 1 });
    }

    let (pvcs, storage_classes) = match with_pvc {
        Some(name) => (
            vec![PvcSpec { name: format!("{name}-pvc"), storage_class: format!("{name}-storage") }],
            vec![StorageClassSpec {
                name: format!("{name}-storage"),
                provisioner: LOCAL.into(),
                binding_mode: "WaitForFirstConsumer".into(),
                reclaim_policy: "Delete".into(),
                parameters: BTreeMap::new(),
            }],
        ),
        None => (vec![], vec![]),
    };

    let mut rules = RulesSpec { provisioners: [LOCAL.to_owned()].into(), ..Default::default() };
    for name in &names {
        if rng.gen_bool(0.5) {
            rules.correct_images.insert(name.to_string(), format!("{name}:v1"));
        }
    }
    if names.len() > 2 && rng.gen_bool(0.3) {
        rules.depends_on.insert(names[1].to_string(), vec![names[2].to_string()]);
    }
    if rng.gen_bool(0.5) {
        let rule = match rng.gen_range(0..3) {
            0 => CrashRule {
                verb: Verb::Delete,
                kind: Kind::Deployment,
                name: Some(names[rng.gen_range(0..names.len())].to_string()),
            },
            1 => CrashRule { verb: Verb::Cordon, kind: Kind::Node, name: None },
            _ => CrashRule { verb: Verb::Scale, kind: Kind::Deployment, name: Some("frontend".into()) },
        };
        rules.crashing.push(rule);
    }

    let victim = names[rng.gen_range(0..names.len())].to_string();
    let mut kinds = vec![
        FaultKind::WrongImage,
        FaultKind::TargetPortMisconfig,
        FaultKind::ScaleToZero,
        FaultKind::AssignNonexistentNode,
        FaultKind::PodKillTransient,
        FaultKind::NoOp,
    ];
    if with_pvc.is_some() {
        kinds.push(FaultKind::MissingStorageClass);
    }
    let kind = *kinds.choose(&mut rng).expect("non-empty");
    let target = match kind {
        FaultKind::NoOp => String::new(),
        FaultKind::MissingStorageClass => storage_classes[0].name.clone(),
        _ => victim.clone(),
    };
    if kind == FaultKind::WrongImage {
        rules.correct_images.insert(victim.clone(), format!("{victim}:v1"));
    }
    let fault = FaultSpec { kind, target, params: BTreeMap::new(), persistent: rng.gen_bool(0.5) };

    Scenario {
        id: format!("random-{seed}"),
        description: String::new(),
        namespace: ns,
        nodes,
        deployments,
        services,
        pvcs,
        storage_classes,
        rules,
        call_graph,
        requests,
        fault,
        playbook: None,
        expected_solvable: rng.gen_bool(0.5),
        base_dir: Default::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_scenarios_pass_the_check() {
        for seed in 0..200 {
            let s = random_scenario(seed);
            s.check().unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(random_scenario(11), random_scenario(11));
        assert_ne!(random_scenario(11), random_scenario(12));
    }
}
