//! Inline YAML manifests, restricted to the fields the cluster model tracks.

use std::collections::BTreeMap;

use serde_yaml::{Mapping, Value};

use crate::cluster::{Deployment, Node, Pvc, PvcStatus, Resource, Service, StorageClass};

const HOSTNAME_LABEL: &str = "kubernetes.io/hostname";

fn get<'a>(v: &'a Value, path: &[&str]) -> Option<&'a Value> {
    path.iter().try_fold(v, |cur, key| cur.get(*key))
}

fn get_str(v: &Value, path: &[&str]) -> Option<String> {
    get(v, path).and_then(|x| match x {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    })
}

fn get_u64(v: &Value, path: &[&str]) -> Result<Option<u64>, String> {
    match get(v, path) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Number(n)) => {
            n.as_u64().map(Some).ok_or_else(|| format!("{} must be a non-negative integer", path.join(".")))
        }
        Some(Value::String(s)) => s.parse().map(Some).map_err(|_| format!("{} must be an integer", path.join("."))),
        Some(_) => Err(format!("{} must be an integer", path.join("."))),
    }
}

fn port(v: u64, field: &str) -> Result<u16, String> {
    u16::try_from(v).map_err(|_| format!("{field} out of range"))
}

/// Parses one manifest document. `namespace` fills in namespaced resources
/// that do not declare one.
pub fn parse_manifest(text: &str, namespace: Option<&str>) -> Result<Resource, String> {
    let doc: Value = serde_yaml::from_str(text).map_err(|e| e.to_string())?;
    from_value(&doc, namespace)
}

pub(crate) fn from_value(doc: &Value, namespace: Option<&str>) -> Result<Resource, String> {
    let doc = doc.clone();
    let kind = get_str(&doc, &["kind"]).ok_or("missing kind")?;
    let name = get_str(&doc, &["metadata", "name"]).ok_or("missing metadata.name")?;
    let ns = get_str(&doc, &["metadata", "namespace"]).or_else(|| namespace.map(str::to_owned)).unwrap_or_default();

    match kind.as_str() {
        "StorageClass" => {
            let provisioner = get_str(&doc, &["provisioner"]).ok_or("missing provisioner")?;
            let parameters = match get(&doc, &["parameters"]) {
                Some(Value::Mapping(m)) => m
                    .iter()
                    .map(|(k, v)| {
                        let k = get_str(k, &[]).ok_or("parameter keys must be strings")?;
                        let v = get_str(v, &[]).ok_or("parameter values must be scalars")?;
                        Ok((k, v))
                    })
                    .collect::<Result<BTreeMap<_, _>, String>>()?,
                None | Some(Value::Null) => BTreeMap::new(),
                Some(_) => return Err("parameters must be a mapping".into()),
            };
            Ok(Resource::StorageClass(StorageClass {
                name,
                provisioner,
                binding_mode: get_str(&doc, &["volumeBindingMode"]).unwrap_or_else(|| "Immediate".into()),
                reclaim_policy: get_str(&doc, &["reclaimPolicy"]).unwrap_or_else(|| "Delete".into()),
                parameters,
            }))
        }
        "Deployment" => {
            let pod_spec = get(&doc, &["spec", "template", "spec"]).ok_or("missing spec.template.spec")?;
            let container = match pod_spec.get("containers") {
                Some(Value::Sequence(seq)) if !seq.is_empty() => &seq[0],
                _ => return Err("spec.template.spec.containers must list one container".into()),
            };
            let image = get_str(container, &["image"]).ok_or("container image is required")?;
            let container_name = get_str(container, &["name"]).unwrap_or_else(|| name.clone());
            let container_port = match container.get("ports") {
                Some(Value::Sequence(ports)) if !ports.is_empty() => {
                    port(get_u64(&ports[0], &["containerPort"])?.ok_or("containerPort is required")?, "containerPort")?
                }
                _ => 80,
            };
            let node_selector = get_str(pod_spec, &["nodeSelector", HOSTNAME_LABEL]);
            let pvc_refs = match pod_spec.get("volumes") {
                Some(Value::Sequence(vols)) => {
                    vols.iter().filter_map(|v| get_str(v, &["persistentVolumeClaim", "claimName"])).collect()
                }
                _ => Vec::new(),
            };
            let replicas = get_u64(&doc, &["spec", "replicas"])?.unwrap_or(1);
            Ok(Resource::Deployment(Deployment {
                name,
                namespace: ns,
                desired_replicas: u32::try_from(replicas).map_err(|_| "replicas out of range")?,
                image,
                container: container_name,
                container_port,
                node_selector,
                pvc_refs,
            }))
        }
        "Service" => {
            let selector = get_str(&doc, &["spec", "selector", "app"])
                .or_else(|| get_str(&doc, &["spec", "selector", "io.kompose.service"]))
                .ok_or("spec.selector.app is required")?;
            let first_port = match get(&doc, &["spec", "ports"]) {
                Some(Value::Sequence(ports)) if !ports.is_empty() => &ports[0],
                _ => return Err("spec.ports must list one port".into()),
            };
            let p = port(get_u64(first_port, &["port"])?.ok_or("port is required")?, "port")?;
            let target = match get_u64(first_port, &["targetPort"])? {
                Some(t) => port(t, "targetPort")?,
                None => p,
            };
            Ok(Resource::Service(Service { name, namespace: ns, port: p, target_port: target, selector }))
        }
        "PersistentVolumeClaim" => {
            let storage_class = get_str(&doc, &["spec", "storageClassName"]).ok_or("spec.storageClassName is required")?;
            Ok(Resource::Pvc(Pvc { name, namespace: ns, storage_class, status: PvcStatus::Pending }))
        }
        "Node" => {
            let unschedulable = matches!(get(&doc, &["spec", "unschedulable"]), Some(Value::Bool(true)));
            let healthy = match get(&doc, &["status", "conditions"]) {
                Some(Value::Sequence(conds)) => conds
                    .iter()
                    .find(|c| get_str(c, &["type"]).as_deref() == Some("Ready"))
                    .is_none_or(|c| get_str(c, &["status"]).as_deref() == Some("True")),
                _ => true,
            };
            Ok(Resource::Node(Node { name, schedulable: !unschedulable, healthy }))
        }
        other => Err(format!("unsupported kind {other:?}")),
    }
}

fn map(entries: Vec<(&str, Value)>) -> Value {
    let mut m = Mapping::new();
    for (k, v) in entries {
        m.insert(Value::String(k.to_owned()), v);
    }
    Value::Mapping(m)
}

fn s(v: &str) -> Value {
    Value::String(v.to_owned())
}

fn metadata(name: &str, namespace: Option<&str>) -> Value {
    let mut entries = vec![("name", s(name))];
    if let Some(ns) = namespace.filter(|ns| !ns.is_empty()) {
        entries.push(("namespace", s(ns)));
    }
    map(entries)
}

/// Renders a resource as a manifest that [`parse_manifest`] reads back to
/// the same resource (PVC status aside, which is derived).
pub fn render_manifest(resource: &Resource) -> String {
    serde_yaml::to_string(&to_value(resource)).expect("manifest values are plain YAML")
}

pub(crate) fn to_value(resource: &Resource) -> Value {
    match resource {
        Resource::StorageClass(c) => {
            let mut entries = vec![
                ("apiVersion", s("storage.k8s.io/v1")),
                ("kind", s("StorageClass")),
                ("metadata", metadata(&c.name, None)),
                ("provisioner", s(&c.provisioner)),
            ];
            if !c.parameters.is_empty() {
                entries.push(("parameters", map(c.parameters.iter().map(|(k, v)| (k.as_str(), s(v))).collect())));
            }
            entries.push(("reclaimPolicy", s(&c.reclaim_policy)));
            entries.push(("volumeBindingMode", s(&c.binding_mode)));
            map(entries)
        }
        Resource::Deployment(d) => {
            let container = map(vec![
                ("name", s(&d.container)),
                ("image", s(&d.image)),
                ("ports", Value::Sequence(vec![map(vec![("containerPort", Value::from(d.container_port))])])),
            ]);
            let mut pod_spec = Vec::new();
            if let Some(node) = &d.node_selector {
                pod_spec.push(("nodeSelector", map(vec![(HOSTNAME_LABEL, s(node))])));
            }
            pod_spec.push(("containers", Value::Sequence(vec![container])));
            if !d.pvc_refs.is_empty() {
                let vols = d
                    .pvc_refs
                    .iter()
                    .map(|claim| map(vec![("name", s(claim)), ("persistentVolumeClaim", map(vec![("claimName", s(claim))]))]))
                    .collect();
                pod_spec.push(("volumes", Value::Sequence(vols)));
            }
            map(vec![
                ("apiVersion", s("apps/v1")),
                ("kind", s("Deployment")),
                ("metadata", metadata(&d.name, Some(&d.namespace))),
                (
                    "spec",
                    map(vec![("replicas", Value::from(d.desired_replicas)), ("template", map(vec![("spec", map(pod_spec))]))]),
                ),
            ])
        }
        Resource::Service(svc) => map(vec![
            ("apiVersion", s("v1")),
            ("kind", s("Service")),
            ("metadata", metadata(&svc.name, Some(&svc.namespace))),
            (
                "spec",
                map(vec![
                    ("selector", map(vec![("app", s(&svc.selector))])),
                    (
                        "ports",
                        Value::Sequence(vec![map(vec![
                            ("port", Value::from(svc.port)),
                            ("targetPort", Value::from(svc.target_port)),
                        ])]),
                    ),
                ]),
            ),
        ]),
        Resource::Pvc(p) => map(vec![
            ("apiVersion", s("v1")),
            ("kind", s("PersistentVolumeClaim")),
            ("metadata", metadata(&p.name, Some(&p.namespace))),
            ("spec", map(vec![("storageClassName", s(&p.storage_class))])),
        ]),
        Resource::Node(n) => map(vec![
            ("apiVersion", s("v1")),
            ("kind", s("Node")),
            ("metadata", metadata(&n.name, None)),
            ("spec", map(vec![("unschedulable", Value::Bool(!n.schedulable))])),
            (
                "status",
                map(vec![(
                    "conditions",
                    Value::Sequence(vec![map(vec![
                        ("type", s("Ready")),
                        ("status", s(if n.healthy { "True" } else { "False" })),
                    ])]),
                )]),
            ),
        ]),
    }
}
