//! kubectl-style commands: parsing, confinement, classification, dry-run and
//! inverse synthesis.
//!
//! The accepted grammar is documented in `docs/command-grammar.md`. Only
//! single kubectl invocations are accepted; any shell composition is
//! rejected before verb dispatch.

mod inverse;
mod lint;
mod manifest;
mod parse;
mod patch;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cluster::{apply_write, ClusterRules, ClusterState, Resource};

pub use inverse::{synthesize_inverse, touched, Inverse, NoInverse};
pub use lint::{confine, lint, message, LintRule, LintVerdict};
pub use manifest::{parse_manifest, render_manifest};
pub use parse::{parse, ParseError};
pub use patch::{Patch, PatchType};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verb {
    Get,
    Describe,
    Logs,
    Apply,
    Delete,
    Patch,
    Scale,
    Create,
    Cordon,
    Uncordon,
    RolloutRestart,
    Exec,
    Edit,
    Debug,
    Attach,
}

impl Verb {
    pub fn from_word(word: &str) -> Option<Verb> {
        Some(match word {
            "get" => Verb::Get,
            "describe" => Verb::Describe,
            "logs" => Verb::Logs,
            "apply" => Verb::Apply,
            "delete" => Verb::Delete,
            "patch" => Verb::Patch,
            "scale" => Verb::Scale,
            "create" => Verb::Create,
            "cordon" => Verb::Cordon,
            "uncordon" => Verb::Uncordon,
            "exec" => Verb::Exec,
            "edit" => Verb::Edit,
            "debug" => Verb::Debug,
            "attach" => Verb::Attach,
            _ => return None,
        })
    }

    /// The words following `kubectl` for this verb.
    pub fn words(&self) -> &'static str {
        match self {
            Verb::Get => "get",
            Verb::Describe => "describe",
            Verb::Logs => "logs",
            Verb::Apply => "apply",
            Verb::Delete => "delete",
            Verb::Patch => "patch",
            Verb::Scale => "scale",
            Verb::Create => "create",
            Verb::Cordon => "cordon",
            Verb::Uncordon => "uncordon",
            Verb::RolloutRestart => "rollout restart",
            Verb::Exec => "exec",
            Verb::Edit => "edit",
            Verb::Debug => "debug",
            Verb::Attach => "attach",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Pod,
    Deployment,
    Service,
    PersistentVolumeClaim,
    StorageClass,
    Node,
    Namespace,
    Event,
    /// Any resource type the simulator does not model.
    Other,
}

impl Kind {
    pub fn from_word(word: &str) -> Kind {
        match word.to_ascii_lowercase().as_str() {
            "pod" | "pods" | "po" => Kind::Pod,
            "deployment" | "deployments" | "deploy" | "deployment.apps" | "deployments.apps" => Kind::Deployment,
            "service" | "services" | "svc" => Kind::Service,
            "persistentvolumeclaim" | "persistentvolumeclaims" | "pvc" | "pvcs" => Kind::PersistentVolumeClaim,
            "storageclass" | "storageclasses" | "sc" | "storageclass.storage.k8s.io" | "storageclasses.storage.k8s.io" => {
                Kind::StorageClass
            }
            "node" | "nodes" | "no" => Kind::Node,
            "namespace" | "namespaces" | "ns" => Kind::Namespace,
            "event" | "events" | "ev" => Kind::Event,
            _ => Kind::Other,
        }
    }

    /// Fully qualified resource type used in rendered commands and messages.
    pub fn resource_type(&self) -> &'static str {
        match self {
            Kind::Pod => "pod",
            Kind::Deployment => "deployment.apps",
            Kind::Service => "service",
            Kind::PersistentVolumeClaim => "persistentvolumeclaim",
            Kind::StorageClass => "storageclass.storage.k8s.io",
            Kind::Node => "node",
            Kind::Namespace => "namespace",
            Kind::Event => "event",
            Kind::Other => "resource",
        }
    }

    pub fn namespaced(&self) -> bool {
        !matches!(self, Kind::Node | Kind::StorageClass | Kind::Namespace)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flag {
    /// Flag as written, including dashes (`--replicas`, `-n`, `-it`).
    pub name: String,
    pub value: Option<String>,
}

/// Read/write class of a command.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CommandClass {
    Read,
    Write,
}

/// Agent role used for confinement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    /// Detection and diagnosis agents.
    ReadOnly,
    /// Mitigation and undo agents.
    Writer,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Command {
    pub verb: Verb,
    pub kind: Option<Kind>,
    /// Resource type as written, kept for unknown kinds and messages.
    pub kind_text: Option<String>,
    pub name: Option<String>,
    pub namespace: Option<String>,
    pub flags: Vec<Flag>,
    /// Extra positional arguments and anything after `--`.
    pub args: Vec<String>,
    /// Inline manifest for `apply -f - <<EOF ... EOF`.
    pub manifest: Option<Resource>,
    /// The text this command was parsed from; empty for synthesized commands.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub source: String,
}

impl Command {
    pub fn new(verb: Verb, kind: Kind, name: impl Into<String>) -> Self {
        Command {
            verb,
            kind: Some(kind),
            kind_text: None,
            name: Some(name.into()),
            namespace: None,
            flags: Vec::new(),
            args: Vec::new(),
            manifest: None,
            source: String::new(),
        }
    }

    /// `kubectl apply -f - <<EOF` carrying `resource` inline.
    pub fn apply(resource: Resource) -> Self {
        Command {
            verb: Verb::Apply,
            kind: Some(resource.kind()),
            kind_text: None,
            name: Some(resource.name().to_owned()),
            namespace: resource.namespace().map(str::to_owned),
            flags: vec![Flag { name: "-f".into(), value: Some("-".into()) }],
            args: Vec::new(),
            manifest: Some(resource),
            source: String::new(),
        }
    }

    pub fn in_namespace(mut self, ns: impl Into<String>) -> Self {
        self.namespace = Some(ns.into());
        self
    }

    pub fn with_flag(mut self, name: &str, value: impl Into<String>) -> Self {
        self.flags.push(Flag { name: name.into(), value: Some(value.into()) });
        self
    }

    pub fn flag(&self, names: &[&str]) -> Option<&Flag> {
        self.flags.iter().find(|f| names.contains(&f.name.as_str()))
    }

    pub fn flag_value(&self, names: &[&str]) -> Option<&str> {
        self.flag(names).and_then(|f| f.value.as_deref())
    }

    pub fn is_dry_run(&self) -> bool {
        self.flags.iter().any(|f| f.name == "--dry-run" && f.value.as_deref() != Some("none"))
    }

    /// Kind and name the command acts on, looking through inline manifests.
    pub fn target(&self) -> (Option<Kind>, Option<&str>) {
        match &self.manifest {
            Some(r) => (Some(r.kind()), Some(r.name())),
            None => (self.kind, self.name.as_deref()),
        }
    }

    pub fn class(&self) -> CommandClass {
        classify(self)
    }

    /// The original text when parsed, otherwise the canonical rendering.
    pub fn text(&self) -> String {
        if self.source.is_empty() {
            self.to_string()
        } else {
            self.source.clone()
        }
    }
}

/// `get`, `describe` and `logs` are reads; every other verb may mutate.
pub fn classify(cmd: &Command) -> CommandClass {
    match cmd.verb {
        Verb::Get | Verb::Describe | Verb::Logs => CommandClass::Read,
        _ => CommandClass::Write,
    }
}

fn quote(value: &str) -> String {
    let plain = !value.is_empty() && value.bytes().all(|b| b.is_ascii_alphanumeric() || b"._/:=,-@+".contains(&b));
    if plain {
        value.to_owned()
    } else {
        format!("'{}'", value.replace('\'', r"'\''"))
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "kubectl {}", self.verb.words())?;
        if let Some(resource) = &self.manifest {
            return write!(f, " -f - <<EOF\n{}EOF", render_manifest(resource));
        }
        match (self.kind, &self.kind_text) {
            (_, Some(text)) => write!(f, " {text}")?,
            (Some(kind), None) if !matches!(self.verb, Verb::Cordon | Verb::Uncordon) => write!(f, " {}", kind.resource_type())?,
            _ => {}
        }
        if let Some(name) = &self.name {
            write!(f, " {}", quote(name))?;
        }
        for flag in &self.flags {
            match &flag.value {
                Some(v) if flag.name.starts_with("--") => write!(f, " {}={}", flag.name, quote(v))?,
                Some(v) => write!(f, " {} {}", flag.name, quote(v))?,
                None => write!(f, " {}", flag.name)?,
            }
        }
        if let Some(ns) = &self.namespace {
            write!(f, " -n {}", quote(ns))?;
        }
        if !self.args.is_empty() {
            f.write_str(" --")?;
            for a in &self.args {
                write!(f, " {}", quote(a))?;
            }
        }
        Ok(())
    }
}

/// Result of evaluating a write without persisting it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictedOutcome {
    Ok(String),
    Error(String),
}

impl PredictedOutcome {
    pub fn is_ok(&self) -> bool {
        matches!(self, PredictedOutcome::Ok(_))
    }
}

/// Evaluates `cmd` against a copy of `state`. The input is never modified.
pub fn dry_run(rules: &ClusterRules, state: &ClusterState, cmd: &Command) -> PredictedOutcome {
    match apply_write(rules, state, cmd) {
        Ok(applied) => PredictedOutcome::Ok(applied.message),
        Err(e) => PredictedOutcome::Error(e.to_string()),
    }
}
