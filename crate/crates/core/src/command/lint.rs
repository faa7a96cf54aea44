use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{classify, parse, Command, CommandClass, Kind, Role, Verb};

const CATALOG_TEXT: &str = include_str!("../../data/confinement_messages.txt");

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LintRule {
    StdinApply,
    InteractiveFlag,
    InteractiveEdit,
    NamespaceDeletion,
    FileManifest,
    WriteUnderReadRole,
    NoInverse,
    Pipe,
    Compound,
    Substitution,
    FlowControl,
    Function,
    StdinRedirect,
    Malformed,
}

impl LintRule {
    pub const ALL: [LintRule; 14] = [
        LintRule::StdinApply,
        LintRule::InteractiveFlag,
        LintRule::InteractiveEdit,
        LintRule::NamespaceDeletion,
        LintRule::FileManifest,
        LintRule::WriteUnderReadRole,
        LintRule::NoInverse,
        LintRule::Pipe,
        LintRule::Compound,
        LintRule::Substitution,
        LintRule::FlowControl,
        LintRule::Function,
        LintRule::StdinRedirect,
        LintRule::Malformed,
    ];

    pub fn key(&self) -> &'static str {
        match self {
            LintRule::StdinApply => "stdin_apply",
            LintRule::InteractiveFlag => "interactive_flag",
            LintRule::InteractiveEdit => "interactive_edit",
            LintRule::NamespaceDeletion => "namespace_deletion",
            LintRule::FileManifest => "file_manifest",
            LintRule::WriteUnderReadRole => "write_under_read_role",
            LintRule::NoInverse => "no_inverse",
            LintRule::Pipe => "pipe",
            LintRule::Compound => "compound",
            LintRule::Substitution => "substitution",
            LintRule::FlowControl => "flow_control",
            LintRule::Function => "function",
            LintRule::StdinRedirect => "stdin_redirect",
            LintRule::Malformed => "malformed",
        }
    }
}

fn catalog() -> &'static BTreeMap<&'static str, &'static str> {
    static CATALOG: OnceLock<BTreeMap<&'static str, &'static str>> = OnceLock::new();
    CATALOG.get_or_init(|| {
        CATALOG_TEXT
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|l| l.split_once('\t').expect("catalog lines are <rule>\\t<message>"))
            .collect()
    })
}

/// Catalogued message for `rule`, with `{arg}` substituted.
pub fn message(rule: LintRule, arg: Option<&str>) -> String {
    let template = catalog().get(rule.key()).copied().unwrap_or("Command rejected.");
    template.replace("{arg}", arg.unwrap_or(""))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintVerdict {
    pub allowed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<LintRule>,
    /// Exact catalog message when blocked; empty when allowed.
    pub reason: String,
}

impl LintVerdict {
    pub fn allow() -> Self {
        LintVerdict { allowed: true, rule: None, reason: String::new() }
    }

    pub fn block(rule: LintRule, arg: Option<&str>) -> Self {
        LintVerdict { allowed: false, rule: Some(rule), reason: message(rule, arg) }
    }
}

const INTERACTIVE_SHORT: &[&str] = &["-it", "-ti", "-i", "-t"];
const INTERACTIVE_LONG: &[&str] = &["--stdin", "--tty"];

fn interactive_flag(cmd: &Command) -> Option<&str> {
    cmd.flags.iter().map(|f| f.name.as_str()).find(|name| INTERACTIVE_SHORT.contains(name) || INTERACTIVE_LONG.contains(name))
}

/// Whether the verb has an undo operator in principle. Per-state gaps are
/// caught by inverse synthesis.
fn has_inverse(cmd: &Command) -> bool {
    !matches!(cmd.verb, Verb::Exec | Verb::Attach | Verb::Edit | Verb::Debug)
}

/// Confinement check of a parsed command for `role`.
///
/// Rules blocked for every role come first (interactive flags, interactive
/// editors, namespace deletion, stdin manifests), then the role rule, then
/// the requirement that every write has an undo operator.
pub fn lint(cmd: &Command, role: Role) -> LintVerdict {
    if let Some(flag) = interactive_flag(cmd) {
        return LintVerdict::block(LintRule::InteractiveFlag, Some(flag));
    }
    if matches!(cmd.verb, Verb::Edit | Verb::Debug) {
        return LintVerdict::block(LintRule::InteractiveEdit, Some(cmd.verb.words()));
    }
    if cmd.verb == Verb::Delete && cmd.kind == Some(Kind::Namespace) {
        return LintVerdict::block(LintRule::NamespaceDeletion, None);
    }
    if cmd.manifest.is_none() {
        if let Some(file) = cmd.flag_value(&["-f", "--filename"]) {
            if file == "-" {
                return LintVerdict::block(LintRule::StdinApply, None);
            }
            return LintVerdict::block(LintRule::FileManifest, Some(file));
        }
    }
    let class = classify(cmd);
    if role == Role::ReadOnly && class == CommandClass::Write {
        return LintVerdict::block(LintRule::WriteUnderReadRole, Some(cmd.verb.words()));
    }
    if class == CommandClass::Write && !has_inverse(cmd) {
        return LintVerdict::block(LintRule::NoInverse, Some(cmd.verb.words()));
    }
    LintVerdict::allow()
}

/// Parse then lint: the full confinement check on raw command text.
pub fn confine(text: &str, role: Role) -> LintVerdict {
    match parse(text) {
        Ok(cmd) => lint(&cmd, role),
        Err(e) => {
            let (rule, arg) = e.rule();
            LintVerdict::block(rule, arg)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_rule_has_a_catalog_entry() {
        for rule in LintRule::ALL {
            assert!(catalog().contains_key(rule.key()), "{rule:?}");
        }
        assert_eq!(catalog().len(), LintRule::ALL.len());
    }

    #[test]
    fn stdin_apply_message_is_exact() {
        let v = confine("kubectl apply -f -", Role::Writer);
        assert!(!v.allowed);
        assert_eq!(v.reason, "Stdin redirection is not allowed.");
    }

    #[test]
    fn interactive_exec_message_is_exact() {
        let v = confine("kubectl exec -it mongodb-rate-bfbcf4587-j7lsf -n test-hotel-reservation -- mongo", Role::Writer);
        assert_eq!(v.reason, "Interactive flag detected: -it. Such commands are not supported.");
    }

    #[test]
    fn read_role_cannot_write() {
        let v = confine("kubectl scale deployment geo --replicas=0", Role::ReadOnly);
        assert_eq!(v.rule, Some(LintRule::WriteUnderReadRole));
        assert!(confine("kubectl scale deployment geo --replicas=0", Role::Writer).allowed);
        assert!(confine("kubectl get pods", Role::ReadOnly).allowed);
    }

    #[test]
    fn blocked_for_all_roles() {
        for role in [Role::ReadOnly, Role::Writer] {
            for (text, rule) in [
                ("kubectl delete namespace my-ns", LintRule::NamespaceDeletion),
                ("kubectl edit deployment/bar", LintRule::InteractiveEdit),
                ("kubectl debug pod/foo", LintRule::InteractiveEdit),
                ("kubectl attach --tty pod/foo", LintRule::InteractiveFlag),
                ("kubectl exec --stdin pod/foo -- sh", LintRule::InteractiveFlag),
            ] {
                assert_eq!(confine(text, role).rule, Some(rule), "{text} as {role:?}");
            }
        }
    }

    #[test]
    fn non_interactive_exec_has_no_inverse() {
        let v = confine("kubectl exec geo-1 -- ls", Role::Writer);
        assert_eq!(v.rule, Some(LintRule::NoInverse));
    }

    #[test]
    fn heredoc_apply_is_allowed() {
        let text = "kubectl apply -f - <<EOF\napiVersion: storage.k8s.io/v1\nkind: StorageClass\nmetadata:\n  name: geo-storage\nprovisioner: rancher.io/local-path\nEOF";
        assert!(confine(text, Role::Writer).allowed);
    }
}
