//! `kubectl patch` bodies: strategic and JSON merge patches over the
//! manifest view of a resource.

use serde_yaml::{Mapping, Value};

use super::manifest::{from_value, to_value};
use super::Command;
use crate::cluster::Resource;

/// List element keys used to merge lists under a strategic patch.
const MERGE_KEYS: &[&str] = &["name", "containerPort", "port", "type"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatchType {
    Strategic,
    Merge,
}

impl PatchType {
    pub fn flag_value(&self) -> &'static str {
        match self {
            PatchType::Strategic => "strategic",
            PatchType::Merge => "merge",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub kind: PatchType,
    pub body: Value,
}

fn merge_key(element: &Value) -> Option<(&'static str, &Value)> {
    MERGE_KEYS.iter().find_map(|k| element.get(*k).map(|v| (*k, v)))
}

fn merge(target: &mut Value, patch: &Value, kind: PatchType) {
    match (target, patch) {
        (Value::Mapping(t), Value::Mapping(p)) => {
            for (k, pv) in p {
                if pv.is_null() {
                    t.remove(k);
                    continue;
                }
                match t.get_mut(k) {
                    Some(tv) => merge(tv, pv, kind),
                    None => {
                        let mut fresh = Value::Mapping(Mapping::new());
                        merge(&mut fresh, pv, kind);
                        t.insert(k.clone(), fresh);
                    }
                }
            }
        }
        (Value::Sequence(t), Value::Sequence(p))
            if kind == PatchType::Strategic && !p.is_empty() && p.iter().all(|e| merge_key(e).is_some()) =>
        {
            for pe in p {
                let (key, value) = merge_key(pe).expect("checked above");
                match t.iter_mut().find(|te| te.get(key) == Some(value)) {
                    Some(te) => merge(te, pe, kind),
                    None => t.push(pe.clone()),
                }
            }
        }
        (target, patch) => *target = patch.clone(),
    }
}

/// A patch restoring, in `pre`, every field that `patch` touches. `None`
/// when a strategic list element was added, which a merge patch cannot
/// remove.
fn invert(pre: &Value, patch: &Value, kind: PatchType) -> Option<Value> {
    match (pre, patch) {
        (Value::Mapping(t), Value::Mapping(p)) => {
            let mut out = Mapping::new();
            for (k, pv) in p {
                let inv = match t.get(k) {
                    Some(tv) => invert(tv, pv, kind)?,
                    None => Value::Null,
                };
                out.insert(k.clone(), inv);
            }
            Some(Value::Mapping(out))
        }
        (Value::Sequence(t), Value::Sequence(p))
            if kind == PatchType::Strategic && !p.is_empty() && p.iter().all(|e| merge_key(e).is_some()) =>
        {
            let mut out = Vec::new();
            for pe in p {
                let (key, value) = merge_key(pe)?;
                let te = t.iter().find(|te| te.get(key) == Some(value))?;
                let Value::Mapping(mut inv) = invert(te, pe, kind)? else { return None };
                inv.insert(Value::String(key.to_owned()), value.clone());
                out.push(Value::Mapping(inv));
            }
            Some(Value::Sequence(out))
        }
        (pre, _) => Some(pre.clone()),
    }
}

impl Patch {
    /// Reads `-p/--patch` and `--type` from a patch command.
    pub fn from_command(cmd: &Command) -> Result<Patch, String> {
        let kind = match cmd.flag_value(&["--type"]) {
            None | Some("strategic") => PatchType::Strategic,
            Some("merge") => PatchType::Merge,
            Some("json") => return Err("json patches are not supported; use --type=merge".into()),
            Some(other) => return Err(format!("--type must be one of [json merge strategic], not {other:?}")),
        };
        let text = cmd
            .flag_value(&["-p", "--patch"])
            .ok_or("must specify --patch or --patch-file containing the contents of the patch")?;
        let body: Value = serde_yaml::from_str(text).map_err(|e| format!("unable to parse {text:?}: {e}"))?;
        if !body.is_mapping() {
            return Err(format!("unable to parse {text:?}: patch must be an object"));
        }
        Ok(Patch { kind, body })
    }

    /// Applies the patch to `resource`. Identity fields may not change.
    pub fn apply(&self, resource: &Resource) -> Result<Resource, String> {
        let mut doc = to_value(resource);
        merge(&mut doc, &self.body, self.kind);
        let patched = from_value(&doc, resource.namespace())?;
        if patched.kind() != resource.kind() || patched.name() != resource.name() || patched.namespace() != resource.namespace() {
            return Err("kind, metadata.name and metadata.namespace cannot be patched".into());
        }
        Ok(patched)
    }

    /// The patch that undoes `self` on `pre`, if one exists.
    pub fn inverse(&self, pre: &Resource) -> Option<Patch> {
        let body = invert(&to_value(pre), &self.body, self.kind)?;
        Some(Patch { kind: self.kind, body })
    }

    /// Compact JSON form used as the `-p` value.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.body).expect("patch bodies have string keys")
    }
}
