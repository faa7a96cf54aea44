use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{MitigationPlan, ObservationBundle, Policy, PolicyError};

/// Candidate plans for one kind of evidence, in attempt order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaybookEntry {
    /// Regular expression matched against the observation's evidence text.
    pub evidence: String,
    pub plans: Vec<MitigationPlan>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Playbook {
    pub entries: Vec<PlaybookEntry>,
}

impl Playbook {
    pub fn from_json(text: &str) -> Result<Playbook, String> {
        let playbook: Playbook = serde_json::from_str(text).map_err(|e| e.to_string())?;
        for entry in &playbook.entries {
            Regex::new(&entry.evidence).map_err(|e| format!("evidence {:?}: {e}", entry.evidence))?;
        }
        Ok(playbook)
    }

    pub fn load(path: &Path) -> Result<Playbook, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Playbook::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Longest plan in commands.
    pub fn max_plan_len(&self) -> usize {
        self.entries.iter().flat_map(|e| &e.plans).map(|p| p.commands.len()).max().unwrap_or(0)
    }
}

/// Looks up plans by evidence and attempt number. Holds no memory, so it is
/// deterministic in (observation, attempt).
#[derive(Clone, Debug)]
pub struct ScriptedPolicy {
    entries: Vec<(Regex, Vec<MitigationPlan>)>,
}

impl ScriptedPolicy {
    pub fn new(playbook: &Playbook) -> Self {
        let entries =
            playbook.entries.iter().map(|e| (Regex::new(&e.evidence).expect("validated at load"), e.plans.clone())).collect();
        ScriptedPolicy { entries }
    }
}

impl Policy for ScriptedPolicy {
    fn name(&self) -> &str {
        "scripted"
    }

    fn propose(&mut self, obs: &ObservationBundle, attempt: usize) -> Result<MitigationPlan, PolicyError> {
        let evidence = obs.evidence();
        self.entries
            .iter()
            .find(|(re, _)| re.is_match(&evidence))
            .and_then(|(_, plans)| plans.get(attempt.checked_sub(1)?))
            .cloned()
            .ok_or(PolicyError::PlaybookExhausted(attempt))
    }
}
