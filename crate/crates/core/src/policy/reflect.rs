use serde::{Deserialize, Serialize};

use super::{MitigationPlan, PolicyError};

/// What a failed round leaves for the next one.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionNote {
    pub round: usize,
    /// Oracle issue strings, verbatim.
    pub issues: Vec<String>,
    pub plan_summary: String,
    /// Summaries of plans from earlier rounds, oldest first.
    #[serde(default)]
    pub prior_plans: Vec<String>,
    pub hypothesis: String,
}

/// Builds the note for a failed validation of `plan` in `round`.
pub fn reflect(
    round: usize,
    issues: &[String],
    plan: &MitigationPlan,
    prior: Option<&ReflectionNote>,
) -> Result<ReflectionNote, PolicyError> {
    if issues.is_empty() {
        return Err(PolicyError::NoIssues);
    }
    let mut prior_plans = prior.map(|p| p.prior_plans.clone()).unwrap_or_default();
    if let Some(p) = prior {
        prior_plans.push(p.plan_summary.clone());
    }
    let hypothesis = if plan.commands.is_empty() {
        "no action was taken; the failure persists".to_owned()
    } else {
        format!("plan \"{}\" did not clear: {}", plan.intent, issues[0].trim())
    };
    Ok(ReflectionNote { round, issues: issues.to_vec(), plan_summary: plan.summary(), prior_plans, hypothesis })
}
