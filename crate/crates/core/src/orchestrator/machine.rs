//! The control-flow state machine.
//!
//! ```text
//! Init --Initialized--> Detect
//! Detect --healthy, NoOp--> Terminate(Success)
//! Detect --healthy, fault--> Terminate(MissedDetection)
//! Detect --anomalous, NoOp--> Terminate(FalsePositive)
//! Detect --anomalous, fault--> Bootstrap
//! Rollback --RolledBack--> Bootstrap
//! Bootstrap --Bootstrapped--> Mitigate
//! Mitigate --planned--> Validate
//! Mitigate --policy exhausted--> Terminate(PolicyExhausted)
//! Validate --success--> Terminate(Success)
//! Validate --fail, step limit spent--> Terminate(StepLimit)
//! Validate --fail--> Reflect
//! Reflect --retries used = limit--> Terminate(RetriesExhausted)
//! Reflect --retry, rollback on--> Rollback
//! Reflect --retry, rollback off--> Bootstrap
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Success,
    MissedDetection,
    FalsePositive,
    RetriesExhausted,
    StepLimit,
    PolicyExhausted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Init,
    Detect,
    Rollback,
    Bootstrap,
    Mitigate,
    Validate,
    Reflect,
    Terminate(Termination),
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Terminate(t) => write!(f, "Terminate({t:?})"),
            other => write!(f, "{other:?}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Input {
    Initialized,
    Detected {
        anomalous: bool,
        noop: bool,
    },
    RolledBack,
    Bootstrapped,
    Mitigated {
        policy_exhausted: bool,
    },
    Validated {
        success: bool,
        steps_exhausted: bool,
    },
    /// `retries_used` counts failed rounds before the one just reflected on.
    Reflected {
        retries_used: usize,
        retry_limit: usize,
        rollback: bool,
    },
}

#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
#[error("no transition from {phase} on {input:?}")]
pub struct IllegalTransition {
    pub phase: Phase,
    pub input: Input,
}

/// The transition function. Every (phase, input) pair either has exactly
/// one successor or is reported as illegal.
pub fn machine_step(phase: Phase, input: Input) -> Result<Phase, IllegalTransition> {
    use Input::*;
    use Phase::*;
    let next = match (phase, input) {
        (Init, Initialized) => Detect,
        (Detect, Detected { anomalous, noop }) => match (anomalous, noop) {
            (false, true) => Terminate(Termination::Success),
            (false, false) => Terminate(Termination::MissedDetection),
            (true, true) => Terminate(Termination::FalsePositive),
            (true, false) => Bootstrap,
        },
        (Rollback, RolledBack) => Bootstrap,
        (Bootstrap, Bootstrapped) => Mitigate,
        (Mitigate, Mitigated { policy_exhausted: true }) => Terminate(Termination::PolicyExhausted),
        (Mitigate, Mitigated { policy_exhausted: false }) => Validate,
        (Validate, Validated { success: true, .. }) => Terminate(Termination::Success),
        (Validate, Validated { success: false, steps_exhausted: true }) => Terminate(Termination::StepLimit),
        (Validate, Validated { success: false, steps_exhausted: false }) => Reflect,
        (Reflect, Reflected { retries_used, retry_limit, rollback }) => {
            if retries_used >= retry_limit {
                Terminate(Termination::RetriesExhausted)
            } else if rollback {
                Rollback
            } else {
                Bootstrap
            }
        }
        (phase, input) => return Err(IllegalTransition { phase, input }),
    };
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failed_validation_reflects() {
        let next = machine_step(Phase::Validate, Input::Validated { success: false, steps_exhausted: false });
        assert_eq!(next, Ok(Phase::Reflect));
    }

    #[test]
    fn success_terminates() {
        let next = machine_step(Phase::Validate, Input::Validated { success: true, steps_exhausted: true });
        assert_eq!(next, Ok(Phase::Terminate(Termination::Success)));
    }

    #[test]
    fn retry_limit_terminates() {
        let next = machine_step(Phase::Reflect, Input::Reflected { retries_used: 9, retry_limit: 9, rollback: true });
        assert_eq!(next, Ok(Phase::Terminate(Termination::RetriesExhausted)));
        let next = machine_step(Phase::Reflect, Input::Reflected { retries_used: 8, retry_limit: 9, rollback: true });
        assert_eq!(next, Ok(Phase::Rollback));
        let next = machine_step(Phase::Reflect, Input::Reflected { retries_used: 0, retry_limit: 9, rollback: false });
        assert_eq!(next, Ok(Phase::Bootstrap));
    }

    #[test]
    fn detection_outcomes() {
        let d = |anomalous, noop| machine_step(Phase::Detect, Input::Detected { anomalous, noop }).unwrap();
        assert_eq!(d(false, true), Phase::Terminate(Termination::Success));
        assert_eq!(d(false, false), Phase::Terminate(Termination::MissedDetection));
        assert_eq!(d(true, true), Phase::Terminate(Termination::FalsePositive));
        assert_eq!(d(true, false), Phase::Bootstrap);
    }

    #[test]
    fn terminal_and_mismatched_pairs_are_illegal() {
        assert!(machine_step(Phase::Terminate(Termination::Success), Input::Initialized).is_err());
        assert!(machine_step(Phase::Init, Input::Bootstrapped).is_err());
        assert!(machine_step(Phase::Mitigate, Input::RolledBack).is_err());
    }
}
