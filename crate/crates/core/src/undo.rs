//! Stack of inverse actions, walked mechanically by the undo role.

use std::collections::BTreeMap;

use log::warn;
use serde::Serialize;
use thiserror::Error;

use crate::cluster::{apply_write_unchecked, reconcile, ClusterRules, ClusterState, PodFault, PodSlot, Resource, ResourceRef};
use crate::command::{Command, Inverse};

pub const EMPTY_STACK_MESSAGE: &str = "No more actions to rollback.";

/// Pre-write copy of what a command may touch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fragment {
    pub resources: Vec<(ResourceRef, Option<Resource>)>,
    pub pod_faults: BTreeMap<PodSlot, PodFault>,
    pub was_crashed: bool,
}

impl Fragment {
    pub fn capture(state: &ClusterState, refs: &[ResourceRef]) -> Self {
        Fragment {
            resources: refs.iter().map(|r| (r.clone(), state.resource(r))).collect(),
            pod_faults: state.pod_faults.clone(),
            was_crashed: state.crashed,
        }
    }

    fn matches(&self, state: &ClusterState) -> bool {
        state.crashed == self.was_crashed
            && state.pod_faults == self.pod_faults
            && self.resources.iter().all(|(r, body)| state.resource(r) == *body)
    }

    fn restore_into(&self, rules: &ClusterRules, state: &mut ClusterState) {
        state.crashed = false;
        for (r, body) in &self.resources {
            state.put_resource(r, body.clone());
        }
        // Reschedule first: moving a pod clears its transient fault, which
        // must survive the restore.
        *state = reconcile(rules, state);
        state.pod_faults = self.pod_faults.clone();
        *state = reconcile(rules, state);
        state.crashed = self.was_crashed;
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UndoEntry {
    pub original: Command,
    pub inverse: Inverse,
    pub fragment: Fragment,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EntrySummary {
    pub original: String,
    pub inverse: String,
}

impl UndoEntry {
    pub fn summary(&self) -> EntrySummary {
        EntrySummary { original: self.original.text(), inverse: self.inverse.to_string() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct SegmentMark(usize);

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Rollback {
    pub message: String,
    pub remaining: usize,
    /// The inverse did not restore the fragment and fragment restoration
    /// was used instead.
    pub fallback: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum UndoError {
    #[error("inverse {inverse} of {original} failed: {reason}")]
    InverseFailed { original: String, inverse: String, reason: String },
    #[error("segment mark {0} is above the stack depth {1}")]
    UnknownMark(usize, usize),
}

#[derive(Clone, Debug)]
pub struct UndoStack {
    entries: Vec<UndoEntry>,
    /// Fall back to fragment restoration when an inverse misses. With this
    /// off, a miss is reported as `InverseFailed`.
    pub fragment_fallback: bool,
}

impl Default for UndoStack {
    fn default() -> Self {
        UndoStack { entries: Vec::new(), fragment_fallback: true }
    }
}

impl UndoStack {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: UndoEntry) {
        self.entries.push(entry);
    }

    pub fn depth(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn top(&self) -> Option<&UndoEntry> {
        self.entries.last()
    }

    pub fn open_segment(&self) -> SegmentMark {
        SegmentMark(self.entries.len())
    }

    pub fn entries(&self) -> &[UndoEntry] {
        &self.entries
    }

    pub fn summaries(&self) -> Vec<EntrySummary> {
        self.entries.iter().map(UndoEntry::summary).collect()
    }

    /// Pops and executes the top inverse against `state`.
    pub fn rollback_last(&mut self, rules: &ClusterRules, state: &mut ClusterState) -> Result<Rollback, UndoError> {
        let Some(entry) = self.entries.pop() else {
            return Ok(Rollback { message: EMPTY_STACK_MESSAGE.to_owned(), remaining: 0, fallback: false });
        };
        let failure = |reason: String| UndoError::InverseFailed {
            original: entry.original.text(),
            inverse: entry.inverse.to_string(),
            reason,
        };

        let mut next = state.clone();
        next.crashed = false;
        let executed = match &entry.inverse {
            Inverse::Command(cmd) => apply_write_unchecked(rules, &next, cmd).map(|a| a.state),
            Inverse::Noop { .. } => Ok(reconcile(rules, &next)),
        };
        let mut fallback = false;
        match executed {
            Ok(s) if entry.fragment.matches(&s) => next = s,
            outcome => {
                let reason = match outcome {
                    Ok(_) => "state does not match the recorded fragment".to_owned(),
                    Err(e) => e.to_string(),
                };
                if !self.fragment_fallback {
                    self.entries.push(entry.clone());
                    return Err(failure(reason));
                }
                warn!("restoring fragment for {}: {reason}", entry.original.text());
                entry.fragment.restore_into(rules, &mut next);
                fallback = true;
            }
        }
        *state = next;
        Ok(Rollback {
            message: format!("Rolled back the previous command: {}, using rollback:{}", entry.original.text(), entry.inverse),
            remaining: self.entries.len(),
            fallback,
        })
    }

    /// Rolls back every entry above `mark`, newest first.
    pub fn rollback_segment(
        &mut self,
        rules: &ClusterRules,
        state: &mut ClusterState,
        mark: SegmentMark,
    ) -> Result<Vec<Rollback>, UndoError> {
        if mark.0 > self.entries.len() {
            return Err(UndoError::UnknownMark(mark.0, self.entries.len()));
        }
        let mut done = Vec::new();
        while self.entries.len() > mark.0 {
            done.push(self.rollback_last(rules, state)?);
        }
        Ok(done)
    }

    /// Drops entries above `mark` without executing them.
    pub fn discard_to(&mut self, mark: SegmentMark) {
        self.entries.truncate(mark.0);
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}
