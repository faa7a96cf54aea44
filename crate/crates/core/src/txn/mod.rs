//! Checkpointed transactions with severity-monotone commit and single-shot
//! undo on abort.
//!
//! A transaction checkpoints the entry state, executes at most `K` commands
//! while recording the severity after each (the hidden path), then commits
//! iff the final state is not the crash state and its severity does not
//! exceed the entry severity. Otherwise the undo role walks the
//! transaction's stack segment once and the result must equal the
//! checkpoint exactly.

mod audit;
mod lock;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{measure, snapshot, ClusterRules, ClusterState, Severity, SeverityWeights, Snapshot};
use crate::command::{dry_run, lint, synthesize_inverse, touched, Command, CommandClass, LintVerdict, PredictedOutcome, Role};
use crate::undo::{Fragment, Rollback, SegmentMark, UndoEntry, UndoError, UndoStack};

pub use audit::{AuditLog, AuditRecord};
pub use lock::{ALock, LockError, LockMode, ReadGuard, Writer};

/// Default bound on commands per transaction.
pub const DEFAULT_WINDOW: usize = 20;
/// Default number of requests in the severity probe.
pub const DEFAULT_PROBE: usize = 100;

/// The environment a transaction acts on.
#[derive(Clone, Debug)]
pub struct Environment {
    pub rules: ClusterRules,
    pub state: ClusterState,
    pub weights: SeverityWeights,
    /// Requests in the workload probe behind the SLA-violation count.
    pub probe: usize,
}

impl Environment {
    pub fn new(rules: ClusterRules, state: ClusterState, weights: SeverityWeights) -> Self {
        Environment { rules, state, weights, probe: DEFAULT_PROBE }
    }

    pub fn severity_of(&self, state: &ClusterState) -> Severity {
        measure(&self.rules, state, &self.weights, self.probe)
    }

    pub fn severity(&self) -> Severity {
        self.severity_of(&self.state)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TxnStatus {
    Open,
    Committed,
    Aborted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AbortReason {
    /// The final state is the crash state.
    Crash,
    /// Final severity above entry severity.
    Regression,
    /// The window was exhausted without lowering severity.
    WindowExceeded,
    /// The policy asked to abort.
    PolicyAbort,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepOutcome {
    Read,
    Applied(String),
    /// The dry run predicted an error; nothing was executed.
    Rejected(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepObservation {
    pub mu: Severity,
    pub outcome: StepOutcome,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TxnError {
    #[error(transparent)]
    Lock(#[from] LockError),
    #[error("the window must allow at least one action")]
    EmptyWindow,
    #[error("no transaction is open")]
    NotOpen,
    #[error("transaction already executed its {0} allowed actions")]
    WindowExceeded(usize),
    #[error("command rejected: {}", .0.reason)]
    LintRejected(LintVerdict),
    #[error("the cluster crashed; the transaction must be finalized")]
    Crashed,
    #[error("no undo operator: {0}")]
    NoInverse(String),
    #[error(transparent)]
    Undo(#[from] UndoError),
    #[error("undo did not restore the checkpoint of transaction {0}")]
    UndoIncomplete(u64),
}

/// A transaction in progress or finished.
#[derive(Clone, Debug)]
pub struct TransactionRecord {
    pub id: u64,
    pub writer: Writer,
    pub window: usize,
    pub actions: Vec<Command>,
    pub s_pre: Snapshot,
    pub hidden_path: Vec<Severity>,
    pub status: TxnStatus,
    pub abort_reason: Option<AbortReason>,
    pub window_exceeded: bool,
    mark: SegmentMark,
}

impl TransactionRecord {
    pub fn mu_pre(&self) -> &Severity {
        &self.hidden_path[0]
    }

    pub fn mu_last(&self) -> &Severity {
        self.hidden_path.last().expect("hidden path starts with the entry severity")
    }
}

/// Externally visible endpoints of one finished unit of work.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoints {
    pub pre: Severity,
    pub end: Severity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Transaction,
    /// Undo of leftovers from earlier rounds.
    Rollback,
}

/// Serializable summary of a finished transaction or rollback.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxnSummary {
    pub id: u64,
    pub kind: EventKind,
    pub actions: Vec<String>,
    pub hidden_path: Vec<Severity>,
    pub status: TxnStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<AbortReason>,
    /// Committed although the final severity is above the entry severity
    /// (possible only with undo disabled).
    #[serde(default)]
    pub regressed: bool,
    pub visible: Endpoints,
}

/// Visible trajectory: `b`, then for each finished unit its entry severity
/// when it differs from the previous visible value, then its end severity.
pub fn visible_trajectory<'a>(history: impl IntoIterator<Item = &'a Endpoints>, b: &Severity) -> Vec<Severity> {
    let mut out = vec![*b];
    for e in history {
        if out.last() != Some(&e.pre) {
            out.push(e.pre);
        }
        out.push(e.end);
    }
    out
}

/// Transaction engine over one environment.
#[derive(Debug)]
pub struct TxnEngine {
    env: Environment,
    lock: Arc<ALock>,
    undo: UndoStack,
    audit: AuditLog,
    history: Vec<TxnSummary>,
    open: Option<TransactionRecord>,
    next_id: u64,
    /// Undo on abort. Off only in the naive ablation, where every
    /// transaction commits and regressions are recorded.
    pub undo_on_abort: bool,
}

impl TxnEngine {
    pub fn new(env: Environment) -> Self {
        TxnEngine {
            env,
            lock: Arc::new(ALock::new()),
            undo: UndoStack::new(),
            audit: AuditLog::new(),
            history: Vec::new(),
            open: None,
            next_id: 1,
            undo_on_abort: true,
        }
    }

    pub fn with_audit(mut self, audit: AuditLog) -> Self {
        self.audit = audit;
        self
    }

    pub fn env(&self) -> &Environment {
        &self.env
    }

    /// Replaces the current state outside any transaction (settling,
    /// scenario setup).
    pub fn set_state(&mut self, state: ClusterState) -> Result<(), TxnError> {
        let _read = self.lock.try_read()?;
        self.env.state = state;
        Ok(())
    }

    pub fn lock(&self) -> &Arc<ALock> {
        &self.lock
    }

    pub fn undo_stack(&self) -> &UndoStack {
        &self.undo
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn history(&self) -> &[TxnSummary] {
        &self.history
    }

    pub fn current(&self) -> Option<&TransactionRecord> {
        self.open.as_ref()
    }

    /// Runs `f` under a shared read lock.
    pub fn read<R>(&self, f: impl FnOnce(&Environment) -> R) -> Result<R, TxnError> {
        let _guard = self.lock.try_read()?;
        Ok(f(&self.env))
    }

    /// Opens a transaction for `writer` with window `k`.
    pub fn begin(&mut self, writer: Writer, k: usize) -> Result<u64, TxnError> {
        if k == 0 {
            return Err(TxnError::EmptyWindow);
        }
        self.lock.try_write(writer)?;
        let id = self.next_id;
        self.next_id += 1;
        let mu = self.env.severity();
        self.open = Some(TransactionRecord {
            id,
            writer,
            window: k,
            actions: Vec::new(),
            s_pre: snapshot(&self.env.state),
            hidden_path: vec![mu],
            status: TxnStatus::Open,
            abort_reason: None,
            window_exceeded: false,
            mark: self.undo.open_segment(),
        });
        self.audit.record(&AuditRecord {
            txn: id,
            step: None,
            event: "begin".into(),
            command: String::new(),
            mu_before: mu,
            mu_after: mu,
            verdict: format!("{writer:?}"),
            message: String::new(),
        });
        Ok(id)
    }

    /// Executes one command inside the open transaction.
    pub fn step(&mut self, cmd: &Command) -> Result<StepObservation, TxnError> {
        let txn = self.open.as_mut().ok_or(TxnError::NotOpen)?;
        if txn.actions.len() >= txn.window {
            txn.window_exceeded = true;
            return Err(TxnError::WindowExceeded(txn.window));
        }
        let verdict = lint(cmd, Role::Writer);
        if !verdict.allowed {
            return Err(TxnError::LintRejected(verdict));
        }
        if self.env.state.crashed {
            return Err(TxnError::Crashed);
        }
        let before = *txn.mu_last();
        let outcome = match cmd.class() {
            CommandClass::Read => StepOutcome::Read,
            CommandClass::Write => match dry_run(&self.env.rules, &self.env.state, cmd) {
                PredictedOutcome::Error(e) => StepOutcome::Rejected(e),
                PredictedOutcome::Ok(_) => {
                    let inverse = synthesize_inverse(&self.env.rules, &self.env.state, cmd)
                        .map_err(|e| TxnError::NoInverse(e.to_string()))?;
                    let fragment = Fragment::capture(&self.env.state, &touched(&self.env.rules, cmd));
                    match crate::cluster::apply_write(&self.env.rules, &self.env.state, cmd) {
                        Ok(applied) => {
                            self.env.state = applied.state;
                            self.undo.push(UndoEntry { original: cmd.clone(), inverse, fragment });
                            StepOutcome::Applied(applied.message)
                        }
                        Err(e) => StepOutcome::Rejected(e.to_string()),
                    }
                }
            },
        };
        let mu = match outcome {
            StepOutcome::Applied(_) => self.env.severity(),
            _ => before,
        };
        txn.actions.push(cmd.clone());
        txn.hidden_path.push(mu);
        let (verdict, message) = match &outcome {
            StepOutcome::Read => ("read", String::new()),
            StepOutcome::Applied(m) => ("applied", m.clone()),
            StepOutcome::Rejected(m) => ("rejected", m.clone()),
        };
        self.audit.record(&AuditRecord {
            txn: txn.id,
            step: Some(txn.actions.len()),
            event: "step".into(),
            command: cmd.text(),
            mu_before: before,
            mu_after: mu,
            verdict: verdict.into(),
            message,
        });
        Ok(StepObservation { mu, outcome })
    }

    /// Commits or aborts the open transaction.
    pub fn finalize(&mut self) -> Result<TxnSummary, TxnError> {
        self.finalize_with(false)
    }

    /// Aborts the open transaction on the policy's request.
    pub fn abort(&mut self) -> Result<TxnSummary, TxnError> {
        self.finalize_with(true)
    }

    fn finalize_with(&mut self, policy_abort: bool) -> Result<TxnSummary, TxnError> {
        let mut txn = self.open.take().ok_or(TxnError::NotOpen)?;
        let pre = *txn.mu_pre();
        let post = *txn.mu_last();
        let reason = if post.is_infinite() {
            Some(AbortReason::Crash)
        } else if post > pre {
            Some(AbortReason::Regression)
        } else if policy_abort {
            Some(AbortReason::PolicyAbort)
        } else if txn.window_exceeded && post >= pre {
            Some(AbortReason::WindowExceeded)
        } else {
            None
        };

        let result = match reason {
            Some(reason) if self.undo_on_abort => self.abort_and_undo(&mut txn, reason),
            _ => {
                txn.status = TxnStatus::Committed;
                Ok(())
            }
        };
        let release = self.lock.release(self.lock_holder(&txn));
        result?;
        release?;

        let end = match txn.status {
            TxnStatus::Committed => post,
            _ => self.env.severity(),
        };
        let summary = TxnSummary {
            id: txn.id,
            kind: EventKind::Transaction,
            actions: txn.actions.iter().map(Command::text).collect(),
            hidden_path: txn.hidden_path.clone(),
            status: txn.status,
            abort_reason: txn.abort_reason,
            regressed: txn.status == TxnStatus::Committed && post > pre,
            visible: Endpoints { pre, end },
        };
        self.audit.record(&AuditRecord {
            txn: txn.id,
            step: None,
            event: "finalize".into(),
            command: String::new(),
            mu_before: pre,
            mu_after: end,
            verdict: format!("{:?}", txn.status),
            message: txn.abort_reason.map(|r| format!("{r:?}")).unwrap_or_default(),
        });
        self.history.push(summary.clone());
        Ok(summary)
    }

    fn lock_holder(&self, txn: &TransactionRecord) -> Writer {
        match self.lock.mode() {
            LockMode::Write(w) => w,
            _ => txn.writer,
        }
    }

    fn abort_and_undo(&mut self, txn: &mut TransactionRecord, reason: AbortReason) -> Result<(), TxnError> {
        txn.status = TxnStatus::Aborted;
        txn.abort_reason = Some(reason);
        self.lock.handoff(txn.writer, Writer::Undo)?;
        let rollbacks = self.undo.rollback_segment(&self.env.rules, &mut self.env.state, txn.mark)?;
        self.record_rollbacks(txn.id, &rollbacks);
        if self.env.state != *txn.s_pre.state() {
            return Err(TxnError::UndoIncomplete(txn.id));
        }
        Ok(())
    }

    fn record_rollbacks(&mut self, id: u64, rollbacks: &[Rollback]) {
        for r in rollbacks {
            let mu = self.env.severity();
            self.audit.record(&AuditRecord {
                txn: id,
                step: None,
                event: "rollback".into(),
                command: String::new(),
                mu_before: mu,
                mu_after: mu,
                verdict: if r.fallback { "fragment".into() } else { "inverse".into() },
                message: r.message.clone(),
            });
        }
    }

    /// Undoes every entry left on the stack by earlier committed
    /// transactions, as the undo role, until the stack reports empty.
    /// Returns the rollback messages, ending with the empty-stack message.
    pub fn rollback_leftovers(&mut self) -> Result<Vec<String>, TxnError> {
        if self.open.is_some() {
            return Err(TxnError::Lock(LockError::LockHeld(Writer::Mitigation)));
        }
        self.lock.try_write(Writer::Undo)?;
        let id = self.next_id;
        self.next_id += 1;
        let pre = self.env.severity();
        let mut path = vec![pre];
        let mut actions = Vec::new();
        let mut messages = Vec::new();
        let outcome = loop {
            let was_empty = self.undo.is_empty();
            match self.undo.rollback_last(&self.env.rules, &mut self.env.state) {
                Ok(r) => {
                    self.record_rollbacks(id, std::slice::from_ref(&r));
                    messages.push(r.message.clone());
                    if was_empty {
                        break Ok(());
                    }
                    actions.push(r.message);
                    path.push(self.env.severity());
                }
                Err(e) => break Err(e),
            }
        };
        let release = self.lock.release(Writer::Undo);
        outcome?;
        release?;
        if !actions.is_empty() {
            let end = self.env.severity();
            self.history.push(TxnSummary {
                id,
                kind: EventKind::Rollback,
                actions,
                hidden_path: path,
                status: TxnStatus::Committed,
                abort_reason: None,
                regressed: end > pre,
                visible: Endpoints { pre, end },
            });
        }
        Ok(messages)
    }

    /// Drops undo entries without executing them.
    pub fn forget_undo(&mut self) {
        self.undo.clear();
    }

    /// Visible trajectory over this engine's history.
    pub fn visible_trajectory(&self, b: &Severity) -> Vec<Severity> {
        visible_trajectory(self.history.iter().map(|h| &h.visible), b)
    }
}
