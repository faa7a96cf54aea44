//! Episode driver: detection, bootstrap diagnosis, transactional
//! mitigation, validation, reflection and retry.

mod machine;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use log::{debug, info};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{
    inject_fault, run_workload, settle, ClusterRules, ClusterState, FaultKind, FaultSpec, Severity, SeverityWeights,
};
use crate::oracle::{validate, Validation};
use crate::policy::{
    observe, reflect, validate_plan, Detection, MitigationPlan, ObservationBundle, Policy, PolicyError, ReflectionNote, Suspect,
};
use crate::txn::{AuditLog, Environment, TxnEngine, TxnError, TxnSummary, Writer, DEFAULT_PROBE, DEFAULT_WINDOW};

pub use machine::{machine_step, IllegalTransition, Input, Phase, Termination};

pub const DEFAULT_RETRY_LIMIT: usize = 9;
pub const DEFAULT_VALIDATION_REQUESTS: usize = 117;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Rollback between rounds and undo on abort.
    Full,
    /// A single round.
    NoRetry,
    /// Retries without rollback; aborts commit anyway.
    NaiveRetryNoUndo,
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Ablation::Full),
            "noretry" => Ok(Ablation::NoRetry),
            "naive" => Ok(Ablation::NaiveRetryNoUndo),
            other => Err(format!("unknown ablation {other:?}; expected full, noretry or naive")),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::Full => "full",
            Ablation::NoRetry => "noretry",
            Ablation::NaiveRetryNoUndo => "naive",
        })
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    /// Commands per transaction.
    pub k: usize,
    pub retry_limit: usize,
    /// Commands per episode, across all rounds.
    pub step_limit: Option<usize>,
    pub ablation: Ablation,
    /// Keep only the latest reflection between rounds.
    pub thought_dropout: bool,
    pub seed: u64,
    pub weights: SeverityWeights,
    /// Requests in the severity and diagnosis probes.
    pub probe: usize,
    /// Requests in the validation probe.
    pub validation_requests: usize,
    /// Simulated steps to wait before validating.
    pub settle: u32,
    pub audit_path: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            k: DEFAULT_WINDOW,
            retry_limit: DEFAULT_RETRY_LIMIT,
            step_limit: None,
            ablation: Ablation::Full,
            thought_dropout: true,
            seed: 0,
            weights: SeverityWeights::default(),
            probe: DEFAULT_PROBE,
            validation_requests: DEFAULT_VALIDATION_REQUESTS,
            settle: 0,
            audit_path: None,
        }
    }
}

impl RunConfig {
    pub fn effective_retry_limit(&self) -> usize {
        match self.ablation {
            Ablation::NoRetry => 0,
            _ => self.retry_limit,
        }
    }
}

/// What an episode starts from.
#[derive(Clone, Debug)]
pub struct EpisodeSetup {
    pub id: String,
    pub rules: ClusterRules,
    /// The healthy state before fault injection.
    pub initial: ClusterState,
    pub fault: FaultSpec,
}

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("scenario setup failed: {0}")]
    Setup(String),
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error(transparent)]
    Engine(#[from] TxnError),
    #[error("audit log: {0}")]
    Audit(#[from] std::io::Error),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rollback: Vec<String>,
    pub suspects: Vec<Suspect>,
    pub plan: Option<MitigationPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_error: Option<String>,
    pub transactions: Vec<TxnSummary>,
    pub validation: Option<Validation>,
    pub reflection: Option<ReflectionNote>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub scenario: String,
    pub ablation: Ablation,
    pub solved: bool,
    pub termination: Termination,
    pub baseline: Severity,
    /// Externally visible severities, starting at the baseline.
    pub trajectory: Vec<Severity>,
    pub retries: usize,
    pub steps: usize,
    /// Largest number of commands in one transaction.
    pub max_txn_actions: usize,
    /// Committed transactions that ended above their entry severity.
    pub regressions: usize,
    pub phases: Vec<Phase>,
    pub rounds: Vec<RoundReport>,
    pub final_validation: Validation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit_log: Option<PathBuf>,
    pub wall_ms: u128,
}

impl EpisodeReport {
    /// Whether any visible severity exceeds the baseline.
    pub fn tnr_violated(&self) -> bool {
        self.trajectory.iter().any(|mu| *mu > self.baseline)
    }
}

fn violation(msg: impl Into<String>) -> EpisodeError {
    EpisodeError::InvariantViolation(msg.into())
}

fn engine_error(e: TxnError) -> EpisodeError {
    match e {
        TxnError::UndoIncomplete(_) | TxnError::Undo(_) => violation(e.to_string()),
        other => EpisodeError::Engine(other),
    }
}

struct Episode<'a> {
    setup: &'a EpisodeSetup,
    config: &'a RunConfig,
    engine: TxnEngine,
    baseline: Severity,
    steps: usize,
    max_txn_actions: usize,
    notes: Vec<ReflectionNote>,
    rounds: Vec<RoundReport>,
    open: Option<RoundReport>,
    observation: ObservationBundle,
}

impl Episode<'_> {
    fn round(&mut self) -> &mut RoundReport {
        if self.open.is_none() {
            self.open = Some(RoundReport { round: self.rounds.len() + 1, ..Default::default() });
        }
        self.open.as_mut().expect("just opened")
    }

    fn step_budget_spent(&self) -> bool {
        self.config.step_limit.is_some_and(|l| self.steps >= l)
    }

    fn check_tnr(&self) -> Result<(), EpisodeError> {
        if !self.engine.undo_on_abort {
            return Ok(());
        }
        let trajectory = self.engine.visible_trajectory(&self.baseline);
        match trajectory.iter().find(|mu| **mu > self.baseline) {
            Some(mu) => Err(violation(format!("visible severity {mu} above baseline {} in {}", self.baseline, self.setup.id))),
            None => Ok(()),
        }
    }

    fn detect(&mut self, policy: &mut dyn Policy) -> Result<bool, EpisodeError> {
        let seed = self.config.seed;
        let obs = self.engine.read(|env| {
            let wl = run_workload(&env.rules, &env.state, env.probe, seed);
            observe(&env.rules, &env.state, &wl, None, Vec::new())
        })?;
        Ok(policy.detect(&obs) == Detection::Anomalous)
    }

    fn bootstrap(&mut self) -> Result<(), EpisodeError> {
        let round = self.round().round;
        let seed = self.config.seed.wrapping_add(round as u64);
        let latest = self.notes.last().cloned();
        let memory = if self.config.thought_dropout || self.notes.is_empty() {
            Vec::new()
        } else {
            self.notes[..self.notes.len() - 1].to_vec()
        };
        self.observation = self.engine.read(|env| {
            let wl = run_workload(&env.rules, &env.state, env.probe, seed);
            observe(&env.rules, &env.state, &wl, latest, memory)
        })?;
        self.round().suspects = self.observation.suspects.clone();
        Ok(())
    }

    /// Returns whether the policy has no plan left.
    fn mitigate(&mut self, policy: &mut dyn Policy) -> Result<bool, EpisodeError> {
        if self.config.thought_dropout {
            policy.forget();
        }
        let attempt = self.round().round;
        let plan = match policy.propose(&self.observation, attempt) {
            Ok(plan) => plan,
            Err(e @ PolicyError::PlaybookExhausted(_)) => {
                self.round().policy_error = Some(e.to_string());
                return Ok(true);
            }
            Err(e) => {
                // Timeouts and malformed plans cost the round, nothing else.
                self.round().policy_error = Some(e.to_string());
                return Ok(false);
            }
        };
        self.round().plan = Some(plan.clone());
        let commands = match validate_plan(&plan, self.config.k) {
            Ok(c) => c,
            Err(e) => {
                self.round().policy_error = Some(e.to_string());
                return Ok(false);
            }
        };
        if commands.is_empty() || self.step_budget_spent() {
            return Ok(false);
        }

        self.engine.begin(Writer::Mitigation, self.config.k).map_err(engine_error)?;
        let mut policy_abort = false;
        for cmd in &commands {
            if self.step_budget_spent() {
                break;
            }
            match self.engine.step(cmd) {
                Ok(obs) => {
                    self.steps += 1;
                    debug!("{}: {} -> {}", self.setup.id, cmd.text(), obs.mu);
                }
                Err(TxnError::Crashed) => break,
                Err(TxnError::NoInverse(reason)) => {
                    self.round().policy_error = Some(reason);
                    policy_abort = true;
                    break;
                }
                Err(e) => return Err(engine_error(e)),
            }
        }
        let summary = if policy_abort { self.engine.abort() } else { self.engine.finalize() }.map_err(engine_error)?;
        if summary.actions.len() > self.config.k {
            return Err(violation(format!(
                "transaction {} ran {} actions, window {}",
                summary.id,
                summary.actions.len(),
                self.config.k
            )));
        }
        self.max_txn_actions = self.max_txn_actions.max(summary.actions.len());
        self.round().transactions.push(summary);
        self.check_tnr()?;
        Ok(false)
    }

    fn validate_now(&mut self) -> Result<Validation, EpisodeError> {
        if self.config.settle > 0 {
            let settled = settle(&self.engine.env().state, self.config.settle);
            self.engine.set_state(settled)?;
        }
        let (requests, seed) = (self.config.validation_requests, self.config.seed);
        Ok(self.engine.read(|env| validate(&env.rules, &env.state, requests, seed).0)?)
    }

    fn close_round(&mut self) {
        if let Some(r) = self.open.take() {
            self.rounds.push(r);
        }
    }
}

/// Runs one episode to termination.
pub fn run_episode(setup: &EpisodeSetup, policy: &mut dyn Policy, config: &RunConfig) -> Result<EpisodeReport, EpisodeError> {
    if config.k == 0 {
        return Err(EpisodeError::Config("K must be at least 1".into()));
    }
    let started = Instant::now();
    let s0 = inject_fault(&setup.rules, &setup.initial, &setup.fault).map_err(|e| EpisodeError::Setup(e.to_string()))?;
    let mut env = Environment::new(setup.rules.clone(), s0, config.weights);
    env.probe = config.probe;
    let audit = match &config.audit_path {
        Some(path) => AuditLog::to_file(path)?,
        None => AuditLog::new(),
    };
    let mut engine = TxnEngine::new(env).with_audit(audit);
    engine.undo_on_abort = config.ablation != Ablation::NaiveRetryNoUndo;
    let baseline = engine.env().severity();
    info!("{}: baseline severity {baseline}", setup.id);

    let mut ep = Episode {
        setup,
        config,
        engine,
        baseline,
        steps: 0,
        max_txn_actions: 0,
        notes: Vec::new(),
        rounds: Vec::new(),
        open: None,
        observation: ObservationBundle::default(),
    };
    let noop = setup.fault.kind == FaultKind::NoOp;
    let retry_limit = config.effective_retry_limit();
    let rollback_rounds = config.ablation == Ablation::Full;
    let advance = |phase: Phase, input: Input| machine_step(phase, input).map_err(|e| violation(e.to_string()));

    let mut phase = Phase::Init;
    let mut phases = vec![phase];
    let termination = loop {
        let input = match phase {
            Phase::Init => Input::Initialized,
            Phase::Detect => Input::Detected { anomalous: ep.detect(policy)?, noop },
            Phase::Rollback => {
                let messages = ep.engine.rollback_leftovers().map_err(engine_error)?;
                ep.round().rollback = messages;
                ep.check_tnr()?;
                Input::RolledBack
            }
            Phase::Bootstrap => {
                ep.bootstrap()?;
                Input::Bootstrapped
            }
            Phase::Mitigate => Input::Mitigated { policy_exhausted: ep.mitigate(policy)? },
            Phase::Validate => {
                let v = ep.validate_now()?;
                let success = v.is_success();
                ep.round().validation = Some(v);
                Input::Validated { success, steps_exhausted: ep.step_budget_spent() }
            }
            Phase::Reflect => {
                let round = ep.round().clone();
                let issues = round.validation.as_ref().map(|v| v.issues().to_vec()).unwrap_or_default();
                let plan = round.plan.clone().unwrap_or_default();
                let note = reflect(round.round, &issues, &plan, ep.notes.last())
                    .map_err(|e| violation(format!("reflection after round {}: {e}", round.round)))?;
                ep.round().reflection = Some(note.clone());
                ep.notes.push(note);
                ep.close_round();
                Input::Reflected { retries_used: ep.rounds.len() - 1, retry_limit, rollback: rollback_rounds }
            }
            Phase::Terminate(t) => break t,
        };
        phase = advance(phase, input)?;
        phases.push(phase);
    };
    ep.close_round();

    let final_validation = ep.validate_now()?;
    let history = ep.engine.history();
    let regressions = history.iter().filter(|h| h.regressed).count();
    let trajectory = ep.engine.visible_trajectory(&ep.baseline);
    let report = EpisodeReport {
        scenario: setup.id.clone(),
        ablation: config.ablation,
        solved: termination == Termination::Success && final_validation.is_success(),
        termination,
        baseline: ep.baseline,
        trajectory,
        retries: ep.rounds.len().saturating_sub(1),
        steps: ep.steps,
        max_txn_actions: ep.max_txn_actions,
        regressions,
        phases,
        rounds: ep.rounds,
        final_validation,
        audit_log: config.audit_path.clone(),
        wall_ms: started.elapsed().as_millis(),
    };
    info!("{}: {:?} after {} rounds, {} steps", setup.id, report.termination, report.rounds.len(), report.steps);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{
        reconcile, Deployment, Node, ObjectKey, Pvc, PvcStatus, RequestType, Service, StorageClass, WorkloadModel,
    };
    use crate::policy::{Playbook, ScriptedPolicy};

    const NS: &str = "test-hotel-reservation";

    fn storage_setup() -> EpisodeSetup {
        let workload = WorkloadModel {
            call_graph: Default::default(),
            requests: vec![RequestType { name: "search".into(), path: vec!["frontend".into(), "geo".into()], weight: 1 }],
        };
        let rules = ClusterRules {
            namespace: NS.into(),
            provisioners: ["rancher.io/local-path".to_owned()].into(),
            workload,
            ..Default::default()
        };
        let mut s = ClusterState::default();
        s.namespaces.insert(NS.into());
        s.nodes.insert("node-1".into(), Node { name: "node-1".into(), schedulable: true, healthy: true });
        for (name, port, pvc) in [("frontend", 5000, None), ("geo", 8083, Some("geo-pvc"))] {
            s.deployments.insert(
                ObjectKey::new(NS, name),
                Deployment {
                    name: name.into(),
                    namespace: NS.into(),
                    desired_replicas: 1,
                    image: format!("{name}:v1"),
                    container: format!("hotel-reserv-{name}"),
                    container_port: port,
                    node_selector: None,
                    pvc_refs: pvc.into_iter().map(String::from).collect(),
                },
            );
            s.services.insert(
                ObjectKey::new(NS, name),
                Service { name: name.into(), namespace: NS.into(), port, target_port: port, selector: name.into() },
            );
        }
        s.pvcs.insert(
            ObjectKey::new(NS, "geo-pvc"),
            Pvc { name: "geo-pvc".into(), namespace: NS.into(), storage_class: "geo-storage".into(), status: PvcStatus::Pending },
        );
        s.storage_classes.insert(
            "geo-storage".into(),
            StorageClass {
                name: "geo-storage".into(),
                provisioner: "rancher.io/local-path".into(),
                binding_mode: "WaitForFirstConsumer".into(),
                reclaim_policy: "Delete".into(),
                parameters: Default::default(),
            },
        );
        let initial = reconcile(&rules, &s);
        EpisodeSetup {
            id: "redeploy_without_PV".into(),
            rules,
            initial,
            fault: FaultSpec {
                kind: FaultKind::MissingStorageClass,
                target: "geo-storage".into(),
                params: Default::default(),
                persistent: true,
            },
        }
    }

    const WRONG: &str = "kubectl apply -f - <<EOF\napiVersion: storage.k8s.io/v1\nkind: StorageClass\nmetadata:\n  name: geo-storage\nprovisioner: kubernetes.io/aws-ebs\nparameters:\n  type: gp2\nEOF";
    const RIGHT: &str = "kubectl apply -f - <<EOF\napiVersion: storage.k8s.io/v1\nkind: StorageClass\nmetadata:\n  name: geo-storage\nprovisioner: rancher.io/local-path\nvolumeBindingMode: WaitForFirstConsumer\nEOF";

    fn playbook() -> Playbook {
        Playbook {
            entries: vec![crate::policy::PlaybookEntry {
                evidence: "geo-pvc".into(),
                plans: vec![
                    MitigationPlan {
                        intent: "create class".into(),
                        commands: vec![WRONG.into()],
                        expected_effect: String::new(),
                    },
                    MitigationPlan {
                        intent: "create local class".into(),
                        commands: vec![RIGHT.into()],
                        expected_effect: String::new(),
                    },
                ],
            }],
        }
    }

    fn run(ablation: Ablation) -> EpisodeReport {
        let config = RunConfig { ablation, ..Default::default() };
        run_episode(&storage_setup(), &mut ScriptedPolicy::new(&playbook()), &config).unwrap()
    }

    #[test]
    fn full_mode_solves_in_round_two() {
        let r = run(Ablation::Full);
        assert!(r.solved, "{r:#?}");
        assert_eq!(r.retries, 1);
        assert_eq!(
            r.rounds[1].rollback,
            vec![
                format!("Rolled back the previous command: {WRONG}, using rollback:kubectl delete storageclass.storage.k8s.io geo-storage -n test-hotel-reservation"),
                "No more actions to rollback.".to_owned(),
            ]
        );
        assert!(!r.tnr_violated());
        assert!(r.rounds[0].reflection.as_ref().unwrap().issues.iter().any(|i| i.contains("Pending")));
    }

    #[test]
    fn no_retry_runs_one_round() {
        let r = run(Ablation::NoRetry);
        assert!(!r.solved);
        assert_eq!(r.rounds.len(), 1);
        assert_eq!(r.termination, Termination::RetriesExhausted);
    }

    #[test]
    fn naive_retry_hits_the_immutable_field() {
        let r = run(Ablation::NaiveRetryNoUndo);
        assert!(!r.solved);
        let txns: Vec<&TxnSummary> = r.rounds.iter().flat_map(|x| &x.transactions).collect();
        assert_eq!(txns.len(), 2);
        assert_eq!(r.termination, Termination::PolicyExhausted);
    }

    #[test]
    fn deterministic_modulo_wall_time() {
        let mut a = run(Ablation::Full);
        let mut b = run(Ablation::Full);
        a.wall_ms = 0;
        b.wall_ms = 0;
        assert_eq!(a, b);
    }

    #[test]
    fn noop_detection_never_writes() {
        let mut setup = storage_setup();
        setup.fault = FaultSpec::noop();
        let r = run_episode(&setup, &mut ScriptedPolicy::new(&playbook()), &RunConfig::default()).unwrap();
        assert_eq!(r.termination, Termination::Success);
        assert!(r.solved);
        assert!(r.rounds.is_empty());
        assert_eq!(r.phases, vec![Phase::Init, Phase::Detect, Phase::Terminate(Termination::Success)]);
    }

    #[test]
    fn step_limit_stops_the_episode() {
        let config = RunConfig { step_limit: Some(1), ..Default::default() };
        let r = run_episode(&storage_setup(), &mut ScriptedPolicy::new(&playbook()), &config).unwrap();
        assert_eq!(r.termination, Termination::StepLimit);
        assert_eq!(r.steps, 1);
    }

    #[test]
    fn zero_window_is_rejected() {
        let config = RunConfig { k: 0, ..Default::default() };
        assert!(matches!(
            run_episode(&storage_setup(), &mut ScriptedPolicy::new(&playbook()), &config),
            Err(EpisodeError::Config(_))
        ));
    }
}
