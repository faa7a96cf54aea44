//! Acceptance suite. Each test checks one criterion and prints a single
//! `[PASS]`/`[FAIL]` line, written straight to stderr so it survives output
//! capture.

use std::io::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use noregress::cluster::{
    inject_fault, reconcile, run_workload, ClusterRules, ClusterState, Deployment, FaultKind, Node, ObjectKey, PodPhase, Severity,
};
use noregress::command::{confine, parse};
use noregress::harness::{
    load_dir, load_scenario, random_scenario, run_scenario, run_suite, sweep_step_limit, PolicyKind, Scenario,
};
use noregress::oracle::{health_oracle, validate, verdicts, workload_oracle, OracleName};
use noregress::orchestrator::{run_episode, Termination};
use noregress::policy::{observe, validate_plan, Policy, RandomPolicy};
use noregress::txn::{AbortReason, Environment, TxnEngine, TxnError, TxnStatus, TxnSummary, Writer};
use noregress::{Ablation, Role, RunConfig, SeverityWeights};
use num_rational::Ratio;

fn report(criterion: &str, pass: bool, detail: &str) {
    let mark = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr().lock(), "[{mark}] {criterion}: {detail}");
}

fn corpus() -> Vec<Scenario> {
    load_dir(&Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")).expect("bundled scenarios load")
}

fn bundled(id: &str) -> Scenario {
    load_scenario(&Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{id}.json"))).expect("bundled scenario")
}

fn mu(n: i128) -> Severity {
    Severity::Finite(Ratio::from_integer(n))
}

#[test]
fn tnr_holds_over_random_episodes() {
    let started = Instant::now();
    let config = RunConfig { ablation: Ablation::Full, ..RunConfig::default() };
    let mut violations = Vec::new();
    for seed in 0..1000u64 {
        let scenario = random_scenario(seed);
        let mut policy = RandomPolicy::new(seed ^ 0x5eed, 6);
        match run_episode(&scenario.setup(), &mut policy, &config) {
            Ok(r) => {
                // Exact rational comparison against the baseline.
                if let Some(peak) = r.trajectory.iter().find(|m| **m > r.baseline) {
                    violations.push(format!("seed {seed}: {peak} > {}", r.baseline));
                }
            }
            Err(e) => violations.push(format!("seed {seed}: {e}")),
        }
    }
    let elapsed = started.elapsed();
    let pass = violations.is_empty() && elapsed < Duration::from_secs(120);
    report(
        "TNR over 1000 randomized episodes",
        pass,
        &match violations.first() {
            None => format!("0 violations in {:.1}s", elapsed.as_secs_f64()),
            Some(first) => format!("{} violations in {:.1}s, first {first:?}", violations.len(), elapsed.as_secs_f64()),
        },
    );
    assert!(violations.is_empty(), "{violations:?}");
    assert!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
}

#[test]
fn forced_aborts_restore_the_checkpoint() {
    let mut failures = Vec::new();
    let mut executed = 0usize;
    for seed in 0..500u64 {
        let scenario = random_scenario(seed);
        let rules = scenario.rules();
        let s0 = inject_fault(&rules, &scenario.initial_state(), &scenario.fault).expect("generated faults inject");
        let wl = run_workload(&rules, &s0, 100, seed);
        let obs = observe(&rules, &s0, &wl, None, Vec::new());
        let plan = RandomPolicy::new(seed, 20).propose(&obs, 1).expect("random plans");
        let commands = validate_plan(&plan, 20).expect("random plans lint");

        let mut engine = TxnEngine::new(Environment::new(rules, s0.clone(), SeverityWeights::default()));
        engine.begin(Writer::Mitigation, 20).expect("free lock");
        for cmd in &commands {
            match engine.step(cmd) {
                Ok(_) => executed += 1,
                Err(TxnError::Crashed) => break,
                Err(TxnError::NoInverse(_)) => break,
                Err(e) => panic!("seed {seed}: {e}"),
            }
        }
        let aborted = engine.abort().is_ok_and(|summary| summary.status == TxnStatus::Aborted);
        if !aborted || engine.env().state != s0 {
            failures.push(seed);
        }
    }
    let pass = failures.is_empty();
    report(
        "faithful undo on 500 forced aborts",
        pass,
        &format!("{} of 500 differ from the checkpoint ({executed} commands executed)", failures.len()),
    );
    assert!(pass, "seeds not restored: {failures:?}");
}

/// A cluster whose only deployment is pinned to a node that does not exist:
/// every replica is a Pending pod, one alert each, and nothing else counts.
fn ballast(replicas: u32) -> (ClusterRules, ClusterState) {
    let rules = ClusterRules { namespace: "table".into(), ..Default::default() };
    let mut s = ClusterState::default();
    s.namespaces.insert("table".into());
    s.nodes.insert("node-1".into(), Node { name: "node-1".into(), schedulable: true, healthy: true });
    s.deployments.insert(
        ObjectKey::new("table", "ballast"),
        Deployment {
            name: "ballast".into(),
            namespace: "table".into(),
            desired_replicas: replicas,
            image: "ballast:v1".into(),
            container: "ballast".into(),
            container_port: 9000,
            node_selector: Some("node-404".into()),
            pvc_refs: vec![],
        },
    );
    let s = reconcile(&rules, &s);
    (rules, s)
}

fn pending(state: &ClusterState) -> i128 {
    state.pods.values().filter(|p| p.phase == PodPhase::Pending).count() as i128
}

/// Runs one transaction that scales the ballast through `targets`.
fn table_row(start: u32, targets: &[u32], k: usize) -> (TxnSummary, Vec<Severity>, bool) {
    let (rules, s) = ballast(start);
    let pre = s.clone();
    let mut engine = TxnEngine::new(Environment::new(rules, s, SeverityWeights::default()));
    let b = engine.env().severity();
    assert_eq!(b, mu(pending(&pre)));
    engine.begin(Writer::Mitigation, k).unwrap();
    for t in targets {
        let obs = engine.step(&parse(&format!("kubectl scale deployment ballast --replicas={t} -n table")).unwrap()).unwrap();
        assert_eq!(obs.mu, mu(pending(&engine.env().state)));
    }
    let summary = engine.finalize().unwrap();
    let restored = engine.env().state == pre;
    (summary, engine.visible_trajectory(&b), restored)
}

#[test]
fn commit_and_abort_paths() {
    let mut rows = Vec::new();

    let (t, vis, _) = table_row(12, &[18, 9], 20);
    rows.push((
        "12->18->9",
        t.hidden_path == [mu(12), mu(18), mu(9)] && t.status == TxnStatus::Committed && vis == [mu(12), mu(9)],
    ));

    let (t, vis, _) = table_row(15, &[22, 11], 20);
    rows.push((
        "15->22->11",
        t.hidden_path == [mu(15), mu(22), mu(11)] && t.status == TxnStatus::Committed && vis == [mu(15), mu(11)],
    ));

    let (t, vis, restored) = table_row(15, &[24, 30], 20);
    rows.push((
        "15->24->30",
        t.hidden_path == [mu(15), mu(24), mu(30)]
            && t.status == TxnStatus::Aborted
            && t.abort_reason == Some(AbortReason::Regression)
            && vis == [mu(15), mu(15)]
            && restored,
    ));

    let (t, vis, _) = table_row(15, &[10], 1);
    rows.push(("K=1 hot-fix x<=15", t.status == TxnStatus::Committed && vis == [mu(15), mu(10)]));
    let (t, vis, _) = table_row(15, &[15], 1);
    rows.push(("K=1 hot-fix x=15", t.status == TxnStatus::Committed && vis == [mu(15), mu(15)]));
    let (t, vis, restored) = table_row(15, &[21], 1);
    rows.push(("K=1 hot-fix x>15", t.status == TxnStatus::Aborted && vis == [mu(15), mu(15)] && restored));

    // The window of one admits no second action.
    let (rules, s) = ballast(15);
    let mut engine = TxnEngine::new(Environment::new(rules, s, SeverityWeights::default()));
    engine.begin(Writer::Mitigation, 1).unwrap();
    engine.step(&parse("kubectl scale deployment ballast --replicas=3 -n table").unwrap()).unwrap();
    let second = engine.step(&parse("kubectl scale deployment ballast --replicas=2 -n table").unwrap());
    rows.push(("K=1 window", second == Err(TxnError::WindowExceeded(1))));

    let failed: Vec<&str> = rows.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    report("commit and abort paths", failed.is_empty(), &format!("{} rows, mismatches {failed:?}", rows.len()));
    assert!(failed.is_empty(), "{failed:?}");
}

#[test]
fn ablation_ordering_on_the_corpus() {
    let scenarios = corpus();
    let rate = |ablation| run_suite(&scenarios, &RunConfig { ablation, ..RunConfig::default() }, &PolicyKind::Scripted).unwrap();
    let (full, noretry, naive) = (rate(Ablation::Full), rate(Ablation::NoRetry), rate(Ablation::NaiveRetryNoUndo));

    let poisoned = bundled("poisoned_path-mitigation-1");
    let by =
        |ablation| run_scenario(&poisoned, 0, &PolicyKind::Scripted, &RunConfig { ablation, ..RunConfig::default() }).unwrap();
    let (p_full, p_naive, p_naive_again) = (by(Ablation::Full), by(Ablation::NaiveRetryNoUndo), by(Ablation::NaiveRetryNoUndo));

    let pass = scenarios.len() >= 10
        && full.solved > naive.solved
        && full.solved > noretry.solved
        && p_full.solved
        && !p_full.tnr_violated()
        && !p_naive.solved
        && !p_naive_again.solved
        && p_naive.trajectory == p_naive_again.trajectory;
    report(
        "ablation ordering",
        pass,
        &format!(
            "full {}/{}, naive {}/{}, noretry {}/{}; poisoned: full solved={}, naive solved={} (peak {})",
            full.solved,
            full.total,
            naive.solved,
            naive.total,
            noretry.solved,
            noretry.total,
            p_full.solved,
            p_naive.solved,
            p_naive.trajectory.iter().max().unwrap()
        ),
    );
    assert!(pass);
}

#[test]
fn confinement_corpus() {
    const ANY: &[&str] = &[
        "kubectl delete namespace test-hotel-reservation",
        "kubectl delete ns test-hotel-reservation",
        "kubectl edit deployment geo -n test-hotel-reservation",
        "kubectl debug pod/geo-0 -it --image=busybox",
        "kubectl apply -f -",
        "kubectl exec -it geo-0 -- sh",
        "kubectl exec --stdin geo-0 -- sh",
        "kubectl exec --tty geo-0 -- sh",
        "kubectl get pods | grep geo",
        "kubectl get pods && kubectl delete pod geo-0",
        "kubectl get pods || true",
        "kubectl get pods; kubectl get svc",
        "kubectl delete pod $(kubectl get pods -o name)",
        "kubectl delete pod `kubectl get pods -o name`",
        "for p in a b; do kubectl delete pod $p; done",
        "if true; then kubectl get pods; fi",
        "while true; do kubectl get pods; done",
        "f() { kubectl get pods; }",
        "function f { kubectl get pods; }",
    ];
    const READER_ONLY: &[&str] = &[
        "kubectl scale deployment geo --replicas=2 -n test-hotel-reservation",
        "kubectl delete pod geo-0 -n test-hotel-reservation",
        "kubectl cordon node-1",
    ];
    const ALLOWED: &[&str] = &[
        "kubectl get pods -n test-hotel-reservation",
        "kubectl describe pvc geo-pvc -n test-hotel-reservation",
        "kubectl logs deployment/geo -n test-hotel-reservation",
    ];

    let mut wrong = Vec::new();
    for text in ANY {
        for role in [Role::ReadOnly, Role::Writer] {
            if confine(text, role).allowed {
                wrong.push(format!("{role:?} allowed {text:?}"));
            }
        }
    }
    for text in READER_ONLY {
        if confine(text, Role::ReadOnly).allowed || !confine(text, Role::Writer).allowed {
            wrong.push(format!("role split wrong for {text:?}"));
        }
    }
    for text in ALLOWED {
        if !confine(text, Role::ReadOnly).allowed {
            wrong.push(format!("read blocked: {text:?}"));
        }
    }
    let stdin = confine("kubectl apply -f -", Role::Writer).reason;
    let interactive = confine("kubectl exec -it geo-0 -- sh", Role::Writer).reason;
    if stdin != "Stdin redirection is not allowed." {
        wrong.push(format!("stdin message {stdin:?}"));
    }
    if interactive != "Interactive flag detected: -it. Such commands are not supported." {
        wrong.push(format!("interactive message {interactive:?}"));
    }
    let total = ANY.len() * 2 + READER_ONLY.len() + ALLOWED.len() + 2;
    report("confinement corpus", wrong.is_empty(), &format!("{}/{total} checks pass {wrong:?}", total - wrong.len()));
    assert!(wrong.is_empty(), "{wrong:?}");
}

#[test]
fn retry_and_window_bounds() {
    let mut worst_retries = 0;
    let mut worst_actions = 0;
    let mut episodes = 0;
    let mut check = |r: &noregress::EpisodeReport| {
        episodes += 1;
        worst_retries = worst_retries.max(r.retries);
        worst_actions = worst_actions.max(r.max_txn_actions);
        for round in &r.rounds {
            for t in &round.transactions {
                worst_actions = worst_actions.max(t.actions.len());
            }
        }
    };
    let config = RunConfig::default();
    for seed in 0..300u64 {
        // Plans up to the full window, so the bound is actually exercised.
        let mut policy = RandomPolicy::new(seed, 20);
        check(&run_episode(&random_scenario(seed + 10_000).setup(), &mut policy, &config).unwrap());
    }
    for ablation in [Ablation::Full, Ablation::NoRetry, Ablation::NaiveRetryNoUndo] {
        let suite = run_suite(&corpus(), &RunConfig { ablation, ..config.clone() }, &PolicyKind::Scripted).unwrap();
        suite.rows.iter().for_each(&mut check);
    }
    let pass = worst_retries <= 9 && worst_actions <= 20;
    report(
        "retry and window bounds",
        pass,
        &format!("{episodes} episodes, max retries {worst_retries}, max actions per transaction {worst_actions}"),
    );
    assert!(pass);
}

#[test]
fn step_limit_sweep_shape() {
    let started = Instant::now();
    let limits = [3, 5, 10, 15, 20, 30];
    let rows = sweep_step_limit(&corpus(), &RunConfig::default(), &PolicyKind::Scripted, &limits).unwrap();
    let solved: Vec<usize> = rows.iter().map(|r| r.solved).collect();
    let elapsed = started.elapsed();
    let monotone = solved.windows(2).all(|w| w[0] <= w[1]);
    let at = |l: usize| rows.iter().find(|r| r.limit == l).unwrap().solved;
    let plateau = at(20) == at(30);
    let pass = monotone && plateau && elapsed < Duration::from_secs(300);
    report("step-limit sweep", pass, &format!("solved {solved:?} at {limits:?} in {:.1}s", elapsed.as_secs_f64()));
    assert!(pass);
}

#[test]
fn oracle_conjunction_witness() {
    let s = bundled("k8s_target_port-misconfig-mitigation-1");
    assert_eq!(s.fault.kind, FaultKind::TargetPortMisconfig);
    let rules = s.rules();
    let faulty = inject_fault(&rules, &s.initial_state(), &s.fault).unwrap();
    let config = RunConfig::default();
    let wl = run_workload(&rules, &faulty, config.validation_requests, config.seed);
    let [workload, health, _alert] = verdicts(&faulty, &wl);
    let (combined, _) = validate(&rules, &faulty, config.validation_requests, config.seed);

    let failures = wl.traces.iter().filter(|t| t.failed()).count();
    let before = failures == 115
        && wl.traces.len() == 117
        && health.name == OracleName::Health
        && health.pass
        && health_oracle(&faulty).pass
        && workload.name == OracleName::Workload
        && !workload.pass
        && workload_oracle(&wl).issues == ["  Non-2xx or 3xx responses: 115"]
        && !combined.is_success();

    let episode = run_scenario(&s, 0, &PolicyKind::Scripted, &config).unwrap();
    let after = episode.solved && episode.termination == Termination::Success && episode.final_validation.is_success();
    report(
        "oracle conjunction witness",
        before && after,
        &format!(
            "{failures}/{} failed, health pass={}, workload pass={}, combined success={}; after patch {:?}",
            wl.traces.len(),
            health.pass,
            workload.pass,
            combined.is_success(),
            episode.termination
        ),
    );
    assert!(before && after);
}
