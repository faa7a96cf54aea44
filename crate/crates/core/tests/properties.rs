//! Property tests over randomly generated scenarios and plans.

use std::collections::BTreeMap;

use num_rational::Ratio;
use proptest::prelude::*;

use noregress::cluster::{
    apply_write, health_report, inject_fault, measure, reconcile, restore, run_workload, snapshot, ClusterRules, ClusterState,
    Severity, SeverityWeights, Span, Trace,
};
use noregress::command::{classify, dry_run, parse, Command, CommandClass};
use noregress::harness::{random_scenario, run_suite, PolicyKind, Scenario, SuiteReport};
use noregress::policy::{bootstrap_localize, observe, validate_plan, Frame, Policy, RandomPolicy, Suspect};
use noregress::txn::{visible_trajectory, Endpoints, Environment, TxnEngine, TxnError, TxnStatus, Writer};
use noregress::RunConfig;

/// A faulted state from a random scenario, with a random plan for it.
fn faulted(seed: u64, max_len: usize) -> (ClusterRules, ClusterState, Vec<Command>) {
    let scenario = random_scenario(seed);
    let rules = scenario.rules();
    let s0 = inject_fault(&rules, &scenario.initial_state(), &scenario.fault).unwrap();
    let wl = run_workload(&rules, &s0, 50, seed);
    let obs = observe(&rules, &s0, &wl, None, Vec::new());
    let plan = RandomPolicy::new(seed.rotate_left(17), max_len).propose(&obs, 1).unwrap();
    let commands = validate_plan(&plan, 20).unwrap();
    (rules, s0, commands)
}

/// Applies the writes of `commands` one after another, skipping rejected ones.
fn walk(rules: &ClusterRules, s0: &ClusterState, commands: &[Command]) -> Vec<ClusterState> {
    let mut states = vec![s0.clone()];
    for cmd in commands.iter().filter(|c| classify(c) == CommandClass::Write) {
        let last = states.last().unwrap();
        if last.crashed {
            break;
        }
        if let Ok(applied) = apply_write(rules, last, cmd) {
            states.push(applied.state);
        }
    }
    states
}

fn weights() -> impl Strategy<Value = SeverityWeights> {
    (1i128..50, 1i128..10, 1i128..50, 1i128..10, 1i128..50, 1i128..10)
        .prop_map(|(a, b, c, d, e, f)| SeverityWeights::new(Ratio::new(a, b), Ratio::new(c, d), Ratio::new(e, f)).unwrap())
}

/// Counting oracle for localization, written independently: count first
/// error spans per (service, operation), then order by count descending and
/// first appearance ascending.
fn localize_by_brute_force(traces: &[Trace]) -> Vec<Suspect> {
    let mut first_seen: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
    for (i, t) in traces.iter().enumerate() {
        if let Some(s) = t.spans.iter().find(|s| s.error) {
            let entry = first_seen.entry((s.service.clone(), s.operation.clone())).or_insert((i, 0));
            entry.1 += 1;
        }
    }
    let mut out: Vec<_> = first_seen.into_iter().collect();
    out.sort_by_key(|(_, (first, count))| (std::cmp::Reverse(*count), *first));
    out.into_iter().map(|((service, operation), (_, count))| Suspect { service, operation, count }).collect()
}

fn traces() -> impl Strategy<Value = Vec<Trace>> {
    let span = (0usize..4, 0usize..3, proptest::bool::weighted(0.3)).prop_map(|(s, o, error)| Span {
        service: format!("svc-{s}"),
        operation: format!("op-{o}"),
        error,
    });
    proptest::collection::vec(proptest::collection::vec(span, 1..5), 0..40).prop_map(|all| {
        all.into_iter()
            .enumerate()
            .map(|(i, spans)| Trace { request_id: format!("req-{i}"), request: "r".into(), spans })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reconcile_is_idempotent(seed in any::<u64>()) {
        let (rules, s0, commands) = faulted(seed, 8);
        for s in walk(&rules, &s0, &commands) {
            let once = reconcile(&rules, &s);
            prop_assert_eq!(reconcile(&rules, &once), once);
        }
    }

    #[test]
    fn measure_matches_the_full_report(seed in any::<u64>(), probe in 1usize..150, w in weights()) {
        let (rules, s0, commands) = faulted(seed, 6);
        for s in walk(&rules, &s0, &commands) {
            let wl = run_workload(&rules, &s, probe, seed);
            let full = Severity::of(&health_report(&s, &wl), &w, s.crashed);
            prop_assert_eq!(measure(&rules, &s, &w, probe), full);
        }
    }

    #[test]
    fn severity_is_monotone_in_each_weight(seed in any::<u64>(), w in weights(), bump in 1i128..20, which in 0usize..3) {
        let (rules, s0, _) = faulted(seed, 1);
        let mut heavier = w;
        let extra = Ratio::from_integer(bump);
        match which {
            0 => heavier.alerts += extra,
            1 => heavier.sla_violations += extra,
            _ => heavier.capacity_losses += extra,
        }
        prop_assert!(measure(&rules, &s0, &heavier, 100) >= measure(&rules, &s0, &w, 100));
        let mut crashed = s0.clone();
        crashed.crashed = true;
        prop_assert_eq!(measure(&rules, &crashed, &w, 100), Severity::Infinite);
    }

    #[test]
    fn snapshot_round_trips(seed in any::<u64>()) {
        let (rules, s0, commands) = faulted(seed, 6);
        let states = walk(&rules, &s0, &commands);
        let snaps: Vec<_> = states.iter().map(snapshot).collect();
        for (s, snap) in states.iter().zip(&snaps) {
            prop_assert_eq!(&restore(snap), s);
            prop_assert_eq!(snap.state(), s);
        }
    }

    #[test]
    fn dry_run_is_pure_and_predicts_the_write(seed in any::<u64>()) {
        let (rules, s0, commands) = faulted(seed, 8);
        let before = s0.clone();
        for cmd in commands.iter().filter(|c| classify(c) == CommandClass::Write) {
            let predicted = dry_run(&rules, &s0, cmd);
            prop_assert_eq!(&s0, &before);
            if !s0.crashed {
                prop_assert_eq!(predicted.is_ok(), apply_write(&rules, &s0, cmd).is_ok(), "{}", cmd.text());
            }
        }
    }

    #[test]
    fn single_write_aborts_restore_exactly(seed in any::<u64>()) {
        let (rules, s0, commands) = faulted(seed, 8);
        for cmd in &commands {
            let mut engine = TxnEngine::new(Environment::new(rules.clone(), s0.clone(), SeverityWeights::default()));
            engine.begin(Writer::Mitigation, 20).unwrap();
            match engine.step(cmd) {
                Ok(_) | Err(TxnError::Crashed) | Err(TxnError::NoInverse(_)) => {}
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
            prop_assert_eq!(engine.abort().unwrap().status, TxnStatus::Aborted);
            prop_assert_eq!(&engine.env().state, &s0, "{}", cmd.text());
        }
    }

    #[test]
    fn rolling_back_leftovers_returns_to_the_start(seed in any::<u64>(), rounds in 1usize..4) {
        let (rules, s0, _) = faulted(seed, 1);
        let scenario = random_scenario(seed);
        let mut engine = TxnEngine::new(Environment::new(rules.clone(), s0.clone(), SeverityWeights::default()));
        let mut policy = RandomPolicy::new(seed, 6);
        for round in 0..rounds {
            let obs = engine.read(|env| {
                let wl = run_workload(&env.rules, &env.state, 50, seed);
                observe(&env.rules, &env.state, &wl, None, Vec::new())
            }).unwrap();
            let commands = validate_plan(&policy.propose(&obs, round + 1).unwrap(), 20).unwrap();
            engine.begin(Writer::Mitigation, 20).unwrap();
            let mut abort = false;
            for cmd in &commands {
                match engine.step(cmd) {
                    Ok(_) => {}
                    Err(TxnError::Crashed) => break,
                    Err(TxnError::NoInverse(_)) => { abort = true; break; }
                    Err(e) => return Err(TestCaseError::fail(e.to_string())),
                }
            }
            if abort { engine.abort().unwrap(); } else { engine.finalize().unwrap(); }
        }
        engine.rollback_leftovers().unwrap();
        prop_assert_eq!(&engine.env().state, &s0, "{}", scenario.id);
        prop_assert!(engine.undo_stack().is_empty());
    }

    #[test]
    fn visible_trajectory_hides_the_interior(path in proptest::collection::vec((0i128..40, 0i128..40), 0..12), b in 0i128..40) {
        let m = |n: i128| Severity::Finite(Ratio::from_integer(n));
        let endpoints: Vec<Endpoints> = path.iter().map(|(p, e)| Endpoints { pre: m(*p), end: m(*e) }).collect();
        let vis = visible_trajectory(&endpoints, &m(b));
        prop_assert_eq!(&vis[0], &m(b));
        prop_assert!(vis.len() <= 1 + 2 * endpoints.len());
        // Every end value appears, in order.
        let ends: Vec<Severity> = endpoints.iter().map(|e| e.end).collect();
        let mut it = vis.iter();
        for end in &ends {
            prop_assert!(it.any(|v| v == end));
        }
    }

    #[test]
    fn localization_matches_brute_force(traces in traces()) {
        prop_assert_eq!(bootstrap_localize(&traces), localize_by_brute_force(&traces));
    }

    #[test]
    fn random_scenarios_round_trip_canonically(seed in any::<u64>()) {
        let s = random_scenario(seed);
        let canon = s.to_canonical_json();
        let back = Scenario::from_json(&canon).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(back.to_canonical_json(), canon);
    }

    #[test]
    fn apportioned_requests_sum_to_the_probe(seed in any::<u64>(), n in 0usize..500) {
        let rules = random_scenario(seed).rules();
        let workload = rules.workload;
        let counts = workload.apportion(n);
        prop_assert_eq!(counts.iter().sum::<usize>(), n);
    }

    #[test]
    fn frames_round_trip(payloads in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..300), 0..5)) {
        let mut wire = Vec::new();
        for p in &payloads {
            Frame::write(&mut wire, p).unwrap();
        }
        let mut r = wire.as_slice();
        for p in &payloads {
            let got = Frame::read(&mut r).unwrap();
            prop_assert_eq!(got.as_ref(), Some(p));
        }
        prop_assert_eq!(Frame::read(&mut r).unwrap(), None);
    }

    #[test]
    fn parse_display_round_trips(seed in any::<u64>()) {
        let (_, _, commands) = faulted(seed, 8);
        for cmd in commands {
            prop_assert_eq!(parse(&cmd.text()).unwrap(), cmd);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn suite_aggregates_recompute_from_rows(base in 0u64..10_000, n in 0usize..6) {
        let scenarios: Vec<Scenario> = (0..n as u64).map(|i| random_scenario(base + i)).collect();
        let kind = PolicyKind::Random { seed: base, max_len: 4 };
        let report = run_suite(&scenarios, &RunConfig::default(), &kind).unwrap();
        prop_assert_eq!(report.total, n);
        prop_assert_eq!(report.solved, report.rows.iter().filter(|r| r.solved).count());
        prop_assert_eq!(report.retry_histogram.values().sum::<usize>(), n);
        prop_assert_eq!(SuiteReport::from_rows(report.rows.clone()), report.clone());
        match report.success_rate {
            None => prop_assert_eq!(n, 0),
            Some(rate) => prop_assert!((rate - report.solved as f64 / n as f64).abs() < 1e-12),
        }
        let ids: Vec<&str> = report.rows.iter().map(|r| r.scenario.as_str()).collect();
        let expected: Vec<&str> = scenarios.iter().map(|s| s.id.as_str()).collect();
        prop_assert_eq!(ids, expected);
    }
}
