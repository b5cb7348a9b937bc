mod common;

use akira_core::agents::ThinkingMode;
use akira_core::detection::{MockDetector, MockReport};
use akira_core::fsm::{
    init_session, Backends, RepairSession, SessionConfig, SessionError, SourceSnapshot, StateId, TraceDocument,
    REASON_ACCEPTED, REASON_DETECTOR, REASON_MAX_TRANSITIONS,
};
use akira_core::provider::OfflineProvider;
use akira_core::validation::MockRunner;

use common::{DownRunner, FreshProgram, SEED_PROGRAM};

const ALL_EIGHT: [&str; 40] = {
    let mut out = [""; 40];
    let cats = ["dangling", "static", "func_call", "unaligned", "data_race"];
    let mut i = 0;
    while i < 40 {
        out[i] = cats[i / 8];
        i += 1;
    }
    out
};

fn run_with(detector: &MockDetector, config: SessionConfig) -> RepairSession {
    let provider = FreshProgram::default();
    let runner = MockRunner::always(true);
    let b = Backends {
        detector,
        provider: &provider,
        runner: &runner,
    };
    let mut s = RepairSession::new(SEED_PROGRAM, config).unwrap();
    s.run(&b).unwrap();
    s
}

#[test]
fn init_contract() {
    let s = init_session(SEED_PROGRAM, SessionConfig::default()).unwrap();
    assert_eq!(s.current(), StateId::Q0);
    assert_eq!(s.snapshots().len(), 1);
    assert!(s.trace().is_empty());
    assert!(s.waveform().is_empty());
    let init = s.initial_snapshot();
    assert_eq!(init.step(), 0);
    assert_eq!(init.producer(), StateId::Q0);
    assert_eq!(init.code(), SEED_PROGRAM);

    assert!(matches!(
        init_session("", SessionConfig::default()),
        Err(SessionError::EmptyProgram)
    ));
    assert!(matches!(
        init_session(" \n\t", SessionConfig::default()),
        Err(SessionError::EmptyProgram)
    ));
    let bad = SessionConfig {
        temperature: 3.0,
        ..SessionConfig::default()
    };
    assert!(matches!(init_session(SEED_PROGRAM, bad), Err(SessionError::Config(_))));
}

#[test]
fn already_clean_input_finishes_in_one_transition() {
    let s = run_with(&MockDetector::counts(&[0]), SessionConfig::default());
    let o = s.outcome().unwrap();
    assert_eq!(o.terminal, StateId::QF);
    assert_eq!(o.transitions, 1);
    assert_eq!(o.reason, REASON_ACCEPTED);
    assert_eq!(o.metrics.agent_invocations, 0);
    assert_eq!(o.metrics.evaluations, 1);
}

#[test]
fn persistent_ub_hits_the_transition_limit() {
    let config = SessionConfig {
        max_transitions: 5,
        ..SessionConfig::default()
    };
    let s = run_with(&MockDetector::counts(&[3; 5]), config);
    let o = s.outcome().unwrap();
    assert_eq!(o.terminal, StateId::QErr);
    assert_eq!(o.transitions, 5);
    assert_eq!(o.reason, REASON_MAX_TRANSITIONS);
    assert_eq!(o.metrics.agent_invocations, 4);
}

#[test]
fn single_transition_budget() {
    let config = SessionConfig {
        max_transitions: 1,
        ..SessionConfig::default()
    };
    let s = run_with(&MockDetector::counts(&[2]), config);
    assert_eq!(s.trace().len(), 1);
    assert_eq!(s.current(), StateId::QErr);
}

#[test]
fn fixed_on_third_candidate() {
    let s = run_with(&MockDetector::counts(&[2, 2, 1, 0]), SessionConfig::default());
    let o = s.outcome().unwrap();
    assert_eq!(o.terminal, StateId::QF);
    assert_eq!(o.metrics.agent_invocations, 3);
    assert_eq!(o.transitions, 4);
    assert!(o.final_clean);
    let counted: usize = o.metrics.invocations_by_kind.values().sum();
    assert_eq!(counted, 3);
}

#[test]
fn detector_failure_is_an_error_state() {
    let s = run_with(&MockDetector::counts(&[2]), SessionConfig::default());
    let o = s.outcome().unwrap();
    assert_eq!(o.terminal, StateId::QErr);
    assert_eq!(o.reason, REASON_DETECTOR);
    let last = s.trace().last().unwrap();
    assert_eq!(last.e, None);
    assert_eq!(s.waveform().len(), 1);
}

#[test]
fn finished_session_refuses_more_steps() {
    let detector = MockDetector::counts(&[0]);
    let provider = FreshProgram::default();
    let runner = MockRunner::always(true);
    let b = Backends {
        detector: &detector,
        provider: &provider,
        runner: &runner,
    };
    let mut s = RepairSession::new(SEED_PROGRAM, SessionConfig::default()).unwrap();
    s.run(&b).unwrap();
    assert!(matches!(s.step(&b), Err(SessionError::Finished(StateId::QF))));
}

#[test]
fn providers_and_runner_down_never_crash() {
    let detector = MockDetector::by_content(Vec::new(), Some(MockReport::Count(0)));
    let runner = DownRunner;
    let b = Backends {
        detector: &detector,
        provider: &OfflineProvider,
        runner: &runner,
    };
    let config = SessionConfig {
        max_transitions: 4,
        ..SessionConfig::default()
    };
    let mut s = RepairSession::new(SEED_PROGRAM, config).unwrap();
    let o = s.run(&b).unwrap();
    assert_eq!(o.terminal, StateId::QErr);
    assert!(!s.evaluations().is_empty());
    assert!(s.evaluations().iter().all(|e| !e.verdict.accepted));
    // every repair attempt degraded into a discarded candidate
    assert!(s
        .trace()
        .iter()
        .filter(|r| r.from.is_repair())
        .all(|r| r.annotations.iter().any(|a| a.starts_with("candidate discarded"))));
}

/// E: 1.0 at the input, low after the first repair, then two spikes.
fn spike_detector(tail: Vec<MockReport>) -> MockDetector {
    let mut reports = vec![
        MockReport::categories(&ALL_EIGHT),
        MockReport::categories(&["dangling"]),
        MockReport::categories(&ALL_EIGHT),
        MockReport::categories(&ALL_EIGHT),
    ];
    reports.extend(tail);
    MockDetector::scripted(reports)
}

#[test]
fn rollback_restores_the_lowest_e_snapshot() {
    let s = run_with(&spike_detector(vec![MockReport::Count(0)]), SessionConfig::default());
    let trace = s.trace();
    let e = s.waveform().e_values();
    assert!(e[0] > 0.99 && e[1] < 0.6, "{e:?}");

    let trigger = trace
        .iter()
        .position(|r| r.to == StateId::QRollback)
        .expect("a rollback");
    let lowest = trace[1].snapshot_after.clone();
    assert_eq!(trace[trigger].rollback_target.as_deref(), Some(lowest.as_str()));
    let restore = &trace[trigger + 1];
    assert_eq!(restore.from, StateId::QRollback);
    assert_eq!(restore.snapshot_after, lowest);
    // the restored step repeats the point it came from
    assert_eq!(e[trigger + 1], e[1]);

    let o = s.outcome().unwrap();
    assert_eq!(o.terminal, StateId::QF);
    assert_eq!(o.metrics.rollbacks, 1);
    // the first jump at step 1 points back at the working snapshot and is ignored
    assert!(trace[1]
        .annotations
        .iter()
        .any(|a| a.starts_with("rollback point ignored")));
}

#[test]
fn rollback_to_initial_policy() {
    let config = SessionConfig {
        rollback_to_initial: true,
        ..SessionConfig::default()
    };
    let s = run_with(&spike_detector(vec![MockReport::Count(0)]), config);
    let target = s.trace().iter().find_map(|r| r.rollback_target.clone()).unwrap();
    assert_eq!(target, s.initial_snapshot().id());
}

#[test]
fn rollback_disabled_never_restores() {
    let config = SessionConfig {
        rollback_enabled: false,
        max_transitions: 6,
        ..SessionConfig::default()
    };
    let s = run_with(
        &spike_detector(vec![MockReport::Count(1), MockReport::Count(1)]),
        config,
    );
    assert!(s.trace().iter().all(|r| r.to != StateId::QRollback));
    assert_eq!(s.metrics().rollbacks, 0);
}

#[test]
fn manual_restore() {
    let detector = spike_detector(vec![MockReport::Count(0)]);
    let provider = FreshProgram::default();
    let runner = MockRunner::always(true);
    let b = Backends {
        detector: &detector,
        provider: &provider,
        runner: &runner,
    };
    let mut s = RepairSession::new(SEED_PROGRAM, SessionConfig::default()).unwrap();
    let initial = s.initial_snapshot().id().to_string();
    assert!(matches!(
        s.restore(&initial, &b),
        Err(SessionError::NotRollingBack(StateId::Q0))
    ));
    while s.current() != StateId::QRollback {
        s.step(&b).unwrap();
    }
    assert!(matches!(
        s.restore("no-such-snapshot", &b),
        Err(SessionError::Snapshot(_))
    ));
    assert_eq!(s.current(), StateId::QRollback);

    let restored = s.restore(&initial, &b).unwrap();
    assert_eq!(restored.code(), SEED_PROGRAM);
    assert_eq!(s.working_snapshot().id(), initial);
    let last = s.trace().last().unwrap();
    assert_eq!(last.from, StateId::QRollback);
    assert_eq!(last.snapshot_after, initial);
}

#[test]
fn checkpoints_are_unique_and_immutable() {
    let mut s = RepairSession::new(SEED_PROGRAM, SessionConfig::default()).unwrap();
    let mut ids = std::collections::BTreeSet::new();
    for i in 0..100 {
        let code = format!("fn main() {{ let _ = {i}; }}\n");
        let snap = SourceSnapshot::new(code.clone(), StateId::QModify, Some(ThinkingMode::Fast), i + 1);
        let id = s.checkpoint(snap.clone()).unwrap();
        assert!(ids.insert(id.clone()));
        assert!(s.checkpoint(snap).is_err());
        assert_eq!(s.snapshots().get(&id).unwrap().code(), code);
    }
    assert_eq!(s.snapshots().len(), 101);
}

#[test]
fn trace_document_round_trips() {
    let s = run_with(&spike_detector(vec![MockReport::Count(0)]), SessionConfig::default());
    let doc = s.trace_document();
    let json = doc.to_json();
    let back = TraceDocument::from_json(&json).unwrap();
    assert_eq!(back.to_json(), json);
    assert_eq!(back.transitions, doc.transitions);
    assert_eq!(back.waveform, doc.waveform);
    // wall time is not serialized
    assert_eq!(back.outcome.unwrap().metrics.wall_time_secs, 0.0);
}
