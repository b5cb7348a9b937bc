use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::trace::{
    EvaluationRecord, Metrics, Outcome, ProviderCall, RecordingProvider, SnapshotMeta, TraceDocument, TransitionRecord,
    TRACE_SCHEMA,
};
use super::{ConfigError, SessionConfig, SnapshotError, SnapshotStore, SourceSnapshot, StateId};
use crate::agents::{
    apply, select_next, KnowledgeBase, KnowledgeEntry, KnowledgeStore, PromptTemplates, RepairOutcome, Selection,
    SelectionInput,
};
use crate::detection::{DetectionReport, Detector};
use crate::provider::GenerationProvider;
use crate::validation::{TestGenAgent, TestRunner};
use crate::waveform::{
    detect_eval_point, detect_rollback_point, hallucination_score, Channel, ChannelMap, SignalChannels, Waveform,
};

pub const REASON_ACCEPTED: &str = "accepted";
pub const REASON_MAX_TRANSITIONS: &str = "max transitions";
pub const REASON_DETECTOR: &str = "detector unavailable";

const HISTORY_DEPTH: usize = 4;
const EXCERPT_RADIUS: usize = 6;

/// External collaborators of a session.
#[derive(Clone, Copy)]
pub struct Backends<'a> {
    pub detector: &'a dyn Detector,
    pub provider: &'a dyn GenerationProvider,
    pub runner: &'a dyn TestRunner,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("empty program")]
    EmptyProgram,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("session already finished in {0}")]
    Finished(StateId),
    #[error("transition limit of {0} reached")]
    Exhausted(usize),
    #[error("restore is only possible from q_rollback, current state is {0}")]
    NotRollingBack(StateId),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
}

#[derive(Debug, Clone)]
enum Pending {
    Nothing,
    Repair(Box<Selection>),
    Rollback { target: String, source_step: usize },
}

/// One FSM run over a single program.
pub struct RepairSession {
    config: SessionConfig,
    current: StateId,
    snapshots: SnapshotStore,
    trace: Vec<TransitionRecord>,
    waveform: Waveform,
    kb: Arc<dyn KnowledgeStore>,
    rng: ChaCha8Rng,
    channel_map: ChannelMap,
    templates: PromptTemplates,
    testgen: TestGenAgent,
    working: String,
    reports: BTreeMap<String, DetectionReport>,
    pending: Pending,
    force_slow: bool,
    metrics: Metrics,
    evaluations: Vec<EvaluationRecord>,
    calls: Vec<ProviderCall>,
    reason: Option<String>,
}

impl std::fmt::Debug for RepairSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RepairSession")
            .field("current", &self.current)
            .field("working", &self.working)
            .field("transitions", &self.trace.len())
            .finish_non_exhaustive()
    }
}

/// Starts a session in `Q0` holding only the input snapshot.
pub fn init_session(code: &str, config: SessionConfig) -> Result<RepairSession, SessionError> {
    RepairSession::new(code, config)
}

impl RepairSession {
    pub fn new(code: &str, config: SessionConfig) -> Result<Self, SessionError> {
        if code.trim().is_empty() {
            return Err(SessionError::EmptyProgram);
        }
        config.validate()?;
        let mut snapshots = SnapshotStore::default();
        let working = snapshots.insert(SourceSnapshot::initial(code))?;
        let templates = PromptTemplates::builtin();
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            testgen: TestGenAgent {
                templates: templates.clone(),
                variant_count: config.variant_count,
                parallelism: config.validation_parallelism,
            },
            config,
            current: StateId::Q0,
            snapshots,
            trace: Vec::new(),
            waveform: Waveform::new(),
            kb: Arc::new(KnowledgeBase::in_memory()),
            channel_map: ChannelMap::builtin(),
            templates,
            working,
            reports: BTreeMap::new(),
            pending: Pending::Nothing,
            force_slow: false,
            metrics: Metrics::default(),
            evaluations: Vec::new(),
            calls: Vec::new(),
            reason: None,
        })
    }

    pub fn with_kb(mut self, kb: Arc<dyn KnowledgeStore>) -> Self {
        self.kb = kb;
        self
    }

    pub fn with_channel_map(mut self, map: ChannelMap) -> Self {
        self.channel_map = map;
        self
    }

    pub fn with_templates(mut self, templates: PromptTemplates) -> Self {
        self.testgen.templates = templates.clone();
        self.templates = templates;
        self
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn current(&self) -> StateId {
        self.current
    }

    pub fn trace(&self) -> &[TransitionRecord] {
        &self.trace
    }

    pub fn waveform(&self) -> &Waveform {
        &self.waveform
    }

    pub fn snapshots(&self) -> &SnapshotStore {
        &self.snapshots
    }

    pub fn evaluations(&self) -> &[EvaluationRecord] {
        &self.evaluations
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn working_snapshot(&self) -> &SourceSnapshot {
        self.snapshots.get(&self.working).expect("working snapshot is stored")
    }

    pub fn initial_snapshot(&self) -> &SourceSnapshot {
        self.snapshots.iter().next().expect("input snapshot is stored")
    }

    /// Latest detection of the working snapshot.
    pub fn last_report(&self) -> Option<&DetectionReport> {
        self.reports.get(&self.working)
    }

    /// Stores a finalized snapshot. Ids are content plus step, so storing
    /// the same snapshot twice is rejected.
    pub fn checkpoint(&mut self, snapshot: SourceSnapshot) -> Result<String, SessionError> {
        Ok(self.snapshots.insert(snapshot)?)
    }

    /// Performs the pending restore from `QRollback` onto `target`.
    pub fn restore(&mut self, target: &str, backends: &Backends<'_>) -> Result<SourceSnapshot, SessionError> {
        if self.current != StateId::QRollback {
            return Err(SessionError::NotRollingBack(self.current));
        }
        let snap = self.snapshots.get(target)?.clone();
        let source_step = self
            .waveform
            .points()
            .iter()
            .rposition(|p| p.snapshot == target)
            .ok_or_else(|| SnapshotError::Unknown(target.to_string()))?;
        self.pending = Pending::Rollback {
            target: target.to_string(),
            source_step,
        };
        self.step(backends)?;
        Ok(snap)
    }

    /// Executes one transition.
    pub fn step(&mut self, b: &Backends<'_>) -> Result<&TransitionRecord, SessionError> {
        if self.current.is_terminal() {
            return Err(SessionError::Finished(self.current));
        }
        if self.trace.len() >= self.config.max_transitions {
            return Err(SessionError::Exhausted(self.config.max_transitions));
        }
        let t = self.trace.len();
        let from = self.current;
        let before = self.working.clone();
        let provider = RecordingProvider::new(b.provider, t);
        let mut ann = Vec::new();
        let points_before = self.waveform.len();
        let pending = std::mem::replace(&mut self.pending, Pending::Nothing);

        let (summary, detected) = match (from, pending) {
            (StateId::Q0, _) => ("detect input".to_string(), self.observe(b.detector, &before, &mut ann)),
            (StateId::QRollback, Pending::Rollback { target, source_step }) => {
                self.working = target.clone();
                self.waveform.push_restored(source_step);
                (format!("restore {target}"), Ok(()))
            }
            (state, Pending::Repair(sel)) if state.is_repair() => {
                let action = &sel.action;
                self.metrics.count_invocation(action.agent, action.mode);
                let summary = format!("{}/{} via {}", action.agent, action.mode, sel.tier);
                let seed = self.rng.next_u64();
                let working = self.working_snapshot().clone();
                let applied = apply(
                    action,
                    &working,
                    &provider,
                    &self.templates,
                    self.config.temperature,
                    seed,
                    t,
                );
                let detected = match applied {
                    Ok((candidate, _)) => {
                        let id = candidate.id().to_string();
                        if !self.snapshots.contains(&id) {
                            self.checkpoint(candidate)?;
                        }
                        let prev_e = self.waveform.last().map(|p| p.e);
                        let r = self.observe(b.detector, &id, &mut ann);
                        if r.is_ok() {
                            self.working = id;
                            self.record_experience(&sel, prev_e, &mut ann);
                        }
                        r
                    }
                    Err(e) => {
                        ann.push(format!("candidate discarded: {e}"));
                        self.metrics.degenerate_candidates += 1;
                        self.force_slow = true;
                        if let Some(last) = self.waveform.len().checked_sub(1) {
                            self.waveform.push_restored(last);
                        }
                        Ok(())
                    }
                };
                (summary, detected)
            }
            (state, _) => unreachable!("no pending action for {state}"),
        };

        let mut rollback_target = None;
        let to = match detected {
            Err(msg) => {
                ann.push(msg);
                self.reason = Some(REASON_DETECTOR.to_string());
                StateId::QErr
            }
            Ok(()) => self.decide(t, from, b, &provider, &mut ann, &mut rollback_target),
        };

        let (signals, e) = match self.waveform.points().get(points_before) {
            Some(p) => (p.raw, Some(p.e)),
            None => (SignalChannels::default(), None),
        };
        self.calls.extend(provider.into_log());
        self.current = to;
        self.trace.push(TransitionRecord {
            step: t,
            from,
            to,
            signals,
            e,
            action_summary: summary,
            snapshot_before: before,
            snapshot_after: self.working.clone(),
            rollback_target,
            annotations: ann,
        });
        Ok(self.trace.last().expect("just pushed"))
    }

    /// Steps until a terminal state and summarizes the session.
    pub fn run(&mut self, b: &Backends<'_>) -> Result<Outcome, SessionError> {
        let started = Instant::now();
        while !self.current.is_terminal() {
            self.step(b)?;
        }
        self.metrics.wall_time_secs += started.elapsed().as_secs_f64();
        Ok(self.outcome().expect("session is terminal"))
    }

    /// Available once the session is terminal.
    pub fn outcome(&self) -> Option<Outcome> {
        if !self.current.is_terminal() {
            return None;
        }
        let report = self.last_report();
        let e = self.waveform.e_values();
        let snap = self.working_snapshot();
        Some(Outcome {
            terminal: self.current,
            final_snapshot: snap.id().to_string(),
            final_hash: snap.hash().to_string(),
            reason: self.reason.clone().unwrap_or_default(),
            final_ub_count: report.map(|r| r.ub_count),
            final_clean: report.is_some_and(DetectionReport::is_clean),
            accepted: self.current == StateId::QF,
            transitions: self.trace.len(),
            hallucination_score: hallucination_score(&e),
            max_e: e.iter().copied().fold(0.0, f64::max),
            metrics: self.metrics.clone(),
        })
    }

    pub fn trace_document(&self) -> TraceDocument {
        TraceDocument {
            schema: TRACE_SCHEMA.to_string(),
            config: self.config.clone(),
            transitions: self.trace.clone(),
            waveform: self.waveform.points().to_vec(),
            snapshots: self
                .snapshots
                .iter()
                .map(|s| SnapshotMeta {
                    id: s.id().to_string(),
                    hash: s.hash().to_string(),
                    producer: s.producer(),
                    mode: s.mode(),
                    step: s.step(),
                })
                .collect(),
            evaluations: self.evaluations.clone(),
            provider_calls: self.calls.clone(),
            outcome: self.outcome(),
        }
    }

    /// Detects `id`, then appends its waveform point.
    fn observe(&mut self, detector: &dyn Detector, id: &str, ann: &mut Vec<String>) -> Result<(), String> {
        let code = self.snapshots.get(id).map_err(|e| e.to_string())?.code().to_string();
        self.metrics.detector_runs += 1;
        let report = detector.detect(&code).map_err(|e| e.to_string())?;
        let raw = if report.compiled {
            let cat = self.channel_map.categorize(&report.findings);
            if !cat.remapped.is_empty() {
                ann.push(format!("remapped to U: {}", cat.remapped.join(", ")));
            }
            cat.channels
        } else {
            ann.push("candidate does not compile".to_string());
            let mut raw = self.waveform.last().map(|p| p.raw).unwrap_or_default();
            raw.bump(Channel::U, 1);
            raw
        };
        self.waveform.push(raw, id, &self.config.waveform_params());
        self.reports.insert(id.to_string(), report);
        Ok(())
    }

    fn record_experience(&mut self, sel: &Selection, prev_e: Option<f64>, ann: &mut Vec<String>) {
        let (Some(prev), Some(now)) = (prev_e, self.waveform.last().map(|p| p.e)) else {
            return;
        };
        let delta = now - prev;
        let clean = self.last_report().is_some_and(DetectionReport::is_clean);
        let outcome = if delta > 0.0 {
            RepairOutcome::Worsened
        } else if clean {
            RepairOutcome::Fixed
        } else if delta < 0.0 {
            RepairOutcome::Improved
        } else {
            return;
        };
        let entry = KnowledgeEntry {
            fingerprint: sel.action.fingerprint.clone(),
            agent: sel.action.agent,
            mode: sel.action.mode,
            outcome,
            delta_e: delta,
        };
        if let Err(e) = self.kb.record(entry) {
            ann.push(format!("knowledge base: {e}"));
        }
    }

    fn decide(
        &mut self,
        t: usize,
        from: StateId,
        b: &Backends<'_>,
        provider: &dyn GenerationProvider,
        ann: &mut Vec<String>,
        rollback_target: &mut Option<String>,
    ) -> StateId {
        let report = self.last_report().cloned().unwrap_or_else(DetectionReport::clean);
        if report.is_clean() && self.evaluate(t, b, provider, ann) {
            self.reason = Some(REASON_ACCEPTED.to_string());
            return StateId::QF;
        }
        if t + 1 >= self.config.max_transitions {
            self.reason = Some(REASON_MAX_TRANSITIONS.to_string());
            return StateId::QErr;
        }

        let e = self.waveform.e_values();
        if self.config.rollback_enabled
            && detect_rollback_point(
                &e,
                self.config.rollback_abs_threshold,
                self.config.rollback_jump_threshold,
            )
        {
            let point = if self.config.rollback_to_initial {
                self.waveform.points().first()
            } else {
                self.waveform.argmin_e()
            }
            .expect("waveform is non-empty after observation");
            if point.snapshot != self.working {
                ann.push(format!("rollback point at E={:.4}", e[e.len() - 1]));
                *rollback_target = Some(point.snapshot.clone());
                self.pending = Pending::Rollback {
                    target: point.snapshot.clone(),
                    source_step: point.step,
                };
                self.metrics.rollbacks += 1;
                self.force_slow = true;
                return StateId::QRollback;
            }
            ann.push("rollback point ignored: already at the lowest-E snapshot".to_string());
        }
        if !report.is_clean() && detect_eval_point(&e, self.config.eval_window, self.config.eval_variance_threshold) {
            ann.push("evaluation point reached with UB remaining".to_string());
        }

        let mut keywords: Vec<String> = Vec::new();
        for f in &report.findings {
            if !keywords.contains(&f.category) {
                keywords.push(f.category.clone());
            }
        }
        if !report.compiled {
            keywords.push("compile error".to_string());
        }
        let history = self.history();
        let excerpt = self.excerpt(&report);
        let signals = self.waveform.last().expect("observed").normalized;
        let input = SelectionInput {
            current: from,
            signals,
            keywords: &keywords,
            dominant: report.dominant_category(),
            loc: self.working_snapshot().loc(),
            history: &history,
            excerpt: &excerpt,
            force_slow: self.force_slow,
            temperature: self.config.temperature,
        };
        let sel = select_next(&input, &*self.kb, provider, &self.templates, &mut self.rng);
        ann.push(format!(
            "next: {}/{} via {}",
            sel.action.agent, sel.action.mode, sel.tier
        ));
        let state = sel.state;
        self.pending = Pending::Repair(Box::new(sel));
        state
    }

    /// Semantic validation of the clean working snapshot. On acceptance the
    /// shipped variant becomes the working snapshot.
    fn evaluate(
        &mut self,
        t: usize,
        b: &Backends<'_>,
        provider: &dyn GenerationProvider,
        ann: &mut Vec<String>,
    ) -> bool {
        let candidate = self.working_snapshot().clone();
        let eval = self
            .testgen
            .evaluate(&candidate, provider, b.runner, self.config.temperature, &mut self.rng);
        self.metrics.evaluations += 1;
        let mut accepted = eval.verdict.accepted;
        if let Some(shipped) = eval.shipped().filter(|s| s.id() != candidate.id()) {
            self.metrics.detector_runs += 1;
            match b.detector.detect(shipped.code()) {
                Ok(report) if report.is_clean() => {
                    let id = shipped.id().to_string();
                    if !self.snapshots.contains(&id) {
                        self.snapshots.insert(shipped.clone()).expect("id checked absent");
                    }
                    ann.push(format!("shipping variant {id}"));
                    self.reports.insert(id.clone(), report);
                    self.working = id;
                }
                _ => {
                    accepted = eval.verdict.matrix.first().is_some_and(|row| row.iter().all(|&p| p));
                    ann.push("selected variant failed detection, keeping the candidate".to_string());
                }
            }
        }
        ann.push(format!(
            "evaluation {}: {} variants, {} tests",
            if accepted { "accepted" } else { "rejected" },
            eval.verdict.variants_tried,
            eval.verdict.tests_generated
        ));
        let mut verdict = eval.verdict.clone();
        verdict.accepted = accepted;
        if !accepted {
            verdict.selected = None;
            self.force_slow = true;
        }
        self.evaluations.push(EvaluationRecord {
            step: t,
            snapshot: candidate.id().to_string(),
            constraints: eval.constraints.iter().map(|c| c.statement.clone()).collect(),
            verdict,
        });
        accepted
    }

    fn history(&self) -> String {
        let lines: Vec<String> = self
            .trace
            .iter()
            .rev()
            .take(HISTORY_DEPTH)
            .rev()
            .map(|r| match r.e {
                Some(e) => format!("step {}: {} -> E={e:.3}", r.step, r.action_summary),
                None => format!("step {}: {}", r.step, r.action_summary),
            })
            .collect();
        lines.join("\n")
    }

    fn excerpt(&self, report: &DetectionReport) -> String {
        let code = self.working_snapshot().code();
        let lines: Vec<&str> = code.lines().collect();
        let center = report
            .findings
            .iter()
            .find_map(|f| f.location.as_ref())
            .map(|l| (l.line as usize).saturating_sub(1))
            .unwrap_or(0);
        let lo = center.saturating_sub(EXCERPT_RADIUS);
        let hi = (center + EXCERPT_RADIUS + 1).min(lines.len());
        lines.get(lo..hi).unwrap_or_default().join("\n")
    }
}
