use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{SessionConfig, StateId};
use crate::agents::ThinkingMode;
use crate::provider::{prompt_hash, GenerationProvider, GenerationRequest, GenerationResponse, ProviderError};
use crate::validation::ExecVerdict;
use crate::waveform::{SignalChannels, WaveformPoint};

pub const TRACE_SCHEMA: &str = "akira-trace/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub step: usize,
    pub from: StateId,
    pub to: StateId,
    pub signals: SignalChannels,
    /// Absent when detection failed.
    pub e: Option<f64>,
    pub action_summary: String,
    pub snapshot_before: String,
    pub snapshot_after: String,
    /// Set on transitions into `QRollback`: the snapshot to restore.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rollback_target: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub annotations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub step: usize,
    pub snapshot: String,
    pub constraints: Vec<String>,
    pub verdict: ExecVerdict,
}

/// One provider round trip as seen by the session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderCall {
    pub step: usize,
    pub purpose: String,
    pub prompt_hash: String,
    pub seed: u64,
    pub temperature: f64,
    pub step_budget: u32,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps_used: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_hash: Option<String>,
}

/// Wraps a provider and logs every call.
pub(crate) struct RecordingProvider<'a> {
    inner: &'a dyn GenerationProvider,
    step: usize,
    log: Mutex<Vec<ProviderCall>>,
}

impl<'a> RecordingProvider<'a> {
    pub(crate) fn new(inner: &'a dyn GenerationProvider, step: usize) -> Self {
        Self {
            inner,
            step,
            log: Mutex::new(Vec::new()),
        }
    }

    pub(crate) fn into_log(self) -> Vec<ProviderCall> {
        self.log.into_inner().expect("call log lock")
    }
}

fn purpose(prompt: &str) -> String {
    prompt
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("### akira:"))
        .unwrap_or("other")
        .trim()
        .to_string()
}

impl GenerationProvider for RecordingProvider<'_> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResponse, ProviderError> {
        let result = self.inner.complete(request);
        let call = ProviderCall {
            step: self.step,
            purpose: purpose(&request.prompt),
            prompt_hash: prompt_hash(&request.prompt),
            seed: request.seed,
            temperature: request.temperature,
            step_budget: request.step_budget,
            ok: result.is_ok(),
            steps_used: result.as_ref().ok().map(|r| r.steps_used),
            response_hash: result.as_ref().ok().map(|r| prompt_hash(&r.text)),
        };
        self.log.lock().expect("call log lock").push(call);
        result
    }
}

/// Per-session counters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub agent_invocations: usize,
    /// Keyed `agent/mode`.
    pub invocations_by_kind: BTreeMap<String, usize>,
    pub rollbacks: usize,
    pub evaluations: usize,
    pub degenerate_candidates: usize,
    pub detector_runs: usize,
    /// Not part of the serialized form so traces stay replayable.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl Metrics {
    pub(crate) fn count_invocation(&mut self, agent: impl std::fmt::Display, mode: ThinkingMode) {
        self.agent_invocations += 1;
        *self.invocations_by_kind.entry(format!("{agent}/{mode}")).or_default() += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub terminal: StateId,
    pub final_snapshot: String,
    pub final_hash: String,
    pub reason: String,
    /// Findings in the last detection of the final snapshot, if any ran.
    pub final_ub_count: Option<usize>,
    pub final_clean: bool,
    /// Semantic validation accepted the final snapshot.
    pub accepted: bool,
    pub transitions: usize,
    pub hallucination_score: f64,
    pub max_e: f64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub id: String,
    pub hash: String,
    pub producer: StateId,
    pub mode: Option<ThinkingMode>,
    pub step: usize,
}

/// Self-contained record of one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceDocument {
    pub schema: String,
    pub config: SessionConfig,
    pub transitions: Vec<TransitionRecord>,
    pub waveform: Vec<WaveformPoint>,
    pub snapshots: Vec<SnapshotMeta>,
    pub evaluations: Vec<EvaluationRecord>,
    pub provider_calls: Vec<ProviderCall>,
    pub outcome: Option<Outcome>,
}

impl TraceDocument {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("trace serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}
