//! Dual-mode repair agents and the selector that picks the next one.
//!
//! Four agents (assert, modify, replace, knowledge) each run in a fast
//! single-pass mode or a slow multi-step mode. [`select_next`] consults, in
//! order: the knowledge base, the generation provider, and a static policy
//! keyed on UB keywords. The static tier always yields a choice.

mod kb;
mod templates;

use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsm::{SourceSnapshot, StateId};
use crate::provider::{
    GenerationProvider, GenerationRequest, GenerationResponse, ProviderError, FAST_STEP_BUDGET, SLOW_STEP_BUDGET,
};
use crate::waveform::NormalizedSignals;

pub use kb::{
    rank_evidence, Evidence, Fingerprint, KbError, KbOverlay, KnowledgeBase, KnowledgeEntry, KnowledgeStore,
    RepairOutcome,
};
pub use templates::PromptTemplates;

/// Programs shorter than this (non-blank lines) default to fast mode.
pub const FAST_MODE_MAX_LOC: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThinkingMode {
    Fast,
    Slow,
}

impl ThinkingMode {
    pub fn step_budget(self) -> u32 {
        match self {
            ThinkingMode::Fast => FAST_STEP_BUDGET,
            ThinkingMode::Slow => SLOW_STEP_BUDGET,
        }
    }
}

impl fmt::Display for ThinkingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ThinkingMode::Fast => "fast",
            ThinkingMode::Slow => "slow",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Assert,
    Modify,
    Replace,
    Knowledge,
}

impl AgentKind {
    pub const ALL: [AgentKind; 4] = [
        AgentKind::Assert,
        AgentKind::Modify,
        AgentKind::Replace,
        AgentKind::Knowledge,
    ];
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentKind::Assert => "assert",
            AgentKind::Modify => "modify",
            AgentKind::Replace => "replace",
            AgentKind::Knowledge => "knowledge",
        })
    }
}

/// Tie-break order used by the knowledge-base ranking and the fallback.
pub const STATIC_ORDER: [(AgentKind, ThinkingMode); 8] = [
    (AgentKind::Replace, ThinkingMode::Fast),
    (AgentKind::Replace, ThinkingMode::Slow),
    (AgentKind::Assert, ThinkingMode::Fast),
    (AgentKind::Assert, ThinkingMode::Slow),
    (AgentKind::Modify, ThinkingMode::Fast),
    (AgentKind::Modify, ThinkingMode::Slow),
    (AgentKind::Knowledge, ThinkingMode::Fast),
    (AgentKind::Knowledge, ThinkingMode::Slow),
];

pub(crate) fn static_order_index(agent: AgentKind, mode: ThinkingMode) -> usize {
    STATIC_ORDER
        .iter()
        .position(|&p| p == (agent, mode))
        .expect("every pair is listed")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionContext {
    pub keywords: Vec<String>,
    pub history: String,
    pub excerpt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairAction {
    pub agent: AgentKind,
    pub mode: ThinkingMode,
    pub context: ActionContext,
    /// Signal fingerprint at selection time, used to file the outcome.
    pub fingerprint: Fingerprint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionTier {
    Knowledge,
    Provider,
    Static,
}

impl fmt::Display for SelectionTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionTier::Knowledge => "kb",
            SelectionTier::Provider => "provider",
            SelectionTier::Static => "static",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub state: StateId,
    pub action: RepairAction,
    pub tier: SelectionTier,
}

/// Everything the selector looks at for one decision.
#[derive(Debug, Clone)]
pub struct SelectionInput<'a> {
    pub current: StateId,
    pub signals: NormalizedSignals,
    pub keywords: &'a [String],
    pub dominant: Option<&'a str>,
    pub loc: usize,
    pub history: &'a str,
    pub excerpt: &'a str,
    /// Set after a rollback or a failed semantic check.
    pub force_slow: bool,
    pub temperature: f64,
}

fn has_keyword(keywords: &[String], needles: &[&str]) -> bool {
    keywords.iter().any(|k| {
        let k = k.to_ascii_lowercase();
        needles.iter().any(|n| k.contains(n))
    })
}

const CONCURRENCY_KEYWORDS: &[&str] = &["data_race", "data race", "atomic"];

fn default_mode(input: &SelectionInput<'_>) -> ThinkingMode {
    if input.force_slow || input.loc >= FAST_MODE_MAX_LOC {
        ThinkingMode::Slow
    } else {
        ThinkingMode::Fast
    }
}

/// Keyword-driven fallback. Walks keywords in order and takes the first one
/// that has a preferred agent.
pub fn static_policy(current: StateId, keywords: &[String], mode: ThinkingMode) -> (AgentKind, ThinkingMode) {
    for kw in keywords {
        let kw = std::slice::from_ref(kw);
        if has_keyword(kw, &["size mismatch", "dangling"]) {
            return (AgentKind::Replace, mode);
        }
        if has_keyword(kw, &["access violation", "retag write", "write access"]) {
            return (AgentKind::Assert, mode);
        }
        if has_keyword(kw, CONCURRENCY_KEYWORDS) {
            return (AgentKind::Modify, ThinkingMode::Slow);
        }
    }
    if current == StateId::QKnowledge {
        (AgentKind::Modify, mode)
    } else {
        (AgentKind::Knowledge, mode)
    }
}

fn parse_choice(text: &str) -> Option<(AgentKind, Option<ThinkingMode>)> {
    let lower = text.to_ascii_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !c.is_ascii_alphanumeric() && c != '_')
        .filter(|w| !w.is_empty())
        .collect();
    let agent = words.iter().find_map(|w| match *w {
        "assert" => Some(AgentKind::Assert),
        "modify" => Some(AgentKind::Modify),
        "replace" => Some(AgentKind::Replace),
        "knowledge" => Some(AgentKind::Knowledge),
        _ => None,
    })?;
    let mode = words.iter().find_map(|w| match *w {
        "fast" => Some(ThinkingMode::Fast),
        "slow" => Some(ThinkingMode::Slow),
        _ => None,
    });
    Some((agent, mode))
}

fn format_signals(s: &NormalizedSignals) -> String {
    s.values.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(",")
}

/// Chooses the next repair state and action. Never fails: provider errors
/// and unparseable answers fall through to the static policy.
pub fn select_next(
    input: &SelectionInput<'_>,
    kb: &dyn KnowledgeStore,
    provider: &dyn GenerationProvider,
    templates: &PromptTemplates,
    rng: &mut dyn RngCore,
) -> Selection {
    let fingerprint = Fingerprint::new(&input.signals, input.dominant);
    let evidence = kb.evidence(&fingerprint);
    let make = |agent: AgentKind, mode: ThinkingMode, tier: SelectionTier| Selection {
        state: agent.into(),
        action: RepairAction {
            agent,
            mode,
            context: ActionContext {
                keywords: input.keywords.to_vec(),
                history: input.history.to_string(),
                excerpt: input.excerpt.to_string(),
            },
            fingerprint: fingerprint.clone(),
        },
        tier,
    };

    if let Some(best) = evidence.first().filter(|e| e.positive() > 0) {
        return make(best.agent, best.mode, SelectionTier::Knowledge);
    }

    let mode = default_mode(input);
    let keywords = input.keywords.join(", ");
    let prompt = templates.render(
        "select",
        &[
            ("keywords", if keywords.is_empty() { "none" } else { &keywords }),
            ("signals", &format_signals(&input.signals)),
            ("history", input.history),
        ],
    );
    let request = GenerationRequest::new(prompt, input.temperature, FAST_STEP_BUDGET, rng.next_u64());
    match provider.complete(&request) {
        Ok(resp) => {
            if let Some((agent, picked)) = parse_choice(&resp.text) {
                let mode = if input.force_slow {
                    ThinkingMode::Slow
                } else {
                    picked.unwrap_or(mode)
                };
                return make(agent, mode, SelectionTier::Provider);
            }
            tracing::debug!("selector: unparseable provider answer, using static policy");
        }
        Err(e) => tracing::debug!(error = %e, "selector: provider failed, using static policy"),
    }

    // pairs that only ever made things worse here are skipped when possible
    let (agent, mode) = static_policy(input.current, input.keywords, mode);
    let burned = |a: AgentKind| {
        evidence
            .iter()
            .filter(|e| e.agent == a)
            .any(|e| e.positive() == 0 && e.worsened > 0)
    };
    let agent = std::iter::once(agent)
        .chain(STATIC_ORDER.iter().map(|(a, _)| *a))
        .find(|a| !burned(*a))
        .unwrap_or(agent);
    make(agent, mode, SelectionTier::Static)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ApplyError {
    #[error("degenerate candidate: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Pulls the program out of a model answer: the first fenced block if
/// there is one, otherwise the whole answer.
pub fn extract_code(text: &str) -> Result<String, ApplyError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(ApplyError::Degenerate("empty output".into()));
    }
    let mut lines = trimmed.lines();
    if !trimmed.contains("```") {
        return Ok(format!("{trimmed}\n"));
    }
    lines.by_ref().find(|l| l.trim_start().starts_with("```"));
    let mut body = Vec::new();
    for l in lines {
        if l.trim_start().starts_with("```") {
            let code = body.join("\n");
            if code.trim().is_empty() {
                return Err(ApplyError::Degenerate("empty code block".into()));
            }
            return Ok(format!("{code}\n"));
        }
        body.push(l);
    }
    Err(ApplyError::Degenerate("unterminated code block".into()))
}

/// Runs one agent on `snapshot` and returns the candidate it produced.
/// The input snapshot is not touched.
pub fn apply(
    action: &RepairAction,
    snapshot: &SourceSnapshot,
    provider: &dyn GenerationProvider,
    templates: &PromptTemplates,
    temperature: f64,
    seed: u64,
    step: usize,
) -> Result<(SourceSnapshot, GenerationResponse), ApplyError> {
    let keywords = action.context.keywords.join(", ");
    let history = if action.context.history.is_empty() {
        "none"
    } else {
        action.context.history.as_str()
    };
    let prompt = templates.render(
        &PromptTemplates::repair_name(action.agent, action.mode),
        &[
            ("code", snapshot.code()),
            ("keywords", if keywords.is_empty() { "none" } else { &keywords }),
            ("history", history),
        ],
    );
    let request = GenerationRequest::new(prompt, temperature, action.mode.step_budget(), seed);
    let response = provider.complete(&request)?;
    let code = extract_code(&response.text)?;
    let candidate = SourceSnapshot::new(code, action.agent.into(), Some(action.mode), step);
    Ok((candidate, response))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{MockProvider, MockScript, OfflineProvider};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn kw(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    fn input<'a>(keywords: &'a [String], current: StateId) -> SelectionInput<'a> {
        SelectionInput {
            current,
            signals: NormalizedSignals {
                values: [0.25, 0.0, 0.0, 0.125, 0.0],
            },
            keywords,
            dominant: keywords.first().map(String::as_str),
            loc: 20,
            history: "",
            excerpt: "",
            force_slow: false,
            temperature: 0.5,
        }
    }

    fn select(inp: &SelectionInput<'_>, kb: &dyn KnowledgeStore, p: &dyn GenerationProvider) -> Selection {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        select_next(inp, kb, p, &PromptTemplates::builtin(), &mut rng)
    }

    #[test]
    fn size_mismatch_falls_back_to_replace() {
        let k = kw(&["size mismatch"]);
        let s = select(&input(&k, StateId::Q0), &KnowledgeBase::in_memory(), &OfflineProvider);
        assert_eq!(s.state, StateId::QReplace);
        assert_eq!(
            (s.action.agent, s.action.mode),
            (AgentKind::Replace, ThinkingMode::Fast)
        );
        assert_eq!(s.tier, SelectionTier::Static);
    }

    #[test]
    fn access_violation_falls_back_to_assert() {
        let k = kw(&["access violation"]);
        let s = select(&input(&k, StateId::Q0), &KnowledgeBase::in_memory(), &OfflineProvider);
        assert_eq!(s.state, StateId::QAssert);
    }

    #[test]
    fn concurrency_goes_slow_modify() {
        let k = kw(&["data_race"]);
        let s = select(&input(&k, StateId::Q0), &KnowledgeBase::in_memory(), &OfflineProvider);
        assert_eq!((s.action.agent, s.action.mode), (AgentKind::Modify, ThinkingMode::Slow));
    }

    #[test]
    fn unmatched_keywords_go_knowledge_then_modify() {
        let k = kw(&["validity"]);
        let kb = KnowledgeBase::in_memory();
        assert_eq!(
            select(&input(&k, StateId::Q0), &kb, &OfflineProvider).state,
            StateId::QKnowledge
        );
        assert_eq!(
            select(&input(&k, StateId::QKnowledge), &kb, &OfflineProvider).state,
            StateId::QModify
        );
    }

    #[test]
    fn large_programs_default_to_slow() {
        let k = kw(&["dangling"]);
        let mut inp = input(&k, StateId::Q0);
        inp.loc = 200;
        let s = select(&inp, &KnowledgeBase::in_memory(), &OfflineProvider);
        assert_eq!(s.action.mode, ThinkingMode::Slow);
    }

    #[test]
    fn knowledge_base_majority_overrides_provider() {
        let k = kw(&["dangling"]);
        let inp = input(&k, StateId::Q0);
        let fp = Fingerprint::new(&inp.signals, inp.dominant);
        let kb = KnowledgeBase::in_memory();
        for _ in 0..3 {
            kb.record(KnowledgeEntry {
                fingerprint: fp.clone(),
                agent: AgentKind::Modify,
                mode: ThinkingMode::Slow,
                outcome: RepairOutcome::Fixed,
                delta_e: -0.2,
            })
            .unwrap();
        }
        let provider = MockProvider::new(MockScript::default().with_rule(&["akira:select"], "agent=assert mode=fast"));
        let s = select(&inp, &kb, &provider);
        assert_eq!((s.action.agent, s.action.mode), (AgentKind::Modify, ThinkingMode::Slow));
        assert_eq!(s.tier, SelectionTier::Knowledge);
    }

    #[test]
    fn provider_tier_parses_answer() {
        let k = kw(&["dangling"]);
        let provider = MockProvider::new(MockScript::default().with_rule(&["akira:select"], "agent=Assert mode=slow"));
        let s = select(&input(&k, StateId::Q0), &KnowledgeBase::in_memory(), &provider);
        assert_eq!((s.action.agent, s.action.mode), (AgentKind::Assert, ThinkingMode::Slow));
        assert_eq!(s.tier, SelectionTier::Provider);

        let garbled = MockProvider::new(MockScript::default().with_rule(&["akira:select"], "no idea"));
        let s = select(&input(&k, StateId::Q0), &KnowledgeBase::in_memory(), &garbled);
        assert_eq!(s.tier, SelectionTier::Static);
    }

    #[test]
    fn worsened_only_agents_are_skipped_by_fallback() {
        let k = kw(&["dangling"]);
        let inp = input(&k, StateId::Q0);
        let kb = KnowledgeBase::in_memory();
        kb.record(KnowledgeEntry {
            fingerprint: Fingerprint::new(&inp.signals, inp.dominant),
            agent: AgentKind::Replace,
            mode: ThinkingMode::Fast,
            outcome: RepairOutcome::Worsened,
            delta_e: 0.3,
        })
        .unwrap();
        let s = select(&inp, &kb, &OfflineProvider);
        assert_eq!(s.action.agent, AgentKind::Assert);
    }

    #[test]
    fn extract_code_cases() {
        assert_eq!(extract_code("fn main() {}").unwrap(), "fn main() {}\n");
        assert_eq!(
            extract_code("Here:\n```rust\nfn main() {}\n```\nbye").unwrap(),
            "fn main() {}\n"
        );
        assert!(matches!(extract_code("   "), Err(ApplyError::Degenerate(_))));
        assert!(matches!(
            extract_code("```rust\nfn main"),
            Err(ApplyError::Degenerate(_))
        ));
        assert!(matches!(extract_code("```\n\n```"), Err(ApplyError::Degenerate(_))));
    }

    fn action(agent: AgentKind, mode: ThinkingMode) -> RepairAction {
        RepairAction {
            agent,
            mode,
            context: ActionContext {
                keywords: kw(&["dangling"]),
                history: String::new(),
                excerpt: String::new(),
            },
            fingerprint: Fingerprint::new(&NormalizedSignals::default(), None),
        }
    }

    #[test]
    fn apply_passes_scripted_text_through() {
        let provider = MockProvider::new(
            MockScript::default().with_rule(&["akira:repair:modify"], "```rust\nfn main() { /* fixed */ }\n```"),
        );
        let input = SourceSnapshot::initial("fn main() { /* bad */ }\n");
        let before = input.clone();
        let (out, _) = apply(
            &action(AgentKind::Modify, ThinkingMode::Fast),
            &input,
            &provider,
            &PromptTemplates::builtin(),
            0.5,
            0,
            1,
        )
        .unwrap();
        assert_eq!(out.code(), "fn main() { /* fixed */ }\n");
        assert_eq!(out.producer(), StateId::QModify);
        assert_eq!(out.mode(), Some(ThinkingMode::Fast));
        assert_eq!(out.step(), 1);
        assert_eq!(input, before);
    }

    #[test]
    fn apply_rejects_empty_output() {
        let provider = MockProvider::new(MockScript::default().with_rule(&["akira:repair"], ""));
        let r = apply(
            &action(AgentKind::Assert, ThinkingMode::Fast),
            &SourceSnapshot::initial("x"),
            &provider,
            &PromptTemplates::builtin(),
            0.5,
            0,
            1,
        );
        assert!(matches!(r, Err(ApplyError::Degenerate(_))));
    }

    #[test]
    fn slow_apply_uses_three_step_budget() {
        let provider = MockProvider::new(MockScript::default().with_rule(&["akira:repair"], "fn main() {}"));
        let (_, resp) = apply(
            &action(AgentKind::Replace, ThinkingMode::Slow),
            &SourceSnapshot::initial("x"),
            &provider,
            &PromptTemplates::builtin(),
            0.5,
            0,
            1,
        )
        .unwrap();
        assert!(resp.steps_used >= 3);
        assert_eq!(provider.call_log().len(), 3);
    }
}
