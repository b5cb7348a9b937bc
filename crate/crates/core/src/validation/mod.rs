//! TestGenAgent: intent-guided semantic validation of a repair candidate.
//!
//! 1. summarize the candidate into modification points,
//! 2. derive one or more behavioral constraints per point,
//! 3. synthesize program variants and one unit test per constraint,
//! 4. run the suite against every variant; the candidate is accepted when
//!    at least one variant passes every test.
//!
//! Every provider-backed stage degrades to a fixed fallback instead of
//! failing, so validation always produces a verdict.

mod confusion;
mod runner;

use std::fmt::Write as _;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::agents::PromptTemplates;
use crate::fsm::SourceSnapshot;
use crate::provider::{GenerationProvider, GenerationRequest, FAST_STEP_BUDGET};

pub use confusion::{confusion_matrix, ConfusionMatrix, LabeledCandidate, Truth};
pub use runner::{
    assemble_test_source, parse_test_output, CargoTestRunner, MockRunner, MockRunnerRule, MockRunnerScript,
    RunnerError, TestRunner,
};

/// Name of the module that holds generated tests.
pub const GENERATED_MODULE: &str = "akira_generated_tests";
/// Prefix of every generated test function.
pub const TEST_PREFIX: &str = "akira_gen_";
pub const GENERIC_CONSTRAINT: &str = "program output unchanged on the original entry path";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModificationKind {
    AllocPairing,
    Alignment,
    BoundsCheck,
    Lifetime,
    Other,
}

impl ModificationKind {
    fn parse(s: &str) -> Option<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "allocpairing" => Some(Self::AllocPairing),
            "alignment" => Some(Self::Alignment),
            "boundscheck" => Some(Self::BoundsCheck),
            "lifetime" => Some(Self::Lifetime),
            "other" => Some(Self::Other),
            _ => None,
        }
    }

    fn default_constraint(self) -> &'static str {
        match self {
            Self::AllocPairing => {
                "memory is deallocated with the same layout (size and alignment) it was allocated with"
            }
            Self::Alignment => "every typed pointer access uses an address aligned for its type",
            Self::BoundsCheck => "all indexed and offset accesses stay within the bounds of their allocation",
            Self::Lifetime => "no reference or pointer is used after the value it points to is dropped or freed",
            Self::Other => GENERIC_CONSTRAINT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModificationPoint {
    pub description: String,
    pub location_hint: String,
    pub kind: ModificationKind,
}

impl ModificationPoint {
    fn whole_program() -> Self {
        Self {
            description: "whole program".into(),
            location_hint: String::new(),
            kind: ModificationKind::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticConstraint {
    pub statement: String,
    /// Index into the modification point list.
    pub derived_from: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub name: String,
    /// Index into the constraint list.
    pub constraint: usize,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSuite {
    pub cases: Vec<TestCase>,
    /// True when this is the fallback smoke suite.
    pub smoke: bool,
}

impl TestSuite {
    /// Single test that runs the original entry point.
    pub fn smoke(code: &str) -> Self {
        Self {
            cases: vec![TestCase {
                name: format!("{TEST_PREFIX}smoke"),
                constraint: 0,
                body: smoke_body(code),
            }],
            smoke: true,
        }
    }

    /// Source text of the generated test module.
    pub fn render(&self) -> String {
        let mut out = format!(
            "#[cfg(test)]\n#[allow(unused_imports, unused_unsafe)]\nmod {GENERATED_MODULE} {{\n    use super::*;\n"
        );
        for case in &self.cases {
            let _ = write!(out, "\n    #[test]\n    fn {}() {{\n", case.name);
            for line in case.body.lines() {
                let _ = writeln!(out, "        {line}");
            }
            out.push_str("    }\n");
        }
        out.push_str("}\n");
        out
    }
}

fn smoke_body(code: &str) -> String {
    if code.contains("fn main") {
        "super::main();".into()
    } else {
        String::new()
    }
}

/// Result of running the suite across all variants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecVerdict {
    pub accepted: bool,
    pub variants_tried: usize,
    pub tests_generated: usize,
    /// `matrix[v][t]`: variant `v` passed test `t`.
    pub matrix: Vec<Vec<bool>>,
    /// Variant shipped when accepted: the all-pass row closest to the
    /// candidate by edit distance.
    pub selected: Option<usize>,
}

impl ExecVerdict {
    pub fn rejected() -> Self {
        Self {
            accepted: false,
            variants_tried: 0,
            tests_generated: 0,
            matrix: Vec::new(),
            selected: None,
        }
    }
}

/// Points found by scanning the code for risky constructs.
pub fn scan_features(code: &str) -> Vec<ModificationPoint> {
    const PATTERNS: &[(ModificationKind, &[&str], &str)] = &[
        (
            ModificationKind::AllocPairing,
            &[
                "dealloc(",
                "Layout::",
                "Box::from_raw",
                "from_raw_parts(",
                "Vec::from_raw_parts",
            ],
            "allocation and deallocation must use matching layouts",
        ),
        (
            ModificationKind::Alignment,
            &["align", "read_unaligned", "packed", "as *const u", "as *mut u"],
            "alignment-sensitive memory access",
        ),
        (
            ModificationKind::BoundsCheck,
            &["get_unchecked", ".offset(", ".add(", "from_raw_parts"],
            "unchecked indexing or pointer arithmetic",
        ),
        (
            ModificationKind::Lifetime,
            &["transmute", "&'static", "from_raw(", "as_ptr()"],
            "pointer or reference that may outlive its value",
        ),
    ];
    let mut points = Vec::new();
    for (kind, needles, description) in PATTERNS {
        let hit = code
            .lines()
            .enumerate()
            .find(|(_, l)| needles.iter().any(|n| l.contains(n)));
        if let Some((line, _)) = hit {
            points.push(ModificationPoint {
                description: description.to_string(),
                location_hint: format!("line {}", line + 1),
                kind: *kind,
            });
        }
    }
    points
}

fn parse_points(text: &str) -> Vec<ModificationPoint> {
    text.lines()
        .filter_map(|l| {
            let mut parts = l.trim().trim_start_matches(['-', '*']).splitn(3, '|');
            let kind = ModificationKind::parse(parts.next()?)?;
            let location_hint = parts.next()?.trim().to_string();
            let description = parts.next().unwrap_or("").trim().to_string();
            Some(ModificationPoint {
                description,
                location_hint,
                kind,
            })
        })
        .collect()
}

/// Shared generation settings for the provider-backed stages.
#[derive(Debug, Clone, Copy)]
pub struct GenSettings {
    pub temperature: f64,
    pub seed: u64,
}

pub fn summarize(
    snapshot: &SourceSnapshot,
    provider: &dyn GenerationProvider,
    templates: &PromptTemplates,
    gen: GenSettings,
) -> Vec<ModificationPoint> {
    let scanned = scan_features(snapshot.code());
    let features = if scanned.is_empty() {
        "none".to_string()
    } else {
        scanned
            .iter()
            .map(|p| format!("{:?} at {}", p.kind, p.location_hint))
            .collect::<Vec<_>>()
            .join("; ")
    };
    let prompt = templates.render("summarize", &[("code", snapshot.code()), ("features", &features)]);
    match provider.complete(&GenerationRequest::new(
        prompt,
        gen.temperature,
        FAST_STEP_BUDGET,
        gen.seed,
    )) {
        Err(_) => vec![ModificationPoint {
            description: "whole program".into(),
            location_hint: String::new(),
            kind: ModificationKind::Other,
        }],
        Ok(resp) => {
            let parsed = parse_points(&resp.text);
            if !parsed.is_empty() {
                parsed
            } else if !scanned.is_empty() {
                scanned
            } else {
                vec![ModificationPoint::whole_program()]
            }
        }
    }
}

pub fn derive_constraints(
    points: &[ModificationPoint],
    provider: &dyn GenerationProvider,
    templates: &PromptTemplates,
    gen: GenSettings,
) -> Vec<SemanticConstraint> {
    let listing = points
        .iter()
        .enumerate()
        .map(|(k, p)| format!("{}. [{:?}] {} ({})", k + 1, p.kind, p.description, p.location_hint))
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = templates.render("constraints", &[("points", &listing)]);
    let resp = match provider.complete(&GenerationRequest::new(
        prompt,
        gen.temperature,
        FAST_STEP_BUDGET,
        gen.seed,
    )) {
        Ok(r) => r,
        Err(_) => {
            return (0..points.len())
                .map(|k| SemanticConstraint {
                    statement: GENERIC_CONSTRAINT.into(),
                    derived_from: k,
                })
                .collect()
        }
    };
    let mut out: Vec<SemanticConstraint> = resp
        .text
        .lines()
        .filter_map(|l| {
            let (n, statement) = l.trim().split_once(':')?;
            let n: usize = n.trim().trim_start_matches('#').parse().ok()?;
            let statement = statement.trim();
            (n >= 1 && n <= points.len() && !statement.is_empty()).then(|| SemanticConstraint {
                statement: statement.to_string(),
                derived_from: n - 1,
            })
        })
        .collect();
    for (k, p) in points.iter().enumerate() {
        if !out.iter().any(|c| c.derived_from == k) {
            out.push(SemanticConstraint {
                statement: p.kind.default_constraint().into(),
                derived_from: k,
            });
        }
    }
    out.sort_by_key(|c| c.derived_from);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Synthesis {
    /// The candidate is always first.
    pub variants: Vec<SourceSnapshot>,
    pub suite: TestSuite,
}

fn split_sections(text: &str) -> (Vec<String>, Vec<(usize, String)>) {
    let mut variants = Vec::new();
    let mut tests = Vec::new();
    enum Cur {
        None,
        Variant(String),
        Test(usize, String),
    }
    let mut cur = Cur::None;
    let flush = |cur: Cur, variants: &mut Vec<String>, tests: &mut Vec<(usize, String)>| match cur {
        Cur::Variant(s) => variants.push(s),
        Cur::Test(n, s) => tests.push((n, s)),
        Cur::None => {}
    };
    for line in text.lines() {
        let t = line.trim();
        if t == "=== VARIANT ===" {
            flush(
                std::mem::replace(&mut cur, Cur::Variant(String::new())),
                &mut variants,
                &mut tests,
            );
        } else if let Some(n) = t
            .strip_prefix("=== TEST ")
            .and_then(|r| r.strip_suffix(" ==="))
            .and_then(|n| n.trim().parse::<usize>().ok())
        {
            flush(
                std::mem::replace(&mut cur, Cur::Test(n, String::new())),
                &mut variants,
                &mut tests,
            );
        } else {
            match &mut cur {
                Cur::Variant(s) | Cur::Test(_, s) => {
                    s.push_str(line);
                    s.push('\n');
                }
                Cur::None => {}
            }
        }
    }
    flush(cur, &mut variants, &mut tests);
    (variants, tests)
}

fn strip_fence(s: &str) -> String {
    let lines: Vec<&str> = s.lines().filter(|l| !l.trim_start().starts_with("```")).collect();
    let mut out = lines.join("\n");
    out.push('\n');
    out
}

pub fn synthesize(
    constraints: &[SemanticConstraint],
    candidate: &SourceSnapshot,
    provider: &dyn GenerationProvider,
    templates: &PromptTemplates,
    variant_count: usize,
    gen: GenSettings,
) -> Synthesis {
    let fallback = || Synthesis {
        variants: vec![candidate.clone()],
        suite: TestSuite::smoke(candidate.code()),
    };
    let listing = constraints
        .iter()
        .enumerate()
        .map(|(k, c)| format!("{}. {}", k + 1, c.statement))
        .collect::<Vec<_>>()
        .join("\n");
    let extra = variant_count.max(1) - 1;
    let prompt = templates.render(
        "synthesize",
        &[
            ("code", candidate.code()),
            ("constraints", &listing),
            ("variants", &extra.to_string()),
        ],
    );
    let Ok(resp) = provider.complete(&GenerationRequest::new(
        prompt,
        gen.temperature,
        FAST_STEP_BUDGET,
        gen.seed,
    )) else {
        return fallback();
    };
    let (variant_texts, test_texts) = split_sections(&resp.text);
    if variant_texts.is_empty() && test_texts.is_empty() {
        return fallback();
    }

    let mut variants = vec![candidate.clone()];
    for text in variant_texts {
        if variants.len() > extra {
            break;
        }
        let code = strip_fence(&text);
        if code.trim().is_empty() || variants.iter().any(|v| v.code() == code) {
            continue;
        }
        variants.push(SourceSnapshot::new(
            code,
            candidate.producer(),
            candidate.mode(),
            candidate.step(),
        ));
    }

    let cases = (0..constraints.len())
        .map(|k| {
            let body = test_texts
                .iter()
                .find(|(n, _)| *n == k + 1)
                .map(|(_, b)| strip_fence(b).trim_end().to_string())
                .unwrap_or_else(|| smoke_body(candidate.code()));
            TestCase {
                name: format!("{TEST_PREFIX}c{}", k + 1),
                constraint: k,
                body,
            }
        })
        .collect();
    Synthesis {
        variants,
        suite: TestSuite { cases, smoke: false },
    }
}

/// Runs the suite on every variant, at most `parallelism` at a time. A
/// runner failure marks that variant's row all-fail.
pub fn validate(
    variants: &[SourceSnapshot],
    suite: &TestSuite,
    runner: &dyn TestRunner,
    parallelism: usize,
) -> ExecVerdict {
    let n_tests = suite.cases.len();
    let mut matrix: Vec<Vec<bool>> = vec![Vec::new(); variants.len()];
    let width = parallelism.max(1);
    let indexed: Vec<(usize, &SourceSnapshot)> = variants.iter().enumerate().collect();
    for chunk in indexed.chunks(width) {
        let rows: Vec<(usize, Vec<bool>)> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&(i, v)| {
                    s.spawn(move || {
                        let row = match runner.run(i, v, suite) {
                            Ok(mut r) => {
                                r.resize(n_tests, false);
                                r
                            }
                            Err(_) => vec![false; n_tests],
                        };
                        (i, row)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("runner thread panicked"))
                .collect()
        });
        for (i, row) in rows {
            matrix[i] = row;
        }
    }
    verdict_from_matrix(variants, matrix, n_tests)
}

/// Assembles a verdict from a filled matrix.
pub fn verdict_from_matrix(variants: &[SourceSnapshot], matrix: Vec<Vec<bool>>, n_tests: usize) -> ExecVerdict {
    let passing: Vec<usize> = matrix
        .iter()
        .enumerate()
        .filter(|(_, row)| row.iter().all(|&p| p))
        .map(|(i, _)| i)
        .collect();
    let selected = passing
        .iter()
        .copied()
        .min_by_key(|&i| (strsim::levenshtein(variants[i].code(), variants[0].code()), i));
    ExecVerdict {
        accepted: selected.is_some(),
        variants_tried: variants.len(),
        tests_generated: n_tests,
        matrix,
        selected,
    }
}

/// Everything one semantic evaluation produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evaluation {
    pub points: Vec<ModificationPoint>,
    pub constraints: Vec<SemanticConstraint>,
    pub synthesis: Synthesis,
    pub verdict: ExecVerdict,
}

impl Evaluation {
    /// The variant to ship when accepted.
    pub fn shipped(&self) -> Option<&SourceSnapshot> {
        self.verdict.selected.map(|i| &self.synthesis.variants[i])
    }
}

#[derive(Debug, Clone)]
pub struct TestGenAgent {
    pub templates: PromptTemplates,
    pub variant_count: usize,
    pub parallelism: usize,
}

impl Default for TestGenAgent {
    fn default() -> Self {
        Self {
            templates: PromptTemplates::builtin(),
            variant_count: 3,
            parallelism: 1,
        }
    }
}

impl TestGenAgent {
    pub fn evaluate(
        &self,
        candidate: &SourceSnapshot,
        provider: &dyn GenerationProvider,
        runner: &dyn TestRunner,
        temperature: f64,
        rng: &mut dyn RngCore,
    ) -> Evaluation {
        let mut gen = || GenSettings {
            temperature,
            seed: rng.next_u64(),
        };
        let points = summarize(candidate, provider, &self.templates, gen());
        let constraints = derive_constraints(&points, provider, &self.templates, gen());
        let synthesis = synthesize(
            &constraints,
            candidate,
            provider,
            &self.templates,
            self.variant_count,
            gen(),
        );
        let verdict = validate(&synthesis.variants, &synthesis.suite, runner, self.parallelism);
        Evaluation {
            points,
            constraints,
            synthesis,
            verdict,
        }
    }
}
