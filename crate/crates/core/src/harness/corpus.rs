use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{backends_for, HarnessConfig, HarnessError};
use crate::agents::{KbOverlay, KnowledgeBase, KnowledgeEntry, KnowledgeStore};
use crate::fsm::{Outcome, RepairSession, StateId, TraceDocument};

pub const REPORT_FILE: &str = "report.json";
pub const TIMING_FILE: &str = "timing.json";
const TRACE_SUFFIX: &str = ".trace.json";
const REPAIRED_SUFFIX: &str = ".repaired.rs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub sample: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Final snapshot detected clean.
    pub passed: bool,
    /// Final snapshot accepted by semantic validation.
    pub accepted: bool,
}

/// Aggregate over a corpus. Wall times live in [`CorpusTiming`] so this
/// value is reproducible run to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusResult {
    pub samples: Vec<SampleResult>,
    pub pass_rate: f64,
    pub exec_rate: f64,
    pub mean_agent_invocations: f64,
    pub mean_hallucination_score: f64,
    pub total_rollbacks: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn fraction(hits: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        hits as f64 / n as f64
    }
}

impl CorpusResult {
    pub fn from_samples(samples: Vec<SampleResult>) -> Self {
        let n = samples.len();
        let outcomes = || samples.iter().filter_map(|s| s.outcome.as_ref());
        Self {
            pass_rate: fraction(samples.iter().filter(|s| s.passed).count(), n),
            exec_rate: fraction(samples.iter().filter(|s| s.accepted).count(), n),
            mean_agent_invocations: mean(outcomes().map(|o| o.metrics.agent_invocations as f64)),
            mean_hallucination_score: mean(outcomes().map(|o| o.hallucination_score)),
            total_rollbacks: outcomes().map(|o| o.metrics.rollbacks).sum(),
            samples,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusTiming {
    pub per_sample_secs: BTreeMap<String, f64>,
    pub mean_wall_time_secs: f64,
}

#[derive(Debug, Clone)]
pub struct CorpusRun {
    pub result: CorpusResult,
    pub timing: CorpusTiming,
    pub report_path: PathBuf,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct FileRun {
    pub outcome: Outcome,
    pub trace_path: PathBuf,
    pub repaired_path: Option<PathBuf>,
}

fn sample_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// `*.rs` files directly inside `dir`, excluding earlier repair outputs,
/// sorted by name.
pub fn collect_samples(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))? {
        let path = entry.map_err(|e| HarnessError::io(dir, e))?.path();
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        if path.is_file() && name.ends_with(".rs") && !name.ends_with(REPAIRED_SUFFIX) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn open_kb(cfg: &HarnessConfig) -> Result<KnowledgeBase, HarnessError> {
    match &cfg.kb_path {
        Some(p) => KnowledgeBase::open(p).map_err(|e| HarnessError::Setup(format!("{}: {e}", p.display()))),
        None => Ok(KnowledgeBase::in_memory()),
    }
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

struct SampleRun {
    outcome: Outcome,
    trace_path: PathBuf,
    repaired_path: Option<PathBuf>,
}

fn run_sample(
    path: &Path,
    cfg: &HarnessConfig,
    kb: Arc<dyn KnowledgeStore>,
    out_dir: &Path,
) -> Result<SampleRun, HarnessError> {
    let code = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let backends = backends_for(path, cfg)?;
    let mut session = RepairSession::new(&code, cfg.session.clone())
        .map_err(|e| HarnessError::Setup(format!("{}: {e}", path.display())))?
        .with_kb(kb);
    let outcome = session
        .run(&backends.as_backends())
        .map_err(|e| HarnessError::Setup(format!("{}: {e}", path.display())))?;

    let name = sample_name(path);
    let trace_path = out_dir.join(format!("{name}{TRACE_SUFFIX}"));
    write(&trace_path, &session.trace_document().to_json())?;
    let repaired_path = if outcome.terminal == StateId::QF && cfg.write_repaired {
        let p = path.with_file_name(format!("{name}{REPAIRED_SUFFIX}"));
        write(&p, session.working_snapshot().code())?;
        Some(p)
    } else {
        None
    };
    Ok(SampleRun {
        outcome,
        trace_path,
        repaired_path,
    })
}

fn out_dir_for(input: &Path, cfg: &HarnessConfig, is_dir: bool) -> Result<PathBuf, HarnessError> {
    let dir = match &cfg.trace_dir {
        Some(d) => d.clone(),
        None if is_dir => input.to_path_buf(),
        None => input.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    if !dir.as_os_str().is_empty() {
        std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    }
    Ok(dir)
}

/// Repairs one file end to end and writes its trace.
pub fn repair_file(path: &Path, cfg: &HarnessConfig) -> Result<FileRun, HarnessError> {
    cfg.session.validate()?;
    if !path.is_file() {
        return Err(HarnessError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ));
    }
    let out_dir = out_dir_for(path, cfg, false)?;
    let kb: Arc<dyn KnowledgeStore> = Arc::new(open_kb(cfg)?);
    let run = run_sample(path, cfg, kb, &out_dir)?;
    Ok(FileRun {
        outcome: run.outcome,
        trace_path: run.trace_path,
        repaired_path: run.repaired_path,
    })
}

/// Repairs every sample in `dir` with a bounded worker pool. Per-sample
/// failures are recorded, not propagated. Each session sees the knowledge
/// base as it was when the run started plus its own records; new records
/// are committed in sample order afterwards.
pub fn repair_corpus(dir: &Path, cfg: &HarnessConfig) -> Result<CorpusRun, HarnessError> {
    cfg.session.validate()?;
    let samples = collect_samples(dir)?;
    if samples.is_empty() {
        return Err(HarnessError::EmptyCorpus(dir.to_path_buf()));
    }
    let out_dir = out_dir_for(dir, cfg, true)?;
    let kb = open_kb(cfg)?;
    let base = Arc::new(kb.entries());

    type Slot = Option<(SampleResult, f64, Vec<KnowledgeEntry>)>;
    let slots: Mutex<Vec<Slot>> = Mutex::new(vec![None; samples.len()]);
    let next = AtomicUsize::new(0);
    let workers = cfg.parallel.clamp(1, samples.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(path) = samples.get(i) else { break };
                let overlay = Arc::new(KbOverlay::new(Arc::clone(&base)));
                let started = std::time::Instant::now();
                let result = run_sample(path, cfg, overlay.clone(), &out_dir);
                let secs = started.elapsed().as_secs_f64();
                let name = sample_name(path);
                let sample = match result {
                    Ok(run) => SampleResult {
                        sample: name,
                        passed: run.outcome.final_clean,
                        accepted: run.outcome.terminal == StateId::QF,
                        outcome: Some(run.outcome),
                        error: None,
                    },
                    Err(e) => {
                        tracing::warn!(sample = %name, error = %e, "sample failed");
                        SampleResult {
                            sample: name,
                            outcome: None,
                            error: Some(e.to_string()),
                            passed: false,
                            accepted: false,
                        }
                    }
                };
                slots.lock().expect("slot lock")[i] = Some((sample, secs, overlay.local()));
            });
        }
    });

    let mut results = Vec::with_capacity(samples.len());
    let mut timing = CorpusTiming::default();
    for (sample, secs, local) in slots.into_inner().expect("slot lock").into_iter().flatten() {
        for entry in local {
            if let Err(e) = kb.record(entry) {
                tracing::warn!(error = %e, "could not persist knowledge entry");
            }
        }
        timing.per_sample_secs.insert(sample.sample.clone(), secs);
        results.push(sample);
    }
    timing.mean_wall_time_secs = mean(timing.per_sample_secs.values().copied());
    let result = CorpusResult::from_samples(results);
    let report_path = out_dir.join(REPORT_FILE);
    write(&report_path, &result.to_json())?;
    write(
        &out_dir.join(TIMING_FILE),
        &serde_json::to_string_pretty(&timing).expect("timing serializes"),
    )?;
    Ok(CorpusRun {
        result,
        timing,
        report_path,
        out_dir,
    })
}

/// Pass and exec rates recomputed from the trace files of `result`'s
/// samples. Samples without a trace count as failures.
pub fn recompute_from_traces(out_dir: &Path, result: &CorpusResult) -> (f64, f64) {
    let mut passed = 0;
    let mut accepted = 0;
    for s in &result.samples {
        let path = out_dir.join(format!("{}{TRACE_SUFFIX}", s.sample));
        let Some(outcome) = std::fs::read_to_string(&path)
            .ok()
            .and_then(|t| TraceDocument::from_json(&t).ok())
            .and_then(|d| d.outcome)
        else {
            continue;
        };
        passed += usize::from(outcome.final_clean);
        accepted += usize::from(outcome.terminal == StateId::QF);
    }
    let n = result.samples.len();
    (fraction(passed, n), fraction(accepted, n))
}

pub fn render_table(result: &CorpusResult, timing: Option<&CorpusTiming>) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<28} {:<6} {:>5} {:>5} {:>6} {:>5} {:>9} {:>8}  reason",
        "sample", "state", "pass", "exec", "agents", "rb", "halluc", "time/s"
    );
    for s in &result.samples {
        let secs = timing
            .and_then(|t| t.per_sample_secs.get(&s.sample))
            .map_or("-".to_string(), |v| format!("{v:.2}"));
        match &s.outcome {
            Some(o) => {
                let _ = writeln!(
                    out,
                    "{:<28} {:<6} {:>5} {:>5} {:>6} {:>5} {:>9.4} {:>8}  {}",
                    s.sample,
                    o.terminal.to_string(),
                    if s.passed { "yes" } else { "no" },
                    if s.accepted { "yes" } else { "no" },
                    o.metrics.agent_invocations,
                    o.metrics.rollbacks,
                    o.hallucination_score,
                    secs,
                    o.reason
                );
            }
            None => {
                let _ = writeln!(
                    out,
                    "{:<28} {:<6} {:>5} {:>5} {:>6} {:>5} {:>9} {:>8}  {}",
                    s.sample,
                    "error",
                    "no",
                    "no",
                    "-",
                    "-",
                    "-",
                    secs,
                    s.error.as_deref().unwrap_or("")
                );
            }
        }
    }
    let _ = writeln!(
        out,
        "pass rate {:.1}%  exec rate {:.1}%  mean agents {:.2}  mean hallucination {:.4}  rollbacks {}",
        result.pass_rate * 100.0,
        result.exec_rate * 100.0,
        result.mean_agent_invocations,
        result.mean_hallucination_score,
        result.total_rollbacks
    );
    if let Some(t) = timing {
        let _ = writeln!(out, "mean wall time {:.3}s", t.mean_wall_time_secs);
    }
    out
}
