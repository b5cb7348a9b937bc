use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{repair_corpus, CorpusResult, HarnessConfig, HarnessError};

/// (name, temperature, rollback) for the three comparison pipelines.
pub const PIPELINES: [(&str, f64, bool); 3] = [
    ("low-temp", 0.2, false),
    ("high-temp", 1.0, false),
    ("high-temp+rollback", 1.0, true),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub name: String,
    pub temperature: f64,
    pub rollback: bool,
    /// Fraction of samples accepted.
    pub success_rate: f64,
    pub mean_hallucination_score: f64,
    pub mean_agent_invocations: f64,
    pub rollbacks: usize,
    pub corpus: CorpusResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub pipelines: Vec<PipelineResult>,
}

impl ExperimentReport {
    pub fn pipeline(&self, name: &str) -> Option<&PipelineResult> {
        self.pipelines.iter().find(|p| p.name == name)
    }
}

/// Runs the corpus once per pipeline. Traces for each pipeline go to a
/// subdirectory named after it; `experiment.json` sits beside them.
pub fn experiment_pipelines(dir: &Path, cfg: &HarnessConfig) -> Result<ExperimentReport, HarnessError> {
    let root = cfg.trace_dir.clone().unwrap_or_else(|| dir.join("experiment"));
    let mut pipelines = Vec::new();
    for (name, temperature, rollback) in PIPELINES {
        let mut c = cfg.clone();
        c.session.temperature = temperature;
        c.session.rollback_enabled = rollback;
        c.trace_dir = Some(root.join(name));
        c.write_repaired = false;
        let run = repair_corpus(dir, &c)?;
        let r = run.result;
        pipelines.push(PipelineResult {
            name: name.to_string(),
            temperature,
            rollback,
            success_rate: r.exec_rate,
            mean_hallucination_score: r.mean_hallucination_score,
            mean_agent_invocations: r.mean_agent_invocations,
            rollbacks: r.total_rollbacks,
            corpus: r,
        });
    }
    let report = ExperimentReport { pipelines };
    let path = root.join("experiment.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report).expect("report serializes"))
        .map_err(|e| HarnessError::io(&path, e))?;
    Ok(report)
}

pub fn render_experiment(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<20} {:>5} {:>9} {:>8} {:>14} {:>12} {:>10}",
        "pipeline", "temp", "rollback", "success", "hallucination", "invocations", "rollbacks"
    );
    for p in &report.pipelines {
        let _ = writeln!(
            out,
            "{:<20} {:>5.1} {:>9} {:>7.1}% {:>14.4} {:>12.2} {:>10}",
            p.name,
            p.temperature,
            if p.rollback { "on" } else { "off" },
            p.success_rate * 100.0,
            p.mean_hallucination_score,
            p.mean_agent_invocations,
            p.rollbacks
        );
    }
    out
}
