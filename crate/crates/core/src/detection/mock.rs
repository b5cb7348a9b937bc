use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{DetectionReport, Detector, DetectorError, UbFinding};

/// One scripted report: either a bare count (findings labelled `unknown`)
/// or an explicit category list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReport {
    Count(usize),
    Detailed {
        #[serde(default)]
        findings: Vec<String>,
        #[serde(default = "default_true")]
        compiled: bool,
    },
}

fn default_true() -> bool {
    true
}

impl MockReport {
    pub fn categories(cats: &[&str]) -> Self {
        MockReport::Detailed {
            findings: cats.iter().map(|s| s.to_string()).collect(),
            compiled: true,
        }
    }

    fn to_report(&self) -> DetectionReport {
        let (cats, compiled): (Vec<String>, bool) = match self {
            MockReport::Count(n) => (vec!["unknown".to_string(); *n], true),
            MockReport::Detailed { findings, compiled } => (findings.clone(), *compiled),
        };
        let mut raw = String::new();
        if !compiled {
            raw.push_str("error[E0000]: mock compile failure\nerror: could not compile `candidate`\n");
        }
        let findings = cats
            .into_iter()
            .map(|category| {
                let _ = writeln!(raw, "error: Undefined Behavior: [mock] {category}");
                UbFinding {
                    message: format!("[mock] {category}"),
                    category,
                    location: None,
                }
            })
            .collect();
        DetectionReport::new(findings, compiled, raw)
    }
}

/// Content rule: when the code contains every marker, report `report`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockDetectorRule {
    pub contains: Vec<String>,
    pub report: MockReport,
}

/// On-disk form of a mock detector.
///
/// With a `script`, reports are replayed one per call in order and the
/// detector fails once the script runs out. Otherwise `rules` are matched
/// against the code (first match wins), then `default`; a miss with no
/// default is a detector failure.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockDetectorScript {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<Vec<MockReport>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rules: Vec<MockDetectorRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<MockReport>,
}

#[derive(Debug)]
pub struct MockDetector {
    queue: Option<Mutex<VecDeque<MockReport>>>,
    rules: Vec<MockDetectorRule>,
    default: Option<MockReport>,
}

impl MockDetector {
    pub fn scripted(reports: impl IntoIterator<Item = MockReport>) -> Self {
        Self {
            queue: Some(Mutex::new(reports.into_iter().collect())),
            rules: Vec::new(),
            default: None,
        }
    }

    pub fn counts(counts: &[usize]) -> Self {
        Self::scripted(counts.iter().map(|&n| MockReport::Count(n)))
    }

    pub fn by_content(rules: Vec<MockDetectorRule>, default: Option<MockReport>) -> Self {
        Self {
            queue: None,
            rules,
            default,
        }
    }

    pub fn from_script(script: MockDetectorScript) -> Self {
        Self {
            queue: script.script.map(|s| Mutex::new(s.into())),
            rules: script.rules,
            default: script.default,
        }
    }

    pub fn load(path: &Path) -> Result<Self, DetectorError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DetectorError::Unavailable(format!("{}: {e}", path.display())))?;
        let script: MockDetectorScript =
            serde_json::from_str(&text).map_err(|e| DetectorError::Unavailable(format!("{}: {e}", path.display())))?;
        Ok(Self::from_script(script))
    }
}

impl Detector for MockDetector {
    fn detect(&self, code: &str) -> Result<DetectionReport, DetectorError> {
        if let Some(queue) = &self.queue {
            let mut q = queue.lock().expect("mock detector lock");
            return q
                .pop_front()
                .map(|r| r.to_report())
                .ok_or_else(|| DetectorError::Unavailable("mock script exhausted".into()));
        }
        self.rules
            .iter()
            .find(|r| r.contains.iter().all(|m| code.contains(m.as_str())))
            .map(|r| &r.report)
            .or(self.default.as_ref())
            .map(MockReport::to_report)
            .ok_or_else(|| DetectorError::Unavailable("no mock rule matched".into()))
    }
}
