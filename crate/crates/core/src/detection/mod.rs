//! UB detection behind a single [`Detector`] interface.
//!
//! [`MiriDetector`] shells out to the Miri interpreter and parses its
//! diagnostics; [`MockDetector`] replays scripted reports for offline runs.

mod miri;
mod mock;
mod parse;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use miri::{miri_available, MiriConfig, MiriDetector};
pub use mock::{MockDetector, MockDetectorRule, MockDetectorScript, MockReport};
pub use parse::{parse_diagnostics, DiagnosticParser, RuleSyntaxError, DEFAULT_UB_RULES};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    pub file: String,
    pub line: u32,
    pub column: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UbFinding {
    pub category: String,
    pub message: String,
    pub location: Option<Location>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub ub_count: usize,
    pub findings: Vec<UbFinding>,
    pub compiled: bool,
    pub raw_output: String,
}

impl DetectionReport {
    pub fn new(findings: Vec<UbFinding>, compiled: bool, raw_output: impl Into<String>) -> Self {
        Self {
            ub_count: findings.len(),
            findings,
            compiled,
            raw_output: raw_output.into(),
        }
    }

    pub fn clean() -> Self {
        Self::new(Vec::new(), true, "")
    }

    /// Compiles and reports no UB.
    pub fn is_clean(&self) -> bool {
        self.compiled && self.ub_count == 0
    }

    /// Most frequent category; ties go to the one seen first.
    pub fn dominant_category(&self) -> Option<&str> {
        let mut best: Option<(&str, usize)> = None;
        for f in &self.findings {
            let n = self.findings.iter().filter(|g| g.category == f.category).count();
            if best.is_none_or(|(_, m)| n > m) {
                best = Some((f.category.as_str(), n));
            }
        }
        best.map(|(c, _)| c)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DetectorError {
    #[error("detector unavailable: {0}")]
    Unavailable(String),
}

pub trait Detector: Send + Sync {
    fn detect(&self, code: &str) -> Result<DetectionReport, DetectorError>;
}

impl<D: Detector + ?Sized> Detector for &D {
    fn detect(&self, code: &str) -> Result<DetectionReport, DetectorError> {
        (**self).detect(code)
    }
}

impl<D: Detector + ?Sized> Detector for Box<D> {
    fn detect(&self, code: &str) -> Result<DetectionReport, DetectorError> {
        (**self).detect(code)
    }
}
