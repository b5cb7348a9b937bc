//! Single-file, corpus and experiment runs on top of [`RepairSession`].
//!
//! [`RepairSession`]: crate::fsm::RepairSession

mod corpus;
mod experiment;

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{Detector, MiriConfig, MiriDetector, MockDetector, MockDetectorScript};
use crate::fsm::{parse_key_values, ConfigError, SessionConfig};
use crate::provider::{GenerationProvider, HttpProvider, MockProvider, MockScript};
use crate::validation::{CargoTestRunner, MockRunner, MockRunnerScript, TestRunner};

pub use corpus::{
    collect_samples, recompute_from_traces, render_table, repair_corpus, repair_file, CorpusResult, CorpusRun,
    CorpusTiming, FileRun, SampleResult, REPORT_FILE, TIMING_FILE,
};
pub use experiment::{experiment_pipelines, render_experiment, ExperimentReport, PipelineResult, PIPELINES};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no samples found in {0}")]
    EmptyCorpus(PathBuf),
    #[error("{0}")]
    Setup(String),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Mock,
    Miri,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunnerKind {
    Mock,
    Cargo,
}

macro_rules! kind_from_str {
    ($t:ty, $($s:literal => $v:expr),+) => {
        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s.trim() {
                    $($s => Ok($v),)+
                    other => Err(format!("unknown value `{other}`")),
                }
            }
        }
    };
}

kind_from_str!(ProviderKind, "mock" => ProviderKind::Mock, "http" => ProviderKind::Http);
kind_from_str!(DetectorKind, "mock" => DetectorKind::Mock, "miri" => DetectorKind::Miri);
kind_from_str!(RunnerKind, "mock" => RunnerKind::Mock, "cargo" => RunnerKind::Cargo);

/// Everything a run needs besides the input path.
#[derive(Debug, Clone)]
pub struct HarnessConfig {
    pub session: SessionConfig,
    pub provider: ProviderKind,
    pub detector: DetectorKind,
    /// `None` picks mock with the mock detector and cargo otherwise.
    pub runner: Option<RunnerKind>,
    pub parallel: usize,
    /// Where traces and reports go; defaults to the input's directory.
    pub trace_dir: Option<PathBuf>,
    /// JSON-lines knowledge base shared across runs.
    pub kb_path: Option<PathBuf>,
    pub write_repaired: bool,
    pub detector_timeout: Duration,
    pub test_timeout: Duration,
    pub miri_toolchain: Option<String>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            session: SessionConfig::default(),
            provider: ProviderKind::Mock,
            detector: DetectorKind::Mock,
            runner: None,
            parallel: 1,
            trace_dir: None,
            kb_path: None,
            write_repaired: true,
            detector_timeout: Duration::from_secs(60),
            test_timeout: Duration::from_secs(120),
            miri_toolchain: Some("nightly".into()),
        }
    }
}

fn bad(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

impl HarnessConfig {
    /// Applies one `key = value` pair; session keys are forwarded.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let secs = |v: &str| {
            v.parse::<u64>()
                .map(Duration::from_secs)
                .map_err(|e| bad(key, e.to_string()))
        };
        match key {
            "provider" => self.provider = value.parse().map_err(|e: String| bad(key, e))?,
            "detector" => self.detector = value.parse().map_err(|e: String| bad(key, e))?,
            "runner" => self.runner = Some(value.parse().map_err(|e: String| bad(key, e))?),
            "parallel" => {
                self.parallel = value
                    .parse()
                    .map_err(|e: std::num::ParseIntError| bad(key, e.to_string()))?;
                if self.parallel == 0 {
                    return Err(bad(key, "must be at least 1"));
                }
            }
            "trace_dir" => self.trace_dir = Some(PathBuf::from(value)),
            "kb_path" => self.kb_path = Some(PathBuf::from(value)),
            "write_repaired" => {
                self.write_repaired = value
                    .parse()
                    .map_err(|e: std::str::ParseBoolError| bad(key, e.to_string()))?
            }
            "detector_timeout_secs" => self.detector_timeout = secs(value)?,
            "test_timeout_secs" => self.test_timeout = secs(value)?,
            "miri_toolchain" => self.miri_toolchain = (!value.is_empty()).then(|| value.to_string()),
            _ => self.session.set(key, value)?,
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::default();
        for (k, v) in parse_key_values(&text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn runner_kind(&self) -> RunnerKind {
        self.runner.unwrap_or(match self.detector {
            DetectorKind::Mock => RunnerKind::Mock,
            DetectorKind::Miri => RunnerKind::Cargo,
        })
    }
}

/// Per-sample scripted backends, stored next to the sample as
/// `<sample>.mock.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleMocks {
    #[serde(default)]
    pub provider: MockScript,
    #[serde(default)]
    pub detector: Option<MockDetectorScript>,
    #[serde(default)]
    pub runner: MockRunnerScript,
}

pub fn mock_sidecar(sample: &Path) -> PathBuf {
    sample.with_extension("mock.json")
}

/// Owned backends for one session.
pub struct OwnedBackends {
    pub detector: Box<dyn Detector>,
    pub provider: Box<dyn GenerationProvider>,
    pub runner: Box<dyn TestRunner>,
}

impl OwnedBackends {
    pub fn as_backends(&self) -> crate::fsm::Backends<'_> {
        crate::fsm::Backends {
            detector: &*self.detector,
            provider: &*self.provider,
            runner: &*self.runner,
        }
    }
}

/// Builds the configured backends for `sample`. Mock parts come from the
/// sample's sidecar file.
pub fn backends_for(sample: &Path, cfg: &HarnessConfig) -> Result<OwnedBackends, HarnessError> {
    let needs_sidecar = cfg.provider == ProviderKind::Mock
        || cfg.detector == DetectorKind::Mock
        || cfg.runner_kind() == RunnerKind::Mock;
    let mocks = if needs_sidecar {
        let path = mock_sidecar(sample);
        match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str::<SampleMocks>(&text)
                .map_err(|e| HarnessError::Setup(format!("{}: {e}", path.display())))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => SampleMocks::default(),
            Err(e) => return Err(HarnessError::io(&path, e)),
        }
    } else {
        SampleMocks::default()
    };

    let detector: Box<dyn Detector> = match cfg.detector {
        DetectorKind::Mock => {
            let script = mocks.detector.ok_or_else(|| {
                HarnessError::Setup(format!("{}: no detector script", mock_sidecar(sample).display()))
            })?;
            Box::new(MockDetector::from_script(script))
        }
        DetectorKind::Miri => Box::new(MiriDetector::new(MiriConfig {
            toolchain: cfg.miri_toolchain.clone(),
            timeout: cfg.detector_timeout,
            ..MiriConfig::default()
        })),
    };
    let provider: Box<dyn GenerationProvider> = match cfg.provider {
        ProviderKind::Mock => Box::new(MockProvider::new(mocks.provider)),
        ProviderKind::Http => Box::new(HttpProvider::from_env().map_err(|e| HarnessError::Setup(e.to_string()))?),
    };
    let runner: Box<dyn TestRunner> = match cfg.runner_kind() {
        RunnerKind::Mock => Box::new(MockRunner::new(mocks.runner)),
        RunnerKind::Cargo => Box::new(CargoTestRunner {
            timeout: cfg.test_timeout,
            ..CargoTestRunner::default()
        }),
    };
    Ok(OwnedBackends {
        detector,
        provider,
        runner,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_mixes_harness_and_session_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("akira.conf");
        std::fs::write(
            &path,
            "provider = mock\ndetector = miri\nparallel = 4\nmax_transitions = 7\ntemperature = 1.0\n",
        )
        .unwrap();
        let cfg = HarnessConfig::load(&path).unwrap();
        assert_eq!(cfg.detector, DetectorKind::Miri);
        assert_eq!(cfg.runner_kind(), RunnerKind::Cargo);
        assert_eq!(cfg.parallel, 4);
        assert_eq!(cfg.session.max_transitions, 7);
        assert_eq!(cfg.session.temperature, 1.0);

        let mut cfg = HarnessConfig::default();
        assert!(cfg.set("provider", "carrier-pigeon").is_err());
        assert!(cfg.set("parallel", "0").is_err());
        assert!(cfg.set("nonsense", "1").is_err());
    }

    #[test]
    fn sidecar_path() {
        assert_eq!(mock_sidecar(Path::new("c/uaf.rs")), PathBuf::from("c/uaf.mock.json"));
    }
}
