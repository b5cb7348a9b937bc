use std::path::PathBuf;
use std::process::Command;
use std::time::Duration;

use super::{DetectionReport, Detector, DetectorError, DiagnosticParser};
use crate::process::run_with_timeout;

#[derive(Debug, Clone)]
pub struct MiriConfig {
    /// Rustup toolchain passed as `+<toolchain>`; `None` uses the default.
    pub toolchain: Option<String>,
    pub timeout: Duration,
    /// Value for `MIRIFLAGS`.
    pub flags: String,
    /// Shared target directory so repeated runs reuse the sysroot build.
    pub target_dir: Option<PathBuf>,
}

impl Default for MiriConfig {
    fn default() -> Self {
        Self {
            toolchain: Some("nightly".into()),
            timeout: Duration::from_secs(60),
            flags: String::new(),
            target_dir: None,
        }
    }
}

/// Runs `cargo miri run` on a throwaway single-file binary project.
#[derive(Debug, Clone, Default)]
pub struct MiriDetector {
    config: MiriConfig,
    parser: DiagnosticParser,
}

impl MiriDetector {
    pub fn new(config: MiriConfig) -> Self {
        Self {
            config,
            parser: DiagnosticParser::builtin(),
        }
    }

    pub fn with_parser(mut self, parser: DiagnosticParser) -> Self {
        self.parser = parser;
        self
    }

    fn cargo(&self) -> Command {
        let mut cmd = Command::new("cargo");
        if let Some(tc) = &self.config.toolchain {
            cmd.arg(format!("+{tc}"));
        }
        cmd
    }
}

/// Whether `cargo miri` can be invoked with the given toolchain.
pub fn miri_available(toolchain: Option<&str>) -> bool {
    let mut cmd = Command::new("cargo");
    if let Some(tc) = toolchain {
        cmd.arg(format!("+{tc}"));
    }
    cmd.args(["miri", "--version"]);
    run_with_timeout(&mut cmd, Duration::from_secs(30)).is_ok_and(|o| o.success())
}

const MANIFEST: &str =
    "[package]\nname = \"akira_candidate\"\nversion = \"0.0.0\"\nedition = \"2021\"\n\n[workspace]\n";

fn write_project(code: &str) -> std::io::Result<tempfile::TempDir> {
    let dir = tempfile::Builder::new().prefix("akira-miri-").tempdir()?;
    std::fs::create_dir(dir.path().join("src"))?;
    std::fs::write(dir.path().join("Cargo.toml"), MANIFEST)?;
    let mut src = code.to_string();
    if !src.contains("fn main") {
        src.push_str("\nfn main() {}\n");
    }
    std::fs::write(dir.path().join("src/main.rs"), src)?;
    Ok(dir)
}

fn toolchain_missing(stderr: &str) -> bool {
    stderr.contains("no such command: `miri`")
        || stderr.contains("is not available for the")
        || stderr.contains("is not installed")
        || stderr.contains("toolchain") && stderr.contains("not installed")
}

impl Detector for MiriDetector {
    fn detect(&self, code: &str) -> Result<DetectionReport, DetectorError> {
        let project = write_project(code).map_err(|e| DetectorError::Unavailable(e.to_string()))?;
        let mut cmd = self.cargo();
        cmd.args(["miri", "run", "--quiet"])
            .current_dir(project.path())
            .env("MIRIFLAGS", &self.config.flags);
        if let Some(t) = &self.config.target_dir {
            cmd.env("CARGO_TARGET_DIR", t);
        }
        tracing::debug!(dir = %project.path().display(), "running miri");
        let out =
            run_with_timeout(&mut cmd, self.config.timeout).map_err(|e| DetectorError::Unavailable(e.to_string()))?;
        if out.timed_out() {
            return Err(DetectorError::Unavailable(format!(
                "miri timed out after {}s",
                self.config.timeout.as_secs()
            )));
        }
        if toolchain_missing(&out.stderr) {
            return Err(DetectorError::Unavailable(out.stderr.trim().to_string()));
        }
        let compiled = !out.stderr.contains("could not compile");
        let findings = if compiled {
            self.parser.parse(&out.stderr)
        } else {
            Vec::new()
        };
        // a failing run that neither compiled badly, hit UB, nor panicked
        // means miri itself did not run
        if !out.success() && compiled && findings.is_empty() && !out.stderr.contains("panicked") {
            return Err(DetectorError::Unavailable(format!(
                "miri failed: {}",
                out.stderr.trim()
            )));
        }
        Ok(DetectionReport::new(findings, compiled, out.stderr))
    }
}
