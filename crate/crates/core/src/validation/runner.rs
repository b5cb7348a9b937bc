use std::path::PathBuf;
use std::process::Command;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{TestSuite, GENERATED_MODULE};
use crate::fsm::SourceSnapshot;
use crate::process::run_with_timeout;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RunnerError {
    #[error("test runner unavailable: {0}")]
    Unavailable(String),
}

/// Executes a generated suite against one variant and reports one
/// pass/fail flag per test case, in suite order.
pub trait TestRunner: Send + Sync {
    fn run(&self, index: usize, variant: &SourceSnapshot, suite: &TestSuite) -> Result<Vec<bool>, RunnerError>;
}

impl<R: TestRunner + ?Sized> TestRunner for &R {
    fn run(&self, index: usize, variant: &SourceSnapshot, suite: &TestSuite) -> Result<Vec<bool>, RunnerError> {
        (**self).run(index, variant, suite)
    }
}

impl<R: TestRunner + ?Sized> TestRunner for Box<R> {
    fn run(&self, index: usize, variant: &SourceSnapshot, suite: &TestSuite) -> Result<Vec<bool>, RunnerError> {
        (**self).run(index, variant, suite)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRunnerRule {
    pub contains: Vec<String>,
    pub pass: bool,
}

/// On-disk mock runner. A `matrix` gives the row for each variant index
/// (missing rows are runner failures). Otherwise `rules` are matched
/// against the variant code and decide all-pass or all-fail, falling back
/// to `default_pass`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRunnerScript {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<bool>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rules: Vec<MockRunnerRule>,
    #[serde(default = "yes")]
    pub default_pass: bool,
}

fn yes() -> bool {
    true
}

impl Default for MockRunnerScript {
    fn default() -> Self {
        Self {
            matrix: None,
            rules: Vec::new(),
            default_pass: true,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockRunner {
    script: MockRunnerScript,
}

impl MockRunner {
    pub fn new(script: MockRunnerScript) -> Self {
        Self { script }
    }

    pub fn always(pass: bool) -> Self {
        Self::new(MockRunnerScript {
            default_pass: pass,
            ..MockRunnerScript::default()
        })
    }

    pub fn matrix(rows: Vec<Vec<bool>>) -> Self {
        Self::new(MockRunnerScript {
            matrix: Some(rows),
            ..MockRunnerScript::default()
        })
    }
}

impl TestRunner for MockRunner {
    fn run(&self, index: usize, variant: &SourceSnapshot, suite: &TestSuite) -> Result<Vec<bool>, RunnerError> {
        let n = suite.cases.len();
        if let Some(matrix) = &self.script.matrix {
            let row = matrix
                .get(index)
                .ok_or_else(|| RunnerError::Unavailable(format!("no scripted row {index}")))?;
            return Ok((0..n).map(|k| row.get(k).copied().unwrap_or(false)).collect());
        }
        let pass = self
            .script
            .rules
            .iter()
            .find(|r| r.contains.iter().all(|m| variant.code().contains(m.as_str())))
            .map_or(self.script.default_pass, |r| r.pass);
        Ok(vec![pass; n])
    }
}

/// Runs the suite with `cargo test` in a scratch project per variant.
#[derive(Debug, Clone)]
pub struct CargoTestRunner {
    pub timeout: Duration,
    pub toolchain: Option<String>,
    pub target_dir: Option<PathBuf>,
}

impl Default for CargoTestRunner {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(120),
            toolchain: None,
            target_dir: None,
        }
    }
}

const MANIFEST: &str = "[package]\nname = \"akira_variant\"\nversion = \"0.0.0\"\nedition = \"2021\"\n\n[workspace]\n";

/// Source file for a variant with the generated test module appended.
pub fn assemble_test_source(variant: &SourceSnapshot, suite: &TestSuite) -> String {
    let mut src = variant.code().to_string();
    if !src.contains("fn main") {
        src.push_str("\n#[allow(dead_code)]\nfn main() {}\n");
    }
    src.push('\n');
    src.push_str(&suite.render());
    src
}

/// Pass flags for each case from `cargo test` output. Cases the harness
/// never reported count as failures.
pub fn parse_test_output(stdout: &str, suite: &TestSuite) -> Vec<bool> {
    suite
        .cases
        .iter()
        .map(|case| {
            let needle = format!("test {GENERATED_MODULE}::{} ... ok", case.name);
            stdout.lines().any(|l| l.trim() == needle)
        })
        .collect()
}

impl TestRunner for CargoTestRunner {
    fn run(&self, _index: usize, variant: &SourceSnapshot, suite: &TestSuite) -> Result<Vec<bool>, RunnerError> {
        let dir = tempfile::Builder::new()
            .prefix("akira-test-")
            .tempdir()
            .map_err(|e| RunnerError::Unavailable(e.to_string()))?;
        let write = |rel: &str, text: &str| {
            std::fs::write(dir.path().join(rel), text).map_err(|e| RunnerError::Unavailable(e.to_string()))
        };
        std::fs::create_dir(dir.path().join("src")).map_err(|e| RunnerError::Unavailable(e.to_string()))?;
        write("Cargo.toml", MANIFEST)?;
        write("src/main.rs", &assemble_test_source(variant, suite))?;

        let mut cmd = Command::new("cargo");
        if let Some(tc) = &self.toolchain {
            cmd.arg(format!("+{tc}"));
        }
        cmd.args(["test", "--", "--test-threads=1"]).current_dir(dir.path());
        if let Some(t) = &self.target_dir {
            cmd.env("CARGO_TARGET_DIR", t);
        }
        let out = run_with_timeout(&mut cmd, self.timeout).map_err(|e| RunnerError::Unavailable(e.to_string()))?;
        if out.timed_out() {
            return Ok(vec![false; suite.cases.len()]);
        }
        Ok(parse_test_output(&out.stdout, suite))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::validation::TestCase;

    fn suite(n: usize) -> TestSuite {
        TestSuite {
            cases: (0..n)
                .map(|k| TestCase {
                    name: format!("akira_gen_c{}", k + 1),
                    constraint: k,
                    body: "assert!(true);".into(),
                })
                .collect(),
            smoke: false,
        }
    }

    #[test]
    fn parses_cargo_test_lines() {
        let out = "\nrunning 3 tests\ntest akira_generated_tests::akira_gen_c1 ... ok\ntest akira_generated_tests::akira_gen_c2 ... FAILED\n";
        assert_eq!(parse_test_output(out, &suite(3)), [true, false, false]);
    }

    #[test]
    fn matrix_runner_pads_and_errors() {
        let r = MockRunner::matrix(vec![vec![true]]);
        let v = SourceSnapshot::initial("x");
        assert_eq!(r.run(0, &v, &suite(2)).unwrap(), [true, false]);
        assert!(r.run(1, &v, &suite(2)).is_err());
    }

    #[test]
    fn rule_runner_matches_code() {
        let r = MockRunner::new(MockRunnerScript {
            matrix: None,
            rules: vec![MockRunnerRule {
                contains: vec!["BROKEN".into()],
                pass: false,
            }],
            default_pass: true,
        });
        assert_eq!(
            r.run(0, &SourceSnapshot::initial("BROKEN"), &suite(2)).unwrap(),
            [false, false]
        );
        assert_eq!(
            r.run(0, &SourceSnapshot::initial("ok"), &suite(2)).unwrap(),
            [true, true]
        );
    }

    #[test]
    fn assembled_source_has_entry_point_and_module() {
        let src = assemble_test_source(&SourceSnapshot::initial("pub fn f() -> u8 { 1 }"), &suite(1));
        assert!(src.contains("fn main() {}"));
        assert!(src.contains(&format!("mod {GENERATED_MODULE}")));
    }
}
