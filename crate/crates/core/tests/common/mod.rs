#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use akira_core::detection::{DetectionReport, Detector, DetectorError, UbFinding};
use akira_core::fsm::SourceSnapshot;
use akira_core::provider::{GenerationProvider, GenerationRequest, GenerationResponse, ProviderError};
use akira_core::validation::{RunnerError, TestRunner, TestSuite};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let p = entry.unwrap().path();
        if p.is_file() {
            std::fs::copy(&p, to.join(p.file_name().unwrap())).unwrap();
        }
    }
}

pub const SEED_PROGRAM: &str = "fn main() {\n    let x = 0;\n    println!(\"{x}\");\n}\n";

/// Answers every repair prompt with a fresh program; everything else is
/// unavailable so selection and validation degrade.
#[derive(Default)]
pub struct FreshProgram {
    next: AtomicU64,
}

impl GenerationProvider for FreshProgram {
    fn id(&self) -> &str {
        "fresh"
    }

    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResponse, ProviderError> {
        if !request.prompt.contains("akira:repair") {
            return Err(ProviderError::Unavailable("offline".into()));
        }
        let n = self.next.fetch_add(1, Ordering::Relaxed) + 1;
        Ok(GenerationResponse {
            text: format!("```rust\nfn main() {{\n    let x = {n};\n    println!(\"{{x}}\");\n}}\n```\n"),
            steps_used: 1,
            provider_id: "fresh".into(),
        })
    }
}

pub const CATEGORIES: [&str; 5] = ["dangling", "static", "func_call", "unaligned", "data_race"];

/// Gives every new program a random report and remembers it. Reports are
/// mostly light, sometimes saturating, occasionally clean.
pub struct RandomDetector {
    rng: Mutex<ChaCha8Rng>,
    seen: Mutex<HashMap<String, DetectionReport>>,
}

impl RandomDetector {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            seen: Mutex::new(HashMap::new()),
        }
    }
}

impl Detector for RandomDetector {
    fn detect(&self, code: &str) -> Result<DetectionReport, DetectorError> {
        let mut seen = self.seen.lock().unwrap();
        if let Some(r) = seen.get(code) {
            return Ok(r.clone());
        }
        let mut rng = self.rng.lock().unwrap();
        let (lo, hi) = match rng.gen_range(0..10) {
            0 => (0, 0),
            1..=3 => (8, 16),
            _ => (0, 2),
        };
        let findings = CATEGORIES
            .iter()
            .flat_map(|c| std::iter::repeat_n(c.to_string(), rng.gen_range(lo..=hi)))
            .map(|category| UbFinding {
                message: format!("[random] {category}"),
                category,
                location: None,
            })
            .collect();
        let r = DetectionReport::new(findings, true, "");
        seen.insert(code.to_string(), r.clone());
        Ok(r)
    }
}

/// A runner that is never reachable.
pub struct DownRunner;

impl TestRunner for DownRunner {
    fn run(&self, _: usize, _: &SourceSnapshot, _: &TestSuite) -> Result<Vec<bool>, RunnerError> {
        Err(RunnerError::Unavailable("down".into()))
    }
}
