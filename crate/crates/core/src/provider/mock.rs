use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{prompt_hash, stages, GenerationProvider, GenerationRequest, GenerationResponse, ProviderError, Stage};

/// Substring rule, optionally limited to a temperature band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    pub contains: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_temperature: Option<f64>,
    pub response: String,
}

impl MockRule {
    fn matches(&self, req: &GenerationRequest) -> bool {
        self.min_temperature.is_none_or(|t| req.temperature >= t)
            && self.max_temperature.is_none_or(|t| req.temperature <= t)
            && self.contains.iter().all(|m| req.prompt.contains(m.as_str()))
    }
}

/// Mock script file.
///
/// Lookup order: exact prompt hash in `responses`, then the first matching
/// entry of `rules`, then the next unused `fallback` entry.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub responses: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rules: Vec<MockRule>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fallback: Vec<String>,
}

impl MockScript {
    pub fn parse(text: &str) -> Result<Self, ProviderError> {
        serde_json::from_str(text).map_err(|e| ProviderError::MalformedScript {
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn with_response(mut self, prompt: &str, response: impl Into<String>) -> Self {
        self.responses.insert(prompt_hash(prompt), response.into());
        self
    }

    pub fn with_rule(mut self, contains: &[&str], response: impl Into<String>) -> Self {
        self.rules.push(MockRule {
            contains: contains.iter().map(|s| s.to_string()).collect(),
            min_temperature: None,
            max_temperature: None,
            response: response.into(),
        });
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallLogEntry {
    pub prompt_hash: String,
    pub stage: Stage,
    pub seed: u64,
}

/// Deterministic scripted backend. Each instance keeps its own fallback
/// cursor and call log.
#[derive(Debug, Default)]
pub struct MockProvider {
    script: MockScript,
    cursor: Mutex<usize>,
    log: Mutex<Vec<CallLogEntry>>,
}

impl MockProvider {
    pub fn new(script: MockScript) -> Self {
        Self {
            script,
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Unavailable(format!("{}: {e}", path.display())))?;
        Ok(Self::new(MockScript::parse(&text)?))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(&self.script).map_err(std::io::Error::other)?;
        std::fs::write(path, text)
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    pub fn call_log(&self) -> Vec<CallLogEntry> {
        self.log.lock().expect("mock log lock").clone()
    }

    fn lookup(&self, req: &GenerationRequest) -> Option<String> {
        if let Some(r) = self.script.responses.get(&prompt_hash(&req.prompt)) {
            return Some(r.clone());
        }
        if let Some(rule) = self.script.rules.iter().find(|r| r.matches(req)) {
            return Some(rule.response.clone());
        }
        let mut cursor = self.cursor.lock().expect("mock cursor lock");
        let r = self.script.fallback.get(*cursor).cloned();
        if r.is_some() {
            *cursor += 1;
        }
        r
    }
}

impl GenerationProvider for MockProvider {
    fn id(&self) -> &str {
        "mock"
    }

    fn complete(&self, req: &GenerationRequest) -> Result<GenerationResponse, ProviderError> {
        req.validate()?;
        let text = self
            .lookup(req)
            .ok_or_else(|| ProviderError::Unavailable("no scripted response".into()))?;
        let hash = prompt_hash(&req.prompt);
        let plan = stages(req.step_budget);
        {
            let mut log = self.log.lock().expect("mock log lock");
            log.extend(plan.iter().map(|&stage| CallLogEntry {
                prompt_hash: hash.clone(),
                stage,
                seed: req.seed,
            }));
        }
        Ok(GenerationResponse {
            text,
            steps_used: plan.len() as u32,
            provider_id: self.id().to_string(),
        })
    }
}
