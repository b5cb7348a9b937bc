//! Text generation behind one interface.
//!
//! A request carries a temperature and a step budget. A budget of 1 is a
//! single pass; larger budgets run chained sub-calls (plan, act, check)
//! inside one [`GenerationProvider::complete`] call.

mod http;
mod mock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{HttpProvider, HttpProviderConfig};
pub use mock::{CallLogEntry, MockProvider, MockRule, MockScript};

pub const FAST_STEP_BUDGET: u32 = 1;
pub const SLOW_STEP_BUDGET: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub temperature: f64,
    pub step_budget: u32,
    pub seed: u64,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, temperature: f64, step_budget: u32, seed: u64) -> Self {
        Self {
            prompt: prompt.into(),
            temperature,
            step_budget,
            seed,
        }
    }

    pub(crate) fn validate(&self) -> Result<(), ProviderError> {
        if self.prompt.trim().is_empty() {
            return Err(ProviderError::EmptyPrompt);
        }
        if self.step_budget == 0 {
            return Err(ProviderError::InvalidRequest("step budget must be positive".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
    pub steps_used: u32,
    pub provider_id: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed mock script at line {line}: {message}")]
    MalformedScript { line: usize, message: String },
}

pub trait GenerationProvider: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResponse, ProviderError>;
}

impl<P: GenerationProvider + ?Sized> GenerationProvider for &P {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResponse, ProviderError> {
        (**self).complete(request)
    }
}

impl<P: GenerationProvider + ?Sized> GenerationProvider for Box<P> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResponse, ProviderError> {
        (**self).complete(request)
    }
}

/// A provider that is never reachable.
#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineProvider;

impl GenerationProvider for OfflineProvider {
    fn id(&self) -> &str {
        "offline"
    }
    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResponse, ProviderError> {
        request.validate()?;
        Err(ProviderError::Unavailable("offline".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Single,
    Plan,
    Act,
    Check,
}

/// Sub-call sequence for a step budget.
pub fn stages(step_budget: u32) -> Vec<Stage> {
    match step_budget {
        0 => Vec::new(),
        1 => vec![Stage::Single],
        2 => vec![Stage::Plan, Stage::Act],
        n => {
            let mut s = vec![Stage::Plan];
            s.extend(std::iter::repeat_n(Stage::Act, (n - 2) as usize));
            s.push(Stage::Check);
            s
        }
    }
}

/// Short stable hash used to key scripted responses.
pub fn prompt_hash(prompt: &str) -> String {
    let digest = Sha256::digest(prompt.as_bytes());
    hex::encode(&digest[..8])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_sequences() {
        assert_eq!(stages(1), [Stage::Single]);
        assert_eq!(stages(3), [Stage::Plan, Stage::Act, Stage::Check]);
        assert_eq!(stages(5).len(), 5);
        assert_eq!(stages(5)[4], Stage::Check);
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(prompt_hash("abc"), prompt_hash("abc"));
        assert_ne!(prompt_hash("abc"), prompt_hash("abd"));
        assert_eq!(prompt_hash("abc").len(), 16);
    }

    #[test]
    fn request_validation() {
        assert_eq!(
            GenerationRequest::new("  ", 0.5, 1, 0).validate(),
            Err(ProviderError::EmptyPrompt)
        );
        assert!(GenerationRequest::new("p", 0.5, 0, 0).validate().is_err());
        assert!(GenerationRequest::new("p", 2.5, 1, 0).validate().is_err());
        assert!(OfflineProvider
            .complete(&GenerationRequest::new("p", 0.5, 1, 0))
            .is_err());
    }
}
