use std::time::Duration;

use serde_json::{json, Value};

use super::{stages, GenerationProvider, GenerationRequest, GenerationResponse, ProviderError, Stage};

pub const URL_ENV: &str = "AKIRA_PROVIDER_URL";
pub const KEY_ENV: &str = "AKIRA_PROVIDER_KEY";
pub const MODEL_ENV: &str = "AKIRA_PROVIDER_MODEL";

/// Chat-completion endpoint settings. The request body follows the
/// widely used `messages` / `choices[0].message.content` shape.
#[derive(Debug, Clone)]
pub struct HttpProviderConfig {
    pub url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
}

impl HttpProviderConfig {
    pub fn from_env() -> Result<Self, ProviderError> {
        let url = std::env::var(URL_ENV).map_err(|_| ProviderError::Unavailable(format!("{URL_ENV} is not set")))?;
        Ok(Self {
            url,
            api_key: std::env::var(KEY_ENV).ok(),
            model: std::env::var(MODEL_ENV).unwrap_or_else(|_| "gpt-4o".into()),
            timeout: Duration::from_secs(120),
        })
    }
}

pub struct HttpProvider {
    config: HttpProviderConfig,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Self { config, agent }
    }

    pub fn from_env() -> Result<Self, ProviderError> {
        HttpProviderConfig::from_env().map(Self::new)
    }

    fn body(&self, prompt: &str, req: &GenerationRequest) -> Value {
        json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": req.temperature,
            "seed": req.seed,
        })
    }

    fn call(&self, prompt: &str, req: &GenerationRequest) -> Result<String, ProviderError> {
        let mut builder = self.agent.post(&self.config.url);
        if let Some(key) = &self.config.api_key {
            builder = builder.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = builder
            .send_json(self.body(prompt, req))
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        let v: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Unavailable("response has no message content".into()))
    }
}

fn stage_prompt(stage: Stage, task: &str, carry: &str) -> String {
    match stage {
        Stage::Single => task.to_string(),
        Stage::Plan => format!(
            "Before answering, reason step by step and write a short numbered plan. \
             Do not give the final answer yet.\n\n{task}"
        ),
        Stage::Act => format!("{task}\n\nWork from this plan and give the complete answer:\n{carry}"),
        Stage::Check => format!(
            "Check the answer below against the task. Reply with the answer unchanged if it is \
             correct, otherwise reply with a corrected complete answer.\n\nTask:\n{task}\n\nAnswer:\n{carry}"
        ),
    }
}

impl GenerationProvider for HttpProvider {
    fn id(&self) -> &str {
        "http"
    }

    fn complete(&self, req: &GenerationRequest) -> Result<GenerationResponse, ProviderError> {
        req.validate()?;
        let plan = stages(req.step_budget);
        let mut carry = String::new();
        for &stage in &plan {
            let out = self.call(&stage_prompt(stage, &req.prompt, &carry), req)?;
            tracing::debug!(?stage, bytes = out.len(), "provider sub-call");
            if stage != Stage::Check || !out.trim().is_empty() {
                carry = out;
            }
        }
        Ok(GenerationResponse {
            text: carry,
            steps_used: plan.len() as u32,
            provider_id: self.id().to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unreachable_endpoint_is_unavailable() {
        let p = HttpProvider::new(HttpProviderConfig {
            url: "http://127.0.0.1:9/v1/chat/completions".into(),
            api_key: None,
            model: "m".into(),
            timeout: Duration::from_secs(2),
        });
        let r = p.complete(&GenerationRequest::new("hello", 0.5, 1, 0));
        assert!(matches!(r, Err(ProviderError::Unavailable(_))));
    }

    #[test]
    fn stage_prompts_carry_context() {
        assert_eq!(stage_prompt(Stage::Single, "t", ""), "t");
        assert!(stage_prompt(Stage::Act, "t", "PLAN").contains("PLAN"));
        assert!(stage_prompt(Stage::Check, "t", "ANS").contains("ANS"));
    }
}
