use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::waveform::{TriggerThresholds, WaveformParams, WeightVector, CHANNELS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("invalid value for {key}: {message}")]
    Invalid { key: String, message: String },
    #[error("unknown config key {0}")]
    UnknownKey(String),
    #[error("config line {line}: expected key = value")]
    Syntax { line: usize },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

/// Tunables for one repair session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub max_transitions: usize,
    pub weights: WeightVector,
    pub smoothing_alpha: f64,
    pub rollback_abs_threshold: f64,
    pub rollback_jump_threshold: f64,
    pub eval_window: usize,
    pub eval_variance_threshold: f64,
    pub temperature: f64,
    pub rng_seed: u64,
    pub signal_cap: u32,
    pub rollback_enabled: bool,
    /// Restore the input program instead of the lowest-E snapshot.
    pub rollback_to_initial: bool,
    pub variant_count: usize,
    pub validation_parallelism: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            max_transitions: 12,
            weights: WeightVector::uniform(),
            smoothing_alpha: 0.5,
            rollback_abs_threshold: 0.8,
            rollback_jump_threshold: 0.35,
            eval_window: 3,
            eval_variance_threshold: 0.005,
            temperature: 0.5,
            rng_seed: 0,
            signal_cap: 8,
            rollback_enabled: true,
            rollback_to_initial: false,
            variant_count: 3,
            validation_parallelism: 1,
        }
    }
}

fn in_range(key: &str, v: f64, lo_open: bool, lo: f64, hi: f64) -> Result<(), ConfigError> {
    let lo_ok = if lo_open { v > lo } else { v >= lo };
    if v.is_finite() && lo_ok && v <= hi {
        Ok(())
    } else {
        let l = if lo_open { "(" } else { "[" };
        Err(invalid(key, format!("{v} not in {l}{lo}, {hi}]")))
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| invalid(key, e.to_string()))
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_transitions < 1 {
            return Err(invalid("max_transitions", "must be at least 1"));
        }
        in_range("smoothing_alpha", self.smoothing_alpha, true, 0.0, 1.0)?;
        in_range("rollback_abs_threshold", self.rollback_abs_threshold, true, 0.0, 1.0)?;
        in_range("rollback_jump_threshold", self.rollback_jump_threshold, true, 0.0, 1.0)?;
        if self.eval_window < 2 {
            return Err(invalid("eval_window", "must be at least 2"));
        }
        if !(self.eval_variance_threshold.is_finite() && self.eval_variance_threshold >= 0.0) {
            return Err(invalid("eval_variance_threshold", "must be non-negative"));
        }
        in_range("temperature", self.temperature, false, 0.0, 2.0)?;
        if self.signal_cap < 1 {
            return Err(invalid("signal_cap", "must be at least 1"));
        }
        if self.variant_count < 1 {
            return Err(invalid("variant_count", "must be at least 1"));
        }
        if self.validation_parallelism < 1 {
            return Err(invalid("validation_parallelism", "must be at least 1"));
        }
        Ok(())
    }

    pub fn waveform_params(&self) -> WaveformParams {
        WaveformParams {
            weights: self.weights,
            alpha: self.smoothing_alpha,
            cap: self.signal_cap,
        }
    }

    pub fn thresholds(&self) -> TriggerThresholds {
        TriggerThresholds {
            abs: self.rollback_abs_threshold,
            jump: self.rollback_jump_threshold,
            window: self.eval_window,
            variance: self.eval_variance_threshold,
        }
    }

    /// Sets one field from its textual form. Range checks happen in
    /// [`validate`](Self::validate).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "max_transitions" => self.max_transitions = parse(key, value)?,
            "weights" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|p| parse::<f64>(key, p))
                    .collect::<Result<_, _>>()?;
                let arr: [f64; CHANNELS] = parts
                    .try_into()
                    .map_err(|_| invalid(key, "expected five comma-separated numbers"))?;
                self.weights = WeightVector::normalized(arr).map_err(|e| invalid(key, e.to_string()))?;
            }
            "smoothing_alpha" => self.smoothing_alpha = parse(key, value)?,
            "rollback_abs_threshold" => self.rollback_abs_threshold = parse(key, value)?,
            "rollback_jump_threshold" => self.rollback_jump_threshold = parse(key, value)?,
            "eval_window" => self.eval_window = parse(key, value)?,
            "eval_variance_threshold" => self.eval_variance_threshold = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "rng_seed" => self.rng_seed = parse(key, value)?,
            "signal_cap" => self.signal_cap = parse(key, value)?,
            "rollback_enabled" => self.rollback_enabled = parse(key, value)?,
            "rollback_to_initial" => self.rollback_to_initial = parse(key, value)?,
            "variant_count" => self.variant_count = parse(key, value)?,
            "validation_parallelism" => self.validation_parallelism = parse(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }
}

/// `key = value` lines with `#` comments.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: idx + 1 })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
