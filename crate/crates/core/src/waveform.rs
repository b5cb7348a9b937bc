//! Five-channel defect signals and the incorrectness waveform built from them.
//!
//! Detector findings are bucketed into channels U (unchecked operations),
//! G (global objects), I (interoperability), L (low-level control) and
//! C (concurrency objects). Each channel is saturated against a cap,
//! smoothed with an exponential moving average, and the weighted sum of the
//! smoothed components gives the incorrectness score `E(t)` in `[0, 1]`.
//! Rollback and semantic-evaluation trigger rules read the `E` series.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::UbFinding;

/// Number of signal channels.
pub const CHANNELS: usize = 5;

/// Tolerance used when checking that weights sum to one.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Built-in category to channel table.
pub const DEFAULT_CHANNEL_MAP: &str = include_str!("../data/categories.map");

#[derive(Debug, Error, PartialEq)]
pub enum WaveformError {
    #[error("cannot smooth an empty history")]
    EmptyHistory,
    #[error("weights must be non-negative and sum to 1 (sum = {0})")]
    NonNormalizedWeights(f64),
    #[error("channel map line {line}: {message}")]
    MapSyntax { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    U,
    G,
    I,
    L,
    C,
}

impl Channel {
    pub const ALL: [Channel; CHANNELS] = [Channel::U, Channel::G, Channel::I, Channel::L, Channel::C];

    pub fn index(self) -> usize {
        match self {
            Channel::U => 0,
            Channel::G => 1,
            Channel::I => 2,
            Channel::L => 3,
            Channel::C => 4,
        }
    }
}

impl FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "U" | "u" => Ok(Channel::U),
            "G" | "g" => Ok(Channel::G),
            "I" | "i" => Ok(Channel::I),
            "L" | "l" => Ok(Channel::L),
            "C" | "c" => Ok(Channel::C),
            other => Err(format!("unknown channel `{other}`")),
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Channel::U => "U",
            Channel::G => "G",
            Channel::I => "I",
            Channel::L => "L",
            Channel::C => "C",
        };
        f.write_str(s)
    }
}

/// Raw per-channel finding counts `f(t) = [U, G, I, L, C]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignalChannels {
    pub u: u32,
    pub g: u32,
    pub i: u32,
    pub l: u32,
    pub c: u32,
}

impl SignalChannels {
    pub fn from_array(a: [u32; CHANNELS]) -> Self {
        Self {
            u: a[0],
            g: a[1],
            i: a[2],
            l: a[3],
            c: a[4],
        }
    }

    pub fn to_array(self) -> [u32; CHANNELS] {
        [self.u, self.g, self.i, self.l, self.c]
    }

    pub fn get(&self, ch: Channel) -> u32 {
        self.to_array()[ch.index()]
    }

    pub fn bump(&mut self, ch: Channel, by: u32) {
        let mut a = self.to_array();
        a[ch.index()] = a[ch.index()].saturating_add(by);
        *self = Self::from_array(a);
    }

    pub fn total(&self) -> u64 {
        self.to_array().iter().map(|&v| u64::from(v)).sum()
    }
}

/// Channel counts saturated into `[0, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NormalizedSignals {
    pub values: [f64; CHANNELS],
}

/// Each component becomes `min(count, cap) / cap`.
///
/// Panics if `cap` is zero.
pub fn normalize(channels: SignalChannels, cap: u32) -> NormalizedSignals {
    assert!(cap >= 1, "normalization cap must be at least 1");
    let cap_f = f64::from(cap);
    let mut values = [0.0; CHANNELS];
    for (v, raw) in values.iter_mut().zip(channels.to_array()) {
        *v = f64::from(raw.min(cap)) / cap_f;
    }
    NormalizedSignals { values }
}

/// Exponential moving average over one channel's history, returning the
/// value at the latest step. `s0 = x0`, `st = alpha * xt + (1 - alpha) * s(t-1)`.
pub fn smooth(history: &[f64], alpha: f64) -> Result<f64, WaveformError> {
    let (first, rest) = history.split_first().ok_or(WaveformError::EmptyHistory)?;
    Ok(rest.iter().fold(*first, |prev, &x| ema_step(prev, x, alpha)))
}

#[inline]
fn ema_step(prev: f64, x: f64, alpha: f64) -> f64 {
    alpha * x + (1.0 - alpha) * prev
}

/// Weighted sum of smoothed components. Rejects weights that are negative
/// or do not sum to one.
pub fn incorrectness(smoothed: &[f64; CHANNELS], weights: &[f64; CHANNELS]) -> Result<f64, WaveformError> {
    check_weights(weights)?;
    let e: f64 = smoothed.iter().zip(weights).map(|(s, w)| s * w).sum();
    // float round-off can push a convex combination of [0,1] values a hair past 1
    Ok(e.clamp(0.0, 1.0))
}

fn check_weights(w: &[f64; CHANNELS]) -> Result<(), WaveformError> {
    let sum: f64 = w.iter().sum();
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) || (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(WaveformError::NonNormalizedWeights(sum));
    }
    Ok(())
}

/// Per-channel weights `w_i`, always normalized to sum 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; CHANNELS]", into = "[f64; CHANNELS]")]
pub struct WeightVector([f64; CHANNELS]);

impl WeightVector {
    pub fn uniform() -> Self {
        Self([1.0 / CHANNELS as f64; CHANNELS])
    }

    /// Accepts any non-negative vector with a positive sum and rescales it.
    pub fn normalized(raw: [f64; CHANNELS]) -> Result<Self, WaveformError> {
        let sum: f64 = raw.iter().sum();
        if raw.iter().any(|x| !x.is_finite() || *x < 0.0) || sum <= 0.0 {
            return Err(WaveformError::NonNormalizedWeights(sum));
        }
        Ok(Self(raw.map(|x| x / sum)))
    }

    pub fn as_array(&self) -> &[f64; CHANNELS] {
        &self.0
    }
}

impl Default for WeightVector {
    fn default() -> Self {
        Self::uniform()
    }
}

impl TryFrom<[f64; CHANNELS]> for WeightVector {
    type Error = WaveformError;

    fn try_from(raw: [f64; CHANNELS]) -> Result<Self, Self::Error> {
        check_weights(&raw)?;
        Ok(Self(raw))
    }
}

impl From<WeightVector> for [f64; CHANNELS] {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

/// Historical repair statistics for one channel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelHistory {
    pub frequency: u64,
    pub severity: f64,
}

/// `w_i` proportional to `frequency_i * severity_i`; uniform when nothing
/// has been observed.
pub fn update_weights(history: &[ChannelHistory; CHANNELS]) -> WeightVector {
    let raw = history.map(|h| h.frequency as f64 * h.severity.clamp(0.0, 1.0));
    WeightVector::normalized(raw).unwrap_or_else(|_| WeightVector::uniform())
}

/// Category label to channel table, loaded from `category = channel` text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelMap {
    table: BTreeMap<String, Channel>,
}

/// Result of bucketing findings into channels.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Categorization {
    pub channels: SignalChannels,
    /// Labels absent from the table, counted on U.
    pub remapped: Vec<String>,
}

impl ChannelMap {
    pub fn parse(text: &str) -> Result<Self, WaveformError> {
        let mut table = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| WaveformError::MapSyntax {
                line: idx + 1,
                message: "expected `category = channel`".into(),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(WaveformError::MapSyntax {
                    line: idx + 1,
                    message: "empty category".into(),
                });
            }
            let channel = value
                .parse::<Channel>()
                .map_err(|message| WaveformError::MapSyntax { line: idx + 1, message })?;
            table.insert(key.to_ascii_lowercase(), channel);
        }
        Ok(Self { table })
    }

    pub fn builtin() -> Self {
        Self::parse(DEFAULT_CHANNEL_MAP).expect("built-in channel map is valid")
    }

    pub fn channel_of(&self, category: &str) -> Option<Channel> {
        self.table.get(&category.to_ascii_lowercase()).copied()
    }

    pub fn categorize(&self, findings: &[UbFinding]) -> Categorization {
        let mut out = Categorization::default();
        for f in findings {
            match self.channel_of(&f.category) {
                Some(ch) => out.channels.bump(ch, 1),
                None => {
                    out.channels.bump(Channel::U, 1);
                    out.remapped.push(f.category.clone());
                }
            }
        }
        out
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, Channel)> {
        self.table.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl Default for ChannelMap {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Parameters that shape how raw counts become `E(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveformParams {
    pub weights: WeightVector,
    pub alpha: f64,
    pub cap: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformPoint {
    pub step: usize,
    /// Snapshot whose detection produced this point.
    pub snapshot: String,
    pub raw: SignalChannels,
    pub normalized: NormalizedSignals,
    pub smoothed: [f64; CHANNELS],
    pub e: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    points: Vec<WaveformPoint>,
}

impl Waveform {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn points(&self) -> &[WaveformPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last(&self) -> Option<&WaveformPoint> {
        self.points.last()
    }

    pub fn e_values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.e).collect()
    }

    /// Appends the next point, continuing the moving average from the
    /// previous point's smoothed state.
    pub fn push(
        &mut self,
        raw: SignalChannels,
        snapshot: impl Into<String>,
        params: &WaveformParams,
    ) -> &WaveformPoint {
        let normalized = normalize(raw, params.cap);
        let smoothed = match self.points.last() {
            None => normalized.values,
            Some(prev) => std::array::from_fn(|k| ema_step(prev.smoothed[k], normalized.values[k], params.alpha)),
        };
        let e = incorrectness(&smoothed, params.weights.as_array()).expect("WeightVector is normalized");
        self.points.push(WaveformPoint {
            step: self.points.len(),
            snapshot: snapshot.into(),
            raw,
            normalized,
            smoothed,
            e,
        });
        self.points.last().expect("just pushed")
    }

    /// Appends a copy of an earlier point (signals and smoothing state) as the
    /// next step. Used when a rollback restores an older snapshot.
    pub fn push_restored(&mut self, source_step: usize) -> &WaveformPoint {
        let mut p = self.points[source_step].clone();
        p.step = self.points.len();
        self.points.push(p);
        self.points.last().expect("just pushed")
    }

    /// Earliest point with the lowest `E`.
    pub fn argmin_e(&self) -> Option<&WaveformPoint> {
        self.points
            .iter()
            .fold(None, |best: Option<&WaveformPoint>, p| match best {
                Some(b) if b.e <= p.e => Some(b),
                _ => Some(p),
            })
    }
}

/// True when the latest `E` exceeds `abs_threshold`, or when it moved by
/// more than `jump_threshold` since the previous point.
pub fn detect_rollback_point(e: &[f64], abs_threshold: f64, jump_threshold: f64) -> bool {
    let Some(&last) = e.last() else {
        return false;
    };
    if last > abs_threshold {
        return true;
    }
    match e.len() {
        0 | 1 => false,
        n => (last - e[n - 2]).abs() > jump_threshold,
    }
}

/// True when the last `window` values exist and their population variance
/// is below `var_threshold`.
pub fn detect_eval_point(e: &[f64], window: usize, var_threshold: f64) -> bool {
    if window == 0 || e.len() < window {
        return false;
    }
    let tail = &e[e.len() - window..];
    let mean = tail.iter().sum::<f64>() / window as f64;
    let var = tail.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / window as f64;
    var < var_threshold
}

/// Which trigger, if any, fires on the latest point. Rollback wins ties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    Rollback,
    Evaluate,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerThresholds {
    pub abs: f64,
    pub jump: f64,
    pub window: usize,
    pub variance: f64,
}

pub fn classify_trigger(e: &[f64], t: &TriggerThresholds) -> Trigger {
    if detect_rollback_point(e, t.abs, t.jump) {
        Trigger::Rollback
    } else if detect_eval_point(e, t.window, t.variance) {
        Trigger::Evaluate
    } else {
        Trigger::None
    }
}

/// Worst drift above the starting point: `max_t E(t) - E(0)`.
pub fn hallucination_score(e: &[f64]) -> f64 {
    let Some(&first) = e.first() else {
        return 0.0;
    };
    let max = e.iter().copied().fold(first, f64::max);
    (max - first).max(0.0)
}
