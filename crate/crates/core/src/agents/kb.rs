//! Repair-experience store: which (agent, mode) helped for which signal
//! fingerprint. Persisted as JSON lines, one entry per line, append-only.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{static_order_index, AgentKind, ThinkingMode};
use crate::waveform::{ChannelHistory, NormalizedSignals, CHANNELS};

/// Signal vector rounded to tenths plus the dominant UB category.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Fingerprint {
    pub levels: [u8; CHANNELS],
    pub dominant: String,
}

impl Fingerprint {
    pub fn new(signals: &NormalizedSignals, dominant: Option<&str>) -> Self {
        Self {
            levels: signals.values.map(|v| (v.clamp(0.0, 1.0) * 10.0).round() as u8),
            dominant: dominant.unwrap_or("none").to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairOutcome {
    Improved,
    Worsened,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub fingerprint: Fingerprint,
    pub agent: AgentKind,
    pub mode: ThinkingMode,
    pub outcome: RepairOutcome,
    pub delta_e: f64,
}

impl KnowledgeEntry {
    pub fn validate(&self) -> Result<(), KbError> {
        let ok = match self.outcome {
            RepairOutcome::Improved | RepairOutcome::Fixed => self.delta_e <= 0.0,
            RepairOutcome::Worsened => self.delta_e > 0.0,
        };
        if ok && self.delta_e.is_finite() {
            Ok(())
        } else {
            Err(KbError::Inconsistent {
                outcome: self.outcome,
                delta_e: self.delta_e,
            })
        }
    }
}

#[derive(Debug, Error)]
pub enum KbError {
    #[error("{outcome:?} is inconsistent with delta_E = {delta_e}")]
    Inconsistent { outcome: RepairOutcome, delta_e: f64 },
    #[error("knowledge base line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-pair evidence tallied from entries that share a fingerprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Evidence {
    pub agent: AgentKind,
    pub mode: ThinkingMode,
    pub fixed: usize,
    pub improved: usize,
    pub worsened: usize,
}

impl Evidence {
    pub fn positive(&self) -> usize {
        self.fixed + self.improved
    }
}

/// Ranks pairs by (fixed, improved, fewer worsened), then static order.
pub fn rank_evidence<'a>(
    entries: impl IntoIterator<Item = &'a KnowledgeEntry>,
    fingerprint: &Fingerprint,
) -> Vec<Evidence> {
    let mut tally: BTreeMap<(AgentKind, ThinkingMode), Evidence> = BTreeMap::new();
    for e in entries.into_iter().filter(|e| &e.fingerprint == fingerprint) {
        let ev = tally.entry((e.agent, e.mode)).or_insert(Evidence {
            agent: e.agent,
            mode: e.mode,
            fixed: 0,
            improved: 0,
            worsened: 0,
        });
        match e.outcome {
            RepairOutcome::Fixed => ev.fixed += 1,
            RepairOutcome::Improved => ev.improved += 1,
            RepairOutcome::Worsened => ev.worsened += 1,
        }
    }
    let mut ranked: Vec<Evidence> = tally.into_values().collect();
    ranked.sort_by_key(|e| {
        (
            std::cmp::Reverse(e.fixed),
            std::cmp::Reverse(e.improved),
            e.worsened,
            static_order_index(e.agent, e.mode),
        )
    });
    ranked
}

/// Read/record interface shared by the persistent store and per-session
/// overlays.
pub trait KnowledgeStore: Send + Sync {
    fn record(&self, entry: KnowledgeEntry) -> Result<(), KbError>;
    fn entries(&self) -> Vec<KnowledgeEntry>;

    fn evidence(&self, fingerprint: &Fingerprint) -> Vec<Evidence> {
        rank_evidence(&self.entries(), fingerprint)
    }

    fn query(&self, fingerprint: &Fingerprint) -> Vec<(AgentKind, ThinkingMode)> {
        self.evidence(fingerprint)
            .into_iter()
            .map(|e| (e.agent, e.mode))
            .collect()
    }
}

/// Shared store. Reads are concurrent; writes (including the file append)
/// are serialized.
#[derive(Debug, Default)]
pub struct KnowledgeBase {
    entries: RwLock<Vec<KnowledgeEntry>>,
    sink: Mutex<Option<File>>,
}

impl KnowledgeBase {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<KnowledgeEntry>) -> Self {
        Self {
            entries: RwLock::new(entries),
            sink: Mutex::new(None),
        }
    }

    /// Loads existing entries from `path` (if present) and appends new ones
    /// to it.
    pub fn open(path: &Path) -> Result<Self, KbError> {
        let mut entries = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (idx, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: KnowledgeEntry = serde_json::from_str(&line).map_err(|e| KbError::Corrupt {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
                entry.validate().map_err(|e| KbError::Corrupt {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
                entries.push(entry);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            entries: RwLock::new(entries),
            sink: Mutex::new(Some(file)),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("kb lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-channel frequency and severity from recorded outcomes: a channel
    /// counts once per entry whose fingerprint shows it active; severity is
    /// the mean activity level over those entries.
    pub fn channel_history(&self) -> [ChannelHistory; CHANNELS] {
        let entries = self.entries.read().expect("kb lock");
        let mut out = [ChannelHistory::default(); CHANNELS];
        let mut level_sum = [0.0f64; CHANNELS];
        for e in entries.iter() {
            for k in 0..CHANNELS {
                if e.fingerprint.levels[k] > 0 {
                    out[k].frequency += 1;
                    level_sum[k] += f64::from(e.fingerprint.levels[k]) / 10.0;
                }
            }
        }
        for k in 0..CHANNELS {
            if out[k].frequency > 0 {
                out[k].severity = level_sum[k] / out[k].frequency as f64;
            }
        }
        out
    }
}

impl KnowledgeStore for KnowledgeBase {
    fn record(&self, entry: KnowledgeEntry) -> Result<(), KbError> {
        entry.validate()?;
        let mut sink = self.sink.lock().expect("kb sink lock");
        if let Some(file) = sink.as_mut() {
            let line = serde_json::to_string(&entry).map_err(std::io::Error::other)?;
            writeln!(file, "{line}")?;
            file.flush()?;
        }
        self.entries.write().expect("kb lock").push(entry);
        Ok(())
    }

    fn entries(&self) -> Vec<KnowledgeEntry> {
        self.entries.read().expect("kb lock").clone()
    }
}

impl<K: KnowledgeStore + ?Sized> KnowledgeStore for Arc<K> {
    fn record(&self, entry: KnowledgeEntry) -> Result<(), KbError> {
        (**self).record(entry)
    }
    fn entries(&self) -> Vec<KnowledgeEntry> {
        (**self).entries()
    }
}

/// Frozen view of a base store plus this session's own records. Used by
/// corpus runs so results do not depend on worker scheduling; the local
/// records are committed to the base afterwards in sample order.
#[derive(Debug)]
pub struct KbOverlay {
    base: Arc<Vec<KnowledgeEntry>>,
    local: RwLock<Vec<KnowledgeEntry>>,
}

impl KbOverlay {
    pub fn new(base: Arc<Vec<KnowledgeEntry>>) -> Self {
        Self {
            base,
            local: RwLock::new(Vec::new()),
        }
    }

    pub fn into_local(self) -> Vec<KnowledgeEntry> {
        self.local.into_inner().expect("kb lock")
    }

    pub fn local(&self) -> Vec<KnowledgeEntry> {
        self.local.read().expect("kb lock").clone()
    }
}

impl KnowledgeStore for KbOverlay {
    fn record(&self, entry: KnowledgeEntry) -> Result<(), KbError> {
        entry.validate()?;
        self.local.write().expect("kb lock").push(entry);
        Ok(())
    }

    fn entries(&self) -> Vec<KnowledgeEntry> {
        let mut all = (*self.base).clone();
        all.extend(self.local.read().expect("kb lock").iter().cloned());
        all
    }
}
