use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::StateId;
use crate::agents::ThinkingMode;

/// Hex SHA-256 of program text.
pub fn code_hash(code: &str) -> String {
    hex::encode(Sha256::digest(code.as_bytes()))
}

/// One immutable version of the program under repair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSnapshot {
    id: String,
    code: Arc<str>,
    hash: String,
    producer: StateId,
    mode: Option<ThinkingMode>,
    step: usize,
}

impl SourceSnapshot {
    pub fn new(code: impl Into<Arc<str>>, producer: StateId, mode: Option<ThinkingMode>, step: usize) -> Self {
        let code = code.into();
        let hash = code_hash(&code);
        Self {
            id: format!("s{step:03}-{}", &hash[..12]),
            code,
            hash,
            producer,
            mode,
            step,
        }
    }

    pub fn initial(code: impl Into<Arc<str>>) -> Self {
        Self::new(code, StateId::Q0, None, 0)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn code(&self) -> &str {
        &self.code
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn producer(&self) -> StateId {
        self.producer
    }

    pub fn mode(&self) -> Option<ThinkingMode> {
        self.mode
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn loc(&self) -> usize {
        self.code.lines().filter(|l| !l.trim().is_empty()).count()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SnapshotError {
    #[error("duplicate snapshot id {0}")]
    Duplicate(String),
    #[error("unknown snapshot {0}")]
    Unknown(String),
}

/// Append-only snapshot storage.
#[derive(Debug, Clone, Default)]
pub struct SnapshotStore {
    snapshots: Vec<SourceSnapshot>,
    index: HashMap<String, usize>,
}

impl SnapshotStore {
    pub fn insert(&mut self, snapshot: SourceSnapshot) -> Result<String, SnapshotError> {
        if self.index.contains_key(snapshot.id()) {
            return Err(SnapshotError::Duplicate(snapshot.id().to_string()));
        }
        let id = snapshot.id().to_string();
        self.index.insert(id.clone(), self.snapshots.len());
        self.snapshots.push(snapshot);
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Result<&SourceSnapshot, SnapshotError> {
        self.index
            .get(id)
            .map(|&i| &self.snapshots[i])
            .ok_or_else(|| SnapshotError::Unknown(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SourceSnapshot> {
        self.snapshots.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_identical() {
        let mut store = SnapshotStore::default();
        let codes: Vec<String> = (0..10).map(|i| format!("fn f{i}() {{ /* {i} */ }}\n")).collect();
        let ids: Vec<String> = codes
            .iter()
            .enumerate()
            .map(|(i, c)| {
                store
                    .insert(SourceSnapshot::new(c.as_str(), StateId::QModify, None, i))
                    .unwrap()
            })
            .collect();
        for (id, code) in ids.iter().zip(&codes) {
            assert_eq!(store.get(id).unwrap().code().as_bytes(), code.as_bytes());
        }
    }

    #[test]
    fn stored_copy_is_independent() {
        let mut store = SnapshotStore::default();
        let snap = SourceSnapshot::initial("fn main() {}");
        let id = store.insert(snap.clone()).unwrap();
        let mut copy = snap.code().to_string();
        copy.push_str("// edited");
        assert_eq!(store.get(&id).unwrap().code(), "fn main() {}");
    }

    #[test]
    fn hundred_distinct_ids() {
        let mut store = SnapshotStore::default();
        for i in 0..100 {
            store
                .insert(SourceSnapshot::new(format!("// v{i}"), StateId::QAssert, None, i))
                .unwrap();
        }
        let ids: std::collections::HashSet<_> = store.iter().map(|s| s.id().to_string()).collect();
        assert_eq!(ids.len(), 100);
    }

    #[test]
    fn duplicates_and_unknowns_rejected() {
        let mut store = SnapshotStore::default();
        store.insert(SourceSnapshot::initial("x")).unwrap();
        assert!(matches!(
            store.insert(SourceSnapshot::initial("x")),
            Err(SnapshotError::Duplicate(_))
        ));
        assert!(matches!(store.get("nope"), Err(SnapshotError::Unknown(_))));
    }
}
