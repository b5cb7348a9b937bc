//! The repair state machine: states, snapshots, sessions and traces.

mod config;
mod session;
mod snapshot;
mod state;
mod trace;

pub use config::{parse_key_values, ConfigError, SessionConfig};
pub use session::{
    init_session, Backends, RepairSession, SessionError, REASON_ACCEPTED, REASON_DETECTOR, REASON_MAX_TRANSITIONS,
};
pub use snapshot::{code_hash, SnapshotError, SnapshotStore, SourceSnapshot};
pub use state::StateId;
pub use trace::{
    EvaluationRecord, Metrics, Outcome, ProviderCall, SnapshotMeta, TraceDocument, TransitionRecord, TRACE_SCHEMA,
};
