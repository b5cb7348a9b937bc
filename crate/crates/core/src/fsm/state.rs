use std::fmt;

use serde::{Deserialize, Serialize};

use crate::agents::AgentKind;

/// FSM states. `Q0` is the unique initial state; `QF` and `QErr` are terminal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StateId {
    Q0,
    QAssert,
    QModify,
    QReplace,
    QKnowledge,
    QRollback,
    QErr,
    QF,
}

impl StateId {
    pub const ALL: [StateId; 8] = [
        StateId::Q0,
        StateId::QAssert,
        StateId::QModify,
        StateId::QReplace,
        StateId::QKnowledge,
        StateId::QRollback,
        StateId::QErr,
        StateId::QF,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, StateId::QF | StateId::QErr)
    }

    /// The agent that runs in this state, for the four repair states.
    pub fn agent(self) -> Option<AgentKind> {
        match self {
            StateId::QAssert => Some(AgentKind::Assert),
            StateId::QModify => Some(AgentKind::Modify),
            StateId::QReplace => Some(AgentKind::Replace),
            StateId::QKnowledge => Some(AgentKind::Knowledge),
            _ => None,
        }
    }

    pub fn is_repair(self) -> bool {
        self.agent().is_some()
    }
}

impl From<AgentKind> for StateId {
    fn from(kind: AgentKind) -> Self {
        match kind {
            AgentKind::Assert => StateId::QAssert,
            AgentKind::Modify => StateId::QModify,
            AgentKind::Replace => StateId::QReplace,
            AgentKind::Knowledge => StateId::QKnowledge,
        }
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StateId::Q0 => "q0",
            StateId::QAssert => "q_assert",
            StateId::QModify => "q_modify",
            StateId::QReplace => "q_replace",
            StateId::QKnowledge => "q_knowledge",
            StateId::QRollback => "q_rollback",
            StateId::QErr => "q_err",
            StateId::QF => "q_f",
        };
        f.write_str(s)
    }
}
