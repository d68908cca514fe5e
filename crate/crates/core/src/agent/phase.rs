use std::fmt;

use serde::{Deserialize, Serialize};

/// Internal states of a workflow activity under its synchronizing agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentPhase {
    Idle,
    Validating,
    WaitingForData,
    Executing,
    CommitPending,
    Committed,
    WaitingForAck,
    Completed,
    Escalated,
    FormatFault,
}

impl AgentPhase {
    pub const ALL: [AgentPhase; 10] = [
        AgentPhase::Idle,
        AgentPhase::Validating,
        AgentPhase::WaitingForData,
        AgentPhase::Executing,
        AgentPhase::CommitPending,
        AgentPhase::Committed,
        AgentPhase::WaitingForAck,
        AgentPhase::Completed,
        AgentPhase::Escalated,
        AgentPhase::FormatFault,
    ];

    /// Whether `self -> to` is an edge of the phase graph.
    pub fn can_transition(self, to: AgentPhase) -> bool {
        use AgentPhase::*;
        matches!(
            (self, to),
            (Idle, Validating)
                | (Validating, WaitingForData | FormatFault | Executing)
                | (WaitingForData, Validating)
                | (FormatFault, Validating)
                | (Executing, CommitPending)
                | (CommitPending, Executing | Escalated | Committed)
                | (Escalated, Executing)
                | (Committed, WaitingForAck)
                | (WaitingForAck, Completed)
        )
    }

    /// Committed or any phase reachable only through it.
    pub fn is_committed(self) -> bool {
        matches!(self, AgentPhase::Committed | AgentPhase::WaitingForAck | AgentPhase::Completed)
    }
}

impl fmt::Display for AgentPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}
