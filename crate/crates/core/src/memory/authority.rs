//! Per-actor authority contracts.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::evidence::Actor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Init,
    Flag,
    Accept,
    Rewrite,
    Escalate,
    HumanAnswer,
    Override,
    Lock,
    Rollback,
}

impl Action {
    pub const ALL: [Action; 9] = [
        Action::Init,
        Action::Flag,
        Action::Accept,
        Action::Rewrite,
        Action::Escalate,
        Action::HumanAnswer,
        Action::Override,
        Action::Lock,
        Action::Rollback,
    ];
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        f.write_str(&s)
    }
}

/// The contract table. Constructor initializes, verifiers flag, arbitration
/// writes fused decisions, and the human may do anything except re-initialize.
pub fn permits(actor: Actor, action: Action) -> bool {
    match actor {
        Actor::Constructor => action == Action::Init,
        Actor::LocalGrounding | Actor::TemporalConsistency | Actor::GlobalAudit => {
            action == Action::Flag
        }
        Actor::Arbitration => matches!(action, Action::Accept | Action::Rewrite | Action::Escalate),
        Actor::Human => action != Action::Init,
    }
}

pub fn authorize(actor: Actor, action: Action) -> Result<(), (Actor, Action)> {
    if permits(actor, action) {
        Ok(())
    } else {
        Err((actor, action))
    }
}
