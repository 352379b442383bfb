//! Evidence vocabulary shared by agents, fusion and the provenance log.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ids::ClaimId;

/// Verification role of an evidence-producing agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    LocalGrounding,
    TemporalConsistency,
    GlobalAudit,
}

impl Role {
    pub const ALL: [Role; 3] = [
        Role::LocalGrounding,
        Role::TemporalConsistency,
        Role::GlobalAudit,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn actor(self) -> Actor {
        match self {
            Role::LocalGrounding => Actor::LocalGrounding,
            Role::TemporalConsistency => Actor::TemporalConsistency,
            Role::GlobalAudit => Actor::GlobalAudit,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::LocalGrounding => "local_grounding",
            Role::TemporalConsistency => "temporal_consistency",
            Role::GlobalAudit => "global_audit",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Anyone who can appear in the provenance log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Constructor,
    LocalGrounding,
    TemporalConsistency,
    GlobalAudit,
    Arbitration,
    Human,
}

impl Actor {
    pub const ALL: [Actor; 6] = [
        Actor::Constructor,
        Actor::LocalGrounding,
        Actor::TemporalConsistency,
        Actor::GlobalAudit,
        Actor::Arbitration,
        Actor::Human,
    ];

    pub fn is_verifier(self) -> bool {
        matches!(
            self,
            Actor::LocalGrounding | Actor::TemporalConsistency | Actor::GlobalAudit
        )
    }
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Actor::Constructor => "constructor",
            Actor::LocalGrounding => "local_grounding",
            Actor::TemporalConsistency => "temporal_consistency",
            Actor::GlobalAudit => "global_audit",
            Actor::Arbitration => "arbitration",
            Actor::Human => "human",
        };
        f.write_str(s)
    }
}

/// Contradiction, abstention or support. Serialized as -1 / 0 / +1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Verdict {
    Contradict,
    Abstain,
    Support,
}

impl Verdict {
    pub fn negate(self) -> Verdict {
        match self {
            Verdict::Contradict => Verdict::Support,
            Verdict::Abstain => Verdict::Abstain,
            Verdict::Support => Verdict::Contradict,
        }
    }
}

impl From<Verdict> for i8 {
    fn from(v: Verdict) -> i8 {
        match v {
            Verdict::Contradict => -1,
            Verdict::Abstain => 0,
            Verdict::Support => 1,
        }
    }
}

impl TryFrom<i8> for Verdict {
    type Error = String;

    fn try_from(v: i8) -> Result<Self, Self::Error> {
        match v {
            -1 => Ok(Verdict::Contradict),
            0 => Ok(Verdict::Abstain),
            1 => Ok(Verdict::Support),
            other => Err(format!("verdict must be -1, 0 or 1, got {other}")),
        }
    }
}

/// One agent's judgment on one claim in one probing round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceTuple {
    pub claim_id: ClaimId,
    pub role: Role,
    pub verdict: Verdict,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<String>,
    pub round: u32,
}

impl EvidenceTuple {
    pub fn new(
        claim_id: ClaimId,
        role: Role,
        verdict: Verdict,
        confidence: f64,
        round: u32,
    ) -> Self {
        Self {
            claim_id,
            role,
            verdict,
            confidence,
            candidate: None,
            round,
        }
    }

    pub fn with_candidate(mut self, candidate: impl Into<String>) -> Self {
        self.candidate = Some(candidate.into());
        self
    }

    /// Tuple an agent emits for a claim outside its scope.
    pub fn out_of_scope(claim_id: ClaimId, role: Role, round: u32) -> Self {
        Self::new(claim_id, role, Verdict::Abstain, 0.0, round)
    }
}

/// A probe that produced no parseable structured answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvalidProbe {
    pub claim_id: ClaimId,
    pub role: Role,
    pub raw_payload: String,
    pub round: u32,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_wire_format() {
        assert_eq!(serde_json::to_string(&Verdict::Contradict).unwrap(), "-1");
        let v: Verdict = serde_json::from_str("1").unwrap();
        assert_eq!(v, Verdict::Support);
        assert!(serde_json::from_str::<Verdict>("2").is_err());
    }
}
