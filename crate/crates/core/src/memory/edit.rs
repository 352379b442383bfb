//! Edit operations and their deterministic application to a memory state.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::authority::Action;
use super::{MemoryError, MemoryState};
use crate::arbitration::{EscalationTicket, HumanAnswer};
use crate::claim::{element_value, set_element_value, ClaimStatus, ClaimTarget, ClaimType};
use crate::evidence::{Actor, EvidenceTuple, InvalidProbe};
use crate::ids::{ClaimId, Version};

/// Non-versioned log record: evidence, failed probes, warnings and rejected
/// writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlagRecord {
    Evidence {
        evidence: EvidenceTuple,
    },
    InvalidProbe {
        probe: InvalidProbe,
    },
    Warning {
        #[serde(default)]
        claim_id: Option<ClaimId>,
        message: String,
    },
    Violation {
        attempted: Action,
        #[serde(default)]
        claim_id: Option<ClaimId>,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditOp {
    Init {
        entities: usize,
        relations: usize,
        attributes: usize,
        claims: usize,
        dependencies: usize,
    },
    Flag {
        record: FlagRecord,
    },
    Accept {
        claim_id: ClaimId,
        belief: f64,
    },
    Rewrite {
        claim_id: ClaimId,
        value: String,
        #[serde(default)]
        belief: Option<f64>,
    },
    /// Records an undecided fusion outcome (`Pending`/`Contradicted`), or an
    /// admitted escalation (`Escalated`, with a ticket).
    Escalate {
        claim_id: ClaimId,
        #[serde(default)]
        belief: Option<f64>,
        status: ClaimStatus,
        #[serde(default)]
        ticket: Option<EscalationTicket>,
    },
    HumanAnswer {
        claim_id: ClaimId,
        answer: HumanAnswer,
    },
    Override {
        claim_id: ClaimId,
        value: String,
    },
    Lock {
        claim_id: ClaimId,
    },
    Rollback {
        target_version: Version,
    },
}

impl EditOp {
    pub fn action(&self) -> Action {
        match self {
            EditOp::Init { .. } => Action::Init,
            EditOp::Flag { .. } => Action::Flag,
            EditOp::Accept { .. } => Action::Accept,
            EditOp::Rewrite { .. } => Action::Rewrite,
            EditOp::Escalate { .. } => Action::Escalate,
            EditOp::HumanAnswer { .. } => Action::HumanAnswer,
            EditOp::Override { .. } => Action::Override,
            EditOp::Lock { .. } => Action::Lock,
            EditOp::Rollback { .. } => Action::Rollback,
        }
    }

    pub fn claim_id(&self) -> Option<&ClaimId> {
        match self {
            EditOp::Accept { claim_id, .. }
            | EditOp::Rewrite { claim_id, .. }
            | EditOp::Escalate { claim_id, .. }
            | EditOp::HumanAnswer { claim_id, .. }
            | EditOp::Override { claim_id, .. }
            | EditOp::Lock { claim_id } => Some(claim_id),
            EditOp::Flag { record } => match record {
                FlagRecord::Evidence { evidence } => Some(&evidence.claim_id),
                FlagRecord::InvalidProbe { probe } => Some(&probe.claim_id),
                FlagRecord::Warning { claim_id, .. } | FlagRecord::Violation { claim_id, .. } => {
                    claim_id.as_ref()
                }
            },
            EditOp::Init { .. } | EditOp::Rollback { .. } => None,
        }
    }

    /// Whether applying the op produces a new version.
    pub fn is_versioned(&self) -> bool {
        !matches!(self, EditOp::Init { .. } | EditOp::Flag { .. })
    }
}

/// What an applied edit changed, beyond the version bump.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EditEffect {
    /// Claims whose asserted value changed.
    pub value_changed: BTreeSet<ClaimId>,
    /// Claims retired because their element was deleted.
    pub removed: BTreeSet<ClaimId>,
    /// The whole state was replaced (rollback).
    pub replaced: bool,
}

/// Apply a versioned op in place. `historical` resolves rollback targets.
/// The caller is responsible for authority checks and for bumping the version.
pub(crate) fn apply_op(
    state: &mut MemoryState,
    op: &EditOp,
    actor: Actor,
    historical: &mut dyn FnMut(Version) -> Result<MemoryState, MemoryError>,
) -> Result<EditEffect, MemoryError> {
    let mut effect = EditEffect::default();
    if let Some(id) = op.claim_id() {
        if op.is_versioned() {
            let claim = state
                .claims
                .get(id)
                .ok_or_else(|| MemoryError::UnknownClaim(id.clone()))?;
            if actor != Actor::Human {
                match claim.status {
                    ClaimStatus::Locked => return Err(MemoryError::Locked(id.clone())),
                    ClaimStatus::HumanResolved => return Err(MemoryError::HumanOwned(id.clone())),
                    _ => {}
                }
            }
        }
    }

    match op {
        EditOp::Init { .. } | EditOp::Flag { .. } => {}
        EditOp::Accept { claim_id, belief } => {
            check_belief(*belief)?;
            let c = state.claims.get_mut(claim_id).expect("checked above");
            c.status = ClaimStatus::Supported;
            c.belief = Some(*belief);
        }
        EditOp::Rewrite {
            claim_id,
            value,
            belief,
        } => {
            if let Some(b) = belief {
                check_belief(*b)?;
            }
            write_value(state, claim_id, value)?;
            let c = state.claims.get_mut(claim_id).expect("checked above");
            c.status = ClaimStatus::Revised;
            if belief.is_some() {
                c.belief = *belief;
            }
            effect.value_changed.insert(claim_id.clone());
        }
        EditOp::Escalate {
            claim_id,
            belief,
            status,
            ticket,
        } => {
            if let Some(b) = belief {
                check_belief(*b)?;
            }
            let ok = match status {
                ClaimStatus::Escalated => ticket.is_some(),
                ClaimStatus::Pending | ClaimStatus::Contradicted => ticket.is_none(),
                _ => false,
            };
            if !ok {
                return Err(MemoryError::InvalidEdit(format!(
                    "escalate cannot set status {status:?} (ticket present: {})",
                    ticket.is_some()
                )));
            }
            let c = state.claims.get_mut(claim_id).expect("checked above");
            c.status = *status;
            c.ticket = ticket.clone();
            if belief.is_some() {
                c.belief = *belief;
            }
        }
        EditOp::HumanAnswer { claim_id, answer } => {
            apply_answer(state, claim_id, answer, &mut effect)?;
        }
        EditOp::Override { claim_id, value } => {
            write_value(state, claim_id, value)?;
            let c = state.claims.get_mut(claim_id).expect("checked above");
            if c.status != ClaimStatus::Locked {
                c.status = ClaimStatus::HumanResolved;
            }
            effect.value_changed.insert(claim_id.clone());
        }
        EditOp::Lock { claim_id } => {
            state
                .claims
                .get_mut(claim_id)
                .expect("checked above")
                .status = ClaimStatus::Locked;
        }
        EditOp::Rollback { target_version } => {
            if *target_version > state.version {
                return Err(MemoryError::FutureVersion {
                    target: *target_version,
                    current: state.version,
                });
            }
            let past = historical(*target_version)?;
            let version = state.version;
            *state = past;
            state.version = version;
            effect.replaced = true;
        }
    }
    if let Some(c) = op.claim_id().and_then(|id| state.claims.get_mut(id)) {
        if c.status != ClaimStatus::Escalated {
            c.ticket = None;
        }
    }
    Ok(effect)
}

fn check_belief(b: f64) -> Result<(), MemoryError> {
    if (0.0..=1.0).contains(&b) {
        Ok(())
    } else {
        Err(MemoryError::InvalidEdit(format!(
            "belief {b} outside [0,1]"
        )))
    }
}

fn write_value(state: &mut MemoryState, id: &ClaimId, value: &str) -> Result<(), MemoryError> {
    if value.trim().is_empty() {
        return Err(MemoryError::InvalidEdit("empty value".into()));
    }
    let claim = state.claims.get(id).expect("caller checked");
    if !claim.claim_type.is_correctable() {
        return Err(MemoryError::InvalidEdit(format!(
            "{} claims have no writable value",
            claim.claim_type
        )));
    }
    let (ty, target) = (claim.claim_type, claim.target.clone());
    if !set_element_value(&mut state.graph, ty, &target, value) {
        return Err(MemoryError::DanglingClaim(id.clone()));
    }
    state
        .claims
        .get_mut(id)
        .expect("caller checked")
        .asserted_value = value.to_owned();
    Ok(())
}

fn apply_answer(
    state: &mut MemoryState,
    id: &ClaimId,
    answer: &HumanAnswer,
    effect: &mut EditEffect,
) -> Result<(), MemoryError> {
    let claim = state.claims.get(id).expect("caller checked").clone();
    let resolved = |s: ClaimStatus| {
        if s == ClaimStatus::Locked {
            s
        } else {
            ClaimStatus::HumanResolved
        }
    };
    match answer {
        HumanAnswer::Confirm => {
            state.claims.get_mut(id).expect("checked").status = resolved(claim.status);
        }
        HumanAnswer::Select { value } => {
            write_value(state, id, value)?;
            state.claims.get_mut(id).expect("checked").status = resolved(claim.status);
            effect.value_changed.insert(id.clone());
        }
        HumanAnswer::Reject => match (&claim.claim_type, &claim.target) {
            (ClaimType::Exist, ClaimTarget::Entity { entity_id }) => {
                state.graph.remove_entity(entity_id);
                let doomed: Vec<ClaimId> = state
                    .claims
                    .iter()
                    .filter(|c| c.target.touches(entity_id))
                    .map(|c| c.claim_id.clone())
                    .collect();
                for c in doomed {
                    state.claims.remove(&c);
                    state.dependencies.remove_node(&c);
                    effect.removed.insert(c);
                }
            }
            (
                ClaimType::Attr,
                ClaimTarget::Attribute {
                    entity_id,
                    attribute_key,
                },
            ) => {
                state
                    .graph
                    .attributes
                    .remove(&(entity_id.clone(), attribute_key.clone()));
                state.claims.remove(id);
                state.dependencies.remove_node(id);
                effect.removed.insert(id.clone());
            }
            (ClaimType::Rel, ClaimTarget::Relation { relation_id, .. }) => {
                state.graph.relations.remove(relation_id);
                state.claims.remove(id);
                state.dependencies.remove_node(id);
                effect.removed.insert(id.clone());
            }
            _ => {
                // Labels cannot be deleted; the value stays until a candidate arrives.
                let c = state.claims.get_mut(id).expect("checked");
                if c.status != ClaimStatus::Locked {
                    c.status = ClaimStatus::Contradicted;
                }
            }
        },
    }
    debug_assert!(state.claims.iter().all(|c| element_value(
        &state.graph,
        c.claim_type,
        &c.target
    )
    .is_some()));
    Ok(())
}
