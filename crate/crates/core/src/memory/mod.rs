//! Versioned semantic memory: graph state, claims, dependency graph and the
//! provenance log that makes every write auditable and replayable.
//!
//! All writes go through [`SemanticMemory::apply_edit`], which checks the
//! actor's authority, refuses automated writes to locked or human-resolved
//! claims, applies the edit atomically and appends one [`ProvenanceEntry`].
//! Readers take an immutable [`MemoryState`] snapshot via
//! [`SemanticMemory::snapshot`].
//!
//! Rollback never truncates history: it appends a `rollback` entry whose
//! effect is to restore the state recorded at the target version.

pub mod authority;
pub mod edit;
pub mod provenance;

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use chrono::Utc;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use authority::{authorize, permits, Action};
pub use edit::{EditEffect, EditOp, FlagRecord};
pub use provenance::{read_jsonl, write_jsonl, LogFormatError, ProvenanceEntry};

use crate::claim::{element_value, ClaimSet};
use crate::deps::{DependencyError, DependencyGraph};
use crate::evidence::Actor;
use crate::graph::{GraphError, GraphState};
use crate::ids::{ClaimId, Version};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MemoryError {
    #[error("{actor} is not permitted to {action}")]
    Authority { actor: Actor, action: Action },
    #[error("claim {0} is locked")]
    Locked(ClaimId),
    #[error("claim {0} was resolved by the human supervisor")]
    HumanOwned(ClaimId),
    #[error("unknown claim {0}")]
    UnknownClaim(ClaimId),
    #[error("claim {0} does not resolve to a live graph element with its asserted value")]
    DanglingClaim(ClaimId),
    #[error("invalid edit: {0}")]
    InvalidEdit(String),
    #[error("version {target} is ahead of current version {current}")]
    FutureVersion { target: Version, current: Version },
    #[error("graph: {0}")]
    Graph(#[from] GraphError),
    #[error("dependencies: {0}")]
    Dependency(#[from] DependencyError),
    #[error("replay failed at seq {seq}: {reason}")]
    Replay { seq: u64, reason: String },
}

/// The graph/claims/dependencies triple at one version. Serializes to the
/// snapshot document (`version`, `frames`, `entities`, `relations`,
/// `attributes`, `claims`, `dependencies`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryState {
    pub version: Version,
    #[serde(flatten)]
    pub graph: GraphState,
    pub claims: ClaimSet,
    pub dependencies: DependencyGraph,
}

impl MemoryState {
    /// Claims that automated rounds may still probe and classify.
    pub fn live_claim_count(&self) -> usize {
        self.claims.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMemory {
    initial: Arc<MemoryState>,
    state: Arc<MemoryState>,
    log: Vec<ProvenanceEntry>,
}

impl SemanticMemory {
    /// Build the version-0 memory. The log starts with one `init` entry
    /// attributed to the constructor.
    pub fn init(
        graph: GraphState,
        claims: ClaimSet,
        mut deps: DependencyGraph,
    ) -> Result<Self, MemoryError> {
        graph.validate()?;
        for c in claims.iter() {
            if c.belief.is_some() || c.ticket.is_some() {
                return Err(MemoryError::InvalidEdit(format!(
                    "claim {} carries a belief or ticket before any fusion round",
                    c.claim_id
                )));
            }
            match element_value(&graph, c.claim_type, &c.target) {
                Some(v) if v == c.asserted_value => {}
                _ => return Err(MemoryError::DanglingClaim(c.claim_id.clone())),
            }
        }
        let known: BTreeSet<&ClaimId> = claims.ids().collect();
        if let Some(stray) = deps.nodes().find(|n| !known.contains(n)) {
            return Err(DependencyError::UnknownEndpoint(stray.clone()).into());
        }
        for id in claims.ids() {
            deps.add_node(id.clone());
        }
        let op = EditOp::Init {
            entities: graph.entities.len(),
            relations: graph.relations.len(),
            attributes: graph.attributes.len(),
            claims: claims.len(),
            dependencies: deps.edge_count(),
        };
        let state = Arc::new(MemoryState {
            version: 0,
            graph,
            claims,
            dependencies: deps,
        });
        let entry = ProvenanceEntry {
            seq: 1,
            timestamp: Utc::now(),
            actor: Actor::Constructor,
            action: Action::Init,
            payload: op,
            prior_version: 0,
            new_version: 0,
        };
        Ok(Self {
            initial: state.clone(),
            state,
            log: vec![entry],
        })
    }

    pub fn version(&self) -> Version {
        self.state.version
    }

    /// Immutable snapshot of the current state; cheap to clone and share.
    pub fn snapshot(&self) -> Arc<MemoryState> {
        self.state.clone()
    }

    pub fn state(&self) -> &MemoryState {
        &self.state
    }

    pub fn initial(&self) -> &MemoryState {
        &self.initial
    }

    pub fn log(&self) -> &[ProvenanceEntry] {
        &self.log
    }

    /// Apply one edit on behalf of `actor`.
    ///
    /// Versioned edits bump the version by exactly one; flags are recorded
    /// without a version change. A rejected edit leaves graph, claims and
    /// version untouched and is logged as a violation flag.
    pub fn apply_edit(&mut self, edit: EditOp, actor: Actor) -> Result<EditEffect, MemoryError> {
        let action = edit.action();
        if action == Action::Init || !permits(actor, action) {
            let err = MemoryError::Authority { actor, action };
            self.log_violation(actor, action, edit.claim_id().cloned(), &err);
            return Err(err);
        }
        if !edit.is_versioned() {
            if let Some(id) = edit.claim_id() {
                if !self.state.claims.contains(id) {
                    return Err(MemoryError::UnknownClaim(id.clone()));
                }
            }
            self.push(actor, edit, self.version());
            return Ok(EditEffect::default());
        }

        let mut next = (*self.state).clone();
        let initial = self.initial.clone();
        let log = &self.log;
        let mut historical = |v: Version| replay_to(&initial, log, Some(v));
        let result = edit::apply_op(&mut next, &edit, actor, &mut historical);
        match result {
            Ok(effect) => {
                next.version = self.version() + 1;
                let prior = self.version();
                self.state = Arc::new(next);
                self.push(actor, edit, prior);
                Ok(effect)
            }
            Err(err) => {
                if matches!(err, MemoryError::Locked(_) | MemoryError::HumanOwned(_)) {
                    self.log_violation(actor, action, edit.claim_id().cloned(), &err);
                }
                Err(err)
            }
        }
    }

    /// Record a non-versioned flag (evidence, invalid probe, warning).
    pub fn record_flag(&mut self, actor: Actor, record: FlagRecord) -> Result<(), MemoryError> {
        self.apply_edit(EditOp::Flag { record }, actor).map(|_| ())
    }

    /// Human lock; repeated locks are accepted and logged again.
    pub fn lock_claim(&mut self, claim_id: &ClaimId, actor: Actor) -> Result<Version, MemoryError> {
        self.apply_edit(
            EditOp::Lock {
                claim_id: claim_id.clone(),
            },
            actor,
        )?;
        Ok(self.version())
    }

    /// Restore the state recorded at `target_version` as a new version.
    pub fn rollback(&mut self, target_version: Version) -> Result<Version, MemoryError> {
        self.apply_edit(EditOp::Rollback { target_version }, Actor::Human)?;
        Ok(self.version())
    }

    /// State as it was at `version`, reconstructed from the log.
    pub fn state_at(&self, version: Version) -> Result<MemoryState, MemoryError> {
        if version > self.version() {
            return Err(MemoryError::FutureVersion {
                target: version,
                current: self.version(),
            });
        }
        if version == self.version() {
            return Ok((*self.state).clone());
        }
        replay_to(&self.initial, &self.log, Some(version))
    }

    /// Rebuild a memory from its version-0 snapshot and provenance log.
    pub fn replay(initial: MemoryState, log: Vec<ProvenanceEntry>) -> Result<Self, MemoryError> {
        if initial.version != 0 {
            return Err(MemoryError::Replay {
                seq: 0,
                reason: format!("initial snapshot has version {}", initial.version),
            });
        }
        let state = replay_to(&initial, &log, None)?;
        Ok(Self {
            initial: Arc::new(initial),
            state: Arc::new(state),
            log,
        })
    }

    fn push(&mut self, actor: Actor, payload: EditOp, prior: Version) {
        let entry = ProvenanceEntry {
            seq: self.log.len() as u64 + 1,
            timestamp: Utc::now(),
            actor,
            action: payload.action(),
            payload,
            prior_version: prior,
            new_version: self.version(),
        };
        self.log.push(entry);
    }

    fn log_violation(
        &mut self,
        actor: Actor,
        attempted: Action,
        claim_id: Option<ClaimId>,
        err: &MemoryError,
    ) {
        log::warn!("rejected {attempted} by {actor}: {err}");
        let record = FlagRecord::Violation {
            attempted,
            claim_id,
            reason: err.to_string(),
        };
        self.push(actor, EditOp::Flag { record }, self.version());
    }
}

/// Replay `log` over `initial`, stopping once the state reaches `stop_at`.
fn replay_to(
    initial: &MemoryState,
    log: &[ProvenanceEntry],
    stop_at: Option<Version>,
) -> Result<MemoryState, MemoryError> {
    let mut state = initial.clone();
    if stop_at == Some(state.version) {
        return Ok(state);
    }
    // Versions some later rollback will ask for.
    let wanted: BTreeSet<Version> = log
        .iter()
        .filter_map(|e| match e.payload {
            EditOp::Rollback { target_version } => Some(target_version),
            _ => None,
        })
        .collect();
    let mut saved: HashMap<Version, MemoryState> = HashMap::new();
    if wanted.contains(&state.version) {
        saved.insert(state.version, state.clone());
    }

    for (i, e) in log.iter().enumerate() {
        let expected = i as u64 + 1;
        let fail = |reason: String| MemoryError::Replay { seq: e.seq, reason };
        if e.seq != expected {
            return Err(fail(format!("expected seq {expected}")));
        }
        if e.action != e.payload.action() {
            return Err(fail("action does not match payload".into()));
        }
        let is_violation = matches!(
            e.payload,
            EditOp::Flag {
                record: FlagRecord::Violation { .. }
            }
        );
        if !is_violation && !permits(e.actor, e.action) {
            return Err(fail(format!("{} may not {}", e.actor, e.action)));
        }
        if matches!(e.payload, EditOp::Init { .. }) && i != 0 {
            return Err(fail("init entry after the first position".into()));
        }
        if e.prior_version != state.version {
            return Err(fail(format!(
                "prior_version {} but state is at {}",
                e.prior_version, state.version
            )));
        }
        if e.payload.is_versioned() {
            let mut lookup = |v: Version| {
                saved.get(&v).cloned().ok_or_else(|| MemoryError::Replay {
                    seq: e.seq,
                    reason: format!("rollback target {v} not reached"),
                })
            };
            edit::apply_op(&mut state, &e.payload, e.actor, &mut lookup)
                .map_err(|err| fail(err.to_string()))?;
            state.version += 1;
        }
        if e.new_version != state.version {
            return Err(fail(format!(
                "new_version {} but replay reached {}",
                e.new_version, state.version
            )));
        }
        if wanted.contains(&state.version) && !saved.contains_key(&state.version) {
            saved.insert(state.version, state.clone());
        }
        if stop_at == Some(state.version) {
            return Ok(state);
        }
    }
    match stop_at {
        Some(v) if v != state.version => Err(MemoryError::FutureVersion {
            target: v,
            current: state.version,
        }),
        _ => Ok(state),
    }
}

#[cfg(test)]
mod tests;
