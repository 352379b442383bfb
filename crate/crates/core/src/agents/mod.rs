//! Verification agents: the evidence-provider contract, role scopes, probe
//! budgets and one parallel probing round over a fixed snapshot.

pub mod adapter;
pub mod oracle;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::claim::{Claim, ClaimStatus, ClaimType};
use crate::evidence::{EvidenceTuple, InvalidProbe, Role};
use crate::ids::ClaimId;
use crate::memory::MemoryState;

pub use adapter::{AdapterConfig, ExternalAgent, HttpTransport, Transport};
pub use oracle::{OracleAgent, OracleConfig, OracleNoise, RoleNoise};

/// What one probe produced, plus any non-fatal diagnostics (for example a
/// clamped confidence).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResponse {
    pub result: Result<EvidenceTuple, InvalidProbe>,
    pub warnings: Vec<String>,
}

impl From<Result<EvidenceTuple, InvalidProbe>> for ProbeResponse {
    fn from(result: Result<EvidenceTuple, InvalidProbe>) -> Self {
        Self {
            result,
            warnings: Vec::new(),
        }
    }
}

/// A role-scoped source of evidence. Implementations read only the snapshot
/// they are handed.
pub trait EvidenceProvider: Send + Sync {
    fn role(&self) -> Role;
    fn probe(&self, snapshot: &MemoryState, claim: &Claim, round: u32) -> ProbeResponse;
}

pub type Agents = Vec<Arc<dyn EvidenceProvider>>;

/// Whether `role` is responsible for `claim`.
///
/// Local grounding covers existence, labels, attributes and frame-local
/// relations; temporal consistency covers relations and attributes persisting
/// over more than one frame; the global audit covers everything but labels.
pub fn in_scope(role: Role, claim: &Claim) -> bool {
    let single = claim.temporal_extent.is_single_frame();
    match (role, claim.claim_type) {
        (Role::LocalGrounding, ClaimType::Rel) => single,
        (Role::LocalGrounding, _) => true,
        (Role::TemporalConsistency, ClaimType::Rel) => true,
        (Role::TemporalConsistency, ClaimType::Attr) => !single,
        (Role::TemporalConsistency, _) => false,
        (Role::GlobalAudit, ClaimType::Label) => false,
        (Role::GlobalAudit, _) => true,
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BudgetError {
    #[error("single_turn_max must cover one probe per role (>= 3), got {0}")]
    SingleTurn(u32),
    #[error("rounds_max must be at least 1")]
    Rounds,
    #[error("keyframes must be at least 1")]
    Keyframes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeBudget {
    pub single_turn_max: u32,
    pub multi_turn_max: u32,
    pub rounds_max: u32,
    pub keyframes: u32,
}

impl Default for ProbeBudget {
    fn default() -> Self {
        Self {
            single_turn_max: 5,
            multi_turn_max: 2,
            rounds_max: 2,
            keyframes: 5,
        }
    }
}

impl ProbeBudget {
    pub fn validate(&self) -> Result<(), BudgetError> {
        if self.single_turn_max < 3 {
            return Err(BudgetError::SingleTurn(self.single_turn_max));
        }
        if self.rounds_max == 0 {
            return Err(BudgetError::Rounds);
        }
        if self.keyframes == 0 {
            return Err(BudgetError::Keyframes);
        }
        Ok(())
    }

    /// Upper bound on model calls for one claim in one round.
    pub fn per_claim_ceiling(&self) -> u64 {
        u64::from(self.single_turn_max + self.multi_turn_max + 1)
    }

    /// Upper bound on model calls for `claims` probed over `rounds` rounds,
    /// including one caption call per round.
    pub fn ceiling(&self, claims: usize, rounds: u32) -> u64 {
        u64::from(rounds) * (claims as u64 * self.per_claim_ceiling() + 1)
    }
}

/// Model calls a role spends on a claim: temporal checks over a dynamic
/// interval take follow-up turns.
pub fn turns_for(role: Role, claim: &Claim, snapshot: &MemoryState, budget: &ProbeBudget) -> u32 {
    if role != Role::TemporalConsistency {
        return 1;
    }
    let dynamic = snapshot
        .graph
        .frames
        .values()
        .any(|f| f.dynamic && claim.temporal_extent.contains(f.frame_id));
    if dynamic {
        1 + budget.multi_turn_max
    } else {
        1
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeAccounting {
    /// In-scope probe invocations (the denominator of the invalid-probe rate).
    pub probes: usize,
    pub single_turn_calls: u64,
    pub multi_turn_calls: u64,
    pub caption_calls: u64,
    pub per_claim: BTreeMap<ClaimId, usize>,
}

impl ProbeAccounting {
    pub fn total_calls(&self) -> u64 {
        self.single_turn_calls + self.multi_turn_calls + self.caption_calls
    }

    pub fn merge(&mut self, other: &ProbeAccounting) {
        self.probes += other.probes;
        self.single_turn_calls += other.single_turn_calls;
        self.multi_turn_calls += other.multi_turn_calls;
        self.caption_calls += other.caption_calls;
        for (k, v) in &other.per_claim {
            *self.per_claim.entry(k.clone()).or_insert(0) += v;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundOutput {
    pub round: u32,
    /// Per claim, one tuple per role in role order. Out-of-scope roles appear
    /// as zero-confidence abstentions; invalid probes leave a gap.
    pub evidence: BTreeMap<ClaimId, Vec<EvidenceTuple>>,
    pub invalid: Vec<InvalidProbe>,
    pub warnings: Vec<(ClaimId, Role, String)>,
    pub accounting: ProbeAccounting,
}

/// Which claims a round may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundMode {
    /// Refinement: skip locked and human-resolved claims.
    Refine,
    /// Closure re-verification: skip only locked claims.
    Reverify,
}

/// Probe every eligible target with every agent, in parallel, against one
/// snapshot. Output order is independent of scheduling.
pub fn run_round(
    agents: &[Arc<dyn EvidenceProvider>],
    snapshot: &MemoryState,
    targets: &BTreeSet<ClaimId>,
    budget: &ProbeBudget,
    round: u32,
    mode: RoundMode,
) -> RoundOutput {
    let claims: Vec<&Claim> = targets
        .iter()
        .filter_map(|id| snapshot.claims.get(id))
        .filter(|c| match mode {
            RoundMode::Refine => !c.status.is_human_owned(),
            RoundMode::Reverify => c.status != ClaimStatus::Locked,
        })
        .collect();
    let jobs: Vec<(&Claim, &Arc<dyn EvidenceProvider>)> = claims
        .iter()
        .flat_map(|c| agents.iter().map(move |a| (*c, a)))
        .collect();
    let responses: Vec<(&Claim, Role, Option<ProbeResponse>)> = jobs
        .par_iter()
        .map(|(claim, agent)| {
            let role = agent.role();
            let resp = in_scope(role, claim).then(|| agent.probe(snapshot, claim, round));
            (*claim, role, resp)
        })
        .collect();

    let mut out = RoundOutput {
        round,
        ..Default::default()
    };
    let mut global_probed = false;
    for (claim, role, resp) in responses {
        let id = &claim.claim_id;
        let Some(resp) = resp else {
            out.evidence
                .entry(id.clone())
                .or_default()
                .push(EvidenceTuple::out_of_scope(id.clone(), role, round));
            continue;
        };
        let acc = &mut out.accounting;
        acc.probes += 1;
        *acc.per_claim.entry(id.clone()).or_insert(0) += 1;
        let turns = turns_for(role, claim, snapshot, budget);
        acc.single_turn_calls += 1;
        acc.multi_turn_calls += u64::from(turns - 1);
        global_probed |= role == Role::GlobalAudit;
        for w in resp.warnings {
            out.warnings.push((id.clone(), role, w));
        }
        match resp.result {
            Ok(t) => out.evidence.entry(id.clone()).or_default().push(t),
            Err(bad) => {
                out.evidence.entry(id.clone()).or_default();
                out.invalid.push(bad);
            }
        }
    }
    if global_probed {
        out.accounting.caption_calls = 1;
    }
    out
}
