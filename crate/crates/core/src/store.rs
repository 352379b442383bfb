//! Per-claim evidence accumulated since the claim's value last changed,
//! projected from the provenance log.

use std::collections::BTreeMap;

use crate::arbitration::HumanAnswer;
use crate::evidence::EvidenceTuple;
use crate::ids::ClaimId;
use crate::memory::{EditOp, FlagRecord, ProvenanceEntry};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvidenceStore {
    by_claim: BTreeMap<ClaimId, Vec<EvidenceTuple>>,
    cursor: usize,
}

impl EvidenceStore {
    pub fn from_log(log: &[ProvenanceEntry]) -> Self {
        let mut s = Self::default();
        s.sync(log);
        s
    }

    /// Fold in log entries not seen yet.
    pub fn sync(&mut self, log: &[ProvenanceEntry]) {
        for e in &log[self.cursor.min(log.len())..] {
            self.observe(&e.payload);
        }
        self.cursor = log.len();
    }

    fn observe(&mut self, op: &EditOp) {
        match op {
            EditOp::Flag {
                record: FlagRecord::Evidence { evidence },
            } => self
                .by_claim
                .entry(evidence.claim_id.clone())
                .or_default()
                .push(evidence.clone()),
            EditOp::Rewrite { claim_id, .. } | EditOp::Override { claim_id, .. } => {
                self.by_claim.remove(claim_id);
            }
            EditOp::HumanAnswer { claim_id, answer } if *answer != HumanAnswer::Confirm => {
                self.by_claim.remove(claim_id);
            }
            EditOp::Rollback { .. } => self.by_claim.clear(),
            _ => {}
        }
    }

    pub fn evidence(&self, claim_id: &ClaimId) -> &[EvidenceTuple] {
        self.by_claim.get(claim_id).map_or(&[], Vec::as_slice)
    }
}
