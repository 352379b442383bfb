//! The supervisory correction loop: probing rounds, fusion write-back,
//! utility-gated escalation, human decisions and closure re-verification.
//!
//! All writes go through the owned [`SemanticMemory`]; the evidence store is
//! a projection of its log and the trace records what metrics need.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{in_scope, run_round, Agents, ProbeBudget, RoundMode, RoundOutput};
use crate::arbitration::{
    apply_human_decision, build_queue, open_queue, plan_reverify, ArbitrationError,
    ArbitrationItem, HumanAnswer, ReverifyPlan, UtilityWeights,
};
use crate::claim::{Claim, ClaimStatus};
use crate::evidence::Actor;
use crate::fusion::{fuse_claim, ClaimFusion, FusionConfig, Outcome, RoleWeightMatrix};
use crate::ids::{ClaimId, Version};
use crate::memory::{
    EditEffect, EditOp, FlagRecord, MemoryError, MemoryState, ProvenanceEntry, SemanticMemory,
};
use crate::ontology::Ontology;
use crate::store::EvidenceStore;
use crate::trace::{EpochKind, EpochRecord, Trace, TraceEvent};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Arbitration(#[from] ArbitrationError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub fusion: FusionConfig,
    pub weights: RoleWeightMatrix,
    pub utility: UtilityWeights,
    pub budget: ProbeBudget,
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let cfg = |e: String| EngineError::Config(e);
        self.fusion.validate().map_err(|e| cfg(e.to_string()))?;
        self.weights.validate().map_err(|e| cfg(e.to_string()))?;
        self.utility.validate().map_err(|e| cfg(e.to_string()))?;
        self.budget.validate().map_err(|e| cfg(e.to_string()))?;
        if self.fusion.rounds_max != self.budget.rounds_max {
            return Err(cfg(format!(
                "fusion.rounds_max {} differs from budget.rounds_max {}",
                self.fusion.rounds_max, self.budget.rounds_max
            )));
        }
        Ok(())
    }
}

/// Per-round summary of a refinement run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub epoch: u32,
    pub probed: usize,
    pub calls: u64,
    pub invalid: usize,
    pub fusions: Vec<ClaimFusion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopReport {
    pub rounds: Vec<RoundReport>,
    /// True when the loop stopped before `rounds_max` because nothing changed
    /// or nothing was left to probe.
    pub converged: bool,
    pub escalated: Vec<ArbitrationItem>,
}

impl LoopReport {
    pub fn rounds_run(&self) -> usize {
        self.rounds.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReverifyReport {
    pub epoch: Option<u32>,
    pub calls_actual: usize,
    pub calls_full: usize,
    pub fusions: Vec<ClaimFusion>,
    pub escalated: Vec<ArbitrationItem>,
}

impl ReverifyReport {
    pub fn reduction_ratio(&self) -> f64 {
        if self.calls_actual == 0 {
            1.0
        } else {
            self.calls_full as f64 / self.calls_actual as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionReport {
    pub version: Version,
    pub plan: ReverifyPlan,
    pub reverify: ReverifyReport,
}

pub struct Engine {
    memory: SemanticMemory,
    store: EvidenceStore,
    ontology: Arc<Ontology>,
    config: EngineConfig,
    agents: Agents,
    trace: Trace,
}

impl Engine {
    pub fn new(
        memory: SemanticMemory,
        ontology: Arc<Ontology>,
        config: EngineConfig,
        agents: Agents,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        let mut trace = Trace::default();
        trace.push(TraceEvent::Start {
            claims: memory.state().claims.len(),
            keyframes: memory.state().graph.frames.len(),
        });
        Ok(Self {
            store: EvidenceStore::from_log(memory.log()),
            memory,
            ontology,
            config,
            agents,
            trace,
        })
    }

    /// Rebuild from a version-0 snapshot, its provenance log and the trace.
    pub fn restore(
        initial: MemoryState,
        log: Vec<ProvenanceEntry>,
        trace: Trace,
        ontology: Arc<Ontology>,
        config: EngineConfig,
        agents: Agents,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        let memory = SemanticMemory::replay(initial, log)?;
        Ok(Self {
            store: EvidenceStore::from_log(memory.log()),
            memory,
            ontology,
            config,
            agents,
            trace,
        })
    }

    pub fn memory(&self) -> &SemanticMemory {
        &self.memory
    }

    pub fn state(&self) -> &MemoryState {
        self.memory.state()
    }

    pub fn ontology(&self) -> &Ontology {
        &self.ontology
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn evidence(&self, claim_id: &ClaimId) -> &[crate::evidence::EvidenceTuple] {
        self.store.evidence(claim_id)
    }

    pub fn queue(&self) -> Vec<ArbitrationItem> {
        open_queue(self.memory.state())
    }

    /// Fusion of the claim's accumulated evidence, if the claim exists.
    pub fn fusion(&self, claim_id: &ClaimId) -> Option<ClaimFusion> {
        let claim = self.memory.state().claims.get(claim_id)?;
        self.fuse(claim).ok()
    }

    fn fuse(&self, claim: &Claim) -> Result<ClaimFusion, EngineError> {
        fuse_claim(
            claim,
            self.store.evidence(&claim.claim_id),
            &self.ontology,
            &self.config.weights,
            &self.config.fusion,
        )
        .map_err(|e| EngineError::Config(e.to_string()))
    }

    fn write(&mut self, op: EditOp, actor: Actor) -> Result<EditEffect, MemoryError> {
        let r = self.memory.apply_edit(op, actor);
        self.store.sync(self.memory.log());
        r
    }

    /// Automated write; a claim that became human-owned meanwhile is skipped.
    fn write_auto(&mut self, op: EditOp) -> Option<EditEffect> {
        match self.write(op, Actor::Arbitration) {
            Ok(e) => Some(e),
            Err(err) => {
                log::info!("automated write skipped: {err}");
                None
            }
        }
    }

    fn probe(&mut self, targets: &BTreeSet<ClaimId>, mode: RoundMode) -> (u32, RoundOutput) {
        let epoch = self.trace.last_epoch() + 1;
        let snapshot = self.memory.snapshot();
        let out = run_round(
            &self.agents,
            &snapshot,
            targets,
            &self.config.budget,
            epoch,
            mode,
        );
        for (id, tuples) in &out.evidence {
            let Some(claim) = snapshot.claims.get(id) else {
                continue;
            };
            for t in tuples.iter().filter(|t| in_scope(t.role, claim)) {
                let record = FlagRecord::Evidence {
                    evidence: t.clone(),
                };
                self.write(EditOp::Flag { record }, t.role.actor())
                    .expect("verifiers may flag live claims");
            }
        }
        for p in &out.invalid {
            let record = FlagRecord::InvalidProbe { probe: p.clone() };
            self.write(EditOp::Flag { record }, p.role.actor())
                .expect("verifiers may flag live claims");
        }
        for (id, role, message) in &out.warnings {
            let record = FlagRecord::Warning {
                claim_id: Some(id.clone()),
                message: message.clone(),
            };
            self.write(EditOp::Flag { record }, role.actor())
                .expect("verifiers may flag live claims");
        }
        (epoch, out)
    }

    /// Fuse and write back one claim's outcome. Returns the fusion and
    /// whether the claim's value was rewritten.
    fn decide(&mut self, id: &ClaimId) -> Option<(ClaimFusion, bool)> {
        let claim = self.memory.state().claims.get(id)?.clone();
        if claim.status.is_human_owned() {
            return None;
        }
        let fusion = self.fuse(&claim).ok()?;
        let p = fusion.belief;
        let mut rewritten = false;
        match &fusion.outcome {
            Outcome::Accept => {
                self.write_auto(EditOp::Accept {
                    claim_id: id.clone(),
                    belief: p,
                });
            }
            Outcome::Rewrite { value } => {
                rewritten = self
                    .write_auto(EditOp::Rewrite {
                        claim_id: id.clone(),
                        value: value.clone(),
                        belief: Some(p),
                    })
                    .is_some();
            }
            Outcome::EscalateCandidate => {
                let status = if p <= self.config.fusion.reject_belief {
                    ClaimStatus::Contradicted
                } else {
                    ClaimStatus::Pending
                };
                self.write_auto(EditOp::Escalate {
                    claim_id: id.clone(),
                    belief: Some(p),
                    status,
                    ticket: None,
                });
            }
        }
        Some((fusion, rewritten))
    }

    /// Gate escalation candidates and open tickets for those admitted.
    fn escalate(&mut self, candidates: &BTreeMap<ClaimId, ClaimFusion>) -> Vec<ArbitrationItem> {
        let state = self.memory.snapshot();
        let pairs: Vec<(&Claim, &ClaimFusion)> = candidates
            .iter()
            .filter_map(|(id, f)| state.claims.get(id).map(|c| (c, f)))
            .filter(|(c, _)| !c.status.is_human_owned())
            .collect();
        let items = build_queue(
            pairs,
            &state.dependencies,
            &self.ontology,
            &self.config.utility,
        );
        let mut admitted = Vec::new();
        for item in items {
            let was_open = state
                .claims
                .get(&item.claim_id)
                .is_some_and(|c| c.status == ClaimStatus::Escalated);
            let op = EditOp::Escalate {
                claim_id: item.claim_id.clone(),
                belief: Some(candidates[&item.claim_id].belief),
                status: ClaimStatus::Escalated,
                ticket: Some(item.ticket()),
            };
            if self.write_auto(op).is_some() {
                if !was_open {
                    self.trace.push(TraceEvent::Query {
                        claim_id: item.claim_id.clone(),
                        utility: item.utility,
                        query: item.query.kind().to_owned(),
                    });
                }
                admitted.push(item);
            }
        }
        admitted
    }

    fn record_epoch(
        &mut self,
        epoch: u32,
        kind: EpochKind,
        out: RoundOutput,
        fusions: Vec<ClaimFusion>,
    ) {
        self.trace.push(TraceEvent::Epoch(EpochRecord {
            epoch,
            kind,
            evidence: out.evidence,
            invalid: out.invalid,
            accounting: out.accounting,
            fusions,
        }));
    }

    /// Run up to `rounds_max` probing rounds. Round 1 probes pending and
    /// contradicted claims; later rounds add the one-step closure of claims
    /// rewritten in the previous round. Stops early when nothing is left to
    /// probe or no status changed. Escalation candidates are then gated into
    /// the human queue.
    pub fn verify(&mut self) -> LoopReport {
        let rounds_max = self.config.fusion.rounds_max;
        let mut reports = Vec::new();
        let mut revised: BTreeSet<ClaimId> = BTreeSet::new();
        let mut candidates: BTreeMap<ClaimId, ClaimFusion> = BTreeMap::new();
        let mut converged = false;
        for round in 1..=rounds_max {
            let targets = self.round_targets(&revised);
            if targets.is_empty() {
                converged = true;
                break;
            }
            let before = self.statuses();
            let (epoch, out) = self.probe(&targets, RoundMode::Refine);
            let (probed, calls, invalid) = (
                out.accounting.per_claim.len(),
                out.accounting.total_calls(),
                out.invalid.len(),
            );
            revised.clear();
            let mut fusions = Vec::new();
            for id in &targets {
                let Some((fusion, rewritten)) = self.decide(id) else {
                    continue;
                };
                if rewritten {
                    revised.insert(id.clone());
                }
                if fusion.outcome == Outcome::EscalateCandidate {
                    candidates.insert(id.clone(), fusion.clone());
                } else {
                    candidates.remove(id);
                }
                fusions.push(fusion);
            }
            self.record_epoch(epoch, EpochKind::Refine, out, fusions.clone());
            reports.push(RoundReport {
                round,
                epoch,
                probed,
                calls,
                invalid,
                fusions,
            });
            if self.statuses() == before {
                converged = true;
                break;
            }
        }
        let escalated = self.escalate(&candidates);
        LoopReport {
            rounds: reports,
            converged,
            escalated,
        }
    }

    fn statuses(&self) -> Vec<(ClaimId, ClaimStatus)> {
        self.memory
            .state()
            .claims
            .iter()
            .map(|c| (c.claim_id.clone(), c.status))
            .collect()
    }

    fn round_targets(&self, revised: &BTreeSet<ClaimId>) -> BTreeSet<ClaimId> {
        let state = self.memory.state();
        let mut t: BTreeSet<ClaimId> = state
            .claims
            .iter()
            .filter(|c| matches!(c.status, ClaimStatus::Pending | ClaimStatus::Contradicted))
            .map(|c| c.claim_id.clone())
            .collect();
        if !revised.is_empty() {
            let live: Vec<&ClaimId> = revised
                .iter()
                .filter(|id| state.claims.contains(id))
                .collect();
            if let Ok(closure) = state.dependencies.closure(live) {
                t.extend(closure.into_iter().filter(|id| {
                    state.claims.get(id).is_some_and(|c| {
                        !matches!(
                            c.status,
                            ClaimStatus::Locked
                                | ClaimStatus::HumanResolved
                                | ClaimStatus::Escalated
                        )
                    })
                }));
            }
        }
        t
    }

    /// Re-probe exactly the plan's claims, re-fuse them and re-classify all
    /// but human-resolved ones.
    pub fn reverify(&mut self, plan: &ReverifyPlan) -> ReverifyReport {
        if plan.probe_plan.is_empty() {
            if !plan.is_empty() {
                self.trace.push(TraceEvent::Reverify {
                    edited: plan.edited.clone(),
                    calls_actual: 0,
                    calls_full: plan.calls_full_baseline,
                });
            }
            return ReverifyReport {
                calls_full: plan.calls_full_baseline,
                ..Default::default()
            };
        }
        let targets: BTreeSet<ClaimId> = plan.probe_plan.keys().cloned().collect();
        let (epoch, out) = self.probe(&targets, RoundMode::Reverify);
        let mut fusions = Vec::new();
        let mut candidates = BTreeMap::new();
        for id in &targets {
            let Some((fusion, _)) = self.decide(id) else {
                continue;
            };
            if fusion.outcome == Outcome::EscalateCandidate {
                candidates.insert(id.clone(), fusion.clone());
            }
            fusions.push(fusion);
        }
        self.record_epoch(epoch, EpochKind::Reverify, out, fusions.clone());
        self.trace.push(TraceEvent::Reverify {
            edited: plan.edited.clone(),
            calls_actual: plan.calls_planned,
            calls_full: plan.calls_full_baseline,
        });
        let escalated = self.escalate(&candidates);
        ReverifyReport {
            epoch: Some(epoch),
            calls_actual: plan.calls_planned,
            calls_full: plan.calls_full_baseline,
            fusions,
            escalated,
        }
    }

    /// Apply a human answer to an open item, then re-verify its closure.
    pub fn answer(
        &mut self,
        claim_id: &ClaimId,
        answer: HumanAnswer,
    ) -> Result<DecisionReport, EngineError> {
        let plan = apply_human_decision(&mut self.memory, claim_id, answer.clone(), &self.ontology);
        self.store.sync(self.memory.log());
        let plan = plan?;
        self.trace.push(TraceEvent::Answer {
            claim_id: claim_id.clone(),
            answer,
        });
        if let Some(c) = self.memory.state().claims.get(claim_id) {
            if let (ClaimStatus::Escalated, Some(t)) = (c.status, &c.ticket) {
                self.trace.push(TraceEvent::Query {
                    claim_id: claim_id.clone(),
                    utility: t.utility,
                    query: t.query.kind().to_owned(),
                });
            }
        }
        let reverify = self.reverify(&plan);
        Ok(DecisionReport {
            version: self.memory.version(),
            plan,
            reverify,
        })
    }

    /// Human override of any claim's value, then closure re-verification.
    pub fn override_claim(
        &mut self,
        claim_id: &ClaimId,
        value: String,
    ) -> Result<DecisionReport, EngineError> {
        let pre_deps = self.memory.state().dependencies.clone();
        let effect = self.write(
            EditOp::Override {
                claim_id: claim_id.clone(),
                value,
            },
            Actor::Human,
        )?;
        let plan = plan_reverify(&pre_deps, self.memory.state(), effect.value_changed);
        let reverify = self.reverify(&plan);
        Ok(DecisionReport {
            version: self.memory.version(),
            plan,
            reverify,
        })
    }

    pub fn lock(&mut self, claim_id: &ClaimId) -> Result<Version, EngineError> {
        let v = self.memory.lock_claim(claim_id, Actor::Human);
        self.store.sync(self.memory.log());
        Ok(v?)
    }

    pub fn rollback(&mut self, target: Version) -> Result<Version, EngineError> {
        let v = self.memory.rollback(target);
        self.store.sync(self.memory.log());
        Ok(v?)
    }

    /// Any edit on behalf of `actor`, for callers that drive the memory directly.
    pub fn apply(&mut self, op: EditOp, actor: Actor) -> Result<EditEffect, EngineError> {
        Ok(self.write(op, actor)?)
    }
}
