//! Escalation utility, the human query queue, human decisions and
//! dependency-closure re-verification planning.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::in_scope;
use crate::claim::{Claim, ClaimStatus, ClaimType};
use crate::deps::DependencyGraph;
use crate::evidence::{Actor, Role};
use crate::fusion::{ClaimFusion, DirectionalScores};
use crate::ids::ClaimId;
use crate::memory::{EditOp, MemoryError, MemoryState, SemanticMemory};
use crate::ontology::Ontology;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UtilityComponents {
    pub unc: f64,
    pub conflict: f64,
    pub impact: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Query {
    Binary,
    CandidateSelect { options: Vec<String> },
}

impl Query {
    pub fn kind(&self) -> &'static str {
        match self {
            Query::Binary => "binary",
            Query::CandidateSelect { .. } => "candidate_select",
        }
    }
}

/// What the human is asked, and why the claim ranks where it does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscalationTicket {
    pub utility: f64,
    pub components: UtilityComponents,
    pub query: Query,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum HumanAnswer {
    Confirm,
    Reject,
    Select { value: String },
}

impl HumanAnswer {
    pub fn kind(&self) -> &'static str {
        match self {
            HumanAnswer::Confirm => "confirm",
            HumanAnswer::Reject => "reject",
            HumanAnswer::Select { .. } => "select",
        }
    }
}

/// Which side of `θ_u` reaches the human.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateDirection {
    /// `u ≥ θ_u` escalates: high uncertainty, conflict or impact needs a human.
    #[default]
    AtLeast,
    /// `u < θ_u` escalates.
    Below,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("utility weights must be nonnegative with a positive sum")]
pub struct UtilityWeightsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UtilityWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub theta_u: f64,
    pub impact_norm: bool,
    pub gate_direction: GateDirection,
}

impl Default for UtilityWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            theta_u: 0.5,
            impact_norm: true,
            gate_direction: GateDirection::AtLeast,
        }
    }
}

impl UtilityWeights {
    pub fn validate(&self) -> Result<(), UtilityWeightsError> {
        let w = [self.alpha, self.beta, self.gamma];
        if w.iter().all(|x| *x >= 0.0) && w.iter().sum::<f64>() > 0.0 && self.theta_u.is_finite() {
            Ok(())
        } else {
            Err(UtilityWeightsError)
        }
    }

    pub fn admits(&self, u: f64) -> bool {
        match self.gate_direction {
            GateDirection::AtLeast => u >= self.theta_u,
            GateDirection::Below => u < self.theta_u,
        }
    }
}

pub fn impact(claim_id: &ClaimId, deps: &DependencyGraph, normalize: bool) -> f64 {
    let d = deps.out_degree(claim_id) as f64;
    if !normalize {
        return d;
    }
    match deps.max_out_degree() {
        0 => 0.0,
        m => d / m as f64,
    }
}

/// `u = α·S⁰ + β·min(S⁺, S⁻) + γ·impact`.
pub fn utility(
    claim_id: &ClaimId,
    scores: &DirectionalScores,
    deps: &DependencyGraph,
    w: &UtilityWeights,
) -> (f64, UtilityComponents) {
    let c = UtilityComponents {
        unc: scores.s_zero,
        conflict: scores.s_plus.min(scores.s_minus),
        impact: impact(claim_id, deps, w.impact_norm),
    };
    (
        w.alpha * c.unc + w.beta * c.conflict + w.gamma * c.impact,
        c,
    )
}

/// Candidate selection when any scored value differs from the current one;
/// the options are the claim's whole ontology, best-scored first.
pub fn build_query(
    claim: &Claim,
    candidates: &BTreeMap<String, f64>,
    ontology: &Ontology,
) -> Query {
    let options = ontology.options_for(claim);
    let has_alternative = candidates
        .iter()
        .any(|(v, &q)| q > 0.0 && *v != claim.asserted_value);
    if options.is_empty() || !has_alternative {
        return Query::Binary;
    }
    Query::CandidateSelect {
        options: order_options(options, candidates),
    }
}

fn order_options(mut options: Vec<String>, scores: &BTreeMap<String, f64>) -> Vec<String> {
    let q = |v: &String| scores.get(v).copied().unwrap_or(0.0);
    options.sort_by(|a, b| q(b).total_cmp(&q(a)).then_with(|| a.cmp(b)));
    options
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Open,
    Answered,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbitrationItem {
    pub claim_id: ClaimId,
    pub utility: f64,
    pub components: UtilityComponents,
    pub query: Query,
    pub status: ItemStatus,
}

impl ArbitrationItem {
    pub fn ticket(&self) -> EscalationTicket {
        EscalationTicket {
            utility: self.utility,
            components: self.components,
            query: self.query.clone(),
        }
    }
}

fn sort_queue(items: &mut [ArbitrationItem]) {
    items.sort_by(|a, b| {
        b.utility
            .total_cmp(&a.utility)
            .then_with(|| a.claim_id.cmp(&b.claim_id))
    });
}

/// Gate and rank escalation candidates, highest utility first.
pub fn build_queue<'a>(
    candidates: impl IntoIterator<Item = (&'a Claim, &'a ClaimFusion)>,
    deps: &DependencyGraph,
    ontology: &Ontology,
    w: &UtilityWeights,
) -> Vec<ArbitrationItem> {
    let mut items: Vec<ArbitrationItem> = candidates
        .into_iter()
        .filter_map(|(claim, fusion)| {
            let (u, components) = utility(&claim.claim_id, &fusion.scores, deps, w);
            w.admits(u).then(|| ArbitrationItem {
                claim_id: claim.claim_id.clone(),
                utility: u,
                components,
                query: build_query(claim, &fusion.candidates, ontology),
                status: ItemStatus::Open,
            })
        })
        .collect();
    sort_queue(&mut items);
    items
}

/// The open queue as recorded in a memory state: every escalated claim with
/// its ticket.
pub fn open_queue(state: &MemoryState) -> Vec<ArbitrationItem> {
    let mut items: Vec<ArbitrationItem> = state
        .claims
        .iter()
        .filter(|c| c.status == ClaimStatus::Escalated)
        .filter_map(|c| {
            let t = c.ticket.as_ref()?;
            Some(ArbitrationItem {
                claim_id: c.claim_id.clone(),
                utility: t.utility,
                components: t.components,
                query: t.query.clone(),
                status: ItemStatus::Open,
            })
        })
        .collect();
    sort_queue(&mut items);
    items
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReverifyPlan {
    pub edited: BTreeSet<ClaimId>,
    /// One-step closure over the pre-edit dependency graph; may name retired claims.
    pub closure: BTreeSet<ClaimId>,
    /// Live, unlocked closure members and the roles that will probe them.
    pub probe_plan: BTreeMap<ClaimId, Vec<Role>>,
    pub calls_planned: usize,
    pub calls_full_baseline: usize,
}

impl ReverifyPlan {
    pub fn is_empty(&self) -> bool {
        self.edited.is_empty()
    }
}

/// Plan re-verification of `edited` claims. Costs count claims re-verified;
/// the baseline re-verifies every live claim.
pub fn plan_reverify(
    pre_deps: &DependencyGraph,
    state: &MemoryState,
    edited: BTreeSet<ClaimId>,
) -> ReverifyPlan {
    if edited.is_empty() {
        return ReverifyPlan::default();
    }
    let closure = pre_deps
        .closure(edited.iter())
        .unwrap_or_else(|_| edited.clone());
    let probe_plan: BTreeMap<ClaimId, Vec<Role>> = closure
        .iter()
        .filter_map(|id| state.claims.get(id))
        .filter(|c| c.status != ClaimStatus::Locked)
        .map(|c| {
            let roles = Role::ALL.into_iter().filter(|&r| in_scope(r, c)).collect();
            (c.claim_id.clone(), roles)
        })
        .collect();
    ReverifyPlan {
        calls_planned: probe_plan.len(),
        calls_full_baseline: state.claims.len(),
        edited,
        closure,
        probe_plan,
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArbitrationError {
    #[error("claim {0} has no open arbitration item")]
    NotOpen(ClaimId),
    #[error("{answer} answer does not match {query} query")]
    Mismatch {
        query: &'static str,
        answer: &'static str,
    },
    #[error("{0:?} is not among the offered options")]
    NotOffered(String),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

/// Answer an open item as the human supervisor. Rejecting a label keeps the
/// value and re-opens the claim as a candidate selection over its ontology.
pub fn apply_human_decision(
    memory: &mut SemanticMemory,
    claim_id: &ClaimId,
    answer: HumanAnswer,
    ontology: &Ontology,
) -> Result<ReverifyPlan, ArbitrationError> {
    let claim = memory
        .state()
        .claims
        .get(claim_id)
        .ok_or_else(|| MemoryError::UnknownClaim(claim_id.clone()))?
        .clone();
    let ticket = match (&claim.status, &claim.ticket) {
        (ClaimStatus::Escalated, Some(t)) => t.clone(),
        _ => return Err(ArbitrationError::NotOpen(claim_id.clone())),
    };
    match (&ticket.query, &answer) {
        (Query::Binary, HumanAnswer::Confirm | HumanAnswer::Reject) => {}
        (Query::CandidateSelect { options }, HumanAnswer::Select { value }) => {
            if !options.contains(value) {
                return Err(ArbitrationError::NotOffered(value.clone()));
            }
        }
        (q, a) => {
            return Err(ArbitrationError::Mismatch {
                query: q.kind(),
                answer: a.kind(),
            })
        }
    }

    let pre_deps = memory.state().dependencies.clone();
    let relabel = claim.claim_type == ClaimType::Label && answer == HumanAnswer::Reject;
    let effect = memory.apply_edit(
        EditOp::HumanAnswer {
            claim_id: claim_id.clone(),
            answer,
        },
        Actor::Human,
    )?;
    if relabel {
        let options: Vec<String> = ontology
            .options_for(&claim)
            .into_iter()
            .filter(|v| *v != claim.asserted_value)
            .collect();
        if !options.is_empty() {
            memory.apply_edit(
                EditOp::Escalate {
                    claim_id: claim_id.clone(),
                    belief: None,
                    status: ClaimStatus::Escalated,
                    ticket: Some(EscalationTicket {
                        query: Query::CandidateSelect { options },
                        ..ticket
                    }),
                },
                Actor::Human,
            )?;
        }
    }
    let edited: BTreeSet<ClaimId> = effect
        .value_changed
        .into_iter()
        .chain(effect.removed)
        .collect();
    Ok(plan_reverify(&pre_deps, memory.state(), edited))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(s_plus: f64, s_minus: f64, s_zero: f64) -> DirectionalScores {
        DirectionalScores {
            s_plus,
            s_minus,
            s_zero,
        }
    }

    #[test]
    fn isolated_silent_claim_has_zero_utility() {
        let id = ClaimId::from("c");
        let deps = DependencyGraph::with_nodes([id.clone()]);
        let (u, _) = utility(
            &id,
            &scores(0.0, 0.0, 0.0),
            &deps,
            &UtilityWeights::default(),
        );
        assert_eq!(u, 0.0);
    }

    #[test]
    fn one_sided_rejection_has_no_conflict() {
        let id = ClaimId::from("c");
        let deps = DependencyGraph::with_nodes([id.clone()]);
        let (_, c) = utility(
            &id,
            &scores(0.0, 1.2, 0.0),
            &deps,
            &UtilityWeights::default(),
        );
        assert_eq!(c.conflict, 0.0);
    }

    #[test]
    fn raw_impact_is_out_degree() {
        let (a, b, c) = (ClaimId::from("a"), ClaimId::from("b"), ClaimId::from("c"));
        let mut deps = DependencyGraph::with_nodes([a.clone(), b.clone(), c.clone()]);
        deps.add_edge(a.clone(), b.clone()).unwrap();
        deps.add_edge(a.clone(), c).unwrap();
        deps.add_edge(b.clone(), a.clone()).unwrap();
        assert_eq!(impact(&a, &deps, false), 2.0);
        assert_eq!(impact(&b, &deps, true), 0.5);
    }

    #[test]
    fn gate_directions() {
        let mut w = UtilityWeights::default();
        assert!(w.admits(0.5) && !w.admits(0.49));
        w.gate_direction = GateDirection::Below;
        assert!(!w.admits(0.5) && w.admits(0.49));
        assert_eq!(
            serde_json::to_string(&GateDirection::AtLeast).unwrap(),
            "\"at_least\""
        );
    }

    #[test]
    fn weights_validation() {
        assert!(UtilityWeights::default().validate().is_ok());
        let zero = UtilityWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            ..Default::default()
        };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn answer_wire_format() {
        let a: HumanAnswer = serde_json::from_str(r#"{"type":"select","value":"cat"}"#).unwrap();
        assert_eq!(
            a,
            HumanAnswer::Select {
                value: "cat".into()
            }
        );
        let q = serde_json::to_value(Query::CandidateSelect {
            options: vec!["cat".into()],
        })
        .unwrap();
        assert_eq!(q["type"], "candidate_select");
    }
}
