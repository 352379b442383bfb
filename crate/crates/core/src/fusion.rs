//! Role-aware evidence fusion: directional scores, belief, constrained
//! correction and outcome classification.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::claim::{Claim, ClaimType};
use crate::evidence::{EvidenceTuple, Role, Verdict};
use crate::ids::ClaimId;
use crate::ontology::Ontology;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("epsilon must be positive, got {0}")]
    Epsilon(f64),
    #[error("need 0 < reject_belief < accept_belief < 1, got {lo} and {hi}")]
    Cutoffs { lo: f64, hi: f64 },
    #[error("revision threshold must lie in (0,1], got {0}")]
    Threshold(f64),
    #[error("rounds_max must be at least 1")]
    Rounds,
    #[error("weight {role}/{claim_type} = {value} outside [0,1]")]
    Weight {
        role: Role,
        claim_type: ClaimType,
        value: f64,
    },
}

/// `λ[role][claim_type]` over (exist, label, attr, rel).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoleWeightMatrix {
    pub local_grounding: [f64; 4],
    pub temporal_consistency: [f64; 4],
    pub global_audit: [f64; 4],
}

impl Default for RoleWeightMatrix {
    fn default() -> Self {
        Self::role_aware()
    }
}

impl RoleWeightMatrix {
    pub fn role_aware() -> Self {
        Self {
            local_grounding: [1.00, 1.00, 0.90, 1.00],
            temporal_consistency: [0.80, 0.80, 0.70, 0.80],
            global_audit: [0.70, 0.00, 0.60, 0.70],
        }
    }

    /// Every role trusted equally on every claim type.
    pub fn uniform() -> Self {
        Self {
            local_grounding: [1.0; 4],
            temporal_consistency: [1.0; 4],
            global_audit: [1.0; 4],
        }
    }

    pub fn weight(&self, role: Role, claim_type: ClaimType) -> f64 {
        let row = match role {
            Role::LocalGrounding => &self.local_grounding,
            Role::TemporalConsistency => &self.temporal_consistency,
            Role::GlobalAudit => &self.global_audit,
        };
        row[claim_type.index()]
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        for role in Role::ALL {
            for claim_type in ClaimType::ALL {
                let value = self.weight(role, claim_type);
                if !(0.0..=1.0).contains(&value) {
                    return Err(FusionError::Weight {
                        role,
                        claim_type,
                        value,
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DirectionalScores {
    pub s_plus: f64,
    pub s_minus: f64,
    pub s_zero: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub epsilon: f64,
    pub revision_threshold: f64,
    pub accept_belief: f64,
    pub reject_belief: f64,
    pub rounds_max: u32,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            revision_threshold: 0.6,
            accept_belief: 0.8,
            reject_belief: 0.2,
            rounds_max: 2,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(FusionError::Epsilon(self.epsilon));
        }
        let (lo, hi) = (self.reject_belief, self.accept_belief);
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(FusionError::Cutoffs { lo, hi });
        }
        if !(self.revision_threshold > 0.0 && self.revision_threshold <= 1.0) {
            return Err(FusionError::Threshold(self.revision_threshold));
        }
        if self.rounds_max == 0 {
            return Err(FusionError::Rounds);
        }
        Ok(())
    }
}

pub fn aggregate(
    evidence: &[EvidenceTuple],
    claim_type: ClaimType,
    weights: &RoleWeightMatrix,
) -> DirectionalScores {
    let mut s = DirectionalScores::default();
    for t in evidence {
        let mass = weights.weight(t.role, claim_type) * t.confidence;
        match t.verdict {
            Verdict::Support => s.s_plus += mass,
            Verdict::Contradict => s.s_minus += mass,
            Verdict::Abstain => s.s_zero += mass,
        }
    }
    s
}

/// Smoothed support ratio `(ε + S⁺) / (2ε + S⁺ + S⁻)`.
pub fn belief(scores: &DirectionalScores, epsilon: f64) -> Result<f64, FusionError> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(FusionError::Epsilon(epsilon));
    }
    Ok((epsilon + scores.s_plus) / (2.0 * epsilon + scores.s_plus + scores.s_minus))
}

/// Weighted vote mass per value. Tuples proposing a candidate vote for it;
/// supporting tuples without a candidate vote for the current value.
/// Candidates outside the claim's ontology are ignored, and zero-mass tuples
/// create no entry.
pub fn score_candidates(
    evidence: &[EvidenceTuple],
    claim: &Claim,
    ontology: &Ontology,
    weights: &RoleWeightMatrix,
) -> BTreeMap<String, f64> {
    let mut q: BTreeMap<String, f64> = BTreeMap::new();
    if !claim.claim_type.is_correctable() {
        return q;
    }
    for t in evidence {
        let mass = weights.weight(t.role, claim.claim_type) * t.confidence;
        if mass <= 0.0 {
            continue;
        }
        let value = match (&t.candidate, t.verdict) {
            (Some(c), _) => {
                if !ontology.allows(claim, c) {
                    log::debug!(
                        "ignoring out-of-ontology candidate {c} for {}",
                        claim.claim_id
                    );
                    continue;
                }
                c.as_str()
            }
            (None, Verdict::Support) => claim.asserted_value.as_str(),
            (None, _) => continue,
        };
        *q.entry(value.to_owned()).or_insert(0.0) += mass;
    }
    q
}

/// Best-scoring value, ties broken by the lexicographically smallest string.
pub fn argmax(q: &BTreeMap<String, f64>) -> Option<(&str, f64)> {
    // BTreeMap iterates in ascending key order, so strict `>` keeps the
    // smallest key among equals.
    let mut best: Option<(&str, f64)> = None;
    for (k, &v) in q {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((k.as_str(), v));
        }
    }
    best
}

/// The winning candidate if it strictly beats both `θ` and the current
/// value's score.
pub fn select_correction(q: &BTreeMap<String, f64>, current: &str, theta: f64) -> Option<String> {
    let (best, score) = argmax(q)?;
    let current_score = q.get(current).copied().unwrap_or(0.0);
    (best != current && score > theta && score > current_score).then(|| best.to_owned())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Accept,
    Rewrite { value: String },
    EscalateCandidate,
}

pub fn classify_outcome(p: f64, correction: Option<&str>, config: &FusionConfig) -> Outcome {
    if p >= config.accept_belief {
        Outcome::Accept
    } else if p <= config.reject_belief {
        match correction {
            Some(v) => Outcome::Rewrite {
                value: v.to_owned(),
            },
            None => Outcome::EscalateCandidate,
        }
    } else {
        Outcome::EscalateCandidate
    }
}

/// Per-claim fusion result; one line of a round report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimFusion {
    pub claim_id: ClaimId,
    pub scores: DirectionalScores,
    pub belief: f64,
    pub candidates: BTreeMap<String, f64>,
    pub outcome: Outcome,
}

pub fn fuse_claim(
    claim: &Claim,
    evidence: &[EvidenceTuple],
    ontology: &Ontology,
    weights: &RoleWeightMatrix,
    config: &FusionConfig,
) -> Result<ClaimFusion, FusionError> {
    let scores = aggregate(evidence, claim.claim_type, weights);
    let p = belief(&scores, config.epsilon)?;
    let candidates = score_candidates(evidence, claim, ontology, weights);
    let correction = select_correction(
        &candidates,
        &claim.asserted_value,
        config.revision_threshold,
    );
    let outcome = classify_outcome(p, correction.as_deref(), config);
    Ok(ClaimFusion {
        claim_id: claim.claim_id.clone(),
        scores,
        belief: p,
        candidates,
        outcome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::claim::{ClaimStatus, ClaimTarget, FrameSpan};
    use crate::ids::{EntityId, FrameId};
    use proptest::prelude::*;

    fn tuple(role: Role, verdict: Verdict, s: f64) -> EvidenceTuple {
        EvidenceTuple::new(ClaimId::from("c"), role, verdict, s, 1)
    }

    fn label_claim(value: &str) -> Claim {
        let e = EntityId::from("e1");
        Claim {
            claim_id: Claim::label_id(&e),
            claim_type: ClaimType::Label,
            target: ClaimTarget::Entity { entity_id: e },
            asserted_value: value.into(),
            temporal_extent: FrameSpan {
                start: FrameId(0),
                end: FrameId(0),
            },
            status: ClaimStatus::Pending,
            belief: None,
            ticket: None,
        }
    }

    fn ontology() -> Ontology {
        Ontology {
            labels: ["cat", "cow", "dog"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(FusionConfig::default().validate().is_ok());
        let bad = FusionConfig {
            epsilon: 0.0,
            ..Default::default()
        };
        assert_eq!(bad.validate(), Err(FusionError::Epsilon(0.0)));
        let inverted = FusionConfig {
            accept_belief: 0.2,
            reject_belief: 0.8,
            ..Default::default()
        };
        assert!(inverted.validate().is_err());
        assert!(RoleWeightMatrix::default().validate().is_ok());
    }

    #[test]
    fn belief_rejects_nonpositive_epsilon() {
        assert!(belief(&DirectionalScores::default(), -1.0).is_err());
    }

    #[test]
    fn lexicographic_tie_break() {
        let q: BTreeMap<String, f64> = [("dog".to_string(), 1.0), ("cat".to_string(), 1.0)].into();
        assert_eq!(argmax(&q), Some(("cat", 1.0)));
    }

    #[test]
    fn out_of_ontology_candidate_ignored() {
        let claim = label_claim("dog");
        let ev = [tuple(Role::LocalGrounding, Verdict::Contradict, 1.0).with_candidate("zebra")];
        let q = score_candidates(&ev, &claim, &ontology(), &RoleWeightMatrix::default());
        assert!(q.is_empty());
    }

    #[test]
    fn empty_ontology_keeps_current() {
        let claim = label_claim("dog");
        let ev = [tuple(Role::LocalGrounding, Verdict::Contradict, 1.0).with_candidate("cat")];
        let q = score_candidates(
            &ev,
            &claim,
            &Ontology::default(),
            &RoleWeightMatrix::default(),
        );
        assert_eq!(select_correction(&q, "dog", 0.6), None);
    }

    #[test]
    fn contradiction_required_before_rewrite() {
        let cfg = FusionConfig::default();
        assert_eq!(
            classify_outcome(0.5, Some("cat"), &cfg),
            Outcome::EscalateCandidate
        );
        assert_eq!(
            classify_outcome(0.2, None, &cfg),
            Outcome::EscalateCandidate
        );
        assert_eq!(classify_outcome(0.8, None, &cfg), Outcome::Accept);
    }

    fn arb_tuples() -> impl Strategy<Value = Vec<EvidenceTuple>> {
        prop::collection::vec(
            (
                0usize..3,
                -1i8..=1,
                0.0f64..=1.0,
                prop::option::of(0usize..3),
            ),
            0..12,
        )
        .prop_map(|v| {
            let names = ["cat", "cow", "dog"];
            v.into_iter()
                .map(|(r, d, s, cand)| {
                    let mut t = tuple(Role::ALL[r], Verdict::try_from(d).unwrap(), s);
                    t.candidate = cand.map(|i| names[i].to_string());
                    t
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn belief_in_open_interval(sp in 0.0f64..1e6, sm in 0.0f64..1e6, eps in 1e-9f64..10.0) {
            let p = belief(&DirectionalScores { s_plus: sp, s_minus: sm, s_zero: 0.0 }, eps).unwrap();
            prop_assert!(p > 0.0 && p < 1.0);
        }

        #[test]
        fn belief_monotone(sp in 0.0f64..100.0, sm in 0.0f64..100.0, d in 1e-3f64..10.0) {
            let eps = 0.01;
            let p = |a, b| belief(&DirectionalScores { s_plus: a, s_minus: b, s_zero: 0.0 }, eps).unwrap();
            prop_assert!(p(sp + d, sm) > p(sp, sm));
            prop_assert!(p(sp, sm + d) < p(sp, sm));
        }

        #[test]
        fn abstention_neutral(ev in arb_tuples(), r in 0usize..3, s in 0.0f64..=1.0) {
            let w = RoleWeightMatrix::default();
            let before = aggregate(&ev, ClaimType::Rel, &w);
            let mut more = ev.clone();
            more.push(tuple(Role::ALL[r], Verdict::Abstain, s));
            let after = aggregate(&more, ClaimType::Rel, &w);
            prop_assert_eq!(before.s_plus.to_bits(), after.s_plus.to_bits());
            prop_assert_eq!(before.s_minus.to_bits(), after.s_minus.to_bits());
            prop_assert_eq!(
                belief(&before, 0.01).unwrap().to_bits(),
                belief(&after, 0.01).unwrap().to_bits()
            );
        }

        #[test]
        fn argmax_scale_invariant(ev in arb_tuples(), k in 0.01f64..100.0) {
            let claim = label_claim("dog");
            let w = RoleWeightMatrix::default();
            let q = score_candidates(&ev, &claim, &ontology(), &w);
            let scaled: Vec<_> = ev.iter().cloned().map(|mut t| { t.confidence *= k; t }).collect();
            let qk = score_candidates(&scaled, &claim, &ontology(), &w);
            let a = argmax(&q).map(|(v, _)| v.to_owned());
            let b = argmax(&qk).map(|(v, _)| v.to_owned());
            // Floating-point ties can split under scaling; only compare clear winners.
            let clear = q.values().filter(|&&v| Some(v) == argmax(&q).map(|x| x.1)).count() <= 1
                && {
                    let mut vals: Vec<f64> = q.values().copied().collect();
                    vals.sort_by(|x, y| y.partial_cmp(x).unwrap());
                    vals.len() < 2 || vals[0] - vals[1] > 1e-9 * vals[0].max(1.0)
                };
            if clear {
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn rewrite_is_conservative(ev in arb_tuples()) {
            let claim = label_claim("dog");
            let w = RoleWeightMatrix::default();
            let q = score_candidates(&ev, &claim, &ontology(), &w);
            if let Some(v) = select_correction(&q, "dog", 0.6) {
                prop_assert!(q[&v] > 0.6);
                prop_assert!(q[&v] > q.get("dog").copied().unwrap_or(0.0));
            }
        }
    }
}
