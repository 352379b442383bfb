//! Verification-behavior metrics computed from a run trace, plus graph
//! accuracy against a reference.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::evidence::{EvidenceTuple, Role, Verdict};
use crate::fusion::Outcome;
use crate::graph::GraphState;
use crate::ids::ClaimId;
use crate::trace::{Trace, TraceEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Density {
    Low,
    Medium,
    High,
}

impl Density {
    pub const ALL: [Density; 3] = [Density::Low, Density::Medium, Density::High];

    pub fn as_str(self) -> &'static str {
        match self {
            Density::Low => "low",
            Density::Medium => "medium",
            Density::High => "high",
        }
    }
}

pub fn density_regime(claim_count: usize) -> Density {
    match claim_count {
        0..=9 => Density::Low,
        10..=19 => Density::Medium,
        _ => Density::High,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricFlags {
    /// The trace held no probes.
    pub degenerate: bool,
    /// No claim was ever contradicted, so resolve is reported as 1.0.
    pub no_disputes: bool,
    /// The reference graph had no entities, so entity accuracy is reported as 1.0.
    pub empty_truth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub inv_probe: f64,
    pub uncert: f64,
    pub claim_agr: f64,
    pub resolve: f64,
    pub human_qpf: f64,
    pub entity_acc: Option<f64>,
    pub ged_norm: Option<f64>,
    pub density: Density,
    pub claims: usize,
    pub keyframes: usize,
    pub probes: usize,
    pub invalid_probes: usize,
    pub queries: usize,
    pub calls_actual: usize,
    pub calls_full: usize,
    pub reduction_ratio: f64,
    pub flags: MetricFlags,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn abstains_everywhere(tuples: &[EvidenceTuple]) -> bool {
    tuples.iter().all(|t| t.verdict == Verdict::Abstain)
}

/// `Some(true)` when at least two roles gave a non-abstaining verdict and
/// they all agree; `None` when fewer than two roles spoke.
fn agreement(tuples: &[EvidenceTuple]) -> Option<bool> {
    let by_role: BTreeMap<Role, BTreeSet<Verdict>> = tuples
        .iter()
        .filter(|t| t.verdict != Verdict::Abstain)
        .fold(BTreeMap::new(), |mut m, t| {
            m.entry(t.role)
                .or_insert_with(BTreeSet::new)
                .insert(t.verdict);
            m
        });
    if by_role.len() < 2 {
        return None;
    }
    let all: BTreeSet<Verdict> = by_role.values().flatten().copied().collect();
    Some(all.len() == 1)
}

/// Metrics over a whole trace. Abstention and agreement use each claim's
/// most recent probing pass; resolve uses the whole history.
pub fn compute_metrics(trace: &Trace) -> MetricReport {
    let mut claims = 0;
    let mut keyframes = 0;
    let mut probes = 0;
    let mut invalid = 0;
    let mut latest: BTreeMap<&ClaimId, &[EvidenceTuple]> = BTreeMap::new();
    let mut disputed: BTreeSet<&ClaimId> = BTreeSet::new();
    let mut last_outcome: BTreeMap<&ClaimId, &Outcome> = BTreeMap::new();
    let mut queued: BTreeSet<&ClaimId> = BTreeSet::new();
    let mut queries = 0;
    let (mut calls_actual, mut calls_full) = (0, 0);

    for e in &trace.events {
        match e {
            TraceEvent::Start {
                claims: c,
                keyframes: k,
            } => {
                claims = *c;
                keyframes = *k;
            }
            TraceEvent::Epoch(r) => {
                probes += r.accounting.probes;
                invalid += r.invalid.len();
                for (id, tuples) in &r.evidence {
                    latest.insert(id, tuples);
                    if tuples.iter().any(|t| t.verdict == Verdict::Contradict) {
                        disputed.insert(id);
                    }
                }
                for f in &r.fusions {
                    last_outcome.insert(&f.claim_id, &f.outcome);
                }
            }
            TraceEvent::Query { claim_id, .. } => {
                queries += 1;
                queued.insert(claim_id);
            }
            TraceEvent::Answer { .. } => {}
            TraceEvent::Reverify {
                calls_actual: a,
                calls_full: f,
                ..
            } => {
                calls_actual += a;
                calls_full += f;
            }
        }
    }

    let mut flags = MetricFlags {
        degenerate: probes == 0,
        ..Default::default()
    };
    let uncertain = latest.values().filter(|t| abstains_everywhere(t)).count();
    let agreements: Vec<bool> = latest.values().filter_map(|t| agreement(t)).collect();
    let resolved = disputed
        .iter()
        .filter(|id| !queued.contains(*id))
        .filter(|id| {
            matches!(
                last_outcome.get(*id),
                Some(Outcome::Accept | Outcome::Rewrite { .. })
            )
        })
        .count();
    let resolve = if flags.degenerate {
        0.0
    } else if disputed.is_empty() {
        flags.no_disputes = true;
        1.0
    } else {
        ratio(resolved, disputed.len())
    };
    let claim_agr = if agreements.is_empty() {
        if flags.degenerate {
            0.0
        } else {
            1.0
        }
    } else {
        ratio(agreements.iter().filter(|a| **a).count(), agreements.len())
    };

    MetricReport {
        inv_probe: ratio(invalid, probes),
        uncert: ratio(uncertain, latest.len()),
        claim_agr,
        resolve,
        human_qpf: ratio(queries, keyframes),
        entity_acc: None,
        ged_norm: None,
        density: density_regime(claims),
        claims,
        keyframes,
        probes,
        invalid_probes: invalid,
        queries,
        calls_actual,
        calls_full,
        reduction_ratio: if calls_actual == 0 {
            1.0
        } else {
            calls_full as f64 / calls_actual as f64
        },
        flags,
    }
}

/// Fraction of reference entities whose predicted label matches exactly.
/// Returns the value and whether the reference was empty.
pub fn entity_accuracy(pred: &GraphState, truth: &GraphState) -> (f64, bool) {
    if truth.entities.is_empty() {
        return (1.0, true);
    }
    let hits = truth
        .entities
        .values()
        .filter(|t| {
            pred.entities
                .get(&t.entity_id)
                .is_some_and(|p| p.canonical_label == t.canonical_label)
        })
        .count();
    (hits as f64 / truth.entities.len() as f64, false)
}
