//! Synthetic reference/corrupted scene-graph pairs and an oracle supervisor.
//!
//! Truth and corrupted graphs share one entity id space, so accuracy can be
//! measured by id. Spurious entities get `s{n}` ids that never occur in truth.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arbitration::{HumanAnswer, Query};
use crate::claim::{element_value, Claim, ClaimType};
use crate::constructor::{decompose_claims, derive_dependencies};
use crate::graph::{AttributeAssertion, BBox, EntityNode, FrameInfo, GraphState, RelationEdge};
use crate::ids::{EntityId, FrameId, RelationId};
use crate::memory::{MemoryError, SemanticMemory};
use crate::ontology::Ontology;

/// Exact GED is limited to this many nodes, so generated graphs stay below it.
pub const MAX_ENTITIES: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("rate {name} = {value} is outside [0,1]")]
    Rate { name: &'static str, value: f64 },
    #[error("{0} entities requested, at most {MAX_ENTITIES} supported")]
    TooManyEntities(usize),
    #[error("at least one keyframe is required")]
    NoFrames,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SizeParams {
    pub entities: usize,
    pub relations: usize,
    pub attributes: usize,
    pub keyframes: u32,
    /// Probability that a keyframe comes from a high-motion segment.
    pub dynamic_rate: f64,
}

impl Default for SizeParams {
    fn default() -> Self {
        Self {
            entities: 10,
            relations: 12,
            attributes: 10,
            keyframes: 5,
            dynamic_rate: 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionSpec {
    pub label_swap_rate: f64,
    pub predicate_swap_rate: f64,
    pub attr_flip_rate: f64,
    pub spurious_entity_rate: f64,
    pub missing_entity_rate: f64,
    pub rng_seed: u64,
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        for (name, value) in [
            ("label_swap_rate", self.label_swap_rate),
            ("predicate_swap_rate", self.predicate_swap_rate),
            ("attr_flip_rate", self.attr_flip_rate),
            ("spurious_entity_rate", self.spurious_entity_rate),
            ("missing_entity_rate", self.missing_entity_rate),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SynthError::Rate { name, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub truth: GraphState,
    pub corrupted: GraphState,
    pub ontology: Ontology,
}

impl SynthScene {
    /// Version-0 memory built from the corrupted graph.
    pub fn memory(&self) -> Result<SemanticMemory, MemoryError> {
        let claims = decompose_claims(&self.corrupted);
        let deps = derive_dependencies(&claims);
        SemanticMemory::init(self.corrupted.clone(), claims, deps)
    }
}

pub fn default_ontology() -> Ontology {
    let set = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
    Ontology {
        labels: set(&[
            "person", "dog", "cat", "car", "bicycle", "chair", "table", "cup", "ball", "bag",
            "laptop", "bottle",
        ]),
        predicates: set(&[
            "on",
            "next_to",
            "holding",
            "behind",
            "in_front_of",
            "riding",
            "looking_at",
            "under",
        ]),
        attributes: BTreeMap::from([
            (
                "color".to_string(),
                set(&["red", "green", "blue", "black", "white"]),
            ),
            (
                "state".to_string(),
                set(&["open", "closed", "moving", "still"]),
            ),
            ("size".to_string(), set(&["small", "medium", "large"])),
        ]),
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, from: impl IntoIterator<Item = &'a String>) -> String {
    let v: Vec<&String> = from.into_iter().collect();
    (*v.choose(rng).expect("nonempty vocabulary")).clone()
}

fn pick_other<'a>(
    rng: &mut ChaCha8Rng,
    from: impl IntoIterator<Item = &'a String>,
    current: &str,
) -> String {
    pick(rng, from.into_iter().filter(|v| v.as_str() != current))
}

fn region(rng: &mut ChaCha8Rng) -> BBox {
    let (w, h) = (rng.random_range(0.05..0.3), rng.random_range(0.05..0.3));
    let (x0, y0) = (
        rng.random_range(0.0..1.0 - w),
        rng.random_range(0.0..1.0 - h),
    );
    BBox::new(x0, y0, x0 + w, y0 + h)
}

fn entity(
    rng: &mut ChaCha8Rng,
    id: EntityId,
    label: String,
    frames: BTreeSet<FrameId>,
) -> EntityNode {
    EntityNode {
        entity_id: id,
        canonical_label: label,
        spatial_extent: frames.iter().map(|&f| (f, region(rng))).collect(),
        frame_ids: frames,
    }
}

fn sample_truth(size: &SizeParams, ontology: &Ontology, rng: &mut ChaCha8Rng) -> GraphState {
    let k = size.keyframes;
    let mut g = GraphState::default();
    for f in 0..k {
        let mut info = FrameInfo::new(FrameId(f));
        info.dynamic = rng.random_bool(size.dynamic_rate.clamp(0.0, 1.0));
        g.frames.insert(FrameId(f), info);
    }
    for i in 0..size.entities {
        let start = rng.random_range(0..k);
        let end = rng.random_range(start..k);
        let frames = (start..=end).map(FrameId).collect();
        let label = pick(rng, &ontology.labels);
        let id = EntityId::new(format!("e{i}"));
        g.entities
            .insert(id.clone(), entity(rng, id, label, frames));
    }

    let ids: Vec<EntityId> = g.entities.keys().cloned().collect();
    let mut pairs: Vec<(EntityId, EntityId, BTreeSet<FrameId>)> = Vec::new();
    for s in &ids {
        for o in &ids {
            if s == o {
                continue;
            }
            let shared: BTreeSet<FrameId> = g.entities[s]
                .frame_ids
                .intersection(&g.entities[o].frame_ids)
                .copied()
                .collect();
            if !shared.is_empty() {
                pairs.push((s.clone(), o.clone(), shared));
            }
        }
    }
    for n in 0..size.relations.min(pairs.len()) {
        let idx = rng.random_range(0..pairs.len());
        let (subject, object, frame_ids) = pairs.swap_remove(idx);
        let id = RelationId::new(format!("r{n}"));
        g.relations.insert(
            id.clone(),
            RelationEdge {
                relation_id: id,
                subject,
                predicate: pick(rng, &ontology.predicates),
                object,
                frame_ids,
            },
        );
    }

    let mut slots: Vec<(EntityId, &String)> = ids
        .iter()
        .flat_map(|e| ontology.attributes.keys().map(move |key| (e.clone(), key)))
        .collect();
    for _ in 0..size.attributes.min(slots.len()) {
        let idx = rng.random_range(0..slots.len());
        let (entity_id, key) = slots.swap_remove(idx);
        let value = pick(rng, &ontology.attributes[key]);
        let frame_ids = g.entities[&entity_id].frame_ids.clone();
        g.attributes.insert(
            (entity_id.clone(), key.clone()),
            AttributeAssertion {
                entity_id,
                attribute_key: key.clone(),
                attribute_value: value,
                frame_ids,
            },
        );
    }
    g
}

fn corrupt(
    truth: &GraphState,
    spec: &CorruptionSpec,
    ontology: &Ontology,
    rng: &mut ChaCha8Rng,
) -> GraphState {
    let mut g = truth.clone();
    let ids: Vec<EntityId> = truth.entities.keys().cloned().collect();
    for id in &ids {
        if rng.random_bool(spec.missing_entity_rate) {
            g.remove_entity(id);
        }
    }
    for e in g.entities.values_mut() {
        if rng.random_bool(spec.label_swap_rate) {
            e.canonical_label = pick_other(rng, &ontology.labels, &e.canonical_label);
        }
    }
    for r in g.relations.values_mut() {
        if rng.random_bool(spec.predicate_swap_rate) {
            r.predicate = pick_other(rng, &ontology.predicates, &r.predicate);
        }
    }
    for a in g.attributes.values_mut() {
        let values = &ontology.attributes[&a.attribute_key];
        if rng.random_bool(spec.attr_flip_rate) && values.len() > 1 {
            a.attribute_value = pick_other(rng, values, &a.attribute_value);
        }
    }
    let frames: Vec<FrameId> = truth.frames.keys().copied().collect();
    for n in 0..ids.len() {
        if rng.random_bool(spec.spurious_entity_rate) && g.entities.len() < MAX_ENTITIES {
            let frame = *frames.choose(rng).expect("frames exist");
            let id = EntityId::new(format!("s{n}"));
            let label = pick(rng, &ontology.labels);
            g.entities
                .insert(id.clone(), entity(rng, id, label, BTreeSet::from([frame])));
        }
    }
    g
}

/// Sample a reference graph and an independently corrupted copy. The truth
/// stream and the corruption stream are seeded separately, so changing a
/// rate never changes the reference.
pub fn synth_generate(size: &SizeParams, spec: &CorruptionSpec) -> Result<SynthScene, SynthError> {
    spec.validate()?;
    if size.entities > MAX_ENTITIES {
        return Err(SynthError::TooManyEntities(size.entities));
    }
    if size.keyframes == 0 {
        return Err(SynthError::NoFrames);
    }
    let ontology = default_ontology();
    let mut truth_rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let truth = sample_truth(size, &ontology, &mut truth_rng);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.rng_seed ^ 0x9e37_79b9_7f4a_7c15);
    let corrupted = corrupt(&truth, spec, &ontology, &mut noise_rng);
    Ok(SynthScene {
        truth,
        corrupted,
        ontology,
    })
}

/// The answer a supervisor who knows the reference graph would give.
/// Elements absent from the reference keep their current value, except
/// existence, which is rejected.
pub fn oracle_answer(truth: &GraphState, claim: &Claim, query: &Query) -> HumanAnswer {
    let reference = element_value(truth, claim.claim_type, &claim.target);
    match query {
        Query::Binary => {
            let holds = match (claim.claim_type, &reference) {
                (ClaimType::Exist, r) => r.is_some(),
                (_, None) => true,
                (_, Some(v)) => *v == claim.asserted_value,
            };
            if holds {
                HumanAnswer::Confirm
            } else {
                HumanAnswer::Reject
            }
        }
        Query::CandidateSelect { options } => {
            let want = reference.unwrap_or_else(|| claim.asserted_value.clone());
            let value = if options.contains(&want) {
                want
            } else {
                options.first().cloned().unwrap_or(want)
            };
            HumanAnswer::Select { value }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(seed: u64) -> CorruptionSpec {
        CorruptionSpec {
            rng_seed: seed,
            ..Default::default()
        }
    }

    #[test]
    fn zero_rates_leave_truth_untouched() {
        let s = synth_generate(&SizeParams::default(), &spec(3)).unwrap();
        assert_eq!(s.truth, s.corrupted);
        s.truth.validate().unwrap();
    }

    #[test]
    fn same_seed_same_pair() {
        let c = CorruptionSpec {
            label_swap_rate: 0.3,
            spurious_entity_rate: 0.2,
            missing_entity_rate: 0.1,
            ..spec(11)
        };
        let a = synth_generate(&SizeParams::default(), &c).unwrap();
        let b = synth_generate(&SizeParams::default(), &c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn full_label_swap_changes_every_label_within_ontology() {
        let c = CorruptionSpec {
            label_swap_rate: 1.0,
            ..spec(5)
        };
        let s = synth_generate(&SizeParams::default(), &c).unwrap();
        for (id, e) in &s.corrupted.entities {
            assert_ne!(e.canonical_label, s.truth.entities[id].canonical_label);
            assert!(s.ontology.labels.contains(&e.canonical_label));
        }
    }

    #[test]
    fn corrupted_graphs_are_valid_and_capped() {
        let c = CorruptionSpec {
            label_swap_rate: 0.2,
            predicate_swap_rate: 0.2,
            attr_flip_rate: 0.2,
            spurious_entity_rate: 0.5,
            missing_entity_rate: 0.2,
            rng_seed: 0,
        };
        for seed in 0..30 {
            let s = synth_generate(
                &SizeParams::default(),
                &CorruptionSpec {
                    rng_seed: seed,
                    ..c
                },
            )
            .unwrap();
            s.corrupted.validate().unwrap();
            assert!(s.corrupted.entities.len() <= MAX_ENTITIES);
            s.memory().unwrap();
        }
    }

    #[test]
    fn sizes_are_honored() {
        let s = synth_generate(&SizeParams::default(), &spec(9)).unwrap();
        assert_eq!(s.truth.entities.len(), 10);
        assert!(s.truth.relations.len() <= 12);
        assert_eq!(s.truth.attributes.len(), 10);
        assert_eq!(s.truth.frames.len(), 5);
    }

    #[test]
    fn rejects_bad_inputs() {
        let bad = CorruptionSpec {
            attr_flip_rate: 1.5,
            ..spec(0)
        };
        assert!(matches!(
            synth_generate(&SizeParams::default(), &bad),
            Err(SynthError::Rate {
                name: "attr_flip_rate",
                ..
            })
        ));
        let big = SizeParams {
            entities: 13,
            ..Default::default()
        };
        assert_eq!(
            synth_generate(&big, &spec(0)),
            Err(SynthError::TooManyEntities(13))
        );
    }

    #[test]
    fn oracle_supervisor_answers_from_reference() {
        let c = CorruptionSpec {
            label_swap_rate: 1.0,
            spurious_entity_rate: 1.0,
            ..spec(2)
        };
        let s = synth_generate(
            &SizeParams {
                entities: 4,
                ..Default::default()
            },
            &c,
        )
        .unwrap();
        let claims = decompose_claims(&s.corrupted);
        for claim in claims.iter() {
            let truth_value = element_value(&s.truth, claim.claim_type, &claim.target);
            let a = oracle_answer(&s.truth, claim, &Query::Binary);
            match (claim.claim_type, truth_value) {
                (ClaimType::Exist, None) => assert_eq!(a, HumanAnswer::Reject),
                (ClaimType::Exist, Some(_)) => assert_eq!(a, HumanAnswer::Confirm),
                (ClaimType::Label, Some(v)) => {
                    assert_eq!(a, HumanAnswer::Reject);
                    let options = s.ontology.options_for(claim);
                    assert_eq!(
                        oracle_answer(&s.truth, claim, &Query::CandidateSelect { options }),
                        HumanAnswer::Select { value: v }
                    );
                }
                _ => {}
            }
        }
    }
}
