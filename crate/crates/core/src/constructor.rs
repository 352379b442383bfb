//! Memory construction: keyframe budgeting, cross-frame entity merging,
//! claim decomposition and dependency derivation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::claim::{Claim, ClaimSet, ClaimStatus, ClaimTarget, ClaimType, FrameSpan, PRESENT};
use crate::deps::DependencyGraph;
use crate::graph::{AttributeAssertion, BBox, EntityNode, FrameInfo, GraphState, RelationEdge};
use crate::ids::{EntityId, FrameId, RelationId};
use crate::memory::{MemoryError, SemanticMemory};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstructError {
    #[error("segment {index} has start {start} after end {end}")]
    InvertedSegment { index: usize, start: u32, end: u32 },
    #[error("segment {index} overlaps or precedes the previous segment")]
    UnorderedSegments { index: usize },
    #[error("keyframe budget must be at least 1")]
    ZeroBudget,
    #[error("instance {0} must be observed in exactly one frame")]
    MultiFrameInstance(EntityId),
    #[error("iou threshold {0} outside [0,1]")]
    BadThreshold(f64),
}

/// A motion-driven temporal segment `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentDescriptor {
    pub start: u32,
    pub end: u32,
    pub dynamic: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyframePlan {
    pub selected: Vec<u32>,
    pub budget: usize,
}

impl KeyframePlan {
    /// Frame index entries for the selected keyframes, flagged dynamic when
    /// they fall inside a dynamic segment.
    pub fn frames(&self, segments: &[SegmentDescriptor]) -> Vec<FrameInfo> {
        self.selected
            .iter()
            .map(|&f| FrameInfo {
                frame_id: FrameId(f),
                thumbnail: None,
                dynamic: segments
                    .iter()
                    .any(|s| s.dynamic && s.start <= f && f <= s.end),
            })
            .collect()
    }
}

pub fn validate_segments(segments: &[SegmentDescriptor]) -> Result<(), ConstructError> {
    for (i, s) in segments.iter().enumerate() {
        if s.start > s.end {
            return Err(ConstructError::InvertedSegment {
                index: i,
                start: s.start,
                end: s.end,
            });
        }
        if i > 0 && s.start <= segments[i - 1].end {
            return Err(ConstructError::UnorderedSegments { index: i });
        }
    }
    Ok(())
}

/// Dynamic segments contribute start, midpoint and end; stable segments their
/// midpoint. Over budget, candidates are subsampled at a uniform index stride
/// that keeps the first and last candidate.
pub fn select_keyframes(
    segments: &[SegmentDescriptor],
    budget: usize,
) -> Result<KeyframePlan, ConstructError> {
    if budget == 0 {
        return Err(ConstructError::ZeroBudget);
    }
    validate_segments(segments)?;
    let mut candidates = BTreeSet::new();
    for s in segments {
        let mid = s.start + (s.end - s.start) / 2;
        if s.dynamic {
            candidates.extend([s.start, mid, s.end]);
        } else {
            candidates.insert(mid);
        }
    }
    let candidates: Vec<u32> = candidates.into_iter().collect();
    let n = candidates.len();
    let selected = if n <= budget {
        candidates
    } else if budget == 1 {
        vec![candidates[0]]
    } else {
        (0..budget)
            .map(|i| candidates[i * (n - 1) / (budget - 1)])
            .collect()
    };
    Ok(KeyframePlan { selected, budget })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedInstance {
    pub entity_id: EntityId,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub graph: GraphState,
    pub rejected: Vec<RejectedInstance>,
    pub warnings: Vec<String>,
}

struct Track {
    id: EntityId,
    label: String,
    last_frame: FrameId,
    last_region: BBox,
    extent: BTreeMap<FrameId, BBox>,
}

/// Merge per-frame instances into video-level entities. Two instances in
/// different frames share an entity iff their labels match and the IoU of
/// their regions reaches `iou_threshold`. Input uses the snapshot schema with
/// one frame per entity instance.
pub fn ingest_graph(
    slices: &GraphState,
    iou_threshold: f64,
) -> Result<IngestReport, ConstructError> {
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(ConstructError::BadThreshold(iou_threshold));
    }
    let mut rejected = Vec::new();
    let mut warnings = Vec::new();

    let mut instances: Vec<(FrameId, &EntityNode, BBox)> = Vec::new();
    for inst in slices.entities.values() {
        if inst.frame_ids.len() != 1 {
            return Err(ConstructError::MultiFrameInstance(inst.entity_id.clone()));
        }
        let frame = *inst.frame_ids.iter().next().expect("one frame");
        let region = inst.spatial_extent.get(&frame).copied();
        let reason = match region {
            None => Some("no region for its frame".to_owned()),
            Some(r) if !r.is_valid() => Some(format!("malformed region {r:?}")),
            Some(_) if inst.canonical_label.trim().is_empty() => Some("empty label".to_owned()),
            Some(_) => None,
        };
        match reason {
            Some(reason) => {
                log::warn!("rejecting instance {}: {reason}", inst.entity_id);
                rejected.push(RejectedInstance {
                    entity_id: inst.entity_id.clone(),
                    reason,
                });
            }
            None => instances.push((frame, inst, region.expect("checked"))),
        }
    }
    instances.sort_by(|a, b| (a.0, &a.1.entity_id).cmp(&(b.0, &b.1.entity_id)));

    let mut tracks: Vec<Track> = Vec::new();
    let mut assignment: BTreeMap<EntityId, EntityId> = BTreeMap::new();
    let mut i = 0;
    while i < instances.len() {
        let frame = instances[i].0;
        let mut used_this_frame: BTreeSet<usize> = BTreeSet::new();
        while i < instances.len() && instances[i].0 == frame {
            let (_, inst, region) = instances[i];
            let best = tracks
                .iter()
                .enumerate()
                .filter(|(t, tr)| {
                    !used_this_frame.contains(t)
                        && tr.label == inst.canonical_label
                        && tr.last_frame < frame
                })
                .map(|(t, tr)| (t, tr.last_region.iou(&region)))
                .filter(|&(_, iou)| iou >= iou_threshold)
                .fold(None::<(usize, f64)>, |acc, cur| match acc {
                    Some(a) if a.1 >= cur.1 => Some(a),
                    _ => Some(cur),
                });
            let t = match best {
                Some((t, _)) => t,
                None => {
                    tracks.push(Track {
                        id: EntityId(format!("e{}", tracks.len() + 1)),
                        label: inst.canonical_label.clone(),
                        last_frame: frame,
                        last_region: region,
                        extent: BTreeMap::new(),
                    });
                    tracks.len() - 1
                }
            };
            let tr = &mut tracks[t];
            tr.last_frame = frame;
            tr.last_region = region;
            tr.extent.insert(frame, region);
            used_this_frame.insert(t);
            assignment.insert(inst.entity_id.clone(), tr.id.clone());
            i += 1;
        }
    }

    let mut graph = GraphState::default();
    for tr in tracks {
        graph.entities.insert(
            tr.id.clone(),
            EntityNode {
                entity_id: tr.id,
                canonical_label: tr.label,
                frame_ids: tr.extent.keys().copied().collect(),
                spatial_extent: tr.extent,
            },
        );
    }

    let mut rel_keys: BTreeMap<(EntityId, String, EntityId), BTreeSet<FrameId>> = BTreeMap::new();
    let mut rel_order: Vec<(EntityId, String, EntityId)> = Vec::new();
    for r in slices.relations.values() {
        let (Some(s), Some(o)) = (assignment.get(&r.subject), assignment.get(&r.object)) else {
            warnings.push(format!(
                "dropping relation {}: endpoint was rejected or unknown",
                r.relation_id
            ));
            continue;
        };
        if s == o {
            warnings.push(format!(
                "dropping relation {}: endpoints merged",
                r.relation_id
            ));
            continue;
        }
        let key = (s.clone(), r.predicate.clone(), o.clone());
        if !rel_keys.contains_key(&key) {
            rel_order.push(key.clone());
        }
        rel_keys
            .entry(key)
            .or_default()
            .extend(r.frame_ids.iter().copied());
    }
    for (n, key) in rel_order.into_iter().enumerate() {
        let frames = rel_keys.remove(&key).expect("present");
        let id = RelationId(format!("r{}", n + 1));
        graph.relations.insert(
            id.clone(),
            RelationEdge {
                relation_id: id,
                subject: key.0,
                predicate: key.1,
                object: key.2,
                frame_ids: frames,
            },
        );
    }

    let mut attrs: Vec<&AttributeAssertion> = slices.attributes.values().collect();
    attrs.sort_by_key(|a| (a.frame_ids.iter().next().copied(), a.entity_id.clone()));
    for a in attrs {
        let Some(e) = assignment.get(&a.entity_id) else {
            warnings.push(format!(
                "dropping attribute {} on rejected instance {}",
                a.attribute_key, a.entity_id
            ));
            continue;
        };
        let key = (e.clone(), a.attribute_key.clone());
        match graph.attributes.get_mut(&key) {
            Some(existing) if existing.attribute_value == a.attribute_value => {
                existing.frame_ids.extend(a.frame_ids.iter().copied());
            }
            Some(existing) => warnings.push(format!(
                "conflicting {} on {e}: keeping {}, dropping {}",
                a.attribute_key, existing.attribute_value, a.attribute_value
            )),
            None => {
                graph.attributes.insert(
                    key,
                    AttributeAssertion {
                        entity_id: e.clone(),
                        attribute_key: a.attribute_key.clone(),
                        attribute_value: a.attribute_value.clone(),
                        frame_ids: a.frame_ids.clone(),
                    },
                );
            }
        }
    }

    graph.frames = if slices.frames.is_empty() {
        graph
            .entities
            .values()
            .flat_map(|e| e.frame_ids.iter().copied())
            .map(|f| (f, FrameInfo::new(f)))
            .collect()
    } else {
        slices.frames.clone()
    };

    Ok(IngestReport {
        graph,
        rejected,
        warnings,
    })
}

fn span_of(frames: &BTreeSet<FrameId>) -> FrameSpan {
    FrameSpan::of(frames).unwrap_or(FrameSpan {
        start: FrameId(0),
        end: FrameId(0),
    })
}

/// One exist and one label claim per entity, one attr claim per attribute
/// assertion, one rel claim per relation.
pub fn decompose_claims(graph: &GraphState) -> ClaimSet {
    let mut set = ClaimSet::new();
    let pending = |claim_id, claim_type, target, asserted_value: String, frames| Claim {
        claim_id,
        claim_type,
        target,
        asserted_value,
        temporal_extent: span_of(frames),
        status: ClaimStatus::Pending,
        belief: None,
        ticket: None,
    };
    for e in graph.entities.values() {
        let target = ClaimTarget::Entity {
            entity_id: e.entity_id.clone(),
        };
        set.insert(pending(
            Claim::exist_id(&e.entity_id),
            ClaimType::Exist,
            target.clone(),
            PRESENT.to_owned(),
            &e.frame_ids,
        ));
        set.insert(pending(
            Claim::label_id(&e.entity_id),
            ClaimType::Label,
            target,
            e.canonical_label.clone(),
            &e.frame_ids,
        ));
    }
    for a in graph.attributes.values() {
        set.insert(pending(
            Claim::attr_id(&a.entity_id, &a.attribute_key),
            ClaimType::Attr,
            ClaimTarget::Attribute {
                entity_id: a.entity_id.clone(),
                attribute_key: a.attribute_key.clone(),
            },
            a.attribute_value.clone(),
            &a.frame_ids,
        ));
    }
    for r in graph.relations.values() {
        set.insert(pending(
            Claim::rel_id(&r.relation_id),
            ClaimType::Rel,
            ClaimTarget::Relation {
                relation_id: r.relation_id.clone(),
                subject: r.subject.clone(),
                object: r.object.clone(),
            },
            r.predicate.clone(),
            &r.frame_ids,
        ));
    }
    set
}

/// Edges `c -> c'` from three structural rules, all scoped to claims that
/// share an entity:
/// (a) exist/label on `e` constrains every attr or rel claim touching `e`;
/// (b) rel claims sharing an endpoint constrain each other;
/// (c) claims on the same entity with intersecting extents constrain each other.
pub fn derive_dependencies(claims: &ClaimSet) -> DependencyGraph {
    let mut deps = DependencyGraph::with_nodes(claims.ids().cloned());
    let mut by_entity: BTreeMap<&EntityId, Vec<&Claim>> = BTreeMap::new();
    for c in claims.iter() {
        for e in c.target.entities() {
            by_entity.entry(e).or_default().push(c);
        }
    }
    for (entity, group) in by_entity {
        for c in &group {
            for d in &group {
                if c.claim_id == d.claim_id {
                    continue;
                }
                let rule_a = matches!(c.claim_type, ClaimType::Exist | ClaimType::Label)
                    && matches!(&c.target, ClaimTarget::Entity { entity_id } if entity_id == entity)
                    && matches!(d.claim_type, ClaimType::Attr | ClaimType::Rel);
                let rule_b = c.claim_type == ClaimType::Rel && d.claim_type == ClaimType::Rel;
                let rule_c = c.temporal_extent.intersects(&d.temporal_extent);
                if rule_a || rule_b || rule_c {
                    deps.add_edge(c.claim_id.clone(), d.claim_id.clone())
                        .expect("endpoints are registered claims");
                }
            }
        }
    }
    deps
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Construct(#[from] ConstructError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub keyframes: Vec<u32>,
    pub entities: usize,
    pub claims: usize,
    pub rejected: Vec<RejectedInstance>,
    pub warnings: Vec<String>,
}

/// Keep only instances observed in a selected keyframe, and the relations and
/// attributes whose frames intersect the selection.
pub fn restrict_to_keyframes(slices: &GraphState, plan: &KeyframePlan) -> GraphState {
    let keep: BTreeSet<FrameId> = plan.selected.iter().map(|&f| FrameId(f)).collect();
    let trim = |frames: &BTreeSet<FrameId>| -> BTreeSet<FrameId> {
        frames.intersection(&keep).copied().collect()
    };
    let mut out = GraphState {
        frames: slices
            .frames
            .iter()
            .filter(|(f, _)| keep.contains(f))
            .map(|(f, i)| (*f, i.clone()))
            .collect(),
        ..Default::default()
    };
    for (id, e) in &slices.entities {
        let frame_ids = trim(&e.frame_ids);
        if frame_ids.is_empty() {
            continue;
        }
        let mut e = e.clone();
        e.spatial_extent.retain(|f, _| frame_ids.contains(f));
        e.frame_ids = frame_ids;
        out.entities.insert(id.clone(), e);
    }
    for (id, r) in &slices.relations {
        let frame_ids = trim(&r.frame_ids);
        if frame_ids.is_empty()
            || !out.entities.contains_key(&r.subject)
            || !out.entities.contains_key(&r.object)
        {
            continue;
        }
        out.relations.insert(
            id.clone(),
            RelationEdge {
                frame_ids,
                ..r.clone()
            },
        );
    }
    for (key, a) in &slices.attributes {
        let frame_ids = trim(&a.frame_ids);
        if frame_ids.is_empty() || !out.entities.contains_key(&a.entity_id) {
            continue;
        }
        out.attributes.insert(
            key.clone(),
            AttributeAssertion {
                frame_ids,
                ..a.clone()
            },
        );
    }
    out
}

/// Segments and per-frame slices to an initialized memory: keyframe
/// selection, restriction, cross-frame merging, claim decomposition and
/// dependency derivation. With no segments every slice frame is kept.
pub fn build_memory(
    segments: &[SegmentDescriptor],
    slices: &GraphState,
    budget: usize,
    iou_threshold: f64,
) -> Result<(SemanticMemory, BuildReport), BuildError> {
    let (restricted, frames) = if segments.is_empty() {
        (slices.clone(), None)
    } else {
        let plan = select_keyframes(segments, budget)?;
        (
            restrict_to_keyframes(slices, &plan),
            Some(plan.frames(segments)),
        )
    };
    let mut report = ingest_graph(&restricted, iou_threshold)?;
    if let Some(frames) = frames {
        report.graph.frames = frames.into_iter().map(|f| (f.frame_id, f)).collect();
    }
    let claims = decompose_claims(&report.graph);
    let deps = derive_dependencies(&claims);
    let summary = BuildReport {
        keyframes: report.graph.frames.keys().map(|f| f.0).collect(),
        entities: report.graph.entities.len(),
        claims: claims.len(),
        rejected: report.rejected,
        warnings: report.warnings,
    };
    let memory = SemanticMemory::init(report.graph, claims, deps)?;
    Ok((memory, summary))
}
