//! Video-level scene graph state: entities, relations and attributes, kept as
//! a union of frame-level slices.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{EntityId, FrameId, RelationId};
use crate::keyed::{self, Keyed};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("entity {0} listed twice")]
    DuplicateEntity(EntityId),
    #[error("entity {entity} references unknown frame {frame}")]
    UnknownFrame { entity: String, frame: FrameId },
    #[error("entity {entity} has an invalid region in frame {frame}: {region:?}")]
    BadRegion {
        entity: EntityId,
        frame: FrameId,
        region: BBox,
    },
    #[error("entity {entity}: spatial extent frames do not match frame_ids")]
    ExtentMismatch { entity: EntityId },
    #[error("entity {0} has an empty canonical label")]
    EmptyLabel(EntityId),
    #[error("relation {0} is a self-loop")]
    SelfRelation(RelationId),
    #[error("relation {relation} references unknown entity {entity}")]
    DanglingRelation {
        relation: RelationId,
        entity: EntityId,
    },
    #[error("relation {0} has an empty predicate")]
    EmptyPredicate(RelationId),
    #[error("attribute on unknown entity {0}")]
    DanglingAttribute(EntityId),
    #[error("attribute on entity {0} has an empty key")]
    EmptyAttributeKey(EntityId),
    #[error("element {0} has no frames")]
    NoFrames(String),
}

/// Axis-aligned region in normalized `[0,1]` image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    /// Coordinates inside `[0,1]` and strictly positive area.
    pub fn is_valid(&self) -> bool {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        in_unit(self.x0)
            && in_unit(self.y0)
            && in_unit(self.x1)
            && in_unit(self.y1)
            && self.x1 > self.x0
            && self.y1 > self.y0
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let iy = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameInfo {
    pub frame_id: FrameId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thumbnail: Option<String>,
    /// Frame was drawn from a segment with significant motion.
    #[serde(default)]
    pub dynamic: bool,
}

impl FrameInfo {
    pub fn new(frame_id: FrameId) -> Self {
        Self {
            frame_id,
            thumbnail: None,
            dynamic: false,
        }
    }
}

impl Keyed for FrameInfo {
    type Key = FrameId;
    fn key(&self) -> FrameId {
        self.frame_id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityNode {
    pub entity_id: EntityId,
    pub canonical_label: String,
    pub spatial_extent: BTreeMap<FrameId, BBox>,
    pub frame_ids: BTreeSet<FrameId>,
}

impl Keyed for EntityNode {
    type Key = EntityId;
    fn key(&self) -> EntityId {
        self.entity_id.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationEdge {
    pub relation_id: RelationId,
    pub subject: EntityId,
    pub predicate: String,
    pub object: EntityId,
    pub frame_ids: BTreeSet<FrameId>,
}

impl Keyed for RelationEdge {
    type Key = RelationId;
    fn key(&self) -> RelationId {
        self.relation_id.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeAssertion {
    pub entity_id: EntityId,
    pub attribute_key: String,
    pub attribute_value: String,
    pub frame_ids: BTreeSet<FrameId>,
}

pub type AttributeKey = (EntityId, String);

impl Keyed for AttributeAssertion {
    type Key = AttributeKey;
    fn key(&self) -> AttributeKey {
        (self.entity_id.clone(), self.attribute_key.clone())
    }
}

/// One frame's view of the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSlice<'a> {
    pub frame_id: FrameId,
    pub entities: Vec<&'a EntityNode>,
    pub relations: Vec<&'a RelationEdge>,
    pub attributes: Vec<&'a AttributeAssertion>,
}

/// The video-level graph. Serialized with array-valued sections so the
/// snapshot and the ingest input share one schema.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphState {
    #[serde(with = "keyed", default)]
    pub frames: BTreeMap<FrameId, FrameInfo>,
    #[serde(with = "keyed", default)]
    pub entities: BTreeMap<EntityId, EntityNode>,
    #[serde(with = "keyed", default)]
    pub relations: BTreeMap<RelationId, RelationEdge>,
    #[serde(with = "keyed", default)]
    pub attributes: BTreeMap<AttributeKey, AttributeAssertion>,
}

impl GraphState {
    pub fn is_empty(&self) -> bool {
        self.entities.is_empty() && self.relations.is_empty() && self.attributes.is_empty()
    }

    pub fn frame_slice(&self, frame_id: FrameId) -> FrameSlice<'_> {
        FrameSlice {
            frame_id,
            entities: self
                .entities
                .values()
                .filter(|e| e.frame_ids.contains(&frame_id))
                .collect(),
            relations: self
                .relations
                .values()
                .filter(|r| r.frame_ids.contains(&frame_id))
                .collect(),
            attributes: self
                .attributes
                .values()
                .filter(|a| a.frame_ids.contains(&frame_id))
                .collect(),
        }
    }

    /// Number of entities present in `frame_id`.
    pub fn entities_in_frame(&self, frame_id: FrameId) -> usize {
        self.entities
            .values()
            .filter(|e| e.frame_ids.contains(&frame_id))
            .count()
    }

    /// Remove an entity together with every relation and attribute touching it.
    /// Returns the removed relation ids and attribute keys.
    pub fn remove_entity(&mut self, id: &EntityId) -> (Vec<RelationId>, Vec<AttributeKey>) {
        self.entities.remove(id);
        let rels: Vec<RelationId> = self
            .relations
            .values()
            .filter(|r| &r.subject == id || &r.object == id)
            .map(|r| r.relation_id.clone())
            .collect();
        for r in &rels {
            self.relations.remove(r);
        }
        let attrs: Vec<AttributeKey> = self
            .attributes
            .keys()
            .filter(|(e, _)| e == id)
            .cloned()
            .collect();
        for a in &attrs {
            self.attributes.remove(a);
        }
        (rels, attrs)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        for e in self.entities.values() {
            if e.canonical_label.trim().is_empty() {
                return Err(GraphError::EmptyLabel(e.entity_id.clone()));
            }
            if e.frame_ids.is_empty() {
                return Err(GraphError::NoFrames(e.entity_id.to_string()));
            }
            self.check_frames(e.entity_id.as_str(), &e.frame_ids)?;
            let extent_frames: BTreeSet<FrameId> = e.spatial_extent.keys().copied().collect();
            if extent_frames != e.frame_ids {
                return Err(GraphError::ExtentMismatch {
                    entity: e.entity_id.clone(),
                });
            }
            for (frame, region) in &e.spatial_extent {
                if !region.is_valid() {
                    return Err(GraphError::BadRegion {
                        entity: e.entity_id.clone(),
                        frame: *frame,
                        region: *region,
                    });
                }
            }
        }
        for r in self.relations.values() {
            if r.subject == r.object {
                return Err(GraphError::SelfRelation(r.relation_id.clone()));
            }
            for end in [&r.subject, &r.object] {
                if !self.entities.contains_key(end) {
                    return Err(GraphError::DanglingRelation {
                        relation: r.relation_id.clone(),
                        entity: end.clone(),
                    });
                }
            }
            if r.predicate.trim().is_empty() {
                return Err(GraphError::EmptyPredicate(r.relation_id.clone()));
            }
            if r.frame_ids.is_empty() {
                return Err(GraphError::NoFrames(r.relation_id.to_string()));
            }
            self.check_frames(r.relation_id.as_str(), &r.frame_ids)?;
        }
        for a in self.attributes.values() {
            if !self.entities.contains_key(&a.entity_id) {
                return Err(GraphError::DanglingAttribute(a.entity_id.clone()));
            }
            if a.attribute_key.trim().is_empty() {
                return Err(GraphError::EmptyAttributeKey(a.entity_id.clone()));
            }
            if a.frame_ids.is_empty() {
                return Err(GraphError::NoFrames(format!(
                    "{}.{}",
                    a.entity_id, a.attribute_key
                )));
            }
            self.check_frames(a.entity_id.as_str(), &a.frame_ids)?;
        }
        Ok(())
    }

    fn check_frames(&self, owner: &str, frames: &BTreeSet<FrameId>) -> Result<(), GraphError> {
        // An empty frame index means frames are implicit (e.g. hand-built test graphs).
        if self.frames.is_empty() {
            return Ok(());
        }
        match frames.iter().find(|f| !self.frames.contains_key(f)) {
            Some(frame) => Err(GraphError::UnknownFrame {
                entity: owner.to_owned(),
                frame: *frame,
            }),
            None => Ok(()),
        }
    }
}
