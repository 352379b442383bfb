//! Typed atomic claims over single graph elements.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::arbitration::EscalationTicket;
use crate::graph::GraphState;
use crate::ids::{ClaimId, EntityId, FrameId, RelationId};
use crate::keyed::{self, Keyed};

/// Value asserted by every existence claim.
pub const PRESENT: &str = "present";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimType {
    Exist,
    Label,
    Attr,
    Rel,
}

impl ClaimType {
    pub const ALL: [ClaimType; 4] = [
        ClaimType::Exist,
        ClaimType::Label,
        ClaimType::Attr,
        ClaimType::Rel,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Claim types whose value can be replaced by an ontology candidate.
    pub fn is_correctable(self) -> bool {
        !matches!(self, ClaimType::Exist)
    }
}

impl fmt::Display for ClaimType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ClaimType::Exist => "exist",
            ClaimType::Label => "label",
            ClaimType::Attr => "attr",
            ClaimType::Rel => "rel",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClaimTarget {
    Entity {
        entity_id: EntityId,
    },
    Attribute {
        entity_id: EntityId,
        attribute_key: String,
    },
    Relation {
        relation_id: RelationId,
        subject: EntityId,
        object: EntityId,
    },
}

impl ClaimTarget {
    /// Entities the target touches (one for entity/attribute, two for relations).
    pub fn entities(&self) -> Vec<&EntityId> {
        match self {
            ClaimTarget::Entity { entity_id } | ClaimTarget::Attribute { entity_id, .. } => {
                vec![entity_id]
            }
            ClaimTarget::Relation {
                subject, object, ..
            } => vec![subject, object],
        }
    }

    pub fn touches(&self, entity: &EntityId) -> bool {
        self.entities().into_iter().any(|e| e == entity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimStatus {
    Pending,
    Supported,
    Contradicted,
    Revised,
    Escalated,
    HumanResolved,
    Locked,
}

impl ClaimStatus {
    /// Statuses that automated actors may no longer change.
    pub fn is_human_owned(self) -> bool {
        matches!(self, ClaimStatus::HumanResolved | ClaimStatus::Locked)
    }
}

/// Inclusive frame interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSpan {
    pub start: FrameId,
    pub end: FrameId,
}

impl FrameSpan {
    pub fn of<'a>(frames: impl IntoIterator<Item = &'a FrameId>) -> Option<FrameSpan> {
        let mut it = frames.into_iter().copied();
        let first = it.next()?;
        let (lo, hi) = it.fold((first, first), |(lo, hi), f| (lo.min(f), hi.max(f)));
        Some(FrameSpan { start: lo, end: hi })
    }

    pub fn intersects(&self, other: &FrameSpan) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn contains(&self, frame: FrameId) -> bool {
        self.start <= frame && frame <= self.end
    }

    pub fn is_single_frame(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub claim_id: ClaimId,
    pub claim_type: ClaimType,
    pub target: ClaimTarget,
    pub asserted_value: String,
    pub temporal_extent: FrameSpan,
    pub status: ClaimStatus,
    #[serde(default)]
    pub belief: Option<f64>,
    /// Open arbitration ticket; present exactly while the status is `escalated`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ticket: Option<EscalationTicket>,
}

impl Keyed for Claim {
    type Key = ClaimId;
    fn key(&self) -> ClaimId {
        self.claim_id.clone()
    }
}

impl Claim {
    pub fn exist_id(entity: &EntityId) -> ClaimId {
        ClaimId(format!("exist/{entity}"))
    }

    pub fn label_id(entity: &EntityId) -> ClaimId {
        ClaimId(format!("label/{entity}"))
    }

    pub fn attr_id(entity: &EntityId, key: &str) -> ClaimId {
        ClaimId(format!("attr/{entity}/{key}"))
    }

    pub fn rel_id(relation: &RelationId) -> ClaimId {
        ClaimId(format!("rel/{relation}"))
    }

    /// Human-readable statement of the claim.
    pub fn text(&self) -> String {
        let (s, e) = (self.temporal_extent.start, self.temporal_extent.end);
        match (&self.claim_type, &self.target) {
            (ClaimType::Exist, ClaimTarget::Entity { entity_id }) => {
                format!("entity {entity_id} is present in frames {s}-{e}")
            }
            (ClaimType::Label, ClaimTarget::Entity { entity_id }) => {
                format!("entity {entity_id} is a {}", self.asserted_value)
            }
            (
                ClaimType::Attr,
                ClaimTarget::Attribute {
                    entity_id,
                    attribute_key,
                },
            ) => format!(
                "entity {entity_id} has {attribute_key} = {} in frames {s}-{e}",
                self.asserted_value
            ),
            (
                ClaimType::Rel,
                ClaimTarget::Relation {
                    subject, object, ..
                },
            ) => format!(
                "{subject} {} {object} in frames {s}-{e}",
                self.asserted_value
            ),
            _ => format!("{} claim {}", self.claim_type, self.claim_id),
        }
    }
}

/// Claims keyed by id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClaimSet {
    #[serde(with = "keyed")]
    pub claims: BTreeMap<ClaimId, Claim>,
}

impl ClaimSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, claim: Claim) {
        self.claims.insert(claim.claim_id.clone(), claim);
    }

    pub fn get(&self, id: &ClaimId) -> Option<&Claim> {
        self.claims.get(id)
    }

    pub fn get_mut(&mut self, id: &ClaimId) -> Option<&mut Claim> {
        self.claims.get_mut(id)
    }

    pub fn contains(&self, id: &ClaimId) -> bool {
        self.claims.contains_key(id)
    }

    pub fn remove(&mut self, id: &ClaimId) -> Option<Claim> {
        self.claims.remove(id)
    }

    pub fn len(&self) -> usize {
        self.claims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.claims.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Claim> {
        self.claims.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &ClaimId> {
        self.claims.keys()
    }

    pub fn count_by_type(&self, t: ClaimType) -> usize {
        self.iter().filter(|c| c.claim_type == t).count()
    }
}

impl FromIterator<Claim> for ClaimSet {
    fn from_iter<I: IntoIterator<Item = Claim>>(iter: I) -> Self {
        let mut set = ClaimSet::new();
        for c in iter {
            set.insert(c);
        }
        set
    }
}

/// Current value of the element a claim targets, if the element is live and
/// the claim's type matches the target kind.
pub fn element_value(
    graph: &GraphState,
    claim_type: ClaimType,
    target: &ClaimTarget,
) -> Option<String> {
    match (claim_type, target) {
        (ClaimType::Exist, ClaimTarget::Entity { entity_id }) => {
            graph.entities.get(entity_id).map(|_| PRESENT.to_owned())
        }
        (ClaimType::Label, ClaimTarget::Entity { entity_id }) => graph
            .entities
            .get(entity_id)
            .map(|e| e.canonical_label.clone()),
        (
            ClaimType::Attr,
            ClaimTarget::Attribute {
                entity_id,
                attribute_key,
            },
        ) => graph
            .attributes
            .get(&(entity_id.clone(), attribute_key.clone()))
            .map(|a| a.attribute_value.clone()),
        (
            ClaimType::Rel,
            ClaimTarget::Relation {
                relation_id,
                subject,
                object,
            },
        ) => graph
            .relations
            .get(relation_id)
            .filter(|r| &r.subject == subject && &r.object == object)
            .map(|r| r.predicate.clone()),
        _ => None,
    }
}

/// Write a new value into the element a claim targets. Returns false when the
/// element is gone or the claim type has no writable value.
pub fn set_element_value(
    graph: &mut GraphState,
    claim_type: ClaimType,
    target: &ClaimTarget,
    value: &str,
) -> bool {
    match (claim_type, target) {
        (ClaimType::Label, ClaimTarget::Entity { entity_id }) => {
            match graph.entities.get_mut(entity_id) {
                Some(e) => {
                    e.canonical_label = value.to_owned();
                    true
                }
                None => false,
            }
        }
        (
            ClaimType::Attr,
            ClaimTarget::Attribute {
                entity_id,
                attribute_key,
            },
        ) => match graph
            .attributes
            .get_mut(&(entity_id.clone(), attribute_key.clone()))
        {
            Some(a) => {
                a.attribute_value = value.to_owned();
                true
            }
            None => false,
        },
        (ClaimType::Rel, ClaimTarget::Relation { relation_id, .. }) => {
            match graph.relations.get_mut(relation_id) {
                Some(r) => {
                    r.predicate = value.to_owned();
                    true
                }
                None => false,
            }
        }
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn span_intersection() {
        let a = FrameSpan {
            start: FrameId(0),
            end: FrameId(4),
        };
        let b = FrameSpan {
            start: FrameId(4),
            end: FrameId(9),
        };
        let c = FrameSpan {
            start: FrameId(5),
            end: FrameId(9),
        };
        assert!(a.intersects(&b));
        assert!(!a.intersects(&c));
        assert_eq!(
            FrameSpan::of(&[FrameId(7), FrameId(2), FrameId(5)]),
            Some(FrameSpan {
                start: FrameId(2),
                end: FrameId(7)
            })
        );
        assert_eq!(FrameSpan::of(&[]), None);
    }

    #[test]
    fn status_serializes_snake_case() {
        let s = serde_json::to_string(&ClaimStatus::HumanResolved).unwrap();
        assert_eq!(s, "\"human_resolved\"");
    }
}
