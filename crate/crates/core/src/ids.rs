//! Identifier newtypes shared across the memory, agents and harness.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(
    /// Opaque entity identifier, stable across frames.
    EntityId
);
string_id!(
    /// Relation identifier. Survives predicate rewrites.
    RelationId
);
string_id!(
    /// Claim identifier, derived from the claim's target element.
    ClaimId
);

/// Keyframe identifier (a frame index in the source video).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct FrameId(pub u32);

// Accepts numeric strings too: JSON object keys arrive as strings, and
// flattened sections lose serde_json's integer-key handling.
impl<'de> Deserialize<'de> for FrameId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = FrameId;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a frame index")
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<FrameId, E> {
                u32::try_from(v).map(FrameId).map_err(E::custom)
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<FrameId, E> {
                u32::try_from(v).map(FrameId).map_err(E::custom)
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<FrameId, E> {
                v.parse().map(FrameId).map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Global memory version. Version 0 is the initial snapshot.
pub type Version = u64;
