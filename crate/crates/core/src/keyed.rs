//! Serde helper: store keyed records in a `BTreeMap` but put them on the
//! wire as a plain JSON array.

use std::collections::BTreeMap;
use std::fmt::Debug;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A record that knows its own map key.
pub trait Keyed {
    type Key: Ord + Clone + Debug;
    fn key(&self) -> Self::Key;
}

pub fn serialize<K, V, S>(map: &BTreeMap<K, V>, serializer: S) -> Result<S::Ok, S::Error>
where
    V: Serialize,
    S: Serializer,
{
    serializer.collect_seq(map.values())
}

pub fn deserialize<'de, V, D>(deserializer: D) -> Result<BTreeMap<V::Key, V>, D::Error>
where
    V: Keyed + Deserialize<'de>,
    D: Deserializer<'de>,
{
    let items = Vec::<V>::deserialize(deserializer)?;
    let mut map = BTreeMap::new();
    for item in items {
        let key = item.key();
        if map.insert(key.clone(), item).is_some() {
            return Err(D::Error::custom(format!("duplicate key {key:?}")));
        }
    }
    Ok(map)
}
