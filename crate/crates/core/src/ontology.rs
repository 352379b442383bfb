//! Closed label, predicate and attribute-value vocabularies.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::claim::{Claim, ClaimTarget, ClaimType};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ontology {
    #[serde(default)]
    pub labels: BTreeSet<String>,
    #[serde(default)]
    pub predicates: BTreeSet<String>,
    /// Allowed values per attribute key.
    #[serde(default)]
    pub attributes: BTreeMap<String, BTreeSet<String>>,
}

impl Ontology {
    /// Valid replacement values `O(c)` for a claim. Existence claims have none.
    pub fn options_for(&self, claim: &Claim) -> Vec<String> {
        match (claim.claim_type, &claim.target) {
            (ClaimType::Label, _) => self.labels.iter().cloned().collect(),
            (ClaimType::Rel, _) => self.predicates.iter().cloned().collect(),
            (ClaimType::Attr, ClaimTarget::Attribute { attribute_key, .. }) => self
                .attributes
                .get(attribute_key)
                .map(|v| v.iter().cloned().collect())
                .unwrap_or_default(),
            _ => Vec::new(),
        }
    }

    pub fn allows(&self, claim: &Claim, value: &str) -> bool {
        match (claim.claim_type, &claim.target) {
            (ClaimType::Label, _) => self.labels.contains(value),
            (ClaimType::Rel, _) => self.predicates.contains(value),
            (ClaimType::Attr, ClaimTarget::Attribute { attribute_key, .. }) => self
                .attributes
                .get(attribute_key)
                .is_some_and(|v| v.contains(value)),
            _ => false,
        }
    }
}
