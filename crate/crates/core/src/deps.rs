//! Claim dependency graph and one-step dependency closure.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::ClaimId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DependencyError {
    #[error("self-edge on claim {0}")]
    SelfEdge(ClaimId),
    #[error("edge endpoint {0} is not a known claim")]
    UnknownEndpoint(ClaimId),
    #[error("unknown claim {0}")]
    UnknownClaim(ClaimId),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DependencyEdge {
    pub from: ClaimId,
    pub to: ClaimId,
}

#[derive(Serialize, Deserialize)]
struct RawDependencies {
    nodes: BTreeSet<ClaimId>,
    edges: Vec<DependencyEdge>,
}

/// Directed edges `c -> c'` meaning a revision to `c` structurally constrains
/// `c'`. Keeps forward and reverse adjacency for closure queries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDependencies", into = "RawDependencies")]
pub struct DependencyGraph {
    nodes: BTreeSet<ClaimId>,
    out: BTreeMap<ClaimId, BTreeSet<ClaimId>>,
    inc: BTreeMap<ClaimId, BTreeSet<ClaimId>>,
}

impl TryFrom<RawDependencies> for DependencyGraph {
    type Error = DependencyError;

    fn try_from(raw: RawDependencies) -> Result<Self, Self::Error> {
        let mut g = DependencyGraph::with_nodes(raw.nodes);
        for e in raw.edges {
            g.add_edge(e.from, e.to)?;
        }
        Ok(g)
    }
}

impl From<DependencyGraph> for RawDependencies {
    fn from(g: DependencyGraph) -> Self {
        let edges = g.edges().collect();
        RawDependencies {
            nodes: g.nodes,
            edges,
        }
    }
}

impl DependencyGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_nodes(nodes: impl IntoIterator<Item = ClaimId>) -> Self {
        Self {
            nodes: nodes.into_iter().collect(),
            ..Self::default()
        }
    }

    pub fn add_node(&mut self, id: ClaimId) {
        self.nodes.insert(id);
    }

    pub fn contains(&self, id: &ClaimId) -> bool {
        self.nodes.contains(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &ClaimId> {
        self.nodes.iter()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Insert `from -> to`. Duplicate edges are ignored.
    pub fn add_edge(&mut self, from: ClaimId, to: ClaimId) -> Result<(), DependencyError> {
        if from == to {
            return Err(DependencyError::SelfEdge(from));
        }
        for end in [&from, &to] {
            if !self.nodes.contains(end) {
                return Err(DependencyError::UnknownEndpoint(end.clone()));
            }
        }
        self.inc.entry(to.clone()).or_default().insert(from.clone());
        self.out.entry(from).or_default().insert(to);
        Ok(())
    }

    pub fn has_edge(&self, from: &ClaimId, to: &ClaimId) -> bool {
        self.out.get(from).is_some_and(|s| s.contains(to))
    }

    pub fn edges(&self) -> impl Iterator<Item = DependencyEdge> + '_ {
        self.out.iter().flat_map(|(from, tos)| {
            tos.iter().map(move |to| DependencyEdge {
                from: from.clone(),
                to: to.clone(),
            })
        })
    }

    pub fn edge_count(&self) -> usize {
        self.out.values().map(BTreeSet::len).sum()
    }

    pub fn out_degree(&self, id: &ClaimId) -> usize {
        self.out.get(id).map_or(0, BTreeSet::len)
    }

    pub fn max_out_degree(&self) -> usize {
        self.out.values().map(BTreeSet::len).max().unwrap_or(0)
    }

    /// Dependents and supporters of `id` (one step, both directions).
    pub fn neighbors(&self, id: &ClaimId) -> BTreeSet<ClaimId> {
        let mut n = BTreeSet::new();
        if let Some(s) = self.out.get(id) {
            n.extend(s.iter().cloned());
        }
        if let Some(s) = self.inc.get(id) {
            n.extend(s.iter().cloned());
        }
        n
    }

    /// Drop a claim and every edge touching it.
    pub fn remove_node(&mut self, id: &ClaimId) {
        self.nodes.remove(id);
        if let Some(tos) = self.out.remove(id) {
            for to in tos {
                if let Some(s) = self.inc.get_mut(&to) {
                    s.remove(id);
                    if s.is_empty() {
                        self.inc.remove(&to);
                    }
                }
            }
        }
        if let Some(froms) = self.inc.remove(id) {
            for from in froms {
                if let Some(s) = self.out.get_mut(&from) {
                    s.remove(id);
                    if s.is_empty() {
                        self.out.remove(&from);
                    }
                }
            }
        }
    }

    /// `Q ∪ {c' : c' ~ c, c ∈ Q}` with `~` the symmetric one-step adjacency.
    pub fn closure<'a>(
        &self,
        edited: impl IntoIterator<Item = &'a ClaimId>,
    ) -> Result<BTreeSet<ClaimId>, DependencyError> {
        let mut result = BTreeSet::new();
        for c in edited {
            if !self.nodes.contains(c) {
                return Err(DependencyError::UnknownClaim(c.clone()));
            }
            result.insert(c.clone());
            result.extend(self.neighbors(c));
        }
        Ok(result)
    }
}

/// Free-function form of [`DependencyGraph::closure`].
pub fn dependency_closure(
    deps: &DependencyGraph,
    edited: &BTreeSet<ClaimId>,
) -> Result<BTreeSet<ClaimId>, DependencyError> {
    deps.closure(edited)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn id(i: usize) -> ClaimId {
        ClaimId(format!("c{i:03}"))
    }

    fn chain(n: usize) -> DependencyGraph {
        let mut g = DependencyGraph::with_nodes((0..n).map(id));
        for i in 0..n - 1 {
            g.add_edge(id(i), id(i + 1)).unwrap();
        }
        g
    }

    // Brute-force reference: scan every edge for each edited claim.
    fn brute_closure(g: &DependencyGraph, q: &BTreeSet<ClaimId>) -> BTreeSet<ClaimId> {
        let mut out = q.clone();
        for e in g.edges() {
            if q.contains(&e.from) {
                out.insert(e.to.clone());
            }
            if q.contains(&e.to) {
                out.insert(e.from.clone());
            }
        }
        out
    }

    #[test]
    fn isolated_claim_closes_to_itself() {
        let g = DependencyGraph::with_nodes([id(0), id(1)]);
        let q: BTreeSet<_> = [id(0)].into();
        assert_eq!(g.closure(&q).unwrap(), q);
    }

    #[test]
    fn chain_middle_pulls_both_neighbors() {
        let g = chain(3);
        let q: BTreeSet<_> = [id(1)].into();
        let got = g.closure(&q).unwrap();
        assert_eq!(got, brute_closure(&g, &q));
        assert_eq!(got, [id(0), id(1), id(2)].into());
    }

    #[test]
    fn star_hub_reaches_all_spokes() {
        let mut g = DependencyGraph::with_nodes((0..10).map(id));
        for i in 1..10 {
            g.add_edge(id(0), id(i)).unwrap();
        }
        let q: BTreeSet<_> = [id(0)].into();
        let got = g.closure(&q).unwrap();
        assert_eq!(got, brute_closure(&g, &q));
        assert_eq!(got.len(), 10);
    }

    #[test]
    fn unknown_claim_is_an_error() {
        let g = chain(2);
        let q: BTreeSet<_> = [ClaimId::from("nope")].into();
        assert_eq!(
            g.closure(&q),
            Err(DependencyError::UnknownClaim(ClaimId::from("nope")))
        );
    }

    #[test]
    fn self_edges_and_dangling_endpoints_rejected() {
        let mut g = DependencyGraph::with_nodes([id(0)]);
        assert!(matches!(
            g.add_edge(id(0), id(0)),
            Err(DependencyError::SelfEdge(_))
        ));
        assert!(matches!(
            g.add_edge(id(0), id(5)),
            Err(DependencyError::UnknownEndpoint(_))
        ));
    }

    #[test]
    fn remove_node_drops_edges() {
        let mut g = chain(3);
        g.remove_node(&id(1));
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.node_count(), 2);
    }

    #[test]
    fn serde_round_trip_keeps_adjacency() {
        let g = chain(4);
        let json = serde_json::to_string(&g).unwrap();
        let back: DependencyGraph = serde_json::from_str(&json).unwrap();
        assert_eq!(g, back);
        assert!(serde_json::from_str::<DependencyGraph>(
            r#"{"nodes":["a"],"edges":[{"from":"a","to":"a"}]}"#
        )
        .is_err());
    }

    fn arb_graph() -> impl Strategy<Value = (DependencyGraph, Vec<usize>, Vec<usize>)> {
        (2usize..20)
            .prop_flat_map(|n| {
                (
                    Just(n),
                    proptest::collection::vec((0..n, 0..n), 0..40),
                    proptest::collection::vec(0..n, 0..6),
                    proptest::collection::vec(0..n, 0..6),
                )
            })
            .prop_map(|(n, edges, q1, q2)| {
                let mut g = DependencyGraph::with_nodes((0..n).map(id));
                for (a, b) in edges {
                    if a != b {
                        g.add_edge(id(a), id(b)).unwrap();
                    }
                }
                (g, q1, q2)
            })
    }

    proptest! {
        #[test]
        fn closure_contains_and_is_monotone((g, q1, q2) in arb_graph()) {
            let small: BTreeSet<ClaimId> = q1.iter().map(|&i| id(i)).collect();
            let big: BTreeSet<ClaimId> = small.iter().cloned().chain(q2.iter().map(|&i| id(i))).collect();
            let c_small = g.closure(&small).unwrap();
            let c_big = g.closure(&big).unwrap();
            prop_assert!(small.is_subset(&c_small));
            prop_assert!(c_small.iter().all(|c| g.contains(c)));
            prop_assert!(c_small.is_subset(&c_big));
            prop_assert_eq!(c_small, brute_closure(&g, &small));
        }
    }
}
