//! Exact graph edit distance for small scene graphs.
//!
//! Unit costs: inserting, deleting or relabeling a node, and inserting,
//! deleting or re-predicating an edge, each cost 1. Attributes are ignored.
//! The search is best-first over partial node mappings with an admissible
//! label/predicate multiset bound.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use thiserror::Error;

use crate::graph::GraphState;
use crate::ids::EntityId;

pub const DEFAULT_MAX_NODES: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("graph has {nodes} nodes, above the exact-search limit of {max}; use sampled evaluation")]
pub struct GedError {
    pub nodes: usize,
    pub max: usize,
}

/// Node labels plus directed edge predicate multisets, keyed by node index.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledGraph {
    pub ids: Vec<EntityId>,
    pub labels: Vec<String>,
    pub edges: BTreeMap<(usize, usize), Vec<String>>,
}

impl LabeledGraph {
    pub fn from_graph(g: &GraphState) -> Self {
        let ids: Vec<EntityId> = g.entities.keys().cloned().collect();
        let index: BTreeMap<&EntityId, usize> =
            ids.iter().enumerate().map(|(i, e)| (e, i)).collect();
        let labels = g
            .entities
            .values()
            .map(|e| e.canonical_label.clone())
            .collect();
        let mut edges: BTreeMap<(usize, usize), Vec<String>> = BTreeMap::new();
        for r in g.relations.values() {
            if let (Some(&s), Some(&o)) = (index.get(&r.subject), index.get(&r.object)) {
                edges.entry((s, o)).or_default().push(r.predicate.clone());
            }
        }
        for v in edges.values_mut() {
            v.sort();
        }
        Self { ids, labels, edges }
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.values().map(Vec::len).sum()
    }

    fn edge(&self, a: usize, b: usize) -> &[String] {
        self.edges.get(&(a, b)).map_or(&[], Vec::as_slice)
    }
}

/// Size of the multiset intersection of two sorted lists.
fn common(a: &[String], b: &[String]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Cost of turning edge multiset `a` into `b`.
fn edge_cost(a: &[String], b: &[String]) -> usize {
    a.len().max(b.len()) - common(a, b)
}

fn bound(a: &mut [String], b: &mut [String]) -> usize {
    a.sort();
    b.sort();
    edge_cost(a, b)
}

struct Search<'a> {
    p: &'a LabeledGraph,
    t: &'a LabeledGraph,
    order: Vec<usize>,
}

#[derive(Clone)]
struct Node {
    /// `map[i]` is the truth image of the i-th pred node in search order.
    map: Vec<Option<usize>>,
    used: u64,
    g: usize,
}

impl Search<'_> {
    fn heuristic(&self, node: &Node) -> usize {
        let k = node.map.len();
        let rest_p: Vec<usize> = self.order[k..].to_vec();
        let rest_t: Vec<usize> = (0..self.t.node_count())
            .filter(|j| node.used & (1 << j) == 0)
            .collect();
        let mut lp: Vec<String> = rest_p.iter().map(|&i| self.p.labels[i].clone()).collect();
        let mut lt: Vec<String> = rest_t.iter().map(|&j| self.t.labels[j].clone()).collect();
        let nodes = bound(&mut lp, &mut lt);
        let mapped_p = |i: usize| self.order[..k].contains(&i);
        let mut ep: Vec<String> = self
            .p
            .edges
            .iter()
            .filter(|((a, b), _)| !mapped_p(*a) || !mapped_p(*b))
            .flat_map(|(_, v)| v.iter().cloned())
            .collect();
        let used_t = |j: usize| node.used & (1 << j) != 0;
        let mut et: Vec<String> = self
            .t
            .edges
            .iter()
            .filter(|((a, b), _)| !used_t(*a) || !used_t(*b))
            .flat_map(|(_, v)| v.iter().cloned())
            .collect();
        nodes + bound(&mut ep, &mut et)
    }

    /// Cost added by mapping the next pred node to `target`.
    fn step(&self, node: &Node, target: Option<usize>) -> usize {
        let k = node.map.len();
        let i = self.order[k];
        let mut cost = match target {
            Some(j) => usize::from(self.p.labels[i] != self.t.labels[j]),
            None => 1,
        };
        for (pos, &img) in node.map.iter().enumerate() {
            let m = self.order[pos];
            for (a, b, ia, ib) in [(i, m, target, img), (m, i, img, target)] {
                let pe = self.p.edge(a, b);
                let te: &[String] = match (ia, ib) {
                    (Some(x), Some(y)) => self.t.edge(x, y),
                    _ => &[],
                };
                cost += edge_cost(pe, te);
            }
        }
        cost
    }

    /// Cost of inserting every unused truth node and its unmatched edges.
    fn finish(&self, node: &Node) -> usize {
        let used = |j: usize| node.used & (1 << j) != 0;
        let nodes = (0..self.t.node_count()).filter(|&j| !used(j)).count();
        let edges: usize = self
            .t
            .edges
            .iter()
            .filter(|((a, b), _)| !used(*a) || !used(*b))
            .map(|(_, v)| v.len())
            .sum();
        nodes + edges
    }

    /// Cost of one complete mapping, used to seed the upper bound.
    fn complete_cost(&self, map: &[Option<usize>]) -> usize {
        let mut node = Node {
            map: Vec::new(),
            used: 0,
            g: 0,
        };
        for &target in map {
            node.g += self.step(&node, target);
            if let Some(j) = target {
                node.used |= 1 << j;
            }
            node.map.push(target);
        }
        node.g + self.finish(&node)
    }

    fn run(&self) -> usize {
        // Upper bound from matching shared entity ids.
        let seed: Vec<Option<usize>> = self
            .order
            .iter()
            .map(|&i| self.t.ids.iter().position(|e| *e == self.p.ids[i]))
            .collect();
        let mut best = self.complete_cost(&seed);

        let mut arena: Vec<Node> = vec![Node {
            map: Vec::new(),
            used: 0,
            g: 0,
        }];
        let mut heap = BinaryHeap::new();
        heap.push(Reverse((self.heuristic(&arena[0]), 0usize, 0usize)));
        while let Some(Reverse((f, _, idx))) = heap.pop() {
            if f >= best {
                break;
            }
            let node = arena[idx].clone();
            if node.map.len() == self.order.len() {
                best = best.min(node.g + self.finish(&node));
                continue;
            }
            let targets = (0..self.t.node_count())
                .filter(|j| node.used & (1 << j) == 0)
                .map(Some)
                .chain(std::iter::once(None));
            for target in targets {
                let mut child = node.clone();
                child.g += self.step(&node, target);
                if let Some(j) = target {
                    child.used |= 1 << j;
                }
                child.map.push(target);
                let f = if child.map.len() == self.order.len() {
                    child.g + self.finish(&child)
                } else {
                    child.g + self.heuristic(&child)
                };
                if f < best {
                    arena.push(child);
                    let depth = arena[arena.len() - 1].map.len();
                    heap.push(Reverse((f, usize::MAX - depth, arena.len() - 1)));
                }
            }
        }
        best
    }
}

/// Minimum unit-cost edit distance between two labeled graphs.
pub fn ged_cost(
    pred: &LabeledGraph,
    truth: &LabeledGraph,
    max_nodes: usize,
) -> Result<usize, GedError> {
    let nodes = pred.node_count().max(truth.node_count());
    if nodes > max_nodes || nodes > 63 {
        return Err(GedError {
            nodes,
            max: max_nodes.min(63),
        });
    }
    let degree = |i: usize| {
        pred.edges
            .iter()
            .filter(|((a, b), _)| *a == i || *b == i)
            .map(|(_, v)| v.len())
            .sum::<usize>()
    };
    let mut order: Vec<usize> = (0..pred.node_count()).collect();
    order.sort_by_key(|&i| (Reverse(degree(i)), i));
    Ok(Search {
        p: pred,
        t: truth,
        order,
    }
    .run())
}

/// Edit distance normalized by the cost of deleting `pred` and inserting
/// `truth` entirely.
pub fn graph_edit_distance(
    pred: &GraphState,
    truth: &GraphState,
    max_nodes: usize,
) -> Result<f64, GedError> {
    let (p, t) = (
        LabeledGraph::from_graph(pred),
        LabeledGraph::from_graph(truth),
    );
    let cost = ged_cost(&p, &t, max_nodes)?;
    let total = p.node_count() + p.edge_count() + t.node_count() + t.edge_count();
    Ok(if total == 0 {
        0.0
    } else {
        cost as f64 / total as f64
    })
}
