use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use super::*;
use crate::arbitration::HumanAnswer;
use crate::claim::{Claim, ClaimStatus};
use crate::constructor::{decompose_claims, derive_dependencies};
use crate::graph::{BBox, EntityNode, FrameInfo, RelationEdge};
use crate::ids::{EntityId, FrameId, RelationId};

fn graph() -> GraphState {
    let f = FrameId(0);
    let mut g = GraphState::default();
    g.frames.insert(f, FrameInfo::new(f));
    for (id, label) in [("e1", "dog"), ("e2", "table")] {
        g.entities.insert(
            EntityId::new(id),
            EntityNode {
                entity_id: EntityId::new(id),
                canonical_label: label.into(),
                spatial_extent: BTreeMap::from([(f, BBox::new(0.1, 0.1, 0.4, 0.4))]),
                frame_ids: BTreeSet::from([f]),
            },
        );
    }
    g.relations.insert(
        RelationId::new("r1"),
        RelationEdge {
            relation_id: RelationId::new("r1"),
            subject: EntityId::new("e1"),
            predicate: "on".into(),
            object: EntityId::new("e2"),
            frame_ids: BTreeSet::from([f]),
        },
    );
    g
}

fn memory() -> SemanticMemory {
    let g = graph();
    let claims = decompose_claims(&g);
    let deps = derive_dependencies(&claims);
    SemanticMemory::init(g, claims, deps).unwrap()
}

fn label() -> ClaimId {
    Claim::label_id(&EntityId::new("e1"))
}

fn rewrite(value: &str) -> EditOp {
    EditOp::Rewrite {
        claim_id: label(),
        value: value.into(),
        belief: Some(0.1),
    }
}

#[test]
fn init_counts_claims_and_logs_once() {
    let m = memory();
    assert_eq!(m.version(), 0);
    assert_eq!(m.state().claims.len(), 5);
    assert_eq!(m.log().len(), 1);
    assert_eq!(m.log()[0].actor, Actor::Constructor);
    assert_eq!(m.log()[0].action, Action::Init);
}

#[test]
fn empty_init() {
    let m = SemanticMemory::init(
        GraphState::default(),
        ClaimSet::new(),
        DependencyGraph::new(),
    )
    .unwrap();
    assert_eq!((m.version(), m.log().len()), (0, 1));
}

#[test]
fn dangling_claim_is_named() {
    let mut claims = decompose_claims(&graph());
    let mut stray = claims.get(&label()).unwrap().clone();
    stray.claim_id = Claim::label_id(&EntityId::new("ghost"));
    stray.target = crate::claim::ClaimTarget::Entity {
        entity_id: EntityId::new("ghost"),
    };
    claims.insert(stray.clone());
    let err = SemanticMemory::init(graph(), claims, DependencyGraph::new()).unwrap_err();
    assert_eq!(err, MemoryError::DanglingClaim(stray.claim_id));
}

#[test]
fn arbitration_rewrites_dog_to_cat() {
    let mut m = memory();
    m.apply_edit(rewrite("cat"), Actor::Arbitration).unwrap();
    assert_eq!(m.version(), 1);
    let last = m.log().last().unwrap();
    assert_eq!(last.action, Action::Rewrite);
    assert_eq!((last.prior_version, last.new_version), (0, 1));

    // Reference: the same change made by hand.
    let mut expected = graph();
    expected
        .entities
        .get_mut(&EntityId::new("e1"))
        .unwrap()
        .canonical_label = "cat".into();
    assert_eq!(m.state().graph, expected);
    let c = m.state().claims.get(&label()).unwrap();
    assert_eq!(
        (c.asserted_value.as_str(), c.status),
        ("cat", ClaimStatus::Revised)
    );
}

#[test]
fn verifier_write_is_rejected_and_logged() {
    let mut m = memory();
    let before = m.state().clone();
    let err = m
        .apply_edit(rewrite("cat"), Actor::LocalGrounding)
        .unwrap_err();
    assert!(matches!(err, MemoryError::Authority { .. }));
    assert_eq!(*m.state(), before);
    let last = m.log().last().unwrap();
    assert!(matches!(
        last.payload,
        EditOp::Flag {
            record: FlagRecord::Violation { .. }
        }
    ));
    assert_eq!(last.new_version, 0);
}

#[test]
fn authority_table() {
    use Action::*;
    let allowed = |a: Actor| -> BTreeSet<Action> {
        Action::ALL
            .iter()
            .copied()
            .filter(|x| permits(a, *x))
            .collect()
    };
    assert_eq!(allowed(Actor::Constructor), BTreeSet::from([Init]));
    for v in [
        Actor::LocalGrounding,
        Actor::TemporalConsistency,
        Actor::GlobalAudit,
    ] {
        assert_eq!(allowed(v), BTreeSet::from([Flag]));
    }
    assert_eq!(
        allowed(Actor::Arbitration),
        BTreeSet::from([Accept, Rewrite, Escalate])
    );
    assert_eq!(allowed(Actor::Human).len(), 8);
    assert!(!permits(Actor::Human, Init));
}

#[test]
fn locks_are_idempotent_and_binding() {
    let mut m = memory();
    m.lock_claim(&label(), Actor::Human).unwrap();
    let once = m.state().clone();
    let entries = m.log().len();
    m.lock_claim(&label(), Actor::Human).unwrap();
    assert_eq!(m.log().len(), entries + 1);
    assert_eq!(m.state().claims, once.claims);
    assert_eq!(m.state().graph, once.graph);

    let before = m.state().clone();
    assert_eq!(
        m.apply_edit(rewrite("cat"), Actor::Arbitration),
        Err(MemoryError::Locked(label()))
    );
    assert_eq!(*m.state(), before);
    assert!(matches!(
        m.log().last().unwrap().payload,
        EditOp::Flag {
            record: FlagRecord::Violation { .. }
        }
    ));

    m.apply_edit(
        EditOp::Override {
            claim_id: label(),
            value: "cat".into(),
        },
        Actor::Human,
    )
    .unwrap();
    let c = m.state().claims.get(&label()).unwrap();
    assert_eq!(
        (c.asserted_value.as_str(), c.status),
        ("cat", ClaimStatus::Locked)
    );

    assert!(m
        .lock_claim(&ClaimId::from("label/nobody"), Actor::Human)
        .is_err());
    assert!(matches!(
        m.lock_claim(&label(), Actor::Arbitration),
        Err(MemoryError::Authority { .. })
    ));
}

#[test]
fn rollback_to_start_restores_initial_state() {
    let mut m = memory();
    for v in ["cat", "bird", "cat", "dog", "cat"] {
        m.apply_edit(rewrite(v), Actor::Arbitration).unwrap();
    }
    assert_eq!(m.version(), 5);
    m.rollback(0).unwrap();
    assert_eq!(m.version(), 6);
    assert_eq!(m.state().graph, m.initial().graph);
    assert_eq!(m.state().claims, m.initial().claims);
    assert_eq!(m.log().len(), 7);
}

#[test]
fn rollback_to_current_is_a_logged_noop() {
    let mut m = memory();
    m.apply_edit(rewrite("cat"), Actor::Arbitration).unwrap();
    let before = m.state().clone();
    m.rollback(1).unwrap();
    assert_eq!(m.state().claims, before.claims);
    assert_eq!(m.state().graph, before.graph);
    assert_eq!(m.log().last().unwrap().action, Action::Rollback);
}

#[test]
fn edit_rollback_reedit_keeps_second_edit_only() {
    let mut m = memory();
    m.apply_edit(rewrite("cat"), Actor::Arbitration).unwrap();
    m.rollback(0).unwrap();
    m.apply_edit(rewrite("bird"), Actor::Arbitration).unwrap();
    assert_eq!(
        m.state().graph.entities[&EntityId::new("e1")].canonical_label,
        "bird"
    );
    let replayed = SemanticMemory::replay(m.initial().clone(), m.log().to_vec()).unwrap();
    assert_eq!(replayed.state(), m.state());
    assert_eq!(
        m.state_at(1).unwrap().graph.entities[&EntityId::new("e1")].canonical_label,
        "cat"
    );
}

#[test]
fn future_rollback_fails() {
    let mut m = memory();
    assert_eq!(
        m.rollback(3),
        Err(MemoryError::FutureVersion {
            target: 3,
            current: 0
        })
    );
}

#[test]
fn replay_of_empty_log_is_initial_snapshot() {
    let m = memory();
    let replayed = SemanticMemory::replay(m.initial().clone(), Vec::new()).unwrap();
    assert_eq!(replayed.state(), m.initial());
}

#[test]
fn replay_gap_names_seq() {
    let mut m = memory();
    m.apply_edit(rewrite("cat"), Actor::Arbitration).unwrap();
    m.apply_edit(rewrite("bird"), Actor::Arbitration).unwrap();
    let mut log = m.log().to_vec();
    log.remove(1);
    let err = SemanticMemory::replay(m.initial().clone(), log).unwrap_err();
    assert!(matches!(err, MemoryError::Replay { seq: 3, .. }), "{err}");
}

#[test]
fn snapshot_document_keys() {
    let v = serde_json::to_value(memory().state()).unwrap();
    let keys: BTreeSet<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(
        keys,
        BTreeSet::from([
            "version",
            "frames",
            "entities",
            "relations",
            "attributes",
            "claims",
            "dependencies"
        ])
    );
}

#[test]
fn snapshot_roundtrips_through_json() {
    let mut m = memory();
    m.apply_edit(rewrite("cat"), Actor::Arbitration).unwrap();
    let text = serde_json::to_string(m.state()).unwrap();
    let back: MemoryState = serde_json::from_str(&text).unwrap();
    assert_eq!(&back, m.state());
}

#[test]
fn log_roundtrips_through_jsonl() {
    let mut m = memory();
    m.apply_edit(rewrite("cat"), Actor::Arbitration).unwrap();
    m.lock_claim(&label(), Actor::Human).unwrap();
    let mut buf = Vec::new();
    write_jsonl(&mut buf, m.log()).unwrap();
    let back = read_jsonl(buf.as_slice()).unwrap();
    let replayed = SemanticMemory::replay(m.initial().clone(), back).unwrap();
    assert_eq!(replayed.state(), m.state());
}

fn op_for(kind: u8, pick: u8, version: Version) -> EditOp {
    let rel = Claim::rel_id(&RelationId::new("r1"));
    let values = ["cat", "dog", "bird"];
    match kind % 9 {
        0 => EditOp::Accept {
            claim_id: label(),
            belief: 0.9,
        },
        1 => rewrite(values[pick as usize % 3]),
        2 => EditOp::Escalate {
            claim_id: rel,
            belief: Some(0.5),
            status: ClaimStatus::Pending,
            ticket: None,
        },
        3 => EditOp::HumanAnswer {
            claim_id: label(),
            answer: HumanAnswer::Confirm,
        },
        4 => EditOp::Override {
            claim_id: rel,
            value: ["on", "under"][pick as usize % 2].into(),
        },
        5 => EditOp::Lock { claim_id: label() },
        6 => EditOp::Rollback {
            target_version: pick as u64 % (version + 2),
        },
        7 => EditOp::Flag {
            record: FlagRecord::Warning {
                claim_id: None,
                message: "note".into(),
            },
        },
        _ => EditOp::Init {
            entities: 0,
            relations: 0,
            attributes: 0,
            claims: 0,
            dependencies: 0,
        },
    }
}

proptest! {
    #[test]
    fn random_edit_sequences_keep_invariants(
        steps in prop::collection::vec((0usize..6, any::<u8>(), any::<u8>()), 0..40)
    ) {
        let mut m = memory();
        for (actor, kind, pick) in steps {
            let actor = Actor::ALL[actor];
            let op = op_for(kind, pick, m.version());
            let versioned = op.is_versioned();
            let permitted = permits(actor, op.action()) && op.action() != Action::Init;
            let before = m.state().clone();
            let seq_before = m.log().len();
            match m.apply_edit(op, actor) {
                Ok(_) => {
                    prop_assert!(permitted);
                    prop_assert_eq!(m.version(), before.version + u64::from(versioned));
                    prop_assert_eq!(m.log().len(), seq_before + 1);
                }
                Err(_) => {
                    prop_assert_eq!(m.state(), &before);
                }
            }
            if !permitted {
                prop_assert_eq!(m.state(), &before);
            }
        }
        let versions: Vec<u64> = m.log().iter().map(|e| e.new_version).collect();
        prop_assert!(versions.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1));
        let replayed = SemanticMemory::replay(m.initial().clone(), m.log().to_vec()).unwrap();
        prop_assert_eq!(replayed.state(), m.state());
    }
}
