#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use claimloop_core::constructor::SegmentDescriptor;
use claimloop_core::graph::{AttributeAssertion, BBox, EntityNode, GraphState, RelationEdge};
use claimloop_core::ids::{EntityId, FrameId, RelationId};
use claimloop_core::ontology::Ontology;
use claimloop_core::synth::default_ontology;
use claimloop_service::{IngestRequest, ServiceConfig};

fn entity(g: &mut GraphState, id: &str, label: &str, frame: u32, b: BBox) {
    let f = FrameId(frame);
    g.entities.insert(
        EntityId::new(id),
        EntityNode {
            entity_id: EntityId::new(id),
            canonical_label: label.into(),
            spatial_extent: BTreeMap::from([(f, b)]),
            frame_ids: BTreeSet::from([f]),
        },
    );
}

fn relation(g: &mut GraphState, id: &str, s: &str, p: &str, o: &str, frames: &[u32]) {
    g.relations.insert(
        RelationId::new(id),
        RelationEdge {
            relation_id: RelationId::new(id),
            subject: EntityId::new(s),
            predicate: p.into(),
            object: EntityId::new(o),
            frame_ids: frames.iter().map(|&f| FrameId(f)).collect(),
        },
    );
}

fn attribute(g: &mut GraphState, e: &str, key: &str, value: &str, frames: &[u32]) {
    g.attributes.insert(
        (EntityId::new(e), key.into()),
        AttributeAssertion {
            entity_id: EntityId::new(e),
            attribute_key: key.into(),
            attribute_value: value.into(),
            frame_ids: frames.iter().map(|&f| FrameId(f)).collect(),
        },
    );
}

const DOG: BBox = BBox {
    x0: 0.1,
    y0: 0.1,
    x1: 0.4,
    y1: 0.5,
};
const TABLE: BBox = BBox {
    x0: 0.3,
    y0: 0.5,
    x1: 0.9,
    y1: 0.9,
};
const CUP: BBox = BBox {
    x0: 0.6,
    y0: 0.2,
    x1: 0.7,
    y1: 0.3,
};

/// Two frames of a dog on a table with a cup. The detector called the dog a
/// cat, the relation `under` and the cup blue. Ingest numbers the merged
/// entities e1 (dog), e2 (table), e3 (cup) and the relation r1.
pub fn slices() -> GraphState {
    let mut g = GraphState::default();
    entity(&mut g, "i0a", "cat", 0, DOG);
    entity(&mut g, "i0b", "table", 0, TABLE);
    entity(&mut g, "i1a", "cat", 1, DOG);
    entity(&mut g, "i1b", "table", 1, TABLE);
    entity(&mut g, "i1c", "cup", 1, CUP);
    relation(&mut g, "s0", "i0a", "under", "i0b", &[0]);
    relation(&mut g, "s1", "i1a", "under", "i1b", &[1]);
    attribute(&mut g, "i1c", "color", "blue", &[1]);
    g
}

pub fn reference() -> GraphState {
    let mut g = GraphState::default();
    for (id, label, b) in [("e1", "dog", DOG), ("e2", "table", TABLE)] {
        entity(&mut g, id, label, 0, b);
        let e = g.entities.get_mut(&EntityId::new(id)).unwrap();
        e.spatial_extent.insert(FrameId(1), b);
        e.frame_ids.insert(FrameId(1));
    }
    entity(&mut g, "e3", "cup", 1, CUP);
    relation(&mut g, "r1", "e1", "on", "e2", &[0, 1]);
    attribute(&mut g, "e3", "color", "red", &[1]);
    g
}

pub fn ontology() -> Ontology {
    default_ontology()
}

pub fn segments() -> Vec<SegmentDescriptor> {
    vec![
        SegmentDescriptor {
            start: 0,
            end: 0,
            dynamic: false,
        },
        SegmentDescriptor {
            start: 1,
            end: 1,
            dynamic: true,
        },
    ]
}

pub fn ingest_request() -> IngestRequest {
    IngestRequest {
        segments: segments(),
        slices: slices(),
        ontology: ontology(),
        reference: Some(reference()),
        keyframes: None,
        replace: false,
    }
}

/// Local grounding always abstains, so label claims get no evidence and
/// every one of them lands in the queue as a binary question.
pub const CONFIG: &str = r#"
listen = "127.0.0.1:0"
backend = "oracle"

[oracle]
rng_seed = 7

[oracle.noise.local_grounding]
abstain_rate = 1.0
"#;

pub fn write_config(dir: &Path) -> PathBuf {
    let p = dir.join("service.toml");
    std::fs::write(&p, CONFIG).unwrap();
    p
}

pub fn config(data_dir: &Path) -> ServiceConfig {
    let mut c = ServiceConfig::from_toml(CONFIG, Path::new("service.toml")).unwrap();
    c.data_dir = data_dir.to_owned();
    c
}

pub struct Inputs {
    pub segments: PathBuf,
    pub slices: PathBuf,
    pub ontology: PathBuf,
    pub reference: PathBuf,
}

pub fn write_inputs(dir: &Path) -> Inputs {
    let put = |name: &str, v: &dyn erased::Json| {
        let p = dir.join(name);
        std::fs::write(&p, v.to_json()).unwrap();
        p
    };
    Inputs {
        segments: put("segments.json", &segments()),
        slices: put("slices.json", &slices()),
        ontology: put("ontology.json", &ontology()),
        reference: put("reference.json", &reference()),
    }
}

mod erased {
    pub trait Json {
        fn to_json(&self) -> String;
    }
    impl<T: serde::Serialize> Json for T {
        fn to_json(&self) -> String {
            serde_json::to_string_pretty(self).unwrap()
        }
    }
}

pub fn cli(data_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_claimloop"))
        .args(args)
        .env("CLAIMLOOP_DATA_DIR", data_dir)
        .output()
        .expect("run claimloop")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Ingest the fixture through the CLI into `data`, with the config in `work`.
pub fn cli_ingest(work: &Path, data: &Path) -> PathBuf {
    let cfg = write_config(work);
    let inp = write_inputs(work);
    let o = cli(
        data,
        &[
            "ingest",
            "--config",
            cfg.to_str().unwrap(),
            "--segments",
            inp.segments.to_str().unwrap(),
            "--slices",
            inp.slices.to_str().unwrap(),
            "--ontology",
            inp.ontology.to_str().unwrap(),
            "--reference",
            inp.reference.to_str().unwrap(),
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    cfg
}
