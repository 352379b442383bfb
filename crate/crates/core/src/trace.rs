//! Run trace: the probe, outcome, query and re-verification records that
//! metrics are computed from.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::agents::ProbeAccounting;
use crate::arbitration::HumanAnswer;
use crate::evidence::{EvidenceTuple, InvalidProbe};
use crate::fusion::ClaimFusion;
use crate::ids::ClaimId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpochKind {
    Refine,
    Reverify,
}

/// One probing pass over a fixed snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub kind: EpochKind,
    pub evidence: BTreeMap<ClaimId, Vec<EvidenceTuple>>,
    pub invalid: Vec<InvalidProbe>,
    pub accounting: ProbeAccounting,
    pub fusions: Vec<ClaimFusion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Start {
        claims: usize,
        keyframes: usize,
    },
    Epoch(EpochRecord),
    Query {
        claim_id: ClaimId,
        utility: f64,
        query: String,
    },
    Answer {
        claim_id: ClaimId,
        answer: HumanAnswer,
    },
    Reverify {
        edited: BTreeSet<ClaimId>,
        calls_actual: usize,
        calls_full: usize,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn push(&mut self, e: TraceEvent) {
        self.events.push(e);
    }

    pub fn epochs(&self) -> impl Iterator<Item = &EpochRecord> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::Epoch(r) => Some(r),
            _ => None,
        })
    }

    pub fn last_epoch(&self) -> u32 {
        self.epochs().map(|e| e.epoch).max().unwrap_or(0)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, serde_json::Error> {
        let mut events = Vec::new();
        for line in r.lines() {
            let line = line.map_err(serde_json::Error::io)?;
            if !line.trim().is_empty() {
                events.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { events })
    }
}
