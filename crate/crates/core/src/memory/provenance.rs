//! Append-only provenance log and its JSON Lines encoding.

use std::io::{BufRead, Write};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::authority::Action;
use super::edit::EditOp;
use crate::evidence::Actor;
use crate::ids::Version;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    pub actor: Actor,
    pub action: Action,
    pub payload: EditOp,
    pub prior_version: Version,
    pub new_version: Version,
}

#[derive(Debug, Error)]
pub enum LogFormatError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        seq: Option<u64>,
        source: serde_json::Error,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl LogFormatError {
    /// Sequence number of the offending entry, when it could be read.
    pub fn seq(&self) -> Option<u64> {
        match self {
            LogFormatError::Json { seq, .. } => *seq,
            LogFormatError::Io(_) => None,
        }
    }
}

pub fn write_jsonl<W: Write>(mut w: W, entries: &[ProvenanceEntry]) -> std::io::Result<()> {
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Parse a JSON Lines log. Blank lines are skipped. A malformed entry (for
/// example an unknown actor) reports its `seq` when the field is readable.
pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<ProvenanceEntry>, LogFormatError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ProvenanceEntry>(&line) {
            Ok(e) => out.push(e),
            Err(source) => {
                let seq = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("seq").and_then(|s| s.as_u64()));
                return Err(LogFormatError::Json {
                    line: i + 1,
                    seq,
                    source,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::ClaimId;

    #[test]
    fn unknown_actor_names_seq() {
        let line = r#"{"seq":7,"timestamp":"2024-01-01T00:00:00Z","actor":"robot","action":"lock","payload":{"op":"lock","claim_id":"x"},"prior_version":1,"new_version":2}"#;
        let err = read_jsonl(line.as_bytes()).unwrap_err();
        assert_eq!(err.seq(), Some(7));
    }

    #[test]
    fn jsonl_round_trip() {
        let e = ProvenanceEntry {
            seq: 1,
            timestamp: Utc::now(),
            actor: Actor::Human,
            action: Action::Lock,
            payload: EditOp::Lock {
                claim_id: ClaimId::from("label/e1"),
            },
            prior_version: 0,
            new_version: 1,
        };
        let mut buf = Vec::new();
        write_jsonl(&mut buf, std::slice::from_ref(&e)).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 1);
        let back = read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, vec![e]);
    }
}
