//! On-disk layout of one service instance.
//!
//! `snapshot.json` holds the version-0 memory and is written once per
//! ingest; `provenance.jsonl` and `trace.jsonl` are append-only. The current
//! state is always the replay of the log over the snapshot.

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use claimloop_core::graph::GraphState;
use claimloop_core::memory::{
    read_jsonl, write_jsonl, LogFormatError, MemoryState, ProvenanceEntry,
};
use claimloop_core::ontology::Ontology;
use claimloop_core::trace::{Trace, TraceEvent};

pub const SNAPSHOT: &str = "snapshot.json";
pub const PROVENANCE: &str = "provenance.jsonl";
pub const TRACE: &str = "trace.jsonl";
pub const ONTOLOGY: &str = "ontology.json";
pub const REFERENCE: &str = "reference.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: corrupt log at seq {seq}: {reason}")]
    CorruptLog {
        path: PathBuf,
        seq: u64,
        reason: String,
    },
    #[error("{path}: unreadable log: {reason}")]
    UnreadableLog { path: PathBuf, reason: String },
}

/// Everything needed to rebuild the engine.
#[derive(Debug, Clone)]
pub struct Stored {
    pub initial: MemoryState,
    pub log: Vec<ProvenanceEntry>,
    pub trace: Trace,
    pub ontology: Ontology,
    pub reference: Option<GraphState>,
}

#[derive(Debug, Clone)]
pub struct DataDir {
    root: PathBuf,
}

impl DataDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn has_memory(&self) -> bool {
        self.path(SNAPSHOT).is_file()
    }

    fn io<T>(&self, name: &str, r: std::io::Result<T>) -> Result<T, StoreError> {
        r.map_err(|source| StoreError::Io {
            path: self.path(name),
            source,
        })
    }

    /// Create the directory and check it accepts writes.
    pub fn ensure_writable(&self) -> Result<(), StoreError> {
        self.io(".", fs::create_dir_all(&self.root))?;
        let probe = ".write-probe";
        self.io(probe, fs::write(self.path(probe), b""))?;
        self.io(probe, fs::remove_file(self.path(probe)))
    }

    fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<(), StoreError> {
        let tmp = self.path(&format!("{name}.tmp"));
        let body = serde_json::to_vec_pretty(value).map_err(|source| StoreError::Json {
            path: self.path(name),
            source,
        })?;
        self.io(name, fs::write(&tmp, body))?;
        self.io(name, fs::rename(&tmp, self.path(name)))
    }

    fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<T, StoreError> {
        let f = self.io(name, File::open(self.path(name)))?;
        serde_json::from_reader(BufReader::new(f)).map_err(|source| StoreError::Json {
            path: self.path(name),
            source,
        })
    }

    /// Start a fresh memory, replacing whatever the directory held.
    pub fn create(
        &self,
        initial: &MemoryState,
        log: &[ProvenanceEntry],
        trace: &Trace,
        ontology: &Ontology,
        reference: Option<&GraphState>,
    ) -> Result<(), StoreError> {
        self.ensure_writable()?;
        for name in [SNAPSHOT, PROVENANCE, TRACE, REFERENCE] {
            let p = self.path(name);
            if p.exists() {
                self.io(name, fs::remove_file(p))?;
            }
        }
        self.write_json(ONTOLOGY, ontology)?;
        if let Some(r) = reference {
            self.write_json(REFERENCE, r)?;
        }
        self.append_log(log)?;
        self.append_trace(&trace.events)?;
        // The snapshot goes last: its presence marks a complete ingest.
        self.write_json(SNAPSHOT, initial)
    }

    fn append(
        &self,
        name: &str,
        write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> Result<(), StoreError> {
        let f = self.io(
            name,
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(self.path(name)),
        )?;
        let mut w = BufWriter::new(f);
        self.io(name, write(&mut w))?;
        self.io(name, w.flush())?;
        self.io(name, w.get_ref().sync_data())
    }

    pub fn append_log(&self, entries: &[ProvenanceEntry]) -> Result<(), StoreError> {
        self.append(PROVENANCE, |w| write_jsonl(w, entries))
    }

    pub fn append_trace(&self, events: &[TraceEvent]) -> Result<(), StoreError> {
        self.append(TRACE, |w| {
            for e in events {
                serde_json::to_writer(&mut *w, e)?;
                w.write_all(b"\n")?;
            }
            Ok(())
        })
    }

    pub fn load(&self) -> Result<Stored, StoreError> {
        let initial: MemoryState = self.read_json(SNAPSHOT)?;
        let ontology: Ontology = self.read_json(ONTOLOGY)?;
        let reference = if self.path(REFERENCE).is_file() {
            Some(self.read_json(REFERENCE)?)
        } else {
            None
        };
        let log_file = self.io(PROVENANCE, File::open(self.path(PROVENANCE)))?;
        let log = read_jsonl(BufReader::new(log_file)).map_err(|e| match (&e, e.seq()) {
            (LogFormatError::Json { .. }, Some(seq)) => StoreError::CorruptLog {
                path: self.path(PROVENANCE),
                seq,
                reason: e.to_string(),
            },
            _ => StoreError::UnreadableLog {
                path: self.path(PROVENANCE),
                reason: e.to_string(),
            },
        })?;
        let trace = match File::open(self.path(TRACE)) {
            Ok(f) => Trace::read_jsonl(BufReader::new(f)).map_err(|source| StoreError::Json {
                path: self.path(TRACE),
                source,
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Trace::default(),
            Err(e) => return self.io(TRACE, Err(e)),
        };
        Ok(Stored {
            initial,
            log,
            trace,
            ontology,
            reference,
        })
    }
}
