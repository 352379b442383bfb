//! One persisted memory plus the engine driving it. Both the CLI and the
//! HTTP writer task go through these methods, so a logical input produces the
//! same log entries whichever front end received it.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use claimloop_core::agents::{Agents, ExternalAgent, HttpTransport, OracleAgent, OracleConfig};
use claimloop_core::arbitration::{ArbitrationItem, HumanAnswer};
use claimloop_core::constructor::{
    build_memory, BuildError, BuildReport, ConstructError, SegmentDescriptor,
};
use claimloop_core::engine::{DecisionReport, Engine, LoopReport};
use claimloop_core::evidence::EvidenceTuple;
use claimloop_core::fusion::ClaimFusion;
use claimloop_core::ged::{graph_edit_distance, DEFAULT_MAX_NODES};
use claimloop_core::graph::GraphState;
use claimloop_core::ids::{ClaimId, Version};
use claimloop_core::memory::{MemoryError, SemanticMemory};
use claimloop_core::metrics::{compute_metrics, entity_accuracy, MetricReport};
use claimloop_core::ontology::Ontology;

use crate::config::{Backend, ServiceConfig};
use crate::error::ServiceError;
use crate::store::{DataDir, StoreError};

/// Ingest input: motion segments, per-frame graph slices (snapshot schema,
/// one frame per instance) and the closed ontology. `reference` is the ground
/// truth the oracle backend answers from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestRequest {
    pub segments: Vec<SegmentDescriptor>,
    pub slices: GraphState,
    pub ontology: Ontology,
    #[serde(default)]
    pub reference: Option<GraphState>,
    #[serde(default)]
    pub keyframes: Option<usize>,
    /// Replace an existing memory instead of failing.
    #[serde(default)]
    pub replace: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceView {
    pub claim_id: ClaimId,
    pub evidence: Vec<EvidenceTuple>,
    pub fusion: Option<ClaimFusion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockReport {
    pub claim_id: ClaimId,
    pub version: Version,
}

pub struct Session {
    dir: DataDir,
    engine: Engine,
    reference: Option<Arc<GraphState>>,
    backend: Result<(), String>,
    saved_log: usize,
    saved_trace: usize,
}

fn read_reference(path: &Path) -> Result<GraphState, ServiceError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ServiceError::Backend(format!("reading reference {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| ServiceError::Backend(format!("parsing reference {}: {e}", path.display())))
}

fn agents_for(
    config: &ServiceConfig,
    ontology: &Arc<Ontology>,
    reference: Option<&Arc<GraphState>>,
) -> (Agents, Result<(), String>) {
    match (config.backend, reference) {
        (Backend::Oracle, Some(truth)) => (
            OracleAgent::all(OracleConfig {
                ground_truth: truth.clone(),
                noise: config.oracle.noise,
                rng_seed: config.oracle.rng_seed,
            }),
            Ok(()),
        ),
        (Backend::Oracle, None) => (
            Vec::new(),
            Err("the oracle backend needs a reference graph: ingest with one or set oracle.reference".into()),
        ),
        (Backend::External, _) => (
            ExternalAgent::all(
                ontology.clone(),
                Arc::new(HttpTransport::new(&config.adapter)),
                config.adapter.retries,
            ),
            Ok(()),
        ),
    }
}

fn build_error(e: BuildError) -> ServiceError {
    let field = match &e {
        BuildError::Construct(
            ConstructError::InvertedSegment { .. } | ConstructError::UnorderedSegments { .. },
        ) => "segments",
        BuildError::Construct(ConstructError::ZeroBudget) => "keyframes",
        BuildError::Construct(_) => "slices",
        BuildError::Memory(_) => "slices",
    };
    ServiceError::bad_request(e.to_string(), Some(field))
}

impl Session {
    /// Rebuild from the data directory by replaying the log.
    pub fn open(config: &ServiceConfig) -> Result<Self, ServiceError> {
        let dir = DataDir::new(&config.data_dir);
        if !dir.has_memory() {
            return Err(ServiceError::NoMemory(config.data_dir.clone()));
        }
        let stored = dir.load()?;
        let reference = match (stored.reference, &config.oracle.reference) {
            (Some(r), _) => Some(Arc::new(r)),
            (None, Some(p)) => Some(Arc::new(read_reference(p)?)),
            (None, None) => None,
        };
        let ontology = Arc::new(stored.ontology);
        let (agents, backend) = agents_for(config, &ontology, reference.as_ref());
        let (saved_log, saved_trace) = (stored.log.len(), stored.trace.events.len());
        let engine = Engine::restore(
            stored.initial,
            stored.log,
            stored.trace,
            ontology,
            config.engine(),
            agents,
        )?;
        Ok(Self {
            dir,
            engine,
            reference,
            backend,
            saved_log,
            saved_trace,
        })
    }

    /// Open if a memory exists, otherwise `None`.
    pub fn open_existing(config: &ServiceConfig) -> Result<Option<Self>, ServiceError> {
        match Self::open(config) {
            Ok(s) => Ok(Some(s)),
            Err(ServiceError::NoMemory(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Build a fresh memory and persist its version-0 snapshot.
    pub fn ingest(
        config: &ServiceConfig,
        req: IngestRequest,
    ) -> Result<(Self, BuildReport), ServiceError> {
        let dir = DataDir::new(&config.data_dir);
        if dir.has_memory() && !req.replace {
            return Err(ServiceError::Conflict {
                code: "exists",
                message: format!(
                    "{} already holds a memory; set replace to start over",
                    dir.root().display()
                ),
                field: Some("replace".into()),
            });
        }
        let budget = req.keyframes.unwrap_or(config.keyframes);
        let (memory, report) =
            build_memory(&req.segments, &req.slices, budget, config.iou_threshold)
                .map_err(build_error)?;
        let reference = match req.reference {
            Some(r) => Some(Arc::new(r)),
            None => config
                .oracle
                .reference
                .as_deref()
                .map(read_reference)
                .transpose()?
                .map(Arc::new),
        };
        let ontology = Arc::new(req.ontology);
        let (agents, backend) = agents_for(config, &ontology, reference.as_ref());
        let engine = Engine::new(memory, ontology.clone(), config.engine(), agents)?;
        dir.create(
            engine.memory().initial(),
            engine.memory().log(),
            engine.trace(),
            &ontology,
            reference.as_deref(),
        )?;
        let session = Self {
            saved_log: engine.memory().log().len(),
            saved_trace: engine.trace().events.len(),
            dir,
            engine,
            reference,
            backend,
        };
        Ok((session, report))
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn memory(&self) -> &SemanticMemory {
        self.engine.memory()
    }

    pub fn data_dir(&self) -> &DataDir {
        &self.dir
    }

    pub fn reference(&self) -> Option<&GraphState> {
        self.reference.as_deref()
    }

    fn ready(&self) -> Result<(), ServiceError> {
        self.backend.clone().map_err(ServiceError::Backend)
    }

    /// Append whatever the engine logged since the last flush.
    fn persist(&mut self) -> Result<(), StoreError> {
        let log = &self.engine.memory().log()[self.saved_log..];
        let trace = &self.engine.trace().events[self.saved_trace..];
        self.dir.append_log(log)?;
        self.dir.append_trace(trace)?;
        self.saved_log += log.len();
        self.saved_trace += trace.len();
        Ok(())
    }

    fn finish<T, E: Into<ServiceError>>(&mut self, r: Result<T, E>) -> Result<T, ServiceError> {
        // Rejected edits are logged too, so flush on both paths.
        self.persist()?;
        r.map_err(Into::into)
    }

    pub fn verify(&mut self) -> Result<LoopReport, ServiceError> {
        self.ready()?;
        let r = self.engine.verify();
        self.finish(Ok::<_, ServiceError>(r))
    }

    pub fn answer(
        &mut self,
        claim_id: &ClaimId,
        answer: HumanAnswer,
    ) -> Result<DecisionReport, ServiceError> {
        self.ready()?;
        let r = self.engine.answer(claim_id, answer);
        self.finish(r)
    }

    pub fn override_claim(
        &mut self,
        claim_id: &ClaimId,
        value: String,
    ) -> Result<DecisionReport, ServiceError> {
        self.ready()?;
        let r = self.engine.override_claim(claim_id, value);
        self.finish(r)
    }

    pub fn lock(&mut self, claim_id: &ClaimId) -> Result<LockReport, ServiceError> {
        let r = self.engine.lock(claim_id).map(|version| LockReport {
            claim_id: claim_id.clone(),
            version,
        });
        self.finish(r)
    }

    pub fn queue(&self) -> Vec<ArbitrationItem> {
        self.engine.queue()
    }

    pub fn evidence(&self, claim_id: &ClaimId) -> Result<EvidenceView, ServiceError> {
        if !self.engine.state().claims.contains(claim_id) {
            return Err(MemoryError::UnknownClaim(claim_id.clone()).into());
        }
        Ok(EvidenceView {
            claim_id: claim_id.clone(),
            evidence: self.engine.evidence(claim_id).to_vec(),
            fusion: self.engine.fusion(claim_id),
        })
    }

    /// Trace metrics, plus accuracy and edit distance when a reference graph
    /// is known.
    pub fn metrics(&self) -> MetricReport {
        let mut m = compute_metrics(self.engine.trace());
        if let Some(truth) = self.reference() {
            let graph = &self.engine.state().graph;
            let (acc, empty) = entity_accuracy(graph, truth);
            m.entity_acc = Some(acc);
            m.flags.empty_truth = empty;
            m.ged_norm = graph_edit_distance(graph, truth, DEFAULT_MAX_NODES).ok();
        }
        m
    }
}
