//! Adapter for an external model backend speaking JSON over HTTP.
//!
//! Request: `{claim_id, claim_text, claim_type, role, frame_ids, candidates,
//! asserted_value, round}`. Response: `{verdict, confidence, candidate?}`.
//! Anything unparseable becomes an [`InvalidProbe`], never a panic.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{EvidenceProvider, ProbeResponse};
use crate::claim::{Claim, ClaimType};
use crate::evidence::{EvidenceTuple, InvalidProbe, Role, Verdict};
use crate::ids::FrameId;
use crate::memory::MemoryState;
use crate::ontology::Ontology;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterConfig {
    pub endpoint: String,
    pub timeout_ms: u64,
    pub retries: u32,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:9000/probe".into(),
            timeout_ms: 10_000,
            retries: 1,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("transport: {0}")]
pub struct TransportError(pub String);

pub trait Transport: Send + Sync {
    fn post_json(&self, body: &str) -> Result<String, TransportError>;
}

pub struct HttpTransport {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(config: &AdapterConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .build()
            .into();
        Self {
            endpoint: config.endpoint.clone(),
            agent,
        }
    }
}

impl Transport for HttpTransport {
    fn post_json(&self, body: &str) -> Result<String, TransportError> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("content-type", "application/json")
            .send(body)
            .map_err(|e| TransportError(e.to_string()))?;
        resp.body_mut()
            .read_to_string()
            .map_err(|e| TransportError(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRequest {
    pub claim_id: String,
    pub claim_text: String,
    pub claim_type: ClaimType,
    pub role: Role,
    pub frame_ids: Vec<FrameId>,
    pub candidates: Vec<String>,
    pub asserted_value: String,
    pub round: u32,
}

pub fn build_request(
    claim: &Claim,
    snapshot: &MemoryState,
    role: Role,
    ontology: &Ontology,
    round: u32,
) -> ProbeRequest {
    let frame_ids = snapshot
        .graph
        .frames
        .keys()
        .copied()
        .filter(|f| claim.temporal_extent.contains(*f))
        .collect();
    ProbeRequest {
        claim_id: claim.claim_id.to_string(),
        claim_text: claim.text(),
        claim_type: claim.claim_type,
        role,
        frame_ids,
        candidates: ontology.options_for(claim),
        asserted_value: claim.asserted_value.clone(),
        round,
    }
}

/// Parse a backend reply. Out-of-range confidence is clamped and reported
/// as a warning; every other defect is an invalid probe.
pub fn parse_response(
    raw: &str,
    claim: &Claim,
    role: Role,
    ontology: &Ontology,
    round: u32,
) -> ProbeResponse {
    let invalid = || InvalidProbe {
        claim_id: claim.claim_id.clone(),
        role,
        raw_payload: raw.to_owned(),
        round,
    };
    let mut warnings = Vec::new();
    let parsed = (|| {
        let v: Value = serde_json::from_str(raw).ok()?;
        let verdict = v.get("verdict")?.as_i64()?;
        let verdict = Verdict::try_from(i8::try_from(verdict).ok()?).ok()?;
        let mut confidence = v.get("confidence")?.as_f64()?;
        if !(0.0..=1.0).contains(&confidence) {
            let clamped = confidence.clamp(0.0, 1.0);
            warnings.push(format!(
                "confidence {confidence} from {role} on {} clamped to {clamped}",
                claim.claim_id
            ));
            confidence = clamped;
        }
        let candidate = match v.get("candidate") {
            None | Some(Value::Null) => None,
            Some(Value::String(c)) if ontology.allows(claim, c) => Some(c.clone()),
            Some(_) => return None,
        };
        let t = EvidenceTuple::new(claim.claim_id.clone(), role, verdict, confidence, round);
        Some(match candidate {
            Some(c) => t.with_candidate(c),
            None => t,
        })
    })();
    match parsed {
        Some(t) => ProbeResponse {
            result: Ok(t),
            warnings,
        },
        None => ProbeResponse {
            result: Err(invalid()),
            warnings: Vec::new(),
        },
    }
}

pub struct ExternalAgent {
    role: Role,
    ontology: Arc<Ontology>,
    transport: Arc<dyn Transport>,
    retries: u32,
}

impl ExternalAgent {
    pub fn new(
        role: Role,
        ontology: Arc<Ontology>,
        transport: Arc<dyn Transport>,
        retries: u32,
    ) -> Self {
        Self {
            role,
            ontology,
            transport,
            retries,
        }
    }

    /// One agent per role sharing a transport.
    pub fn all(
        ontology: Arc<Ontology>,
        transport: Arc<dyn Transport>,
        retries: u32,
    ) -> super::Agents {
        Role::ALL
            .iter()
            .map(|&r| {
                Arc::new(ExternalAgent::new(
                    r,
                    ontology.clone(),
                    transport.clone(),
                    retries,
                )) as Arc<dyn EvidenceProvider>
            })
            .collect()
    }
}

impl EvidenceProvider for ExternalAgent {
    fn role(&self) -> Role {
        self.role
    }

    fn probe(&self, snapshot: &MemoryState, claim: &Claim, round: u32) -> ProbeResponse {
        let request = build_request(claim, snapshot, self.role, &self.ontology, round);
        let body = serde_json::to_string(&request).expect("request serializes");
        let mut last_err = String::new();
        for attempt in 0..=self.retries {
            match self.transport.post_json(&body) {
                Ok(raw) => return parse_response(&raw, claim, self.role, &self.ontology, round),
                Err(e) => {
                    log::warn!(
                        "probe {} attempt {} failed: {e}",
                        claim.claim_id,
                        attempt + 1
                    );
                    last_err = e.to_string();
                }
            }
        }
        Err(InvalidProbe {
            claim_id: claim.claim_id.clone(),
            role: self.role,
            raw_payload: last_err,
            round,
        })
        .into()
    }
}
