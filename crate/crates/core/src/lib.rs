//! Supervisory correction loop over video scene graphs: a versioned
//! claim-level memory, role-scoped verifier agents, role-aware evidence
//! fusion, utility-gated human arbitration and dependency-closure
//! re-verification, plus a synthetic evaluation harness.

pub mod agents;
pub mod arbitration;
pub mod claim;
pub mod constructor;
pub mod deps;
pub mod engine;
pub mod evidence;
pub mod experiment;
pub mod fusion;
pub mod ged;
pub mod graph;
pub mod ids;
pub mod keyed;
pub mod memory;
pub mod metrics;
pub mod ontology;
pub mod store;
pub mod synth;
pub mod trace;
