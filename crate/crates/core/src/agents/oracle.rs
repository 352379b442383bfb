//! Seeded simulated agents that answer from a reference graph and then
//! corrupt their answers at configured per-role rates.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{EvidenceProvider, ProbeResponse};
use crate::claim::{element_value, Claim, ClaimType};
use crate::evidence::{EvidenceTuple, InvalidProbe, Role, Verdict};
use crate::graph::GraphState;
use crate::memory::MemoryState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("{role}: rates must lie in [0,1] and sum to at most 1")]
    Rates { role: Role },
    #[error("clutter_gain must be nonnegative")]
    Clutter,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoleNoise {
    pub flip_rate: f64,
    pub abstain_rate: f64,
    pub invalid_rate: f64,
}

impl RoleNoise {
    pub fn new(flip_rate: f64, abstain_rate: f64, invalid_rate: f64) -> Self {
        Self {
            flip_rate,
            abstain_rate,
            invalid_rate,
        }
    }

    fn valid(&self) -> bool {
        let r = [self.flip_rate, self.abstain_rate, self.invalid_rate];
        r.iter().all(|x| (0.0..=1.0).contains(x)) && r.iter().sum::<f64>() <= 1.0 + 1e-12
    }

    /// Rates inflated by `factor`, renormalized if they would exceed one.
    fn scaled(&self, factor: f64) -> RoleNoise {
        let s = RoleNoise::new(
            self.flip_rate * factor,
            self.abstain_rate * factor,
            self.invalid_rate * factor,
        );
        let total = s.flip_rate + s.abstain_rate + s.invalid_rate;
        if total > 1.0 {
            RoleNoise::new(
                s.flip_rate / total,
                s.abstain_rate / total,
                s.invalid_rate / total,
            )
        } else {
            s
        }
    }
}

/// Per-role corruption rates. Each rate grows by `clutter_gain` per extra
/// entity sharing the claim's busiest frame, so crowded scenes are noisier.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleNoise {
    pub local_grounding: RoleNoise,
    pub temporal_consistency: RoleNoise,
    pub global_audit: RoleNoise,
    pub clutter_gain: f64,
}

impl OracleNoise {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn for_role(&self, role: Role) -> RoleNoise {
        match role {
            Role::LocalGrounding => self.local_grounding,
            Role::TemporalConsistency => self.temporal_consistency,
            Role::GlobalAudit => self.global_audit,
        }
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        for role in Role::ALL {
            if !self.for_role(role).valid() {
                return Err(OracleError::Rates { role });
            }
        }
        if self.clutter_gain.is_nan() || self.clutter_gain < 0.0 {
            return Err(OracleError::Clutter);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub ground_truth: Arc<GraphState>,
    pub noise: OracleNoise,
    pub rng_seed: u64,
}

pub struct OracleAgent {
    role: Role,
    config: Arc<OracleConfig>,
}

impl OracleAgent {
    pub fn new(role: Role, config: Arc<OracleConfig>) -> Self {
        Self { role, config }
    }

    /// One agent per role sharing `config`.
    pub fn all(config: OracleConfig) -> super::Agents {
        let config = Arc::new(config);
        Role::ALL
            .iter()
            .map(|&r| Arc::new(OracleAgent::new(r, config.clone())) as Arc<dyn EvidenceProvider>)
            .collect()
    }

    /// Independent stream per (seed, role, claim, round), so results do not
    /// depend on probing order or thread scheduling.
    fn rng(&self, claim: &Claim, round: u32) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.config.rng_seed.to_le_bytes());
        h.update(self.role.as_str().as_bytes());
        h.update([0]);
        h.update(claim.claim_id.as_str().as_bytes());
        h.update([0]);
        h.update(round.to_le_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest[..32]);
        ChaCha8Rng::from_seed(seed)
    }

    fn crowding(snapshot: &MemoryState, claim: &Claim) -> usize {
        let span = claim.temporal_extent;
        (span.start.0..=span.end.0)
            .map(|f| snapshot.graph.entities_in_frame(crate::ids::FrameId(f)))
            .max()
            .unwrap_or(0)
    }

    /// Noiseless answer: support iff the claim matches the reference graph,
    /// with the reference value as candidate on correctable contradictions.
    pub fn honest(truth: &GraphState, claim: &Claim) -> (Verdict, Option<String>) {
        match element_value(truth, claim.claim_type, &claim.target) {
            Some(v) if v == claim.asserted_value => (Verdict::Support, None),
            Some(v) if claim.claim_type != ClaimType::Exist => (Verdict::Contradict, Some(v)),
            _ => (Verdict::Contradict, None),
        }
    }
}

impl EvidenceProvider for OracleAgent {
    fn role(&self) -> Role {
        self.role
    }

    fn probe(&self, snapshot: &MemoryState, claim: &Claim, round: u32) -> ProbeResponse {
        let (verdict, candidate) = Self::honest(&self.config.ground_truth, claim);
        let noise = &self.config.noise;
        let crowd = Self::crowding(snapshot, claim).saturating_sub(1) as f64;
        let rates = noise
            .for_role(self.role)
            .scaled(1.0 + noise.clutter_gain * crowd);

        let mut rng = self.rng(claim, round);
        let draw: f64 = rng.random();
        let noisy_confidence = rng.random_range(0.4..=0.9);
        let id = claim.claim_id.clone();
        let result = if draw < rates.invalid_rate {
            Err(InvalidProbe {
                claim_id: id,
                role: self.role,
                raw_payload: "simulated unparseable response".into(),
                round,
            })
        } else if draw < rates.invalid_rate + rates.abstain_rate {
            Ok(EvidenceTuple::new(
                id,
                self.role,
                Verdict::Abstain,
                noisy_confidence,
                round,
            ))
        } else if draw < rates.invalid_rate + rates.abstain_rate + rates.flip_rate {
            Ok(EvidenceTuple::new(
                id,
                self.role,
                verdict.negate(),
                noisy_confidence,
                round,
            ))
        } else {
            let t = EvidenceTuple::new(id, self.role, verdict, 1.0, round);
            Ok(match candidate {
                Some(c) => t.with_candidate(c),
                None => t,
            })
        };
        result.into()
    }
}
