//! Service configuration, read from TOML.
//!
//! ```toml
//! listen = "127.0.0.1:8080"
//! data_dir = "claimloop-data"
//! backend = "oracle"          # or "external"
//! keyframes = 5
//! iou_threshold = 0.5
//! gate_direction = "at_least" # overrides [utility].gate_direction when set
//!
//! [fusion]
//! [weights]
//! [utility]
//! [budget]
//!
//! [oracle]
//! reference = "truth.json"    # optional; `ingest --reference` stores one in the data dir
//! rng_seed = 0
//! [oracle.noise]
//!
//! [adapter]
//! endpoint = "http://127.0.0.1:9000/probe"
//! ```
//!
//! Every section is optional and falls back to the engine defaults.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use claimloop_core::agents::{AdapterConfig, OracleNoise, ProbeBudget};
use claimloop_core::arbitration::{GateDirection, UtilityWeights};
use claimloop_core::constructor::DEFAULT_IOU_THRESHOLD;
use claimloop_core::engine::EngineConfig;
use claimloop_core::fusion::{FusionConfig, RoleWeightMatrix};

pub const DATA_DIR_ENV: &str = "CLAIMLOOP_DATA_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Simulated verifiers answering from a reference graph.
    #[default]
    Oracle,
    /// A model endpoint reached through the HTTP adapter.
    External,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub reference: Option<PathBuf>,
    pub noise: OracleNoise,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub data_dir: PathBuf,
    pub backend: Backend,
    pub keyframes: usize,
    pub iou_threshold: f64,
    pub gate_direction: Option<GateDirection>,
    pub fusion: FusionConfig,
    pub weights: RoleWeightMatrix,
    pub utility: UtilityWeights,
    pub budget: ProbeBudget,
    pub oracle: OracleSection,
    pub adapter: AdapterConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("claimloop-data"),
            backend: Backend::Oracle,
            keyframes: 5,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            gate_direction: None,
            fusion: FusionConfig::default(),
            weights: RoleWeightMatrix::default(),
            utility: UtilityWeights::default(),
            budget: ProbeBudget::default(),
            oracle: OracleSection::default(),
            adapter: AdapterConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults when `path` is `None`; `data_dir` replaces the file's value.
    pub fn load(path: Option<&Path>, data_dir: Option<PathBuf>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.to_owned(),
                    source,
                })?;
                Self::from_toml(&text, p)?
            }
            None => Self::default(),
        };
        if let Some(d) = data_dir {
            cfg.data_dir = d;
        }
        Ok(cfg)
    }

    pub fn engine(&self) -> EngineConfig {
        let mut utility = self.utility;
        if let Some(g) = self.gate_direction {
            utility.gate_direction = g;
        }
        EngineConfig {
            fusion: self.fusion,
            weights: self.weights,
            utility,
            budget: self.budget,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.listen.parse::<SocketAddr>().is_err() {
            return bad(format!("listen: {:?} is not a socket address", self.listen));
        }
        if self.keyframes == 0 {
            return bad("keyframes must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return bad(format!(
                "iou_threshold {} outside [0,1]",
                self.iou_threshold
            ));
        }
        self.engine()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.oracle
            .noise
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("oracle.noise: {e}")))?;
        if self.backend == Backend::External && self.adapter.endpoint.trim().is_empty() {
            return bad("adapter.endpoint is required for the external backend".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ServiceConfig, ConfigError> {
        ServiceConfig::from_toml(text, Path::new("test.toml"))
    }

    #[test]
    fn empty_file_is_default() {
        assert_eq!(parse("").unwrap(), ServiceConfig::default());
    }

    #[test]
    fn gate_direction_overrides_utility() {
        let cfg = parse("gate_direction = \"below\"\n[utility]\ntheta_u = 0.3\n").unwrap();
        let e = cfg.engine();
        assert_eq!(e.utility.gate_direction, GateDirection::Below);
        assert_eq!(e.utility.theta_u, 0.3);
    }

    #[test]
    fn out_of_range_values_fail() {
        assert!(parse("iou_threshold = 1.5").is_err());
        assert!(parse("keyframes = 0").is_err());
        assert!(parse("listen = \"nowhere\"").is_err());
        assert!(parse("[fusion]\nepsilon = 0.0").is_err());
        assert!(parse("[oracle.noise.local_grounding]\nflip_rate = 2.0").is_err());
        assert!(parse("unknown_key = 1").is_err());
    }

    #[test]
    fn data_dir_override_wins() {
        let cfg = ServiceConfig::load(None, Some(PathBuf::from("/tmp/x"))).unwrap();
        assert_eq!(cfg.data_dir, PathBuf::from("/tmp/x"));
    }
}
