//! Seeded scenario sweeps with an oracle supervisor answering every query.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::oracle::{OracleAgent, OracleConfig, OracleNoise, RoleNoise};
use crate::engine::{Engine, EngineConfig, EngineError};
use crate::fusion::RoleWeightMatrix;
use crate::ged::{graph_edit_distance, DEFAULT_MAX_NODES};
use crate::memory::MemoryError;
use crate::metrics::{compute_metrics, entity_accuracy, Density, MetricReport};
use crate::synth::{
    oracle_answer, synth_generate, CorruptionSpec, SizeParams, SynthError, SynthScene,
};

/// Built-in configuration, selectable as `default`.
pub const DEFAULT_CONFIG: &str = include_str!("default_experiment.toml");

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("scenario {scenario}: {source}")]
    Synth {
        scenario: String,
        source: SynthError,
    },
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("scenario {0}: queue did not drain")]
    Stuck(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Inclusive `[lo, hi]` range.
pub type Range = [usize; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub name: String,
    pub seeds: u64,
    pub seed_base: u64,
    pub entities: Range,
    pub relations: Range,
    pub attributes: Range,
    pub keyframes: u32,
    pub dynamic_rate: f64,
    /// `rng_seed` is replaced by the scenario seed.
    pub corruption: CorruptionSpec,
    pub noise: OracleNoise,
    pub uniform_weights: bool,
    pub rounds_max: Option<u32>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        let size = SizeParams::default();
        Self {
            name: "suite".into(),
            seeds: 20,
            seed_base: 0,
            entities: [size.entities; 2],
            relations: [size.relations; 2],
            attributes: [size.attributes; 2],
            keyframes: size.keyframes,
            dynamic_rate: size.dynamic_rate,
            corruption: CorruptionSpec::default(),
            noise: OracleNoise::default(),
            uniform_weights: false,
            rounds_max: None,
        }
    }
}

impl SuiteConfig {
    pub fn engine_config(&self, base: &EngineConfig) -> EngineConfig {
        let mut cfg = base.clone();
        if self.uniform_weights {
            cfg.weights = RoleWeightMatrix::uniform();
        }
        if let Some(r) = self.rounds_max {
            cfg.fusion.rounds_max = r;
            cfg.budget.rounds_max = r;
        }
        cfg
    }

    fn size_for(&self, seed: u64) -> SizeParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_f491_4f6c_dd1d));
        let mut draw = |[lo, hi]: Range| rng.random_range(lo..=hi.max(lo));
        SizeParams {
            entities: draw(self.entities),
            relations: draw(self.relations),
            attributes: draw(self.attributes),
            keyframes: self.keyframes,
            dynamic_rate: self.dynamic_rate,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub engine: EngineConfig,
    pub suites: Vec<SuiteConfig>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn builtin() -> Self {
        Self::from_toml(DEFAULT_CONFIG).expect("built-in config is valid")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        for s in &self.suites {
            s.engine_config(&self.engine)
                .validate()
                .map_err(|e| ExperimentError::Config(format!("suite {}: {e}", s.name)))?;
            s.noise
                .validate()
                .map_err(|e| ExperimentError::Config(format!("suite {}: {e}", s.name)))?;
            s.corruption
                .validate()
                .map_err(|e| ExperimentError::Config(format!("suite {}: {e}", s.name)))?;
            for (what, [lo, hi]) in [
                ("entities", s.entities),
                ("relations", s.relations),
                ("attributes", s.attributes),
            ] {
                if lo > hi {
                    return bad(format!(
                        "suite {}: {what} range [{lo}, {hi}] is empty",
                        s.name
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: String,
    pub suite: String,
    pub seed: u64,
    pub rounds: usize,
    pub converged: bool,
    pub answers: usize,
    pub metrics: MetricReport,
}

/// Drive one scene through refinement, oracle arbitration and closure
/// re-verification, then score the final graph against the reference.
pub fn run_scene(
    name: &str,
    scene: &SynthScene,
    noise: OracleNoise,
    oracle_seed: u64,
    config: &EngineConfig,
) -> Result<(ScenarioResult, Engine), ExperimentError> {
    let memory = scene.memory()?;
    let claims = memory.state().claims.len();
    let agents = OracleAgent::all(OracleConfig {
        ground_truth: Arc::new(scene.truth.clone()),
        noise,
        rng_seed: oracle_seed,
    });
    let mut engine = Engine::new(
        memory,
        Arc::new(scene.ontology.clone()),
        config.clone(),
        agents,
    )?;
    let report = engine.verify();
    let mut answers = 0;
    while let Some(item) = engine.queue().into_iter().next() {
        if answers > 4 * claims + 10 {
            return Err(ExperimentError::Stuck(name.to_owned()));
        }
        let claim = engine
            .state()
            .claims
            .get(&item.claim_id)
            .cloned()
            .expect("queued claim is live");
        let answer = oracle_answer(&scene.truth, &claim, &item.query);
        engine.answer(&item.claim_id, answer)?;
        answers += 1;
    }
    let mut metrics = compute_metrics(engine.trace());
    let (acc, empty) = entity_accuracy(&engine.state().graph, &scene.truth);
    metrics.entity_acc = Some(acc);
    metrics.flags.empty_truth = empty;
    metrics.ged_norm =
        graph_edit_distance(&engine.state().graph, &scene.truth, DEFAULT_MAX_NODES).ok();
    let result = ScenarioResult {
        scenario: name.to_owned(),
        suite: String::new(),
        seed: oracle_seed,
        rounds: report.rounds_run(),
        converged: report.converged,
        answers,
        metrics,
    };
    Ok((result, engine))
}

fn run_one(
    suite: &SuiteConfig,
    base: &EngineConfig,
    seed: u64,
) -> Result<ScenarioResult, ExperimentError> {
    let name = format!("{}/{seed}", suite.name);
    let spec = CorruptionSpec {
        rng_seed: seed,
        ..suite.corruption
    };
    let scene =
        synth_generate(&suite.size_for(seed), &spec).map_err(|source| ExperimentError::Synth {
            scenario: name.clone(),
            source,
        })?;
    let (mut result, _) = run_scene(&name, &scene, suite.noise, seed, &suite.engine_config(base))?;
    result.suite = suite.name.clone();
    Ok(result)
}

/// Means over a group of scenarios. `reduction_ratio` averages only
/// scenarios that re-verified something.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub suite: String,
    pub density: String,
    pub scenarios: usize,
    pub inv_probe: f64,
    pub uncert: f64,
    pub claim_agr: f64,
    pub resolve: f64,
    pub human_qpf: f64,
    pub entity_acc: f64,
    pub ged_norm: f64,
    pub calls_actual: f64,
    pub calls_full: f64,
    pub reduction_ratio: f64,
    pub reverified_scenarios: usize,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn aggregate(suite: &str, density: &str, rows: &[&ScenarioResult]) -> AggregateRow {
    let m = |f: fn(&MetricReport) -> f64| mean(rows.iter().map(|r| f(&r.metrics)));
    let reverified: Vec<&&ScenarioResult> =
        rows.iter().filter(|r| r.metrics.calls_actual > 0).collect();
    AggregateRow {
        suite: suite.to_owned(),
        density: density.to_owned(),
        scenarios: rows.len(),
        inv_probe: m(|r| r.inv_probe),
        uncert: m(|r| r.uncert),
        claim_agr: m(|r| r.claim_agr),
        resolve: m(|r| r.resolve),
        human_qpf: m(|r| r.human_qpf),
        entity_acc: m(|r| r.entity_acc.unwrap_or(0.0)),
        ged_norm: mean(rows.iter().filter_map(|r| r.metrics.ged_norm)),
        calls_actual: m(|r| r.calls_actual as f64),
        calls_full: m(|r| r.calls_full as f64),
        reduction_ratio: mean(reverified.iter().map(|r| r.metrics.reduction_ratio)),
        reverified_scenarios: reverified.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub scenarios: Vec<ScenarioResult>,
    pub aggregates: Vec<AggregateRow>,
}

impl ExperimentResults {
    pub fn suite(&self, name: &str) -> Vec<&ScenarioResult> {
        self.scenarios.iter().filter(|s| s.suite == name).collect()
    }

    pub fn aggregate_for(&self, suite: &str, density: &str) -> Option<&AggregateRow> {
        self.aggregates
            .iter()
            .find(|a| a.suite == suite && a.density == density)
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResults, ExperimentError> {
    config.validate()?;
    let jobs: Vec<(&SuiteConfig, u64)> = config
        .suites
        .iter()
        .flat_map(|s| (0..s.seeds).map(move |i| (s, s.seed_base + i)))
        .collect();
    let scenarios = jobs
        .par_iter()
        .map(|(suite, seed)| run_one(suite, &config.engine, *seed))
        .collect::<Result<Vec<_>, _>>()?;

    let mut aggregates = Vec::new();
    for suite in &config.suites {
        let rows: Vec<&ScenarioResult> =
            scenarios.iter().filter(|r| r.suite == suite.name).collect();
        aggregates.push(aggregate(&suite.name, "all", &rows));
        let mut by_density: BTreeMap<Density, Vec<&ScenarioResult>> = BTreeMap::new();
        for r in &rows {
            by_density.entry(r.metrics.density).or_default().push(r);
        }
        for (d, group) in by_density {
            aggregates.push(aggregate(&suite.name, d.as_str(), &group));
        }
    }
    Ok(ExperimentResults {
        scenarios,
        aggregates,
    })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    scenario: &'a str,
    density: &'static str,
    inv_probe: f64,
    uncert: f64,
    claim_agr: f64,
    resolve: f64,
    human_qpf: f64,
    entity_acc: Option<f64>,
    ged_norm: Option<f64>,
    calls_actual: usize,
    calls_full: usize,
    reduction_ratio: f64,
}

/// Write `results.csv`, `aggregates.csv` and `results.json` under `dir`.
pub fn write_results(
    results: &ExperimentResults,
    dir: &Path,
) -> Result<Vec<PathBuf>, ExperimentError> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join("results.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    for s in &results.scenarios {
        let m = &s.metrics;
        w.serialize(CsvRow {
            scenario: &s.scenario,
            density: m.density.as_str(),
            inv_probe: m.inv_probe,
            uncert: m.uncert,
            claim_agr: m.claim_agr,
            resolve: m.resolve,
            human_qpf: m.human_qpf,
            entity_acc: m.entity_acc,
            ged_norm: m.ged_norm,
            calls_actual: m.calls_actual,
            calls_full: m.calls_full,
            reduction_ratio: m.reduction_ratio,
        })?;
    }
    w.flush()?;
    let agg_path = dir.join("aggregates.csv");
    let mut w = csv::Writer::from_path(&agg_path)?;
    for a in &results.aggregates {
        w.serialize(a)?;
    }
    w.flush()?;
    let json_path = dir.join("results.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(results)?)?;
    Ok(vec![csv_path, agg_path, json_path])
}

/// Noise profile where the whole-video view is least reliable and the
/// per-frame view most reliable, all growing with scene crowding.
pub fn default_noise() -> OracleNoise {
    OracleNoise {
        local_grounding: RoleNoise::new(0.05, 0.10, 0.03),
        temporal_consistency: RoleNoise::new(0.10, 0.15, 0.05),
        global_audit: RoleNoise::new(0.20, 0.10, 0.05),
        clutter_gain: 0.08,
    }
}
