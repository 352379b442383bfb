use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use claimloop_core::arbitration::{HumanAnswer, Query};
use claimloop_core::engine::DecisionReport;
use claimloop_core::experiment::{run_experiment, write_results, ExperimentConfig};
use claimloop_core::ids::ClaimId;
use claimloop_core::memory::{write_jsonl, SemanticMemory};
use claimloop_service::config::DATA_DIR_ENV;
use claimloop_service::store::DataDir;
use claimloop_service::{api, IngestRequest, ServiceConfig, ServiceError, Session};

#[derive(Parser)]
#[command(
    name = "claimloop",
    version,
    about = "Claim-level verification and repair of video scene-graph memory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Service configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Data directory; overrides the configuration file.
    #[arg(long, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Decision {
    #[arg(long)]
    confirm: bool,
    #[arg(long)]
    reject: bool,
    #[arg(long, value_name = "VALUE")]
    select: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the memory from segments and per-frame slices.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// JSON array of {start, end, dynamic}.
        #[arg(long)]
        segments: PathBuf,
        /// Per-frame graph slices in the snapshot schema.
        #[arg(long)]
        slices: PathBuf,
        /// Closed label, predicate and attribute sets.
        #[arg(long)]
        ontology: PathBuf,
        /// Reference graph for the oracle backend.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Keyframe budget; defaults to the configured value.
        #[arg(long)]
        keyframes: Option<usize>,
        /// Replace an existing memory.
        #[arg(long)]
        force: bool,
    },
    /// Run the refinement loop.
    Verify {
        #[command(flatten)]
        common: Common,
    },
    /// List open arbitration items by priority.
    Queue {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        json: bool,
    },
    /// Answer an open arbitration item.
    Answer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        claim: String,
        #[command(flatten)]
        decision: Decision,
    },
    /// Set a claim's value as the supervisor.
    Override {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        claim: String,
        #[arg(long)]
        value: String,
    },
    /// Freeze a claim at its current value.
    Lock {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        claim: String,
    },
    /// Run the synthetic experiment harness.
    Simulate {
        /// `default` for the built-in suites, or a TOML experiment file.
        #[arg(long, default_value = "default")]
        config: String,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Print the metric report for the current memory.
    Metrics {
        #[command(flatten)]
        common: Common,
    },
    /// Write the state (current or at --version) and the full logs.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        version: Option<u64>,
    },
    /// Replay the log over the version-0 snapshot and report the result.
    Replay {
        #[command(flatten)]
        common: Common,
        /// Print the state at this version as JSON.
        #[arg(long)]
        version: Option<u64>,
        /// Print one line per log entry.
        #[arg(long)]
        verbose: bool,
    },
    /// Run the HTTP API.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        listen: Option<String>,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("{0}")]
    Other(String),
}

type CliResult = Result<(), CliError>;

fn other(e: impl std::fmt::Display) -> CliError {
    CliError::Other(e.to_string())
}

fn config_of(common: &Common) -> Result<ServiceConfig, CliError> {
    Ok(
        ServiceConfig::load(common.config.as_deref(), common.data_dir.clone())
            .map_err(ServiceError::from)?,
    )
}

fn open(common: &Common) -> Result<Session, CliError> {
    Ok(Session::open(&config_of(common)?)?)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| other(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| other(format!("{}: {e}", path.display())))
}

fn print_decision(id: &ClaimId, r: &DecisionReport) {
    println!(
        "{id}: version {}; re-verified with {} calls ({} for a full pass)",
        r.version, r.reverify.calls_actual, r.reverify.calls_full
    );
    for item in &r.reverify.escalated {
        println!("  queued {}", item.claim_id);
    }
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Ingest {
            common,
            segments,
            slices,
            ontology,
            reference,
            keyframes,
            force,
        } => {
            let cfg = config_of(&common)?;
            let req = IngestRequest {
                segments: read_json(&segments)?,
                slices: read_json(&slices)?,
                ontology: read_json(&ontology)?,
                reference: reference.as_deref().map(read_json).transpose()?,
                keyframes,
                replace: force,
            };
            let (_, report) = Session::ingest(&cfg, req)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for r in &report.rejected {
                eprintln!("rejected {}: {}", r.entity_id, r.reason);
            }
            println!(
                "ingested {} entities and {} claims over keyframes {:?}",
                report.entities, report.claims, report.keyframes
            );
        }
        Command::Verify { common } => {
            let mut s = open(&common)?;
            let r = s.verify()?;
            let rounds = r.rounds_run();
            if r.converged {
                print!("converged in {rounds} rounds");
            } else {
                print!("stopped after {rounds} rounds without converging");
            }
            println!(
                "; {} queued for review; version {}",
                r.escalated.len(),
                s.memory().version()
            );
        }
        Command::Queue { common, json } => {
            let s = open(&common)?;
            let items = s.queue();
            if json {
                println!("{}", serde_json::to_string_pretty(&items).map_err(other)?);
            } else if items.is_empty() {
                println!("queue is empty");
            } else {
                let claims = &s.engine().state().claims;
                for (i, item) in items.iter().enumerate() {
                    let text = claims
                        .get(&item.claim_id)
                        .map(|c| c.text())
                        .unwrap_or_default();
                    let ask = match &item.query {
                        Query::Binary => "confirm or reject".to_owned(),
                        Query::CandidateSelect { options } => {
                            format!("select one of {}", options.join(", "))
                        }
                    };
                    println!(
                        "{:>3}. {}  u={:.3} (unc {:.3}, conflict {:.3}, impact {:.3})\n     {text}\n     {ask}",
                        i + 1,
                        item.claim_id,
                        item.utility,
                        item.components.unc,
                        item.components.conflict,
                        item.components.impact
                    );
                }
            }
        }
        Command::Answer {
            common,
            claim,
            decision,
        } => {
            let answer = match decision {
                Decision { confirm: true, .. } => HumanAnswer::Confirm,
                Decision { reject: true, .. } => HumanAnswer::Reject,
                Decision {
                    select: Some(value),
                    ..
                } => HumanAnswer::Select { value },
                _ => return Err(other("one of --confirm, --reject or --select is required")),
            };
            let mut s = open(&common)?;
            let id = ClaimId::from(claim);
            let r = s.answer(&id, answer)?;
            print_decision(&id, &r);
        }
        Command::Override {
            common,
            claim,
            value,
        } => {
            let mut s = open(&common)?;
            let id = ClaimId::from(claim);
            let r = s.override_claim(&id, value)?;
            print_decision(&id, &r);
        }
        Command::Lock { common, claim } => {
            let mut s = open(&common)?;
            let r = s.lock(&ClaimId::from(claim))?;
            println!("{} locked at version {}", r.claim_id, r.version);
        }
        Command::Simulate { config, out } => {
            let cfg = if config == "default" {
                ExperimentConfig::builtin()
            } else {
                let text =
                    fs::read_to_string(&config).map_err(|e| other(format!("{config}: {e}")))?;
                ExperimentConfig::from_toml(&text).map_err(other)?
            };
            let results = run_experiment(&cfg).map_err(other)?;
            let files = write_results(&results, &out).map_err(other)?;
            println!(
                "{:<16} {:<8} {:>4} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}",
                "suite", "density", "n", "uncert", "agree", "resolve", "qpf", "acc", "ged", "ratio"
            );
            for a in &results.aggregates {
                println!(
                    "{:<16} {:<8} {:>4} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>7.2}",
                    a.suite,
                    a.density,
                    a.scenarios,
                    a.uncert,
                    a.claim_agr,
                    a.resolve,
                    a.human_qpf,
                    a.entity_acc,
                    a.ged_norm,
                    a.reduction_ratio
                );
            }
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Metrics { common } => {
            let s = open(&common)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&s.metrics()).map_err(other)?
            );
        }
        Command::Export {
            common,
            out,
            version,
        } => {
            let s = open(&common)?;
            let m = s.memory();
            let state = match version {
                Some(v) => m.state_at(v).map_err(ServiceError::from)?,
                None => m.state().clone(),
            };
            fs::create_dir_all(&out).map_err(other)?;
            let create = |name: &str| {
                fs::File::create(out.join(name))
                    .map(BufWriter::new)
                    .map_err(other)
            };
            serde_json::to_writer_pretty(create("snapshot.json")?, &state).map_err(other)?;
            write_jsonl(create("provenance.jsonl")?, m.log()).map_err(other)?;
            s.engine()
                .trace()
                .write_jsonl(create("trace.jsonl")?)
                .map_err(other)?;
            println!("exported version {} to {}", state.version, out.display());
        }
        Command::Replay {
            common,
            version,
            verbose,
        } => {
            let cfg = config_of(&common)?;
            let stored = DataDir::new(&cfg.data_dir)
                .load()
                .map_err(ServiceError::from)?;
            let entries = stored.log.len();
            if verbose {
                for e in &stored.log {
                    println!(
                        "{:>6} {} {:<20} {:<9} v{}->v{}",
                        e.seq, e.timestamp, e.actor, e.action, e.prior_version, e.new_version
                    );
                }
            }
            let m =
                SemanticMemory::replay(stored.initial, stored.log).map_err(ServiceError::from)?;
            match version {
                Some(v) => {
                    let state = m.state_at(v).map_err(ServiceError::from)?;
                    let mut out = std::io::stdout().lock();
                    serde_json::to_writer_pretty(&mut out, &state).map_err(other)?;
                    writeln!(out).map_err(other)?;
                }
                None => println!(
                    "replayed {entries} entries to version {} ({} claims)",
                    m.version(),
                    m.state().claims.len()
                ),
            }
        }
        Command::Serve { common, listen } => {
            let mut cfg = config_of(&common)?;
            if let Some(l) = listen {
                cfg.listen = l;
            }
            let rt = tokio::runtime::Runtime::new().map_err(other)?;
            rt.block_on(api::serve(cfg))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
