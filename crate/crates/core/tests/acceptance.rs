//! One line per acceptance criterion. Runs without the libtest harness so the
//! lines are printed on every `cargo test`; exits nonzero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use claimloop_core::agents::oracle::{OracleAgent, OracleConfig, OracleNoise};
use claimloop_core::arbitration::plan_reverify;
use claimloop_core::claim::{Claim, ClaimStatus, ClaimType};
use claimloop_core::constructor::decompose_claims;
use claimloop_core::deps::DependencyGraph;
use claimloop_core::engine::{Engine, EngineConfig};
use claimloop_core::evidence::{Actor, EvidenceTuple, Role, Verdict};
use claimloop_core::experiment::{
    run_experiment, ExperimentConfig, ExperimentResults, ScenarioResult,
};
use claimloop_core::fusion::{aggregate, belief, fuse_claim, RoleWeightMatrix};
use claimloop_core::graph::{BBox, EntityNode, FrameInfo, GraphState};
use claimloop_core::ids::{ClaimId, EntityId, FrameId};
use claimloop_core::memory::{EditOp, SemanticMemory};
use claimloop_core::metrics::{density_regime, Density};
use claimloop_core::synth::{default_ontology, synth_generate, CorruptionSpec, SizeParams};

const TOL: f64 = 1e-12;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn tuple(role: Role, verdict: Verdict, s: f64) -> EvidenceTuple {
    EvidenceTuple::new(ClaimId::from("c"), role, verdict, s, 1)
}

fn fusion_exactness() -> Outcome {
    use Role::*;
    use Verdict::*;
    let start = Instant::now();
    let w = RoleWeightMatrix::role_aware();
    let mut failures = Vec::new();

    let silent = [
        tuple(LocalGrounding, Abstain, 0.7),
        tuple(TemporalConsistency, Abstain, 0.3),
    ];
    for eps in [0.01, 0.5, 3.0] {
        let p = belief(&aggregate(&silent, ClaimType::Label, &w), eps).unwrap();
        if p != 0.5 {
            failures.push(format!("all-abstain p = {p} at eps {eps}"));
        }
    }
    if belief(&aggregate(&[], ClaimType::Rel, &w), 0.01).unwrap() != 0.5 {
        failures.push("empty evidence p != 0.5".into());
    }

    // (evidence, type, S+, S-, S0) worked by hand from the weight table.
    let fixtures: Vec<(Vec<EvidenceTuple>, ClaimType, f64, f64, f64)> = vec![
        (
            vec![
                tuple(LocalGrounding, Support, 0.9),
                tuple(TemporalConsistency, Contradict, 0.5),
                tuple(GlobalAudit, Support, 1.0),
            ],
            ClaimType::Label,
            0.9,
            0.4,
            0.0,
        ),
        (
            vec![
                tuple(LocalGrounding, Contradict, 0.6),
                tuple(TemporalConsistency, Support, 0.75),
                tuple(GlobalAudit, Abstain, 0.5),
            ],
            ClaimType::Rel,
            0.6,
            0.6,
            0.35,
        ),
        (
            vec![
                tuple(LocalGrounding, Support, 1.0),
                tuple(TemporalConsistency, Support, 0.4),
                tuple(GlobalAudit, Contradict, 0.9),
            ],
            ClaimType::Attr,
            1.18,
            0.54,
            0.0,
        ),
        (
            vec![
                tuple(GlobalAudit, Contradict, 1.0),
                tuple(LocalGrounding, Abstain, 0.2),
            ],
            ClaimType::Exist,
            0.0,
            0.7,
            0.2,
        ),
    ];
    for (i, (ev, t, sp, sm, s0)) in fixtures.iter().enumerate() {
        let s = aggregate(ev, *t, &w);
        if (s.s_plus - sp).abs() > TOL
            || (s.s_minus - sm).abs() > TOL
            || (s.s_zero - s0).abs() > TOL
        {
            failures.push(format!("fixture {i}: got {s:?}"));
        }
        let eps = 0.01;
        let expected = (eps + sp) / (2.0 * eps + sp + sm);
        let p = belief(&s, eps).unwrap();
        if (p - expected).abs() > TOL {
            failures.push(format!("fixture {i}: p {p} vs {expected}"));
        }
    }
    let elapsed = start.elapsed();
    if elapsed >= Duration::from_secs(1) {
        failures.push(format!("took {elapsed:?}"));
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "all-abstain p = 0.5, {} fixtures within {TOL:e}, {elapsed:.2?}",
                fixtures.len()
            )
        } else {
            failures.join("; ")
        },
    )
}

fn table_conformance() -> Outcome {
    let expected: [(Role, [f64; 4]); 3] = [
        (Role::LocalGrounding, [1.00, 1.00, 0.90, 1.00]),
        (Role::TemporalConsistency, [0.80, 0.80, 0.70, 0.80]),
        (Role::GlobalAudit, [0.70, 0.00, 0.60, 0.70]),
    ];
    let w = RoleWeightMatrix::role_aware();
    let types = [
        ClaimType::Exist,
        ClaimType::Label,
        ClaimType::Attr,
        ClaimType::Rel,
    ];
    let mut failures = Vec::new();
    for (role, row) in expected {
        for (t, v) in types.iter().zip(row) {
            if w.weight(role, *t) != v {
                failures.push(format!("{role:?}/{t:?} = {}", w.weight(role, *t)));
            }
        }
    }

    // Dropping global-audit evidence from label claims changes nothing.
    let scene = synth_generate(
        &SizeParams::default(),
        &CorruptionSpec {
            label_swap_rate: 0.5,
            rng_seed: 17,
            ..Default::default()
        },
    )
    .unwrap();
    let claims = decompose_claims(&scene.corrupted);
    let cfg = EngineConfig::default();
    let mut compared = 0;
    for claim in claims.iter().filter(|c| c.claim_type == ClaimType::Label) {
        for (k, (verdict, cand)) in [
            (Verdict::Support, None),
            (Verdict::Contradict, Some("cat")),
            (Verdict::Abstain, None),
        ]
        .into_iter()
        .enumerate()
        {
            let mut local = EvidenceTuple::new(
                claim.claim_id.clone(),
                Role::LocalGrounding,
                Verdict::Contradict,
                0.8,
                1,
            );
            local.candidate = Some("dog".into());
            let mut global = EvidenceTuple::new(
                claim.claim_id.clone(),
                Role::GlobalAudit,
                verdict,
                0.3 + 0.2 * k as f64,
                1,
            );
            global.candidate = cand.map(str::to_owned);
            let with = fuse_claim(
                claim,
                &[local.clone(), global],
                &scene.ontology,
                &cfg.weights,
                &cfg.fusion,
            )
            .unwrap();
            let without =
                fuse_claim(claim, &[local], &scene.ontology, &cfg.weights, &cfg.fusion).unwrap();
            let same = with.belief.to_bits() == without.belief.to_bits()
                && with.scores.s_plus.to_bits() == without.scores.s_plus.to_bits()
                && with.scores.s_minus.to_bits() == without.scores.s_minus.to_bits()
                && with.scores.s_zero.to_bits() == without.scores.s_zero.to_bits()
                && with.outcome == without.outcome
                && with
                    .candidates
                    .iter()
                    .filter(|(_, q)| **q != 0.0)
                    .collect::<Vec<_>>()
                    == without
                        .candidates
                        .iter()
                        .filter(|(_, q)| **q != 0.0)
                        .collect::<Vec<_>>();
            if !same {
                failures.push(format!("{} differs with global evidence", claim.claim_id));
            }
            compared += 1;
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("12 weights exact, {compared} label fusions bit-identical without global audit")
        } else {
            failures.join("; ")
        },
    )
}

fn noiseless_closed_loop() -> Outcome {
    let cfg = ExperimentConfig::builtin();
    let suite = cfg
        .suites
        .iter()
        .find(|s| s.name == "noiseless")
        .unwrap()
        .clone();
    let only = ExperimentConfig {
        suites: vec![suite.clone()],
        ..cfg
    };
    let start = Instant::now();
    let results = run_experiment(&only).unwrap();
    let elapsed = start.elapsed();
    let rows = results.suite("noiseless");
    let structural =
        suite.corruption.spurious_entity_rate > 0.0 || suite.corruption.missing_entity_rate > 0.0;
    let bad: Vec<String> = rows
        .iter()
        .filter(|r| {
            r.rounds > 2
                || r.answers > 0
                || r.metrics.entity_acc != Some(1.0)
                || r.metrics.ged_norm != Some(0.0)
                || r.metrics.resolve != 1.0
        })
        .map(|r| r.scenario.clone())
        .collect();
    let disputed = rows.iter().filter(|r| !r.metrics.flags.no_disputes).count();
    let pass =
        rows.len() >= 50 && bad.is_empty() && !structural && elapsed < Duration::from_secs(30);
    outcome(
        pass,
        format!(
            "{} scenarios ({disputed} with disputes), failing {:?}, max rounds {}, {elapsed:.2?}",
            rows.len(),
            bad,
            rows.iter().map(|r| r.rounds).max().unwrap_or(0)
        ),
    )
}

fn chain_scene(n_entities: usize) -> (GraphState, Vec<ClaimId>) {
    let f = FrameId(0);
    let mut g = GraphState::default();
    g.frames.insert(f, FrameInfo::new(f));
    for i in 0..n_entities {
        let id = EntityId::new(format!("e{i:03}"));
        g.entities.insert(
            id.clone(),
            EntityNode {
                entity_id: id,
                canonical_label: "person".into(),
                spatial_extent: BTreeMap::from([(f, BBox::new(0.1, 0.1, 0.2, 0.2))]),
                frame_ids: BTreeSet::from([f]),
            },
        );
    }
    let order: Vec<ClaimId> = decompose_claims(&g).ids().cloned().collect();
    (g, order)
}

fn closure_proportionality(results: &ExperimentResults) -> Outcome {
    let mut failures = Vec::new();

    // 100 claims in a dependency chain, one human edit in the middle.
    let (g, order) = chain_scene(50);
    let claims = decompose_claims(&g);
    let mut deps = DependencyGraph::with_nodes(order.iter().cloned());
    for w in order.windows(2) {
        deps.add_edge(w[0].clone(), w[1].clone()).unwrap();
    }
    let memory = SemanticMemory::init(g.clone(), claims, deps).unwrap();
    let agents = OracleAgent::all(OracleConfig {
        ground_truth: Arc::new(g),
        noise: OracleNoise::noiseless(),
        rng_seed: 1,
    });
    let mut engine = Engine::new(
        memory,
        Arc::new(default_ontology()),
        EngineConfig::default(),
        agents,
    )
    .unwrap();
    let target = Claim::label_id(&EntityId::new("e025"));
    let report = engine.override_claim(&target, "cat".into()).unwrap();
    let pos = order.iter().position(|c| *c == target).unwrap();
    let neighbors: BTreeSet<ClaimId> = order[pos - 1..=pos + 1].iter().cloned().collect();
    let (actual, full) = (report.reverify.calls_actual, report.reverify.calls_full);
    if actual > 5 || full != 100 || report.plan.closure != neighbors {
        failures.push(format!(
            "chain: actual {actual}, full {full}, closure {:?}",
            report.plan.closure
        ));
    }

    // Mean ratio on the mixed suite.
    let mixed: Vec<&ScenarioResult> = results
        .suite("mixed")
        .into_iter()
        .filter(|r| r.metrics.calls_actual > 0)
        .collect();
    let mean_ratio =
        mixed.iter().map(|r| r.metrics.reduction_ratio).sum::<f64>() / mixed.len().max(1) as f64;
    if mixed.is_empty() || mean_ratio <= 4.0 {
        failures.push(format!(
            "mixed mean ratio {mean_ratio:.2} over {} scenarios",
            mixed.len()
        ));
    }

    // actual == full only when the closure covers every live claim.
    let mut edits = 0;
    for seed in 0..20 {
        let size = SizeParams {
            entities: 1 + seed as usize % 6,
            relations: seed as usize % 4,
            attributes: seed as usize % 3,
            ..Default::default()
        };
        let scene = synth_generate(
            &size,
            &CorruptionSpec {
                rng_seed: seed,
                ..Default::default()
            },
        )
        .unwrap();
        let memory = scene.memory().unwrap();
        for claim in memory
            .state()
            .claims
            .iter()
            .filter(|c| c.claim_type.is_correctable())
        {
            let mut m = memory.clone();
            let pre = m.state().dependencies.clone();
            let value = scene
                .ontology
                .options_for(claim)
                .into_iter()
                .find(|v| *v != claim.asserted_value)
                .unwrap();
            let effect = m
                .apply_edit(
                    EditOp::Override {
                        claim_id: claim.claim_id.clone(),
                        value,
                    },
                    Actor::Human,
                )
                .unwrap();
            let plan = plan_reverify(&pre, m.state(), effect.value_changed);
            let spans_all = m.state().claims.ids().all(|id| plan.closure.contains(id))
                && m.state()
                    .claims
                    .iter()
                    .all(|c| c.status != ClaimStatus::Locked);
            if (plan.calls_planned == plan.calls_full_baseline) != spans_all {
                failures.push(format!("{}: equality without full closure", claim.claim_id));
            }
            edits += 1;
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "chain actual {actual}/full {full}; mixed mean ratio {mean_ratio:.2} over {} scenarios (reference 4.8); equality audit over {edits} edits",
                mixed.len()
            )
        } else {
            failures.join("; ")
        },
    )
}

fn density_trend(results: &ExperimentResults) -> Outcome {
    let mut failures = Vec::new();
    for (n, d) in [
        (0, Density::Low),
        (9, Density::Low),
        (10, Density::Medium),
        (19, Density::Medium),
        (20, Density::High),
    ] {
        if density_regime(n) != d {
            failures.push(format!("regime({n}) = {:?}", density_regime(n)));
        }
    }
    let mut by: BTreeMap<Density, Vec<&ScenarioResult>> = BTreeMap::new();
    for r in results
        .scenarios
        .iter()
        .filter(|r| r.suite.starts_with("density-"))
    {
        by.entry(r.metrics.density).or_default().push(r);
    }
    let stat = |d: Density, f: fn(&ScenarioResult) -> f64| {
        let rows = by.get(&d).map(Vec::as_slice).unwrap_or(&[]);
        (
            rows.iter().map(|r| f(r)).sum::<f64>() / rows.len().max(1) as f64,
            rows.len(),
        )
    };
    let qpf: Vec<(f64, usize)> = Density::ALL
        .iter()
        .map(|&d| stat(d, |r| r.metrics.human_qpf))
        .collect();
    let unc: Vec<(f64, usize)> = Density::ALL
        .iter()
        .map(|&d| stat(d, |r| r.metrics.uncert))
        .collect();
    if qpf.iter().any(|(_, n)| *n < 20) {
        failures.push(format!(
            "seeds per regime {:?}",
            qpf.iter().map(|q| q.1).collect::<Vec<_>>()
        ));
    }
    if !(qpf[0].0 <= qpf[1].0 && qpf[1].0 <= qpf[2].0) {
        failures.push("human_qpf not non-decreasing".into());
    }
    if !(unc[0].0 <= unc[1].0 && unc[1].0 <= unc[2].0) {
        failures.push("uncert not non-decreasing".into());
    }
    let detail = format!(
        "human_qpf {:.3}/{:.3}/{:.3}, uncert {:.3}/{:.3}/{:.3}, seeds {}/{}/{}",
        qpf[0].0, qpf[1].0, qpf[2].0, unc[0].0, unc[1].0, unc[2].0, qpf[0].1, qpf[1].1, qpf[2].1
    );
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            detail
        } else {
            format!("{}; {detail}", failures.join("; "))
        },
    )
}

fn ablation_trend(results: &ExperimentResults) -> Outcome {
    let get = |s: &str| results.aggregate_for(s, "all").unwrap();
    let (aware, uniform, r1) = (get("mixed"), get("mixed-uniform"), get("mixed-r1"));
    let weights_help = aware.human_qpf < uniform.human_qpf;
    let round_two_ok = aware.resolve >= r1.resolve;
    outcome(
        weights_help && round_two_ok,
        format!(
            "human_qpf role-aware {:.3} vs uniform {:.3}; resolve r_max=2 {:.3} vs r_max=1 {:.3}",
            aware.human_qpf, uniform.human_qpf, aware.resolve, r1.resolve
        ),
    )
}

fn main() {
    let cfg = ExperimentConfig::builtin();
    let sweep = ExperimentConfig {
        suites: cfg
            .suites
            .iter()
            .filter(|s| s.name != "noiseless")
            .cloned()
            .collect(),
        ..cfg.clone()
    };
    let results = run_experiment(&sweep).expect("sweep runs");

    let checks: Vec<(&str, Outcome)> = vec![
        ("fusion exactness", fusion_exactness()),
        ("weight table conformance", table_conformance()),
        ("noiseless closed loop", noiseless_closed_loop()),
        ("closure proportionality", closure_proportionality(&results)),
        ("density trend", density_trend(&results)),
        ("ablation trend", ablation_trend(&results)),
    ];
    let mut failed = 0;
    for (name, o) in &checks {
        println!(
            "{} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        checks.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
