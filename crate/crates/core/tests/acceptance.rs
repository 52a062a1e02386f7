//! Acceptance criteria, one PASS/FAIL line each. Tolerances are pinned below.
//!
//! Run with `cargo test -p reserve-replay --test acceptance`. The dataset
//! criterion reads `RESERVE_REPLAY_SEASON2` and `RESERVE_REPLAY_SEASON3`
//! (iPinYou impression logs) and prints SKIP when they are unset.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reserve_replay::auction_log::{partition_segments, AuctionRow, SegmentDimension, SegmentKey};
use reserve_replay::decision::{decide, point_estimate_leader, simultaneous_bounds, PolicyBounds};
use reserve_replay::pipeline::{DecisionReport, Pipeline, PipelineOptions, RunConfig, SchemaSpec};
use reserve_replay::policy_catalog::{fit_quantiles, standard19, Catalog};
use reserve_replay::replay::{replay_catalog, ReplayOptions};
use reserve_replay::segment_safety::{certify, coverage_sensitivity, nonharm_certificate, segment_bounds, required_segment_sample};
use reserve_replay::stats::bonferroni_z;
use reserve_replay::support::{boundary_sweep, localized_lift, q_local_radius, required_boundary_sample, SupportError};
use reserve_replay::synth::{generate_log, oracle_replay, true_lifts_oracle, GeneratorConfig};
use reserve_replay::validation::response_gap_threshold;

// Pinned tolerances.
const TOL_BONFERRONI: f64 = 1e-3;
const TOL_ORACLE_REL: f64 = 1e-12;
const TOL_LOCAL_IDENTITY: f64 = 1e-12;
const TOL_CALCULATOR_REL: f64 = 1e-6;
const MC_SLACK: f64 = 0.03;
const ALPHA: f64 = 0.05;
const RHO: f64 = 0.01;
const REPLICATIONS: usize = 200;
const ORACLE_ROWS: usize = 10_000_000;
const REPLICATION_ROWS: usize = 100_000;
const PERF_ROWS: usize = 1_000_000;
const PERF_BUDGET: Duration = Duration::from_secs(10);

struct Outcome {
    id: &'static str,
    pass: Option<bool>,
    detail: String,
}

fn outcome(id: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { id, pass: Some(pass), detail }
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn c1_worked_example() -> Outcome {
    let start = Instant::now();
    let bounds = vec![
        PolicyBounds::from_interval("a", 1.0, 0.9, 1.1, 1.0, 0.0),
        PolicyBounds::from_interval("b", 1.2, 0.0, 2.4, 1.0, 0.0),
    ];
    let pass_map: BTreeMap<String, bool> = [("a".to_string(), true), ("b".to_string(), true)].into();
    let d = decide(&bounds, 0.0, &pass_map).expect("decide");
    let point = point_estimate_leader(&bounds).unwrap_or_default().to_string();
    let elapsed = start.elapsed();
    let ok = d.leader == "a"
        && d.certified == ["a"]
        && d.unresolved == ["b"]
        && d.dominated.is_empty()
        && point == "b"
        && elapsed < Duration::from_millis(1);
    outcome(
        "C1",
        ok,
        format!(
            "leader {} certified {:?} unresolved {:?}; point-estimate picks {point}; {:?}",
            d.leader, d.certified, d.unresolved, elapsed
        ),
    )
}

fn c2_bonferroni() -> Outcome {
    let z3 = bonferroni_z(ALPHA, 3).expect("z");
    let z19 = bonferroni_z(ALPHA, 19).expect("z");
    let ok = (z3 - 2.394).abs() <= TOL_BONFERRONI && (z19 - 3.008).abs() <= TOL_BONFERRONI;
    outcome("C2", ok, format!("z(|P|=3) = {z3:.6}, z(|P|=19) = {z19:.6}; tolerance {TOL_BONFERRONI}"))
}

fn c3_response_gap() -> Outcome {
    let g = response_gap_threshold(0.1215, 0.0).expect("gap");
    let pp = 100.0 * g.threshold;
    // 6.075 rounds half-up to the reported 6.08.
    let rounded = (pp * 100.0 + 0.5 + 1e-9).floor() / 100.0;
    let ok = (pp - 6.075).abs() < 1e-9 && (rounded - 6.08).abs() < 1e-12;
    outcome("C3", ok, format!("threshold {pp:.4}pp, rounds to {rounded:.2}pp"))
}

fn c4_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut compared = 0usize;
    let mut failures = Vec::new();
    let mut size_rng = ChaCha8Rng::seed_from_u64(4);
    for s in 0..50u64 {
        let n_rows = size_rng.random_range(10_000..=100_000);
        let config = GeneratorConfig { seed: 4_000 + s, n_rows, advertiser_floor_shift: 0.6, ..Default::default() };
        let panel = generate_log(&config).expect("panel");
        let catalog = Catalog::new(standard19(), Some(fit_quantiles(&panel).expect("quantiles"))).expect("catalog");
        let engine = replay_catalog(&panel, &catalog, None, ReplayOptions::default()).expect("replay");
        for (p, e) in catalog.policies.iter().zip(&engine) {
            let o = oracle_replay(panel.rows(), p, &catalog.quantiles).expect("oracle");
            let err = rel_err(e.lift, o.lift).max(rel_err(e.retained_share, o.retained_share));
            worst = worst.max(err);
            compared += 1;
            if err > TOL_ORACLE_REL {
                failures.push(format!("seed {} {}: engine {} oracle {}", 4_000 + s, p.id, e.lift, o.lift));
            }
        }
    }
    let elapsed = start.elapsed();
    let ok = failures.is_empty() && elapsed < Duration::from_secs(30);
    let mut detail = format!("{compared} policy-panel pairs, worst relative error {worst:.3e}, {elapsed:.2?}");
    if let Some(f) = failures.first() {
        detail.push_str(&format!("; first mismatch {f}"));
    }
    outcome("C4", ok, detail)
}

/// Ground truth shared by the Monte Carlo criteria.
struct Truth {
    config: GeneratorConfig,
    catalog: Catalog,
    lifts: Vec<f64>,
    /// Per policy, per covered segment key.
    segment_lifts: Vec<BTreeMap<SegmentKey, f64>>,
    dimensions: Vec<SegmentDimension>,
    min_rows: usize,
}

fn segment_filter(key: &SegmentKey) -> impl Fn(&AuctionRow) -> bool + Sync + '_ {
    move |r: &AuctionRow| {
        let v: &str = match key.dimension {
            SegmentDimension::Advertiser => &r.advertiser,
            SegmentDimension::Exchange => &r.exchange,
            SegmentDimension::Region => &r.region,
            SegmentDimension::Category => &r.category,
            SegmentDimension::BidGapBucket => unreachable!("not used here"),
        };
        v == key.value
    }
}

fn build_truth() -> Truth {
    let config = GeneratorConfig { advertiser_floor_shift: 0.8, ..Default::default() };
    // Anchors frozen once on an independent panel so every replication evaluates the same catalog.
    let anchor_panel = generate_log(&GeneratorConfig { seed: 77_777, n_rows: 1_000_000, ..config.clone() }).expect("anchors");
    let catalog = Catalog::new(standard19(), Some(fit_quantiles(&anchor_panel).expect("quantiles"))).expect("catalog");
    let lifts = true_lifts_oracle(&config, &catalog.policies, &catalog.quantiles, ORACLE_ROWS, 999, |_| true)
        .expect("oracle")
        .into_iter()
        .map(|r| r.expect("oracle lift").lift)
        .collect();

    let dimensions = vec![SegmentDimension::Advertiser, SegmentDimension::Exchange, SegmentDimension::Region];
    let min_rows = 500;
    let probe = generate_log(&GeneratorConfig { seed: 1, ..config.clone() }).expect("probe");
    let keys: Vec<SegmentKey> =
        partition_segments(&probe, &dimensions, min_rows, &[]).expect("segments").covered.into_keys().collect();
    let mut segment_lifts = vec![BTreeMap::new(); catalog.len()];
    for key in &keys {
        let est = true_lifts_oracle(&config, &catalog.policies, &catalog.quantiles, ORACLE_ROWS, 1_999, segment_filter(key))
            .expect("segment oracle");
        for (i, e) in est.into_iter().enumerate() {
            segment_lifts[i].insert(key.clone(), e.expect("segment lift").lift);
        }
    }
    Truth { config, catalog, lifts, segment_lifts, dimensions, min_rows }
}

struct McResult {
    false_dominations: usize,
    retained_best: usize,
    segment_covered: usize,
    segment_policy: String,
    best: String,
    elapsed: Duration,
}

fn monte_carlo(truth: &Truth) -> McResult {
    let start = Instant::now();
    let cands: Vec<usize> = (1..truth.catalog.len()).collect();
    let best_lift = cands.iter().map(|&i| truth.lifts[i]).fold(f64::NEG_INFINITY, f64::max);
    // Gate: positive true lift and no covered segment harmed.
    let passes = |i: usize| truth.lifts[i] > 0.0 && truth.segment_lifts[i].values().all(|&l| l >= 0.0);
    let best_gate = cands
        .iter()
        .copied()
        .filter(|&i| passes(i))
        .max_by(|&a, &b| truth.lifts[a].total_cmp(&truth.lifts[b]).then(b.cmp(&a)));
    // Segment coverage is checked on the candidate with the most varied segment effects.
    let seg_policy = cands
        .iter()
        .copied()
        .max_by(|&a, &b| {
            let spread = |i: usize| {
                let v: Vec<f64> = truth.segment_lifts[i].values().copied().collect();
                v.iter().copied().fold(f64::NEG_INFINITY, f64::max) - v.iter().copied().fold(f64::INFINITY, f64::min)
            };
            spread(a).total_cmp(&spread(b))
        })
        .expect("candidates");

    let mut false_dominations = 0;
    let mut retained_best = 0;
    let mut segment_covered = 0;
    for r in 0..REPLICATIONS {
        let panel = generate_log(&GeneratorConfig { seed: 50_000 + r as u64, n_rows: REPLICATION_ROWS, ..truth.config.clone() })
            .expect("replication");
        let summaries = replay_catalog(&panel, &truth.catalog, None, ReplayOptions::default()).expect("replay");
        let bounds = simultaneous_bounds(&summaries, ALPHA, 1.0).expect("bounds");
        let map = partition_segments(&panel, &truth.dimensions, truth.min_rows, &[]).expect("segments");
        let leader = bounds
            .iter()
            .filter(|b| !b.baseline)
            .max_by(|a, b| a.lcb_support.total_cmp(&b.lcb_support))
            .map(|b| b.policy_id.clone())
            .expect("leader");
        let leader_policy = truth.catalog.get(&leader).expect("policy");
        let sb = segment_bounds(&panel, leader_policy, &truth.catalog.quantiles, &map, ALPHA).expect("segment bounds");
        let cert = nonharm_certificate(&sb, 0.0, 0.0).expect("certificate");
        let pass_map: BTreeMap<String, bool> = [(leader, cert.certified)].into();
        let d = decide(&bounds, RHO, &pass_map).expect("decide");

        let dominated_low_regret = d.dominated.iter().any(|id| {
            let i = truth.catalog.policies.iter().position(|p| p.id == *id).expect("id");
            best_lift - truth.lifts[i] <= RHO
        });
        false_dominations += dominated_low_regret as usize;
        match best_gate {
            Some(i) => {
                let id = &truth.catalog.policies[i].id;
                retained_best += (d.certified.contains(id) || d.unresolved.contains(id)) as usize;
            }
            None => retained_best += 1,
        }

        let seg = segment_bounds(&panel, &truth.catalog.policies[seg_policy], &truth.catalog.quantiles, &map, ALPHA)
            .expect("segment bounds");
        let covered = seg.segments.iter().all(|s| match truth.segment_lifts[seg_policy].get(&s.key) {
            Some(&t) => s.lcb <= t,
            None => true,
        });
        segment_covered += covered as usize;
    }
    McResult {
        false_dominations,
        retained_best,
        segment_covered,
        segment_policy: truth.catalog.policies[seg_policy].id.clone(),
        best: best_gate.map_or("none".into(), |i| truth.catalog.policies[i].id.clone()),
        elapsed: start.elapsed(),
    }
}

fn c5_c6_c8mc(truth: &Truth) -> (Outcome, Outcome, (bool, String)) {
    let mc = monte_carlo(truth);
    let n = REPLICATIONS as f64;
    let fd = mc.false_dominations as f64 / n;
    let rb = mc.retained_best as f64 / n;
    let sc = mc.segment_covered as f64 / n;
    let in_time = mc.elapsed < Duration::from_secs(600);
    let c5 = outcome(
        "C5",
        fd <= ALPHA + MC_SLACK && in_time,
        format!("false-domination rate {fd:.3} (limit {:.3}) over {REPLICATIONS} replications at rho {RHO}, {:.1?}", ALPHA + MC_SLACK, mc.elapsed),
    );
    let c6 = outcome(
        "C6",
        rb >= 1.0 - ALPHA - MC_SLACK && in_time,
        format!("best gate-passing policy {} retained in {rb:.3} of runs (limit {:.3})", mc.best, 1.0 - ALPHA - MC_SLACK),
    );
    let seg = (
        sc >= 1.0 - ALPHA - MC_SLACK,
        format!("segment coverage for {} {sc:.3} (limit {:.3})", mc.segment_policy, 1.0 - ALPHA - MC_SLACK),
    );
    (c5, c6, seg)
}

fn c7_localization_identity() -> Outcome {
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut monotone = true;
    let h_grid = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0];
    let q_grid = [0.01, 0.025, 0.05, 0.1, 0.2, 0.5, 1.0];
    for s in 0..20u64 {
        let panel = generate_log(&GeneratorConfig { seed: 7_000 + s, n_rows: 20_000, ..Default::default() }).expect("panel");
        let catalog = Catalog::new(standard19(), Some(fit_quantiles(&panel).expect("quantiles"))).expect("catalog");
        let summaries = replay_catalog(&panel, &catalog, None, ReplayOptions::default()).expect("replay");
        for (p, sum) in catalog.candidates().iter().zip(&summaries[1..]) {
            match localized_lift(&panel, p, &catalog.quantiles, 1.0) {
                Ok(e) => {
                    worst = worst.max((e.localized_lift - sum.lift).abs());
                    checked += 1;
                }
                Err(SupportError::DegeneratePolicy(_)) => continue,
                Err(e) => panic!("{e}"),
            }
            let radii: Vec<f64> =
                q_grid.iter().map(|&q| q_local_radius(&panel, p, &catalog.quantiles, q).expect("radius").radius).collect();
            monotone &= radii.windows(2).all(|w| w[0] <= w[1]);
        }
        let bounds = simultaneous_bounds(&summaries, ALPHA, 1.0).expect("bounds");
        let sweep = boundary_sweep(&panel, &catalog, &h_grid, 5.0, &bounds).expect("sweep");
        for p in catalog.candidates() {
            let counts: Vec<usize> = sweep.iter().filter(|d| d.policy_id == p.id).map(|d| d.n_boundary).collect();
            monotone &= counts.len() == h_grid.len() && counts.windows(2).all(|w| w[0] <= w[1]);
        }
    }
    outcome(
        "C7",
        worst <= TOL_LOCAL_IDENTITY && monotone && checked > 0,
        format!("{checked} non-degenerate policy-panel pairs, max |localized(q=1) - lift| {worst:.3e}; radius and window counts monotone: {monotone}"),
    )
}

fn c8_segment_logic(mc: (bool, String)) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut logic_ok = true;
    let mut cases = 0;
    for _ in 0..20_000 {
        let k = rng.random_range(1..12);
        let lcbs: Vec<f64> = (0..k).map(|_| rng.random_range(-0.2..0.4)).collect();
        let l_s = rng.random_range(0.0..1.0);
        let radius = rng.random_range(0.0..0.5);
        let v = certify(&lcbs, l_s, radius).expect("certify");
        let min = lcbs.iter().copied().fold(f64::INFINITY, f64::min);
        logic_ok &= v.certified == (min > l_s * radius);
        let mut grid: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..0.6)).collect();
        grid.sort_by(f64::total_cmp);
        let counts = coverage_sensitivity(&lcbs, l_s, &grid).expect("coverage");
        logic_ok &= counts.windows(2).all(|w| w[0].certified_segments >= w[1].certified_segments);
        cases += 1;
    }
    outcome("C8", logic_ok && mc.0, format!("{cases} randomized certificate cases consistent: {logic_ok}; {}", mc.1))
}

fn c9_calculators() -> Outcome {
    // Hand evaluation, independent of the library formulas.
    let n_hand = 10f64.ln() / 0.01;
    let s_hand = 880f64.ln() / 0.01;
    let n = required_boundary_sample(1.0, 0.1, 0.05, 1.0).expect("boundary sample");
    let s = required_segment_sample(1.0, 44, 0.05, 0.1, 0.0, 0.0).expect("segment sample");
    let values_ok = rel_err(n, n_hand) <= TOL_CALCULATOR_REL
        && rel_err(s, s_hand) <= TOL_CALCULATOR_REL
        && format!("{n:.2}") == "230.26"
        && format!("{s:.1}") == "678.0";
    let n_b = required_boundary_sample(3.0, 0.1, 0.05, 1.0).expect("scaled");
    let n_eps = required_boundary_sample(1.0, 0.025, 0.05, 1.0).expect("scaled");
    let s_a = required_segment_sample(2.5, 44, 0.05, 0.1, 0.0, 0.0).expect("scaled");
    let s_eta = required_segment_sample(1.0, 44, 0.05, 0.05, 0.0, 0.0).expect("scaled");
    let scaling_ok = rel_err(n_b / n, 9.0) <= 1e-14
        && rel_err(n_eps / n, 16.0) <= 1e-14
        && rel_err(s_a / s, 6.25) <= 1e-14
        && rel_err(s_eta / s, 4.0) <= 1e-14;
    outcome(
        "C9",
        values_ok && scaling_ok,
        format!("boundary sample {n:.4} (hand {n_hand:.4}), segment sample {s:.4} (hand {s_hand:.4}); scaling exact: {scaling_ok}"),
    )
}

fn c10_determinism_and_speed() -> Outcome {
    let config = "[synth]\nn_rows = 30000\nseed = 10\n\n[bootstrap]\ndraws = 50\n\n[support]\nlocalized_draws = 20\n";
    let mut outputs = Vec::new();
    for workers in [1usize, 2, 4, 8, 16] {
        let dir = tempfile::tempdir().expect("tempdir");
        let options = PipelineOptions { out_dir: Some(dir.path().into()), workers: Some(workers), ..Default::default() };
        let p = Pipeline::new(RunConfig::from_toml(config).expect("config"), options).expect("pipeline");
        p.run().expect("run");
        outputs.push(std::fs::read(dir.path().join("decision.json")).expect("decision.json"));
    }
    let identical = outputs.windows(2).all(|w| w[0] == w[1]);

    let panel = generate_log(&GeneratorConfig { seed: 10, n_rows: PERF_ROWS, ..Default::default() }).expect("panel");
    let start = Instant::now();
    let catalog = Catalog::new(standard19(), Some(fit_quantiles(&panel).expect("quantiles"))).expect("catalog");
    let summaries = replay_catalog(&panel, &catalog, None, ReplayOptions::default()).expect("replay");
    let elapsed = start.elapsed();
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    outcome(
        "C10",
        identical && summaries.len() == 19 && elapsed <= PERF_BUDGET,
        format!(
            "decision.json identical across 1-16 workers: {identical}; {PERF_ROWS}-row 19-policy replay {elapsed:.2?} on {cores} core(s) (budget {PERF_BUDGET:?})"
        ),
    )
}

fn c11_dataset() -> Outcome {
    let (Some(s2), Some(s3)) = (std::env::var_os("RESERVE_REPLAY_SEASON2"), std::env::var_os("RESERVE_REPLAY_SEASON3")) else {
        return Outcome {
            id: "C11",
            pass: None,
            detail: "RESERVE_REPLAY_SEASON2 / RESERVE_REPLAY_SEASON3 not set".into(),
        };
    };
    let dir = tempfile::tempdir().expect("tempdir");
    let mut config = RunConfig::from_toml("[input]\ndev = \"unset\"\n").expect("config");
    if let Some(input) = config.input.as_mut() {
        input.dev = PathBuf::from(s2);
        input.holdout = Some(PathBuf::from(s3));
        input.schema = SchemaSpec::Preset("ipinyou".into());
        input.strict = false;
    }
    config.bootstrap.draws = 200;
    let options = PipelineOptions { out_dir: Some(dir.path().into()), ..Default::default() };
    let p = match Pipeline::new(config, options) {
        Ok(p) => p,
        Err(e) => return outcome("C11", false, e.to_string()),
    };
    if let Err(e) = p.run() {
        return outcome("C11", false, e.to_string());
    }
    let r: DecisionReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("decision.json")).expect("decision")).expect("parse");
    let p18 = r.decision.bounds.iter().find(|b| b.policy_id == "P18");
    let transfer = r.transfer.as_ref();
    let season3 = transfer.and_then(|t| t.leader_holdout_lift).filter(|_| r.decision.leader == "P18");
    let mut shortlist = r.decision.shortlist.clone();
    shortlist.sort();
    let ok = p18.is_some_and(|b| (b.lift_hat - 0.4766).abs() <= 0.005 && (b.lcb_support - 0.4071).abs() <= 0.005)
        && season3.is_some_and(|l| (l - 0.4387).abs() <= 0.005)
        && transfer.is_some_and(|t| (t.spearman - 0.988).abs() <= 0.01)
        && shortlist == ["P11", "P18"];
    outcome(
        "C11",
        ok,
        format!(
            "P18 lift {:?}, support lcb {:?}, season-3 lift {season3:?}, spearman {:?}, shortlist {shortlist:?}",
            p18.map(|b| b.lift_hat),
            p18.map(|b| b.lcb_support),
            transfer.map(|t| t.spearman)
        ),
    )
}

fn main() -> ExitCode {
    let mut results = vec![c1_worked_example(), c2_bonferroni(), c3_response_gap(), c4_oracle_equivalence()];
    let truth = build_truth();
    let (c5, c6, seg_mc) = c5_c6_c8mc(&truth);
    results.push(c5);
    results.push(c6);
    results.push(c7_localization_identity());
    results.push(c8_segment_logic(seg_mc));
    results.push(c9_calculators());
    results.push(c10_determinism_and_speed());
    results.push(c11_dataset());

    let mut failed = 0;
    for r in &results {
        let tag = match r.pass {
            Some(true) => "PASS",
            Some(false) => {
                failed += 1;
                "FAIL"
            }
            None => "SKIP",
        };
        println!("{tag} {}: {}", r.id, r.detail);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
