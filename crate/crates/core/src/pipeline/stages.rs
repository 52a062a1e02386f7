use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::auction_log::{parse_log, partition_segments, write_log, IngestOptions, Panel, Schema, SegmentDimension};
use crate::decision::{
    catalog_size_scaling, decide, rule_comparison, simultaneous_bounds, tolerance_sweep, CatalogSizeStep,
    DecisionObject, PolicyBounds, RuleComparison, ToleranceStep,
};
use crate::policy_catalog::{build_catalog, fit_quantiles, spec_requires_quantiles, Catalog, QuantileSet};
use crate::replay::{with_workers, DailyBaseline, ReplayOptions, ReplaySummary};
use crate::segment_safety::{coverage_sensitivity, nonharm_certificate, segment_bounds, CoverageCount, SegmentCertificate};
use crate::support::{
    boundary_sweep, localization_error_bound, localized_selection, pairwise_boundary_matrix, ranking_certified,
    regret_bound, BoundCalculatorInputs, LocalizedLevel, PairwiseEntry,
};
use crate::synth::{generate_log, GeneratorConfig};
use crate::validation::{
    day_bootstrap, frozen_transfer, leader_and_runner_up, response_gap_threshold, BootstrapOptions, BootstrapRanking,
    BootstrapReport, BootstrapUnit, ResponseGapAssessment, TransferReport,
};

use super::report::render_report;
use super::{finite, read_json, write_json, write_text, PipelineError, Pipeline, RunConfig, Stage};

const PANEL_DEV: &str = "panel_dev.csv";
const PANEL_HOLDOUT: &str = "panel_holdout.csv";
const INGEST: &str = "ingest.json";
const QUANTILES: &str = "quantiles.json";
const REPLAY: &str = "replay.json";
const SEGMENTS: &str = "segments.json";
const SUPPORT: &str = "support.json";
const TRANSFER: &str = "transfer.json";
const BOOTSTRAP: &str = "bootstrap.json";
const DECISION: &str = "decision.json";
const MANIFEST: &str = "manifest.json";

const QUANTILE_METHOD: &str = "linear interpolation between order statistics of positive floors";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelInfo {
    pub source: String,
    pub rows_read: usize,
    pub dropped: usize,
    pub rows: usize,
    pub days: usize,
    pub fills: usize,
    pub fingerprint: String,
}

impl PanelInfo {
    fn new(source: String, panel: &Panel, rows_read: usize, dropped: usize) -> PanelInfo {
        PanelInfo {
            source,
            rows_read,
            dropped,
            rows: panel.n(),
            days: panel.days().len(),
            fills: panel.fills(),
            fingerprint: panel.fingerprint(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestArtifact {
    pub dev: PanelInfo,
    pub holdout: Option<PanelInfo>,
    /// Set when the source has no fill column and fills are inferred.
    pub fill_rule: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantileArtifact {
    pub required: bool,
    pub method: String,
    pub quantiles: QuantileSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayArtifact {
    pub dev_fingerprint: String,
    pub catalog_fingerprint: String,
    pub daily_baseline: DailyBaseline,
    pub catalog: Catalog,
    pub summaries: Vec<ReplaySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCoverage {
    pub policy_id: String,
    pub counts: Vec<CoverageCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentArtifact {
    pub dev_fingerprint: String,
    pub catalog_fingerprint: String,
    pub dimensions: Vec<SegmentDimension>,
    pub min_rows: usize,
    pub gap_bucket_edges: Vec<i64>,
    pub covered_segments: usize,
    pub certificates: Vec<SegmentCertificate>,
    pub coverage: Vec<PolicyCoverage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRow {
    pub policy_id: String,
    pub window_h: f64,
    pub n_boundary: usize,
    /// Null when the window is empty (infinite penalty).
    pub penalty: Option<f64>,
    pub penalized_lcb: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalculatorLevel {
    pub q: f64,
    /// Localization error per policy, catalog order.
    pub errors: Vec<(String, Option<f64>)>,
    pub regret_bound: Option<f64>,
    pub winner: String,
    pub runner_up: Option<String>,
    pub margin: Option<f64>,
    pub ranking_certified: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalculatorReport {
    pub inputs: BoundCalculatorInputs,
    pub response_eta: f64,
    pub levels: Vec<CalculatorLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportArtifact {
    pub dev_fingerprint: String,
    pub catalog_fingerprint: String,
    pub kappa: f64,
    pub h_grid: Vec<f64>,
    pub boundary: Vec<BoundaryRow>,
    pub localized: Vec<LocalizedLevel>,
    pub pairwise: Vec<PairwiseEntry>,
    pub calculator: CalculatorReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferArtifact {
    pub dev_fingerprint: String,
    pub catalog_fingerprint: String,
    pub holdout_fingerprint: Option<String>,
    pub skipped: Option<String>,
    pub report: Option<TransferReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapArtifact {
    pub dev_fingerprint: String,
    pub catalog_fingerprint: String,
    pub report: BootstrapReport,
}

/// Segment verdicts as carried in `decision.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderSegments {
    pub policy_id: String,
    pub certified: bool,
    pub k: usize,
    pub eta: Option<f64>,
    pub uniform_margin: Option<f64>,
    pub nonnegative_count: usize,
    pub uncovered: usize,
    pub reason: Option<String>,
    pub per_policy: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSummary {
    pub spearman: f64,
    pub k: usize,
    pub topk_overlap: usize,
    pub dev_leader: String,
    pub holdout_leader: String,
    pub leader_holdout_lift: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub draws: usize,
    pub seed: u64,
    pub unit: BootstrapUnit,
    pub ranking: BootstrapRanking,
    pub leader_frequency: f64,
    pub frequencies: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizedWinner {
    pub q: f64,
    pub winner: String,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportSummary {
    /// `(h, n_boundary)` for the leader.
    pub leader_boundary: Vec<(f64, usize)>,
    pub localized_winners: Vec<LocalizedWinner>,
}

/// Contents of `decision.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionReport {
    #[serde(flatten)]
    pub decision: DecisionObject,
    pub dev_fingerprint: String,
    pub catalog_fingerprint: String,
    pub segments: LeaderSegments,
    pub rule_comparison: RuleComparison,
    pub tolerance_sweep: Vec<ToleranceStep>,
    pub catalog_scaling: Vec<CatalogSizeStep>,
    pub response_gap: Option<ResponseGapAssessment>,
    pub transfer: Option<TransferSummary>,
    pub bootstrap: Option<BootstrapSummary>,
    pub support: Option<SupportSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub synth: Option<u64>,
    pub holdout: Option<u64>,
    pub bootstrap: u64,
    pub localized: u64,
}

/// Design choices that change results, recorded for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignFlags {
    pub quantile_method: String,
    pub replay_totals: String,
    pub price_resolution: String,
    pub daily_baseline: DailyBaseline,
    pub alpha: f64,
    pub lambda: f64,
    pub tolerance: f64,
    pub bonferroni_count: String,
    pub support_penalty: String,
    pub dominance_reference: String,
    pub certified_rule: String,
    pub margin_gate: String,
    pub hybrid_rule: String,
    pub segment_dimensions: Vec<SegmentDimension>,
    pub segment_min_rows: usize,
    pub segment_count: String,
    pub l_s: f64,
    pub cover_radius: f64,
    pub bootstrap_unit: BootstrapUnit,
    pub bootstrap_ranking: BootstrapRanking,
    pub bootstrap_draws: usize,
    pub localized_draws: usize,
    pub kappa: f64,
    pub strict_ingest: Option<bool>,
    pub fill_rule: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub seeds: Seeds,
    pub design: DesignFlags,
    pub dev: Option<PanelInfo>,
    pub holdout: Option<PanelInfo>,
    pub stages: Vec<Stage>,
}

/// SHA-256 of the effective configuration, output directory excluded.
pub fn config_hash(config: &RunConfig) -> String {
    let mut c = config.clone();
    c.out_dir = None;
    let json = serde_json::to_vec(&c).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

pub(super) fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String, PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fmt = |e: csv::Error| PipelineError::Format { path: "csv".into(), message: e.to_string() };
    w.write_record(header).map_err(fmt)?;
    for r in rows {
        w.write_record(&r).map_err(fmt)?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::Format { path: "csv".into(), message: e.to_string() })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}


fn stale(file: &str, requires: Stage) -> PipelineError {
    PipelineError::Stale { file: file.into(), requires }
}

impl Pipeline {
    fn replay_options(&self) -> ReplayOptions {
        ReplayOptions { daily_baseline: self.config.decision.daily_baseline, workers: self.workers }
    }

    fn ingest_info(&self) -> Result<IngestArtifact, PipelineError> {
        read_json(&self.path(INGEST), Stage::Ingest)
    }

    fn load_panel(&self, file: &str) -> Result<Panel, PipelineError> {
        let path = self.path(file);
        if !path.exists() {
            return Err(PipelineError::Dependency { file: file.into(), requires: Stage::Ingest });
        }
        Ok(parse_log(&path, &Schema::standard(), IngestOptions::default())?.panel)
    }

    /// The frozen catalog for the current dev panel.
    fn catalog(&self, dev: &PanelInfo) -> Result<Catalog, PipelineError> {
        let quantiles = if spec_requires_quantiles(&self.config.catalog)? {
            let q: QuantileArtifact = read_json(&self.path(QUANTILES), Stage::FitQuantiles)?;
            if q.quantiles.source_panel_id != dev.fingerprint {
                return Err(stale(QUANTILES, Stage::FitQuantiles));
            }
            Some(q.quantiles)
        } else {
            None
        };
        Ok(build_catalog(&self.config.catalog, quantiles)?)
    }

    fn replay_artifact(&self, dev: &PanelInfo, catalog: &Catalog) -> Result<ReplayArtifact, PipelineError> {
        let r: ReplayArtifact = read_json(&self.path(REPLAY), Stage::Replay)?;
        if r.dev_fingerprint != dev.fingerprint || r.catalog_fingerprint != catalog.fingerprint() {
            return Err(stale(REPLAY, Stage::Replay));
        }
        Ok(r)
    }

    fn bounds(&self, summaries: &[ReplaySummary]) -> Result<Vec<PolicyBounds>, PipelineError> {
        let d = &self.config.decision;
        Ok(simultaneous_bounds(summaries, d.alpha, d.lambda)?)
    }

    fn write_panels(
        &self,
        dev: (&Panel, PanelInfo),
        holdout: Option<(&Panel, PanelInfo)>,
        fill_rule: Option<String>,
    ) -> Result<(), PipelineError> {
        std::fs::create_dir_all(self.out_dir()).map_err(|e| super::io_err(self.out_dir(), e))?;
        write_log(dev.0, &self.path(PANEL_DEV))?;
        let holdout_info = match holdout {
            Some((panel, info)) => {
                write_log(panel, &self.path(PANEL_HOLDOUT))?;
                Some(info)
            }
            None => {
                let p = self.path(PANEL_HOLDOUT);
                if p.exists() {
                    std::fs::remove_file(&p).map_err(|e| super::io_err(&p, e))?;
                }
                None
            }
        };
        write_json(&self.path(INGEST), &IngestArtifact { dev: dev.1, holdout: holdout_info, fill_rule })
    }

    pub(super) fn ingest(&self) -> Result<(), PipelineError> {
        let Some(input) = &self.config.input else {
            return self.synth_stage();
        };
        let schema = input.schema.resolve()?;
        let options = input.ingest_options()?;
        let load = |path: &Path| -> Result<(Panel, PanelInfo), PipelineError> {
            let ing = parse_log(path, &schema, options)?;
            let info = PanelInfo::new(path.display().to_string(), &ing.panel, ing.rows_read, ing.dropped);
            Ok((ing.panel, info))
        };
        let dev = load(&input.dev)?;
        let holdout = input.holdout.as_deref().map(load).transpose()?;
        let fill_rule = schema.filled.is_none().then(|| "filled = payment > 0".to_string());
        self.write_panels((&dev.0, dev.1), holdout.as_ref().map(|(p, i)| (p, i.clone())), fill_rule)
    }

    pub(super) fn synth_stage(&self) -> Result<(), PipelineError> {
        let Some(g) = &self.config.synth else {
            return Err(PipelineError::Config("the synth stage needs a [synth] section".into()));
        };
        let generate = |cfg: &GeneratorConfig| -> Result<(Panel, PanelInfo), PipelineError> {
            let panel = with_workers(self.workers, || generate_log(cfg))??;
            let info = PanelInfo::new(format!("synth seed {}", cfg.seed), &panel, panel.n(), 0);
            Ok((panel, info))
        };
        let dev = generate(g)?;
        let holdout = match self.config.holdout_seed() {
            Some(seed) => Some(generate(&GeneratorConfig { seed, ..g.clone() })?),
            None => None,
        };
        self.write_panels((&dev.0, dev.1), holdout.as_ref().map(|(p, i)| (p, i.clone())), None)
    }

    pub(super) fn fit_quantiles(&self) -> Result<(), PipelineError> {
        let required = spec_requires_quantiles(&self.config.catalog)?;
        let panel = self.load_panel(PANEL_DEV)?;
        let quantiles = match fit_quantiles(&panel) {
            Ok(q) => q,
            Err(e) if required => return Err(e.into()),
            Err(_) => QuantileSet { source_panel_id: panel.fingerprint(), ..QuantileSet::unused() },
        };
        write_json(&self.path(QUANTILES), &QuantileArtifact { required, method: QUANTILE_METHOD.into(), quantiles })
    }

    pub(super) fn replay(&self) -> Result<(), PipelineError> {
        let info = self.ingest_info()?;
        let catalog = self.catalog(&info.dev)?;
        let panel = self.load_panel(PANEL_DEV)?;
        let summaries = crate::replay::replay_catalog(&panel, &catalog, None, self.replay_options())?;
        let rows = summaries.iter().zip(&catalog.policies).map(|(s, p)| {
            vec![
                s.policy_id.clone(),
                p.name.clone(),
                p.rule.family().as_str().to_string(),
                s.lift.to_string(),
                s.retained_share.to_string(),
                s.mean_yield.to_string(),
                s.baseline_mean_yield.to_string(),
                s.fills.to_string(),
                s.retained.to_string(),
                s.daily_lifts.len().to_string(),
            ]
        });
        let header = [
            "policy_id",
            "name",
            "family",
            "lift",
            "retained_share",
            "mean_yield",
            "baseline_mean_yield",
            "fills",
            "retained",
            "active_days",
        ];
        write_text(&self.path("replay_table.csv"), &csv_text(&header, rows)?)?;
        write_json(
            &self.path(REPLAY),
            &ReplayArtifact {
                dev_fingerprint: info.dev.fingerprint,
                catalog_fingerprint: catalog.fingerprint(),
                daily_baseline: self.config.decision.daily_baseline,
                catalog,
                summaries,
            },
        )
    }

    pub(super) fn segment_safety(&self) -> Result<(), PipelineError> {
        let info = self.ingest_info()?;
        let catalog = self.catalog(&info.dev)?;
        let panel = self.load_panel(PANEL_DEV)?;
        let s = &self.config.segments;
        let map = partition_segments(&panel, &s.dimensions, s.min_rows, &s.gap_bucket_edges)?;
        let alpha = self.config.decision.alpha;
        let (certificates, coverage) = with_workers(self.workers, || -> Result<_, PipelineError> {
            let mut certificates = Vec::new();
            let mut coverage = Vec::new();
            for policy in catalog.candidates() {
                let bounds = segment_bounds(&panel, policy, &catalog.quantiles, &map, alpha)?;
                coverage.push(PolicyCoverage {
                    policy_id: policy.id.clone(),
                    counts: coverage_sensitivity(&bounds.lcbs(), s.l_s, &s.radius_grid)?,
                });
                certificates.push(nonharm_certificate(&bounds, s.l_s, s.cover_radius)?);
            }
            Ok((certificates, coverage))
        })??;

        let mut rows = Vec::new();
        for c in &certificates {
            for b in &c.segments {
                rows.push(vec![
                    c.policy_id.clone(),
                    b.key.dimension.to_string(),
                    b.key.value.clone(),
                    "covered".into(),
                    b.n.to_string(),
                    b.days.to_string(),
                    b.lift_hat.to_string(),
                    b.se.to_string(),
                    b.lcb.to_string(),
                    b.lcb_unadjusted.to_string(),
                    String::new(),
                ]);
            }
            for u in &c.uncovered {
                rows.push(vec![
                    c.policy_id.clone(),
                    u.key.dimension.to_string(),
                    u.key.value.clone(),
                    "uncovered".into(),
                    u.n.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    u.reason.clone(),
                ]);
            }
        }
        let header =
            ["policy_id", "dimension", "value", "status", "n", "days", "lift_hat", "se", "lcb", "lcb_unadjusted", "reason"];
        write_text(&self.path("segments.csv"), &csv_text(&header, rows)?)?;
        write_json(
            &self.path(SEGMENTS),
            &SegmentArtifact {
                dev_fingerprint: info.dev.fingerprint,
                catalog_fingerprint: catalog.fingerprint(),
                dimensions: s.dimensions.clone(),
                min_rows: s.min_rows,
                gap_bucket_edges: s.gap_bucket_edges.clone(),
                covered_segments: map.covered_count(),
                certificates,
                coverage,
            },
        )
    }

    pub(super) fn diagnose_support(&self) -> Result<(), PipelineError> {
        let info = self.ingest_info()?;
        let catalog = self.catalog(&info.dev)?;
        let replay = self.replay_artifact(&info.dev, &catalog)?;
        let bounds = self.bounds(&replay.summaries)?;
        let panel = self.load_panel(PANEL_DEV)?;
        let sc = &self.config.support;
        let seed = self.config.bootstrap.seed;

        let (sweep, localized, pairwise) = with_workers(self.workers, || -> Result<_, PipelineError> {
            let sweep = boundary_sweep(&panel, &catalog, &sc.h_grid, sc.kappa, &bounds)?;
            let localized = localized_selection(&panel, &catalog, &sc.q_grid, sc.localized_draws, seed)?;
            Ok((sweep, localized, pairwise_boundary_matrix(&panel, &catalog)))
        })??;

        let boundary: Vec<BoundaryRow> = sweep
            .iter()
            .map(|d| BoundaryRow {
                policy_id: d.policy_id.clone(),
                window_h: d.window_h,
                n_boundary: d.n_boundary,
                penalty: finite(d.penalty),
                penalized_lcb: finite(d.penalized_lcb),
            })
            .collect();

        let baseline = &replay.summaries[0];
        let max_bid = panel.rows().iter().map(|r| r.bid).max().unwrap_or(0) as f64;
        let segs = &self.config.segments;
        let inputs = sc.calculator.resolve(
            max_bid,
            baseline.baseline_mean_yield,
            panel.n() as f64,
            catalog.len(),
            segs.l_s,
            segs.cover_radius,
        );
        let levels = localized
            .iter()
            .map(|level| {
                let eps: BTreeMap<&str, f64> = level
                    .estimates
                    .iter()
                    .map(|e| (e.policy_id.as_str(), localization_error_bound(&inputs, e.boundary_mass, e.radius)))
                    .collect();
                let pairs: Vec<(f64, f64)> = level.estimates.iter().map(|e| (e.boundary_mass, e.radius)).collect();
                let lift = |id: &str| level.estimates.iter().find(|e| e.policy_id == id).map(|e| e.localized_lift);
                let runner_up = level.ranking.get(1).cloned();
                let margin = runner_up.as_deref().and_then(|r| Some(lift(&level.winner)? - lift(r)?));
                let certified = runner_up.as_deref().zip(margin).map(|(r, m)| {
                    ranking_certified(m, eps[level.winner.as_str()], eps[r], sc.response_eta, inputs.mu0)
                });
                CalculatorLevel {
                    q: level.q,
                    errors: level.estimates.iter().map(|e| (e.policy_id.clone(), finite(eps[e.policy_id.as_str()]))).collect(),
                    regret_bound: if pairs.is_empty() { None } else { finite(regret_bound(&inputs, &pairs)) },
                    winner: level.winner.clone(),
                    runner_up,
                    margin: margin.and_then(finite),
                    ranking_certified: certified,
                }
            })
            .collect();

        let sweep_rows = boundary.iter().map(|b| {
            vec![
                b.policy_id.clone(),
                b.window_h.to_string(),
                b.n_boundary.to_string(),
                b.penalty.map_or("inf".into(), |x| x.to_string()),
                b.penalized_lcb.map_or("-inf".into(), |x| x.to_string()),
            ]
        });
        write_text(
            &self.path("boundary_sweep.csv"),
            &csv_text(&["policy_id", "window_h", "n_boundary", "penalty", "penalized_lcb"], sweep_rows)?,
        )?;
        let mut loc_rows = Vec::new();
        for level in &localized {
            for e in &level.estimates {
                let rank = level.ranking.iter().position(|id| *id == e.policy_id).map_or(0, |p| p + 1);
                loc_rows.push(vec![
                    e.policy_id.clone(),
                    e.q.to_string(),
                    e.radius.to_string(),
                    e.boundary_mass.to_string(),
                    e.localized_lift.to_string(),
                    e.n_contrast.to_string(),
                    rank.to_string(),
                    level.winner_frequency.get(&e.policy_id).copied().unwrap_or(0.0).to_string(),
                ]);
            }
        }
        write_text(
            &self.path("localized.csv"),
            &csv_text(
                &["policy_id", "q", "radius", "boundary_mass", "localized_lift", "n_contrast", "rank", "winner_frequency"],
                loc_rows,
            )?,
        )?;
        write_json(
            &self.path(SUPPORT),
            &SupportArtifact {
                dev_fingerprint: info.dev.fingerprint,
                catalog_fingerprint: catalog.fingerprint(),
                kappa: sc.kappa,
                h_grid: sc.h_grid.clone(),
                boundary,
                localized,
                pairwise,
                calculator: CalculatorReport { inputs, response_eta: sc.response_eta, levels },
            },
        )
    }

    pub(super) fn transfer(&self) -> Result<(), PipelineError> {
        let info = self.ingest_info()?;
        let catalog = self.catalog(&info.dev)?;
        let replay = self.replay_artifact(&info.dev, &catalog)?;
        let header = ["policy_id", "dev_lift", "holdout_lift", "holdout_retained_share"];
        let artifact = match &info.holdout {
            None => {
                write_text(&self.path("transfer.csv"), &csv_text(&header, Vec::new())?)?;
                TransferArtifact {
                    dev_fingerprint: info.dev.fingerprint,
                    catalog_fingerprint: catalog.fingerprint(),
                    holdout_fingerprint: None,
                    skipped: Some("no holdout panel configured".into()),
                    report: None,
                }
            }
            Some(h) => {
                let holdout = self.load_panel(PANEL_HOLDOUT)?;
                let report =
                    frozen_transfer(&catalog, &holdout, &replay.summaries, self.config.transfer.top_k, self.replay_options())?;
                let rows = report.rows.iter().map(|r| {
                    vec![
                        r.policy_id.clone(),
                        r.dev_lift.to_string(),
                        r.holdout_lift.to_string(),
                        r.holdout_retained_share.to_string(),
                    ]
                });
                write_text(&self.path("transfer.csv"), &csv_text(&header, rows)?)?;
                TransferArtifact {
                    dev_fingerprint: info.dev.fingerprint,
                    catalog_fingerprint: catalog.fingerprint(),
                    holdout_fingerprint: Some(h.fingerprint.clone()),
                    skipped: None,
                    report: Some(report),
                }
            }
        };
        write_json(&self.path(TRANSFER), &artifact)
    }

    pub(super) fn bootstrap(&self) -> Result<(), PipelineError> {
        let info = self.ingest_info()?;
        let catalog = self.catalog(&info.dev)?;
        let panel = self.load_panel(PANEL_DEV)?;
        let b = &self.config.bootstrap;
        let options = BootstrapOptions {
            draws: b.draws,
            seed: b.seed,
            unit: b.unit,
            ranking: b.ranking,
            alpha: self.config.decision.alpha,
            lambda: self.config.decision.lambda,
        };
        let report = with_workers(self.workers, || day_bootstrap(&panel, &catalog, options))??;
        write_json(
            &self.path(BOOTSTRAP),
            &BootstrapArtifact { dev_fingerprint: info.dev.fingerprint, catalog_fingerprint: catalog.fingerprint(), report },
        )
    }

    /// Reads an optional diagnostic; present but stale is an error.
    fn optional<T: serde::de::DeserializeOwned>(
        &self,
        file: &str,
        requires: Stage,
        fingerprints: impl Fn(&T) -> (&str, &str),
        dev: &str,
        catalog: &str,
    ) -> Result<Option<T>, PipelineError> {
        if !self.path(file).exists() {
            return Ok(None);
        }
        let value: T = read_json(&self.path(file), requires)?;
        let (d, c) = fingerprints(&value);
        if d != dev || c != catalog {
            return Err(stale(file, requires));
        }
        Ok(Some(value))
    }

    pub(super) fn decide(&self) -> Result<(), PipelineError> {
        let info = self.ingest_info()?;
        let catalog = self.catalog(&info.dev)?;
        let replay = self.replay_artifact(&info.dev, &catalog)?;
        let fp = catalog.fingerprint();
        let dev_fp = info.dev.fingerprint.as_str();
        let segments: SegmentArtifact = read_json(&self.path(SEGMENTS), Stage::SegmentSafety)?;
        if segments.dev_fingerprint != dev_fp || segments.catalog_fingerprint != fp {
            return Err(stale(SEGMENTS, Stage::SegmentSafety));
        }
        let d = &self.config.decision;
        let bounds = self.bounds(&replay.summaries)?;
        let pass: BTreeMap<String, bool> =
            segments.certificates.iter().map(|c| (c.policy_id.clone(), c.certified)).collect();
        let decision = decide(&bounds, d.tolerance, &pass)?;

        let leader_cert = segments
            .certificates
            .iter()
            .find(|c| c.policy_id == decision.leader)
            .ok_or_else(|| stale(SEGMENTS, Stage::SegmentSafety))?;
        let leader_segments = LeaderSegments {
            policy_id: leader_cert.policy_id.clone(),
            certified: leader_cert.certified,
            k: leader_cert.k,
            eta: leader_cert.eta,
            uniform_margin: leader_cert.uniform_margin,
            nonnegative_count: leader_cert.nonnegative_count,
            uncovered: leader_cert.uncovered.len(),
            reason: leader_cert.reason.clone(),
            per_policy: pass.clone(),
        };

        let response_gap = match leader_and_runner_up(&replay.summaries) {
            Some((a, b)) => Some(response_gap_threshold(a.lift, b.lift)?),
            None => None,
        };

        let transfer = self
            .optional::<TransferArtifact>(TRANSFER, Stage::Transfer, |t| (&t.dev_fingerprint, &t.catalog_fingerprint), dev_fp, &fp)?
            .and_then(|t| t.report)
            .map(|r| TransferSummary {
                spearman: r.spearman,
                k: r.k,
                topk_overlap: r.topk_overlap,
                dev_leader: r.dev_leader.clone(),
                holdout_leader: r.holdout_leader.clone(),
                leader_holdout_lift: r.rows.iter().find(|x| x.policy_id == decision.leader).map(|x| x.holdout_lift),
            });
        let bootstrap = self
            .optional::<BootstrapArtifact>(
                BOOTSTRAP,
                Stage::Bootstrap,
                |b| (&b.dev_fingerprint, &b.catalog_fingerprint),
                dev_fp,
                &fp,
            )?
            .map(|b| BootstrapSummary {
                draws: b.report.options.draws,
                seed: b.report.options.seed,
                unit: b.report.options.unit,
                ranking: b.report.options.ranking,
                leader_frequency: b.report.frequency_map().get(&decision.leader).copied().unwrap_or(0.0),
                frequencies: b.report.frequencies,
            });
        let support = self
            .optional::<SupportArtifact>(SUPPORT, Stage::DiagnoseSupport, |s| (&s.dev_fingerprint, &s.catalog_fingerprint), dev_fp, &fp)?
            .map(|s| SupportSummary {
                leader_boundary: s
                    .boundary
                    .iter()
                    .filter(|b| b.policy_id == decision.leader)
                    .map(|b| (b.window_h, b.n_boundary))
                    .collect(),
                localized_winners: s
                    .localized
                    .iter()
                    .map(|l| LocalizedWinner {
                        q: l.q,
                        winner: l.winner.clone(),
                        frequency: l.winner_frequency.get(&l.winner).copied().unwrap_or(0.0),
                    })
                    .collect(),
            });

        let report = DecisionReport {
            rule_comparison: rule_comparison(&decision),
            tolerance_sweep: tolerance_sweep(&bounds, &d.tolerance_grid, &pass)?,
            catalog_scaling: catalog_size_scaling(&replay.summaries, d.alpha, d.lambda, &d.catalog_sizes)?,
            decision,
            dev_fingerprint: dev_fp.to_string(),
            catalog_fingerprint: fp,
            segments: leader_segments,
            response_gap,
            transfer,
            bootstrap,
            support,
        };
        write_json(&self.path(DECISION), &report)
    }

    pub(super) fn report(&self) -> Result<(), PipelineError> {
        let decision: DecisionReport = read_json(&self.path(DECISION), Stage::Decide)?;
        let rendered = render_report(&decision)?;
        write_text(&self.path("report.txt"), &rendered.text)?;
        for (name, body) in &rendered.tables {
            write_text(&self.path(name), body)?;
        }
        Ok(())
    }

    fn manifest(&self, stages: Vec<Stage>) -> Result<Manifest, PipelineError> {
        let c = &self.config;
        let info = if self.path(INGEST).exists() { Some(self.ingest_info()?) } else { None };
        let design = DesignFlags {
            quantile_method: QUANTILE_METHOD.into(),
            replay_totals: "exact integer totals per day, reduced in day order".into(),
            price_resolution: "1e-4 minor units".into(),
            daily_baseline: c.decision.daily_baseline,
            alpha: c.decision.alpha,
            lambda: c.decision.lambda,
            tolerance: c.decision.tolerance,
            bonferroni_count: "every catalog policy, baseline included".into(),
            support_penalty: "lambda * (1 - retained_share)".into(),
            dominance_reference: "leader support-adjusted lower bound minus tolerance".into(),
            certified_rule: "lower-bound leader only, positive support-adjusted bound and segment certificate".into(),
            margin_gate: "bid minus logged floor".into(),
            hybrid_rule: "max(logged floor, quantile) when the gate passes".into(),
            segment_dimensions: c.segments.dimensions.clone(),
            segment_min_rows: c.segments.min_rows,
            segment_count: "covered segments with a defined lift and at least two active days".into(),
            l_s: c.segments.l_s,
            cover_radius: c.segments.cover_radius,
            bootstrap_unit: c.bootstrap.unit,
            bootstrap_ranking: c.bootstrap.ranking,
            bootstrap_draws: c.bootstrap.draws,
            localized_draws: c.support.localized_draws,
            kappa: c.support.kappa,
            strict_ingest: c.input.as_ref().map(|i| i.strict),
            fill_rule: info.as_ref().and_then(|i| i.fill_rule.clone()),
        };
        Ok(Manifest {
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config_hash(c),
            seeds: Seeds {
                synth: c.synth.as_ref().map(|g| g.seed),
                holdout: c.holdout_seed(),
                bootstrap: c.bootstrap.seed,
                localized: c.bootstrap.seed,
            },
            design,
            dev: info.as_ref().map(|i| i.dev.clone()),
            holdout: info.and_then(|i| i.holdout),
            stages,
        })
    }

    /// Adds `stage` to the manifest. Stages recorded under another config are dropped.
    pub(super) fn record_stage(&self, stage: Stage) -> Result<(), PipelineError> {
        let path = self.path(MANIFEST);
        let hash = config_hash(&self.config);
        let mut stages = match read_json::<Manifest>(&path, stage) {
            Ok(m) if m.config_hash == hash => m.stages,
            _ => Vec::new(),
        };
        stages.push(stage);
        stages.sort();
        stages.dedup();
        write_json(&path, &self.manifest(stages)?)
    }
}
