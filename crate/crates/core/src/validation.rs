//! Frozen out-of-time transfer, rank agreement and bootstrap stability.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auction_log::Panel;
use crate::policy_catalog::Catalog;
use crate::replay::{replay_catalog, replay_row, ReplayError, ReplayOptions, ReplaySummary};
use crate::stats::{bonferroni_z, draw_rng, mean, resample_day_counts, sample_sd, StatsError};

#[derive(Debug, Error, PartialEq)]
pub enum ValidationError {
    #[error("catalog quantiles are not frozen; refusing to refit on the holdout")]
    UnfrozenQuantiles,
    #[error("rank vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("at least two values are needed for a rank correlation")]
    TooShort,
    #[error("rank correlation is undefined for a constant vector")]
    ConstantRanks,
    #[error("bootstrap needs at least 2 days, panel has {0}")]
    TooFewDays(usize),
    #[error("bootstrap needs at least one draw")]
    Draws,
    #[error("leader lift {leader} is below runner-up lift {runner_up}")]
    Order { leader: f64, runner_up: f64 },
    #[error("development summaries do not match the catalog")]
    SummaryMismatch,
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Average ranks (1-based); ties share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64, ValidationError> {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(ValidationError::ConstantRanks);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation: Pearson on average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64, ValidationError> {
    if a.len() != b.len() {
        return Err(ValidationError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(ValidationError::TooShort);
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Indices of the `k` largest values; ties go to the lower index.
pub fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Size of the intersection of the two top-`k` sets (positions are catalog order).
pub fn topk_overlap(a: &[f64], b: &[f64], k: usize) -> usize {
    let ta = top_k(a, k);
    top_k(b, k).iter().filter(|i| ta.contains(i)).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub policy_id: String,
    pub dev_lift: f64,
    pub holdout_lift: f64,
    pub holdout_retained_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub rows: Vec<TransferRow>,
    pub spearman: f64,
    pub k: usize,
    pub topk_overlap: usize,
    pub dev_leader: String,
    pub holdout_leader: String,
    pub catalog_fingerprint: String,
}

/// Replays the unchanged catalog on a later panel and compares rankings
/// over the non-baseline policies.
pub fn frozen_transfer(
    catalog: &Catalog,
    holdout: &Panel,
    dev_summaries: &[ReplaySummary],
    k: usize,
    options: ReplayOptions,
) -> Result<TransferReport, ValidationError> {
    if !catalog.quantiles.frozen {
        return Err(ValidationError::UnfrozenQuantiles);
    }
    if dev_summaries.len() != catalog.len()
        || dev_summaries.iter().zip(&catalog.policies).any(|(s, p)| s.policy_id != p.id)
    {
        return Err(ValidationError::SummaryMismatch);
    }
    let fingerprint = catalog.fingerprint();
    let holdout_summaries = replay_catalog(holdout, catalog, None, options)?;
    let rows: Vec<TransferRow> = dev_summaries
        .iter()
        .zip(&holdout_summaries)
        .filter(|(d, _)| !d.is_baseline)
        .map(|(d, h)| TransferRow {
            policy_id: d.policy_id.clone(),
            dev_lift: d.lift,
            holdout_lift: h.lift,
            holdout_retained_share: h.retained_share,
        })
        .collect();
    let dev: Vec<f64> = rows.iter().map(|r| r.dev_lift).collect();
    let hold: Vec<f64> = rows.iter().map(|r| r.holdout_lift).collect();
    let k = k.min(rows.len());
    debug_assert_eq!(fingerprint, catalog.fingerprint());
    Ok(TransferReport {
        spearman: spearman(&dev, &hold)?,
        k,
        topk_overlap: topk_overlap(&dev, &hold, k),
        dev_leader: rows[top_k(&dev, 1)[0]].policy_id.clone(),
        holdout_leader: rows[top_k(&hold, 1)[0]].policy_id.clone(),
        rows,
        catalog_fingerprint: fingerprint,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BootstrapUnit {
    #[default]
    Day,
    Row,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BootstrapRanking {
    #[default]
    FullReplay,
    /// Support-adjusted simultaneous lower bound, recomputed per draw.
    Lcb,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub draws: usize,
    pub seed: u64,
    pub unit: BootstrapUnit,
    pub ranking: BootstrapRanking,
    /// Used by the lower-bound ranking only.
    pub alpha: f64,
    pub lambda: f64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions { draws: 1000, seed: 0, unit: BootstrapUnit::Day, ranking: BootstrapRanking::FullReplay, alpha: 0.05, lambda: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    #[serde(flatten)]
    pub options: BootstrapOptions,
    /// Winner share per non-baseline policy, catalog order.
    pub frequencies: Vec<(String, f64)>,
    pub winners: Vec<String>,
}

impl BootstrapReport {
    pub fn frequency_map(&self) -> BTreeMap<String, f64> {
        self.frequencies.iter().cloned().collect()
    }
}

/// Per-policy, per-day exact totals: (yield, baseline, fills, retained).
#[derive(Clone, Copy, Default)]
struct Cell {
    y: i128,
    b: i128,
    fills: u64,
    kept: u64,
}

impl Cell {
    fn add_weighted(&mut self, o: &Cell, w: u64) {
        self.y += o.y * w as i128;
        self.b += o.b * w as i128;
        self.fills += o.fills * w;
        self.kept += o.kept * w;
    }
}

fn row_cell(row: &crate::AuctionRow, cand: crate::Price) -> Cell {
    Cell {
        y: replay_row(row, cand).raw() as i128,
        b: replay_row(row, row.floor_price()).raw() as i128,
        fills: row.filled as u64,
        kept: (row.filled && row.bid_price() >= cand) as u64,
    }
}

/// Score of one policy on one resample: lift, or support-adjusted lower bound.
fn score(days: &[(Cell, u64)], ranking: BootstrapRanking, z: f64, lambda: f64) -> Option<f64> {
    let mut total = Cell::default();
    for (c, w) in days {
        total.add_weighted(c, *w);
    }
    if total.b <= 0 {
        return None;
    }
    let lift = (total.y - total.b) as f64 / total.b as f64;
    match ranking {
        BootstrapRanking::FullReplay => Some(lift),
        BootstrapRanking::Lcb => {
            let mut daily = Vec::new();
            for (c, w) in days.iter().filter(|(c, _)| c.b > 0) {
                let l = (c.y - c.b) as f64 / c.b as f64;
                daily.extend(std::iter::repeat_n(l, *w as usize));
            }
            let se = sample_sd(&daily)? / (daily.len() as f64).sqrt();
            let r = if total.fills == 0 { 1.0 } else { total.kept as f64 / total.fills as f64 };
            Some(lift - z * se - lambda * (1.0 - r))
        }
    }
}

fn argmax_first(scores: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(s) = *s {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Winner frequencies under resampling of days (default) or rows.
///
/// Each draw uses its own ChaCha8 stream keyed by `(seed, draw)`. Draws in
/// which no policy has a defined score are dropped from the denominator.
pub fn day_bootstrap(panel: &Panel, catalog: &Catalog, options: BootstrapOptions) -> Result<BootstrapReport, ValidationError> {
    let n_days = panel.days().len();
    if n_days < 2 {
        return Err(ValidationError::TooFewDays(n_days));
    }
    if options.draws == 0 {
        return Err(ValidationError::Draws);
    }
    let candidates = catalog.candidates();
    let z = match options.ranking {
        BootstrapRanking::Lcb => bonferroni_z(options.alpha, catalog.len())?,
        BootstrapRanking::FullReplay => 0.0,
    };

    let winners: Vec<Option<usize>> = match options.unit {
        BootstrapUnit::Day => {
            let cells: Vec<Vec<Cell>> = candidates
                .par_iter()
                .map(|p| {
                    let mut per_day = vec![Cell::default(); n_days];
                    for (i, r) in panel.rows().iter().enumerate() {
                        per_day[panel.day_index(i)].add_weighted(&row_cell(r, catalog.candidate_floor(p, r)), 1);
                    }
                    per_day
                })
                .collect();
            (0..options.draws as u64)
                .into_par_iter()
                .map(|d| {
                    let w = resample_day_counts(&mut draw_rng(options.seed, d), n_days);
                    let scores: Vec<Option<f64>> = cells
                        .iter()
                        .map(|days| {
                            let drawn: Vec<(Cell, u64)> =
                                days.iter().zip(&w).filter(|(_, &k)| k > 0).map(|(c, &k)| (*c, k as u64)).collect();
                            score(&drawn, options.ranking, z, options.lambda)
                        })
                        .collect();
                    argmax_first(&scores)
                })
                .collect()
        }
        BootstrapUnit::Row => {
            let cells: Vec<Vec<Cell>> = candidates
                .par_iter()
                .map(|p| panel.rows().iter().map(|r| row_cell(r, catalog.candidate_floor(p, r))).collect())
                .collect();
            let n = panel.n();
            (0..options.draws as u64)
                .into_par_iter()
                .map(|d| {
                    let mut rng = draw_rng(options.seed, d);
                    let mut counts = vec![0u32; n];
                    for _ in 0..n {
                        counts[rng.random_range(0..n)] += 1;
                    }
                    let scores: Vec<Option<f64>> = cells
                        .iter()
                        .map(|rows| {
                            let mut per_day = vec![(Cell::default(), 1u64); n_days];
                            let mut present = vec![false; n_days];
                            for (i, c) in rows.iter().enumerate().filter(|(i, _)| counts[*i] > 0) {
                                let day = panel.day_index(i);
                                per_day[day].0.add_weighted(c, counts[i] as u64);
                                present[day] = true;
                            }
                            let drawn: Vec<(Cell, u64)> =
                                per_day.into_iter().zip(present).filter(|(_, p)| *p).map(|(c, _)| c).collect();
                            score(&drawn, options.ranking, z, options.lambda)
                        })
                        .collect();
                    argmax_first(&scores)
                })
                .collect()
        }
    };

    let mut counts = vec![0usize; candidates.len()];
    for i in winners.iter().flatten() {
        counts[*i] += 1;
    }
    let used: usize = counts.iter().sum();
    Ok(BootstrapReport {
        options,
        frequencies: candidates
            .iter()
            .zip(&counts)
            .map(|(p, &c)| (p.id.clone(), if used == 0 { 0.0 } else { c as f64 / used as f64 }))
            .collect(),
        winners: winners.iter().map(|w| w.map(|i| candidates[i].id.clone()).unwrap_or_default()).collect(),
    })
}

/// Planning diagnostic: how large a symmetric live response gap the
/// replay ranking tolerates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseGapAssessment {
    pub margin: f64,
    pub threshold: f64,
    pub interpretation: String,
}

pub fn response_gap_threshold(leader_lift: f64, runner_up_lift: f64) -> Result<ResponseGapAssessment, ValidationError> {
    if leader_lift < runner_up_lift {
        return Err(ValidationError::Order { leader: leader_lift, runner_up: runner_up_lift });
    }
    let margin = leader_lift - runner_up_lift;
    let threshold = margin / 2.0;
    Ok(ResponseGapAssessment {
        margin,
        threshold,
        interpretation: format!(
            "planning diagnostic: the replay ranking is preserved when the pairwise response gap, relative to baseline yield, stays below {threshold:.6}"
        ),
    })
}

/// Leader and runner-up by lift among non-baseline summaries.
pub fn leader_and_runner_up(summaries: &[ReplaySummary]) -> Option<(&ReplaySummary, &ReplaySummary)> {
    let cands: Vec<&ReplaySummary> = summaries.iter().filter(|s| !s.is_baseline).collect();
    let lifts: Vec<f64> = cands.iter().map(|s| s.lift).collect();
    let top = top_k(&lifts, 2);
    (top.len() == 2).then(|| (cands[top[0]], cands[top[1]]))
}
