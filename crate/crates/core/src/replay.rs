//! Fixed-bid replay.
//!
//! A row keeps its logged impression under a candidate floor only when it
//! was filled and the logged bid clears the new floor; the retained payment
//! is `max(payment, candidate)`. Bids, fills and participation are held at
//! their logged values.
//!
//! Yields are summed as exact integers (see [`crate::money`]), so totals do
//! not depend on the number of workers or on how rows are chunked. Lifts are
//! formed from those exact totals with a single floating-point division.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auction_log::{AuctionRow, Panel, SegmentKey, SegmentMap};
use crate::money::{Price, PRICE_SCALE};
use crate::policy_catalog::{candidate_floor, Catalog, Policy, QuantileSet};

const CHUNK_ROWS: usize = 1 << 15;

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("baseline yield is zero on {scope}; lift is undefined")]
    UndefinedLift { scope: String },
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

/// How daily lifts are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DailyBaseline {
    /// Each day's lift uses that day's baseline yield.
    #[default]
    DayLocal,
    /// Each day's mean yield is compared with the panel-wide baseline mean.
    Global,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReplayOptions {
    pub daily_baseline: DailyBaseline,
    /// Worker threads; `None` uses the global rayon pool.
    pub workers: Option<usize>,
}

/// Runs `f` on a pool with `workers` threads, or on the global pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, ReplayError> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| ReplayError::Pool(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Replay yield of one row under a candidate floor.
pub fn replay_row(row: &AuctionRow, candidate: Price) -> Price {
    if row.filled && row.bid_price() >= candidate {
        row.payment_price().max(candidate)
    } else {
        Price::ZERO
    }
}

/// Exact per-day accumulators for one policy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayTotals {
    pub rows: u64,
    pub fills: u64,
    pub retained: u64,
    /// Sum of replay yields, raw [`Price`] units.
    pub yield_raw: i128,
    /// Sum of logged-baseline yields, raw [`Price`] units.
    pub baseline_raw: i128,
}

impl DayTotals {
    fn add_row(&mut self, row: &AuctionRow, candidate: Price) {
        self.rows += 1;
        if row.filled {
            self.fills += 1;
            if row.bid_price() >= candidate {
                self.retained += 1;
            }
        }
        self.yield_raw += replay_row(row, candidate).raw() as i128;
        self.baseline_raw += replay_row(row, row.floor_price()).raw() as i128;
    }

    fn merge(&mut self, other: &DayTotals) {
        self.rows += other.rows;
        self.fills += other.fills;
        self.retained += other.retained;
        self.yield_raw += other.yield_raw;
        self.baseline_raw += other.baseline_raw;
    }

    pub fn sum<'a>(items: impl IntoIterator<Item = &'a DayTotals>) -> DayTotals {
        let mut acc = DayTotals::default();
        for t in items {
            acc.merge(t);
        }
        acc
    }

    /// `(yield - baseline) / baseline`, or `None` when the baseline is zero.
    pub fn lift(&self) -> Option<f64> {
        (self.baseline_raw > 0).then(|| lift_from_raw(self.yield_raw, self.baseline_raw))
    }
}

/// Relative lift from exact totals.
pub fn lift_from_raw(yield_raw: i128, baseline_raw: i128) -> f64 {
    (yield_raw - baseline_raw) as f64 / baseline_raw as f64
}

fn raw_to_minor(raw: i128) -> f64 {
    raw as f64 / PRICE_SCALE as f64
}

/// Per-day totals for one policy over the whole panel, in day order.
pub fn day_totals(panel: &Panel, policy: &Policy, quantiles: &QuantileSet) -> Vec<DayTotals> {
    let n_days = panel.days().len();
    let partials: Vec<Vec<DayTotals>> = panel
        .rows()
        .par_chunks(CHUNK_ROWS)
        .enumerate()
        .map(|(c, chunk)| {
            let mut acc = vec![DayTotals::default(); n_days];
            let offset = c * CHUNK_ROWS;
            for (j, row) in chunk.iter().enumerate() {
                let cand = candidate_floor(policy, row, quantiles);
                acc[panel.day_index(offset + j)].add_row(row, cand);
            }
            acc
        })
        .collect();
    let mut totals = vec![DayTotals::default(); n_days];
    for part in &partials {
        for (t, p) in totals.iter_mut().zip(part) {
            t.merge(p);
        }
    }
    totals
}

/// Per-day totals restricted to the given rows.
pub fn subset_day_totals(panel: &Panel, policy: &Policy, quantiles: &QuantileSet, rows: &[usize]) -> Vec<DayTotals> {
    let mut totals = vec![DayTotals::default(); panel.days().len()];
    for &i in rows {
        let row = &panel.rows()[i];
        totals[panel.day_index(i)].add_row(row, candidate_floor(policy, row, quantiles));
    }
    totals
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyLift {
    pub day: String,
    pub lift: f64,
    pub rows: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReplay {
    pub key: SegmentKey,
    pub n: usize,
    /// `None` when the segment's baseline yield is zero.
    pub lift: Option<f64>,
    pub mean_yield: f64,
    pub baseline_mean_yield: f64,
    /// Day-local lifts for days where the segment has positive baseline yield.
    pub daily_lifts: Vec<DailyLift>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub policy_id: String,
    pub is_baseline: bool,
    pub n: usize,
    /// Mean replay yield per opportunity, minor units.
    pub mean_yield: f64,
    pub baseline_mean_yield: f64,
    pub lift: f64,
    pub retained_share: f64,
    pub retained: u64,
    pub fills: u64,
    pub yield_raw: i128,
    pub baseline_raw: i128,
    pub daily_lifts: Vec<DailyLift>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_lifts: Option<Vec<SegmentReplay>>,
}

impl ReplaySummary {
    pub fn daily_lift_values(&self) -> Vec<f64> {
        self.daily_lifts.iter().map(|d| d.lift).collect()
    }

    pub fn is_baseline_identity(&self) -> bool {
        self.yield_raw == self.baseline_raw && self.retained == self.fills
    }
}

/// Day-local lifts for days with positive baseline yield.
pub fn active_daily_lifts(panel: &Panel, totals: &[DayTotals]) -> Vec<DailyLift> {
    totals
        .iter()
        .zip(panel.days())
        .filter_map(|(t, day)| t.lift().map(|lift| DailyLift { day: day.to_string(), lift, rows: t.rows }))
        .collect()
}

/// Replay restricted to one segment's rows.
pub fn segment_replay(
    panel: &Panel,
    policy: &Policy,
    quantiles: &QuantileSet,
    key: &SegmentKey,
    rows: &[usize],
) -> SegmentReplay {
    let totals = subset_day_totals(panel, policy, quantiles, rows);
    let all = DayTotals::sum(&totals);
    let n = rows.len();
    SegmentReplay {
        key: key.clone(),
        n,
        lift: all.lift(),
        mean_yield: raw_to_minor(all.yield_raw) / n as f64,
        baseline_mean_yield: raw_to_minor(all.baseline_raw) / n as f64,
        daily_lifts: active_daily_lifts(panel, &totals),
    }
}

fn summarize(
    panel: &Panel,
    policy: &Policy,
    totals: &[DayTotals],
    daily_baseline: DailyBaseline,
) -> Result<ReplaySummary, ReplayError> {
    let all = DayTotals::sum(totals);
    if all.baseline_raw <= 0 {
        return Err(ReplayError::UndefinedLift { scope: "the panel".into() });
    }
    let n = panel.n();
    let mut daily_lifts = Vec::with_capacity(totals.len());
    for (t, day) in totals.iter().zip(panel.days()) {
        let lift = match daily_baseline {
            DailyBaseline::DayLocal => {
                t.lift().ok_or_else(|| ReplayError::UndefinedLift { scope: format!("day {day}") })?
            }
            DailyBaseline::Global => {
                // Compare day mean yield with the panel-wide baseline mean.
                let day_mean = t.yield_raw as f64 / t.rows as f64;
                let base_mean = all.baseline_raw as f64 / n as f64;
                (day_mean - base_mean) / base_mean
            }
        };
        daily_lifts.push(DailyLift { day: day.to_string(), lift, rows: t.rows });
    }
    Ok(ReplaySummary {
        policy_id: policy.id.clone(),
        is_baseline: policy.is_baseline(),
        n,
        mean_yield: raw_to_minor(all.yield_raw) / n as f64,
        baseline_mean_yield: raw_to_minor(all.baseline_raw) / n as f64,
        lift: lift_from_raw(all.yield_raw, all.baseline_raw),
        retained_share: if all.fills == 0 { 1.0 } else { all.retained as f64 / all.fills as f64 },
        retained: all.retained,
        fills: all.fills,
        yield_raw: all.yield_raw,
        baseline_raw: all.baseline_raw,
        daily_lifts,
        segment_lifts: None,
    })
}

/// Replays one policy over the panel, optionally per segment.
pub fn replay_policy(
    panel: &Panel,
    policy: &Policy,
    quantiles: &QuantileSet,
    segments: Option<&SegmentMap>,
    options: ReplayOptions,
) -> Result<ReplaySummary, ReplayError> {
    with_workers(options.workers, || replay_policy_inner(panel, policy, quantiles, segments, options.daily_baseline))?
}

fn replay_policy_inner(
    panel: &Panel,
    policy: &Policy,
    quantiles: &QuantileSet,
    segments: Option<&SegmentMap>,
    daily_baseline: DailyBaseline,
) -> Result<ReplaySummary, ReplayError> {
    let totals = day_totals(panel, policy, quantiles);
    let mut summary = summarize(panel, policy, &totals, daily_baseline)?;
    if let Some(map) = segments {
        let per_segment: Vec<SegmentReplay> = map
            .covered
            .par_iter()
            .map(|(key, rows)| segment_replay(panel, policy, quantiles, key, rows))
            .collect();
        summary.segment_lifts = Some(per_segment);
    }
    Ok(summary)
}

/// Replays every policy in catalog order, baseline first.
pub fn replay_catalog(
    panel: &Panel,
    catalog: &Catalog,
    segments: Option<&SegmentMap>,
    options: ReplayOptions,
) -> Result<Vec<ReplaySummary>, ReplayError> {
    with_workers(options.workers, || {
        catalog
            .policies
            .par_iter()
            .map(|p| replay_policy_inner(panel, p, &catalog.quantiles, segments, options.daily_baseline))
            .collect::<Result<Vec<_>, _>>()
    })?
}

/// Segment lifts keyed for lookup.
pub fn segment_lift_map(summary: &ReplaySummary) -> BTreeMap<SegmentKey, &SegmentReplay> {
    summary
        .segment_lifts
        .iter()
        .flatten()
        .map(|s| (s.key.clone(), s))
        .collect()
}
