//! Boundary-support diagnostics.
//!
//! Distances are row-wise `|bid - candidate floor|`, so non-uniform rules
//! that have no single threshold are handled the same way as uniform ones.
//! Localization level `q` is a fraction of the floor-changing rows.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auction_log::Panel;
use crate::decision::PolicyBounds;
use crate::money::Price;
use crate::policy_catalog::{candidate_floor, Catalog, Policy, QuantileSet};
use crate::replay::replay_row;
use crate::stats::{draw_rng, resample_day_counts};

/// Default scale of the inverse-square-root support penalty.
pub const DEFAULT_KAPPA: f64 = 5.0;

/// Localization levels used when none are configured.
pub const DEFAULT_Q_GRID: [f64; 5] = [0.01, 0.025, 0.05, 0.10, 0.20];

#[derive(Debug, Error, PartialEq)]
pub enum SupportError {
    #[error("policy `{0}` never changes the logged floor on this panel")]
    DegeneratePolicy(String),
    #[error("localization level must lie in (0, 1], got {0}")]
    Level(f64),
    #[error("window grid must be positive and ascending")]
    WindowGrid,
    #[error("logged baseline yield is zero; localized lift is undefined")]
    ZeroBaseline,
    #[error("no policy changes any floor; nothing to localize")]
    NoContrast,
    #[error("bootstrap needs at least one draw")]
    Draws,
    #[error("{0}")]
    Domain(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryDiagnostics {
    pub policy_id: String,
    /// Window half-width in minor units.
    pub window_h: f64,
    pub n_boundary: usize,
    pub penalty: f64,
    pub penalized_lcb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizedEstimate {
    pub policy_id: String,
    pub q: f64,
    /// Radius in minor units.
    pub radius: f64,
    pub boundary_mass: f64,
    pub localized_lift: f64,
    pub n_contrast: usize,
}

/// Sorted `|bid - candidate|` over all rows.
fn sorted_distances(panel: &Panel, policy: &Policy, quantiles: &QuantileSet) -> Vec<i64> {
    let mut d: Vec<i64> = panel
        .rows()
        .par_iter()
        .map(|r| r.bid_price().abs_diff(candidate_floor(policy, r, quantiles)).raw())
        .collect();
    d.par_sort_unstable();
    d
}

/// Window counts and penalized lower bounds for every non-baseline policy in `bounds`.
pub fn boundary_sweep(
    panel: &Panel,
    catalog: &Catalog,
    h_grid: &[f64],
    kappa: f64,
    bounds: &[PolicyBounds],
) -> Result<Vec<BoundaryDiagnostics>, SupportError> {
    if h_grid.iter().any(|h| !(*h > 0.0)) || h_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SupportError::WindowGrid);
    }
    if !(kappa >= 0.0) {
        return Err(SupportError::Domain(format!("penalty scale must be nonnegative, got {kappa}")));
    }
    let mut out = Vec::new();
    for b in bounds.iter().filter(|b| !b.baseline) {
        let Some(policy) = catalog.get(&b.policy_id) else { continue };
        let dist = sorted_distances(panel, policy, &catalog.quantiles);
        for &h in h_grid {
            let cut = Price::from_minor_f64(h).raw();
            let n_boundary = dist.partition_point(|&d| d <= cut);
            let (penalty, penalized_lcb) = if n_boundary == 0 {
                (f64::INFINITY, f64::NEG_INFINITY)
            } else {
                let p = kappa / (n_boundary as f64).sqrt();
                (p, b.lcb - p)
            };
            out.push(BoundaryDiagnostics { policy_id: b.policy_id.clone(), window_h: h, n_boundary, penalty, penalized_lcb });
        }
    }
    Ok(out)
}

/// Row contrasts for one policy, sorted by distance to the candidate floor.
struct Contrast {
    policy_id: String,
    dist: Vec<i64>,
    z: Vec<i64>,
    changed: Vec<bool>,
    day: Vec<u32>,
    /// Prefix sums of `z` in distance order; `z_prefix[k]` covers the first `k` rows.
    z_prefix: Vec<i128>,
    changed_dist: Vec<i64>,
    base_raw: i128,
}

impl Contrast {
    fn build(panel: &Panel, policy: &Policy, quantiles: &QuantileSet) -> Contrast {
        let mut rows: Vec<(i64, i64, bool, u32)> = panel
            .rows()
            .par_iter()
            .enumerate()
            .map(|(i, r)| {
                let cand = candidate_floor(policy, r, quantiles);
                let z = replay_row(r, cand).raw() - replay_row(r, r.floor_price()).raw();
                (r.bid_price().abs_diff(cand).raw(), z, cand != r.floor_price(), panel.day_indices()[i])
            })
            .collect();
        // Stable sort keeps ties in row order.
        rows.par_sort_by_key(|t| t.0);
        let base_raw = panel.rows().par_iter().map(|r| replay_row(r, r.floor_price()).raw() as i128).sum();
        let mut z_prefix = Vec::with_capacity(rows.len() + 1);
        z_prefix.push(0i128);
        let mut acc = 0i128;
        for t in &rows {
            acc += t.1 as i128;
            z_prefix.push(acc);
        }
        Contrast {
            policy_id: policy.id.clone(),
            changed_dist: rows.iter().filter(|t| t.2).map(|t| t.0).collect(),
            dist: rows.iter().map(|t| t.0).collect(),
            z: rows.iter().map(|t| t.1).collect(),
            changed: rows.iter().map(|t| t.2).collect(),
            day: rows.iter().map(|t| t.3).collect(),
            z_prefix,
            base_raw,
        }
    }

    /// Radius (raw units) and the number of rows within it.
    fn radius(&self, q: f64) -> Result<(i64, usize), SupportError> {
        check_level(q)?;
        if self.changed_dist.is_empty() {
            return Err(SupportError::DegeneratePolicy(self.policy_id.clone()));
        }
        let radius = self.changed_dist[order_index(q, self.changed_dist.len())];
        Ok((radius, self.dist.partition_point(|&d| d <= radius)))
    }

    /// Radius and mass; the lift is left as NaN.
    fn radius_only(&self, q: f64) -> Result<LocalizedEstimate, SupportError> {
        let (radius, upto) = self.radius(q)?;
        Ok(LocalizedEstimate {
            policy_id: self.policy_id.clone(),
            q,
            radius: Price::from_raw(radius).to_minor_f64(),
            boundary_mass: upto as f64 / self.dist.len() as f64,
            localized_lift: f64::NAN,
            n_contrast: self.changed_dist.len(),
        })
    }

    fn estimate(&self, q: f64) -> Result<LocalizedEstimate, SupportError> {
        let mut e = self.radius_only(q)?;
        if self.base_raw <= 0 {
            return Err(SupportError::ZeroBaseline);
        }
        let (_, upto) = self.radius(q)?;
        e.localized_lift = self.z_prefix[upto] as f64 / self.base_raw as f64;
        Ok(e)
    }

    /// Localized lifts at each level on a day-reweighted panel. `None` where
    /// the resample has no floor-changing rows or no baseline yield.
    fn weighted_lifts(&self, weights: &[u32], base_by_day: &[i128], q_grid: &[f64]) -> Vec<Option<f64>> {
        let base: i128 = base_by_day.iter().zip(weights).map(|(b, &w)| b * w as i128).sum();
        let n_change: u64 = self.changed.iter().zip(&self.day).filter(|(c, _)| **c).map(|(_, &d)| weights[d as usize] as u64).sum();
        if base <= 0 || n_change == 0 {
            return vec![None; q_grid.len()];
        }
        let mut out = Vec::with_capacity(q_grid.len());
        let (mut i, mut seen_change, mut z_sum) = (0usize, 0u64, 0i128);
        for &q in q_grid {
            let target = order_index(q, n_change as usize) as u64 + 1;
            // Advance until the target-th floor-changing row (with multiplicity) is inside.
            while seen_change < target {
                let w = weights[self.day[i] as usize];
                if self.changed[i] {
                    seen_change += w as u64;
                }
                z_sum += self.z[i] as i128 * w as i128;
                i += 1;
            }
            // Pull in every row tied with the radius.
            let radius = self.dist[i - 1];
            while i < self.dist.len() && self.dist[i] == radius {
                let w = weights[self.day[i] as usize];
                if self.changed[i] {
                    seen_change += w as u64;
                }
                z_sum += self.z[i] as i128 * w as i128;
                i += 1;
            }
            out.push(Some(z_sum as f64 / base as f64));
        }
        out
    }
}

fn check_level(q: f64) -> Result<(), SupportError> {
    if q > 0.0 && q <= 1.0 {
        Ok(())
    } else {
        Err(SupportError::Level(q))
    }
}

/// Zero-based index of the `ceil(q * n)`-th order statistic.
fn order_index(q: f64, n: usize) -> usize {
    // The small guard stops q = 0.3, n = 10 from rounding up to 4.
    let k = (q * n as f64 - 1e-9).ceil() as usize;
    k.clamp(1, n) - 1
}

/// Radius and boundary mass at level `q`. `localized_lift` is NaN; see [`localized_lift`].
pub fn q_local_radius(panel: &Panel, policy: &Policy, quantiles: &QuantileSet, q: f64) -> Result<LocalizedEstimate, SupportError> {
    check_level(q)?;
    Contrast::build(panel, policy, quantiles).radius_only(q)
}

/// Contrast summed over rows within the q-local radius, normalized by total baseline yield.
pub fn localized_lift(panel: &Panel, policy: &Policy, quantiles: &QuantileSet, q: f64) -> Result<LocalizedEstimate, SupportError> {
    check_level(q)?;
    Contrast::build(panel, policy, quantiles).estimate(q)
}

/// Localized estimates at several levels for one policy.
pub fn localized_profile(
    panel: &Panel,
    policy: &Policy,
    quantiles: &QuantileSet,
    q_grid: &[f64],
) -> Result<Vec<LocalizedEstimate>, SupportError> {
    let c = Contrast::build(panel, policy, quantiles);
    q_grid.iter().map(|&q| c.estimate(q)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizedLevel {
    pub q: f64,
    /// Catalog order, degenerate policies omitted.
    pub estimates: Vec<LocalizedEstimate>,
    /// Policy ids by descending localized lift.
    pub ranking: Vec<String>,
    pub winner: String,
    pub winner_frequency: BTreeMap<String, f64>,
    /// Draws in which at least one policy had a defined localized lift.
    pub draws_used: usize,
}

fn argmax_first(values: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.iter().enumerate() {
        if let Some(v) = *v {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Per-level localized rankings and day-bootstrap winner frequencies.
pub fn localized_selection(
    panel: &Panel,
    catalog: &Catalog,
    q_grid: &[f64],
    draws: usize,
    seed: u64,
) -> Result<Vec<LocalizedLevel>, SupportError> {
    for &q in q_grid {
        check_level(q)?;
    }
    if draws == 0 {
        return Err(SupportError::Draws);
    }
    let mut grid = q_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let contrasts: Vec<Contrast> = catalog
        .candidates()
        .iter()
        .map(|p| Contrast::build(panel, p, &catalog.quantiles))
        .filter(|c| !c.changed_dist.is_empty())
        .collect();
    if contrasts.is_empty() {
        return Err(SupportError::NoContrast);
    }

    let mut base_by_day = vec![0i128; panel.days().len()];
    for (i, r) in panel.rows().iter().enumerate() {
        base_by_day[panel.day_index(i)] += replay_row(r, r.floor_price()).raw() as i128;
    }

    // wins[draw][level] = index into contrasts
    let wins: Vec<Vec<Option<usize>>> = (0..draws as u64)
        .into_par_iter()
        .map(|d| {
            let mut rng = draw_rng(seed, d);
            let w = resample_day_counts(&mut rng, panel.days().len());
            let lifts: Vec<Vec<Option<f64>>> = contrasts.iter().map(|c| c.weighted_lifts(&w, &base_by_day, &grid)).collect();
            (0..grid.len())
                .map(|l| argmax_first(&lifts.iter().map(|v| v[l]).collect::<Vec<_>>()))
                .collect()
        })
        .collect();

    let mut out = Vec::with_capacity(grid.len());
    for (l, &q) in grid.iter().enumerate() {
        let estimates: Vec<LocalizedEstimate> = contrasts.iter().map(|c| c.estimate(q)).collect::<Result<_, _>>()?;
        let mut order: Vec<usize> = (0..estimates.len()).collect();
        order.sort_by(|&a, &b| estimates[b].localized_lift.total_cmp(&estimates[a].localized_lift).then(a.cmp(&b)));
        let mut counts = vec![0usize; contrasts.len()];
        let mut used = 0;
        for draw in &wins {
            if let Some(i) = draw[l] {
                counts[i] += 1;
                used += 1;
            }
        }
        let winner_frequency = contrasts
            .iter()
            .zip(&counts)
            .map(|(c, &k)| (c.policy_id.clone(), if used == 0 { 0.0 } else { k as f64 / used as f64 }))
            .collect();
        out.push(LocalizedLevel {
            q,
            ranking: order.iter().map(|&i| estimates[i].policy_id.clone()).collect(),
            winner: estimates[order[0]].policy_id.clone(),
            estimates,
            winner_frequency,
            draws_used: used,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairwiseMass {
    pub mass: f64,
    /// Both candidate floors agree on every row.
    pub degenerate: bool,
}

/// Share of filled rows whose bid lies between the two candidate floors
/// (closed interval, rows where the floors differ).
pub fn pairwise_boundary_mass(panel: &Panel, a: &Policy, b: &Policy, quantiles: &QuantileSet) -> PairwiseMass {
    let (inside, filled, differ) = panel
        .rows()
        .par_iter()
        .map(|r| {
            let ca = candidate_floor(a, r, quantiles);
            let cb = candidate_floor(b, r, quantiles);
            let differ = ca != cb;
            let inside = r.filled && differ && r.bid_price() >= ca.min(cb) && r.bid_price() <= ca.max(cb);
            (inside as u64, r.filled as u64, differ as u64)
        })
        .reduce(|| (0, 0, 0), |x, y| (x.0 + y.0, x.1 + y.1, x.2 + y.2));
    if differ == 0 {
        return PairwiseMass { mass: 0.0, degenerate: true };
    }
    PairwiseMass { mass: if filled == 0 { 0.0 } else { inside as f64 / filled as f64 }, degenerate: false }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseEntry {
    pub a: String,
    pub b: String,
    pub mass: f64,
    pub degenerate: bool,
}

/// Upper triangle of the pairwise mass matrix over non-baseline policies.
pub fn pairwise_boundary_matrix(panel: &Panel, catalog: &Catalog) -> Vec<PairwiseEntry> {
    let c = catalog.candidates();
    let mut out = Vec::new();
    for i in 0..c.len() {
        for j in i + 1..c.len() {
            let m = pairwise_boundary_mass(panel, &c[i], &c[j], &catalog.quantiles);
            out.push(PairwiseEntry { a: c[i].id.clone(), b: c[j].id.clone(), mass: m.mass, degenerate: m.degenerate });
        }
    }
    out
}

/// Constants for the sample-size and localization calculators. None of these
/// are estimated from data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundCalculatorInputs {
    /// Per-auction reward bound.
    pub b: f64,
    pub mu0: f64,
    pub n: f64,
    pub catalog_size: usize,
    pub delta: f64,
    /// Universal constant of the localization bound.
    pub c: f64,
    pub l_pi: f64,
    /// Resolution constant of the pairwise sample requirement.
    pub c0: f64,
    /// Segment reward bound.
    pub a: f64,
    pub l_s: f64,
    pub cover_radius: f64,
}

impl Default for BoundCalculatorInputs {
    fn default() -> Self {
        BoundCalculatorInputs {
            b: 1.0,
            mu0: 1.0,
            n: 1.0,
            catalog_size: 1,
            delta: 0.05,
            c: 1.0,
            l_pi: 1.0,
            c0: 1.0,
            a: 1.0,
            l_s: 0.0,
            cover_radius: 0.0,
        }
    }
}

/// Effective sample `n * m` needed to separate two policies whose lifts differ by `epsilon`.
/// Returns infinity at `epsilon = 0`.
pub fn required_boundary_sample(b: f64, epsilon: f64, delta: f64, c0: f64) -> Result<f64, SupportError> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(SupportError::Domain(format!("delta must lie in (0, 1/2), got {delta}")));
    }
    if !(b > 0.0 && c0 > 0.0 && epsilon >= 0.0) {
        return Err(SupportError::Domain("B and c0 must be positive, epsilon nonnegative".into()));
    }
    if epsilon == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(b * b / (c0 * epsilon * epsilon) * (1.0 / (2.0 * delta)).ln())
}

/// Localization error `epsilon(q)` from boundary mass `m` and radius `radius`.
pub fn localization_error_bound(inputs: &BoundCalculatorInputs, m: f64, radius: f64) -> f64 {
    let i = inputs;
    let log_term = (2.0 * i.catalog_size as f64 / i.delta).ln();
    let scale = i.c * i.b / i.mu0;
    scale * (m * log_term / i.n).sqrt() + scale * log_term / i.n + i.l_pi * radius / i.mu0
}

/// Strict test `margin > eps_a + eps_b + eta / mu0`.
pub fn ranking_certified(localized_margin: f64, eps_a: f64, eps_b: f64, response_eta: f64, mu0: f64) -> bool {
    localized_margin > eps_a + eps_b + response_eta / mu0
}

/// Twice the worst localization error over `(mass, radius)` pairs.
pub fn regret_bound(inputs: &BoundCalculatorInputs, per_policy: &[(f64, f64)]) -> f64 {
    2.0 * per_policy
        .iter()
        .map(|&(m, r)| localization_error_bound(inputs, m, r))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction_log::test_row;
    use crate::policy_catalog::Rule;
    use crate::replay::{replay_policy, ReplayOptions};
    use proptest::prelude::*;

    fn add(minor: i64) -> Policy {
        Policy::new(format!("add{minor}"), "add", Rule::AbsoluteIncrement { increment: minor })
    }

    fn catalog(ps: Vec<Policy>) -> Catalog {
        Catalog::new(ps, None).unwrap()
    }

    /// Brute force: count rows in the window directly.
    fn oracle_count(panel: &Panel, p: &Policy, h: f64) -> usize {
        panel
            .rows()
            .iter()
            .filter(|r| {
                let c = candidate_floor(p, r, &QuantileSet::unused());
                (r.bid as f64 - c.to_minor_f64()).abs() <= h
            })
            .count()
    }

    fn bounds_for(id: &str, lcb: f64) -> PolicyBounds {
        PolicyBounds::from_interval(id, lcb, lcb, lcb, 1.0, 0.0)
    }

    #[test]
    fn window_counts() {
        // add0 keeps the floor at 0; |b - f| = bids.
        let rows: Vec<_> = [1, 3, 8, 40, 120].iter().map(|&b| test_row("d", 0, b, 0, true)).collect();
        let panel = Panel::new(rows).unwrap();
        let p = Policy::new("u", "uniform", Rule::UniformPercent { multiplier_bp: 10_500 });
        let cat = catalog(vec![p.clone()]);
        let s = boundary_sweep(&panel, &cat, &[10.0, 1000.0], 5.0, &[bounds_for("u", 0.2)]).unwrap();
        assert_eq!(s[0].n_boundary, 3);
        assert_eq!(s[0].n_boundary, oracle_count(&panel, &p, 10.0));
        assert_eq!(s[1].n_boundary, 5);
        assert!((s[1].penalized_lcb - (0.2 - 5.0 / 5f64.sqrt())).abs() < 1e-15);
        let empty = boundary_sweep(&panel, &cat, &[0.5], 5.0, &[bounds_for("u", 0.2)]).unwrap();
        assert_eq!(empty[0].n_boundary, 0);
        assert_eq!(empty[0].penalized_lcb, f64::NEG_INFINITY);
        assert!(boundary_sweep(&panel, &cat, &[2.0, 1.0], 5.0, &[]).is_err());
    }

    #[test]
    fn fractional_window() {
        // A 5% markup puts the floor 10 row at 10.5, half a unit from its bid of 11.
        let rows = vec![
            test_row("d", 10, 11, 10, true),
            test_row("d", 0, 3, 0, true),
            test_row("d", 0, 8, 0, true),
            test_row("d", 0, 40, 0, true),
            test_row("d", 0, 120, 0, true),
        ];
        let panel = Panel::new(rows).unwrap();
        let p = Policy::new("u", "uniform", Rule::UniformPercent { multiplier_bp: 10_500 });
        let cat = catalog(vec![p.clone()]);
        let s = boundary_sweep(&panel, &cat, &[0.5, 10.0], 5.0, &[bounds_for("u", 0.0)]).unwrap();
        assert_eq!(s[0].n_boundary, 1);
        assert_eq!(s[1].n_boundary, 3);
        assert_eq!(s[1].n_boundary, oracle_count(&panel, &p, 10.0));
    }

    #[test]
    fn penalty_halves_when_count_quadruples() {
        let p1 = DEFAULT_KAPPA / 4f64.sqrt();
        let p2 = DEFAULT_KAPPA / 16f64.sqrt();
        assert_eq!(p1, 2.0 * p2);
    }

    fn panel_with_changing_distances() -> (Panel, Policy) {
        // add1 moves every floor from 0 to 1; distances |bid - 1| = 1, 2, 5, 9.
        let rows = [2, 3, 6, 10].iter().map(|&b| test_row("d", 0, b, 0, true)).collect();
        (Panel::new(rows).unwrap(), add(1))
    }

    #[test]
    fn radius_order_statistics() {
        let (panel, p) = panel_with_changing_distances();
        let q = QuantileSet::unused();
        assert_eq!(q_local_radius(&panel, &p, &q, 0.5).unwrap().radius, 2.0);
        assert_eq!(q_local_radius(&panel, &p, &q, 0.25).unwrap().radius, 1.0);
        let full = q_local_radius(&panel, &p, &q, 1.0).unwrap();
        assert_eq!(full.radius, 9.0);
        assert_eq!(full.boundary_mass, 1.0);
        assert_eq!(q_local_radius(&panel, &p, &q, 0.5).unwrap().boundary_mass, 0.5);
        assert!(q_local_radius(&panel, &p, &q, 0.0).is_err());
        assert_eq!(order_index(0.3, 10), 2);
    }

    #[test]
    fn localized_lift_three_row_example() {
        let panel = Panel::new(vec![
            test_row("d", 2, 10, 4, true),
            test_row("d", 5, 5, 5, true),
            test_row("d", 1, 8, 0, false),
        ])
        .unwrap();
        let e = localized_lift(&panel, &add(2), &QuantileSet::unused(), 1.0).unwrap();
        assert!((e.localized_lift - (-5.0 / 9.0)).abs() < 1e-15);
        let base = Policy::new("P0", "baseline", Rule::Baseline);
        assert!(matches!(
            localized_lift(&panel, &base, &QuantileSet::unused(), 1.0),
            Err(SupportError::DegeneratePolicy(_))
        ));
    }

    #[test]
    fn pairwise_mass_example() {
        // Policies put floors at 5 and 9 on every row (floors 0 -> add5, add9).
        let rows = [3, 6, 9, 20].iter().map(|&b| test_row("d", 0, b, 0, true)).collect();
        let panel = Panel::new(rows).unwrap();
        let q = QuantileSet::unused();
        let m = pairwise_boundary_mass(&panel, &add(5), &add(9), &q);
        assert_eq!(m, PairwiseMass { mass: 0.5, degenerate: false });
        assert_eq!(pairwise_boundary_mass(&panel, &add(9), &add(5), &q), m);
        assert_eq!(pairwise_boundary_mass(&panel, &add(5), &add(5), &q), PairwiseMass { mass: 0.0, degenerate: true });
    }

    #[test]
    fn calculator_examples() {
        let r = required_boundary_sample(1.0, 0.1, 0.05, 1.0).unwrap();
        assert!((r - 10f64.ln() / 0.01).abs() < 1e-9);
        assert!((r - 230.2585).abs() < 1e-4);
        let half = required_boundary_sample(1.0, 0.05, 0.05, 1.0).unwrap();
        assert!((half / r - 4.0).abs() < 1e-12);
        assert_eq!(required_boundary_sample(1.0, 0.0, 0.05, 1.0).unwrap(), f64::INFINITY);
        assert!(required_boundary_sample(1.0, 0.1, 0.6, 1.0).is_err());

        let inputs = BoundCalculatorInputs { n: 1e6, catalog_size: 19, l_pi: 1.0, ..Default::default() };
        let eps = localization_error_bound(&inputs, 0.1, 0.01);
        let l = 760f64.ln();
        let oracle = (0.1 * l / 1e6).sqrt() + l / 1e6 + 0.01;
        assert!((eps - oracle).abs() < 1e-15);
        assert!((eps - 0.010821).abs() < 1e-6);
        let doubled = localization_error_bound(&BoundCalculatorInputs { l_pi: 2.0, ..inputs }, 0.1, 0.01);
        assert!((doubled - eps - 0.01).abs() < 1e-15);
        assert!((regret_bound(&inputs, &[(0.1, 0.01), (0.01, 0.0)]) - 2.0 * eps).abs() < 1e-15);
        assert!((regret_bound(&inputs, &[(0.1, 0.01)]) - 0.02164).abs() < 1e-5);

        assert!(ranking_certified(0.12, 0.02, 0.02, 0.06, 1.0));
        assert!(ranking_certified(0.01, 0.0, 0.0, 0.0, 1.0));
        assert!(!ranking_certified(0.5, 0.25, 0.25, 0.0, 1.0));
    }

    #[test]
    fn dominant_policy_wins_every_draw() {
        // add2 is retained on every row and pays more than add1 everywhere.
        let mut rows = Vec::new();
        for d in 0..5 {
            for b in [10, 12, 20] {
                rows.push(test_row(&format!("d{d}"), 1, b, 1, true));
            }
        }
        let panel = Panel::new(rows).unwrap();
        let cat = catalog(vec![add(1), add(2)]);
        let levels = localized_selection(&panel, &cat, &[1.0, 0.5], 50, 7).unwrap();
        for l in &levels {
            assert_eq!(l.winner, "add2");
            assert_eq!(l.winner_frequency["add2"], 1.0);
        }
        assert_eq!(levels, localized_selection(&panel, &cat, &[0.5, 1.0], 50, 7).unwrap());
    }

    #[test]
    fn bootstrap_weights_match_materialized_resample() {
        // Reweighting must agree with replaying an explicitly duplicated panel.
        let mut rows = Vec::new();
        for d in 0..4 {
            for b in [3 + d, 7, 11 + 2 * d, 2] {
                rows.push(test_row(&format!("d{d}"), 2, b, 2, b >= 2));
            }
        }
        let panel = Panel::new(rows.clone()).unwrap();
        let p = add(3);
        let c = Contrast::build(&panel, &p, &QuantileSet::unused());
        let weights = [2u32, 0, 1, 1];
        let mut dup = Vec::new();
        for (d, &w) in weights.iter().enumerate() {
            for k in 0..w {
                for r in rows.iter().filter(|r| &*r.day == format!("d{d}")) {
                    let mut r = r.clone();
                    r.day = format!("d{d}-{k}").into();
                    dup.push(r);
                }
            }
        }
        let dup = Panel::new(dup).unwrap();
        let mut base_by_day = vec![0i128; 4];
        for (i, r) in panel.rows().iter().enumerate() {
            base_by_day[panel.day_index(i)] += replay_row(r, r.floor_price()).raw() as i128;
        }
        let grid = [0.25, 0.5, 1.0];
        let w = c.weighted_lifts(&weights, &base_by_day, &grid);
        for (k, &q) in grid.iter().enumerate() {
            let direct = localized_lift(&dup, &p, &QuantileSet::unused(), q).unwrap().localized_lift;
            assert!((w[k].unwrap() - direct).abs() < 1e-15, "q={q}");
        }
    }

    proptest! {
        #[test]
        fn sweep_monotone_and_full_level_matches_replay(
            rows in prop::collection::vec((0i64..20, 0i64..40, any::<bool>(), 0usize..3), 3..60),
            inc in 1i64..6,
        ) {
            let rows: Vec<_> = rows.into_iter().map(|(f, g, filled, d)| {
                let bid = f + g;
                let filled = filled && g >= 0;
                test_row(&format!("d{d}"), f, bid, if filled { f + g / 2 } else { 0 }, filled)
            }).collect();
            let panel = Panel::new(rows).unwrap();
            let p = add(inc);
            let cat = catalog(vec![p.clone()]);
            let grid: Vec<f64> = (1..30).map(|h| h as f64 * 1.5).collect();
            let s = boundary_sweep(&panel, &cat, &grid, 5.0, &[bounds_for(&p.id, 0.0)]).unwrap();
            for w in s.windows(2) {
                prop_assert!(w[0].n_boundary <= w[1].n_boundary);
            }
            let base = panel.rows().iter().map(|r| replay_row(r, r.floor_price()).raw()).sum::<i64>();
            prop_assume!(base > 0);
            let summary = replay_policy(&panel, &p, &QuantileSet::unused(), None, ReplayOptions::default());
            prop_assume!(summary.is_ok());
            let e = localized_lift(&panel, &p, &QuantileSet::unused(), 1.0).unwrap();
            let lift = summary.unwrap().lift;
            prop_assert!((e.localized_lift - lift).abs() <= 1e-12 * lift.abs().max(1e-300));
            let prof = localized_profile(&panel, &p, &QuantileSet::unused(), &[0.1, 0.3, 0.6, 1.0]).unwrap();
            for w in prof.windows(2) {
                prop_assert!(w[0].radius <= w[1].radius);
            }
        }

        #[test]
        fn pairwise_symmetry(
            rows in prop::collection::vec((0i64..20, 0i64..40, any::<bool>()), 1..40),
            a in 0i64..8, b in 0i64..8,
        ) {
            let rows: Vec<_> = rows.into_iter().map(|(f, g, filled)| test_row("d", f, f + g, if filled { f } else { 0 }, filled)).collect();
            let panel = Panel::new(rows).unwrap();
            let q = QuantileSet::unused();
            prop_assert_eq!(pairwise_boundary_mass(&panel, &add(a), &add(b), &q), pairwise_boundary_mass(&panel, &add(b), &add(a), &q));
            prop_assert_eq!(pairwise_boundary_mass(&panel, &add(a), &add(a), &q).mass, 0.0);
        }

        #[test]
        fn boundary_requirement_scaling(b in 0.1f64..10.0, eps in 0.01f64..1.0, delta in 0.001f64..0.4) {
            let base = required_boundary_sample(b, eps, delta, 1.0).unwrap();
            prop_assert!((required_boundary_sample(2.0 * b, eps, delta, 1.0).unwrap() / base - 4.0).abs() < 1e-9);
            prop_assert!((required_boundary_sample(b, eps / 2.0, delta, 1.0).unwrap() / base - 4.0).abs() < 1e-9);
            let expect = b * b / (eps * eps) * (1.0 / (2.0 * delta)).ln();
            prop_assert!((base - expect).abs() <= 1e-12 * expect);
        }
    }
}
