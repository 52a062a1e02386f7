//! Simultaneous bounds and the certified / dominated / unresolved partition.
//!
//! Bounds are Bonferroni-adjusted normal intervals around the aggregate
//! replay lift, with the standard error taken from daily lift variation.
//! The support-adjusted lower bound subtracts `lambda * (1 - retained share)`.
//! The leader maximizes the support-adjusted lower bound; a policy is
//! dominated when its upper bound falls below the leader's support-adjusted
//! lower bound minus the tolerance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::replay::ReplaySummary;
use crate::stats::{bonferroni_z, sample_sd, StatsError};

pub use crate::stats::normal_quantile;

#[derive(Debug, Error, PartialEq)]
pub enum DecisionError {
    #[error("policy `{policy_id}` has {days} daily lift(s); at least 2 are needed for a standard error")]
    InsufficientReplicates { policy_id: String, days: usize },
    #[error("alpha must lie in (0, 1), got {0}")]
    Alpha(f64),
    #[error("support penalty scale must be nonnegative, got {0}")]
    Lambda(f64),
    #[error("tolerance must be nonnegative, got {0}")]
    Tolerance(f64),
    #[error("no non-baseline policies to decide between")]
    NoCandidates,
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyBounds {
    pub policy_id: String,
    pub baseline: bool,
    pub lift_hat: f64,
    /// Sample SD of daily lifts over the square root of the day count.
    pub se_daily: f64,
    pub lcb: f64,
    pub ucb: f64,
    pub lcb_support: f64,
    pub retained_share: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub z_crit: f64,
    pub days: usize,
}

impl PolicyBounds {
    /// Bounds from an already computed interval; used for hand-built examples.
    pub fn from_interval(id: &str, lift_hat: f64, lcb: f64, ucb: f64, retained_share: f64, lambda: f64) -> Self {
        PolicyBounds {
            policy_id: id.to_string(),
            baseline: false,
            lift_hat,
            se_daily: f64::NAN,
            lcb,
            ucb,
            lcb_support: lcb - lambda * (1.0 - retained_share),
            retained_share,
            alpha: f64::NAN,
            lambda,
            z_crit: f64::NAN,
            days: 0,
        }
    }
}

fn check_alpha(alpha: f64) -> Result<(), DecisionError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(DecisionError::Alpha(alpha))
    }
}

/// Bonferroni bounds over the whole catalog (baseline included in the count).
pub fn simultaneous_bounds(
    summaries: &[ReplaySummary],
    alpha: f64,
    lambda: f64,
) -> Result<Vec<PolicyBounds>, DecisionError> {
    check_alpha(alpha)?;
    if !(lambda >= 0.0) {
        return Err(DecisionError::Lambda(lambda));
    }
    let z = bonferroni_z(alpha, summaries.len())?;
    summaries
        .iter()
        .map(|s| {
            let daily = s.daily_lift_values();
            let sd = sample_sd(&daily).ok_or_else(|| DecisionError::InsufficientReplicates {
                policy_id: s.policy_id.clone(),
                days: daily.len(),
            })?;
            let se = sd / (daily.len() as f64).sqrt();
            let lcb = s.lift - z * se;
            Ok(PolicyBounds {
                policy_id: s.policy_id.clone(),
                baseline: s.is_baseline,
                lift_hat: s.lift,
                se_daily: se,
                lcb,
                ucb: s.lift + z * se,
                lcb_support: lcb - lambda * (1.0 - s.retained_share),
                retained_share: s.retained_share,
                alpha,
                lambda,
                z_crit: z,
                days: daily.len(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Certified,
    Dominated,
    Unresolved,
}

/// Which gates a policy passed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateRecord {
    pub label: Label,
    pub leader: bool,
    pub positive_support_lcb: bool,
    /// `None` when no segment certificate was evaluated for the policy.
    pub segment_nonharm: Option<bool>,
    /// Leader only: its support-adjusted lower bound exceeds every other upper bound.
    pub separated: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionObject {
    pub alpha: f64,
    pub lambda: f64,
    pub tolerance: f64,
    pub leader: String,
    pub bounds: Vec<PolicyBounds>,
    pub shortlist: Vec<String>,
    pub certified: Vec<String>,
    pub dominated: Vec<String>,
    pub unresolved: Vec<String>,
    pub gate_report: BTreeMap<String, GateRecord>,
}

fn argmax_by<'a>(bounds: &'a [PolicyBounds], key: impl Fn(&PolicyBounds) -> f64) -> Option<&'a PolicyBounds> {
    let mut best: Option<&PolicyBounds> = None;
    for b in bounds.iter().filter(|b| !b.baseline) {
        // Strict improvement only: ties keep the earlier catalog entry.
        if best.is_none_or(|cur| key(b) > key(cur)) {
            best = Some(b);
        }
    }
    best
}

/// Replay-only comparator: the largest point estimate.
pub fn point_estimate_leader(bounds: &[PolicyBounds]) -> Option<&str> {
    argmax_by(bounds, |b| b.lift_hat).map(|b| b.policy_id.as_str())
}

/// Largest plain simultaneous lower bound, without the support penalty.
pub fn lower_bound_leader(bounds: &[PolicyBounds]) -> Option<&str> {
    argmax_by(bounds, |b| b.lcb).map(|b| b.policy_id.as_str())
}

/// Support-aware decision at tolerance `tolerance`.
///
/// `segment_pass` maps policy ids to their segment non-harm verdict; a
/// missing entry counts as not passed.
pub fn decide(
    bounds: &[PolicyBounds],
    tolerance: f64,
    segment_pass: &BTreeMap<String, bool>,
) -> Result<DecisionObject, DecisionError> {
    if !(tolerance >= 0.0) {
        return Err(DecisionError::Tolerance(tolerance));
    }
    let leader = argmax_by(bounds, |b| b.lcb_support).ok_or(DecisionError::NoCandidates)?;
    let threshold = leader.lcb_support - tolerance;
    let max_other_ucb = bounds
        .iter()
        .filter(|b| !b.baseline && b.policy_id != leader.policy_id)
        .map(|b| b.ucb)
        .fold(f64::NEG_INFINITY, f64::max);
    let leader_positive = leader.lcb_support > 0.0;
    let leader_segments = segment_pass.get(&leader.policy_id).copied();
    let leader_certified = leader_positive && leader_segments == Some(true);

    let mut out = DecisionObject {
        alpha: leader.alpha,
        lambda: leader.lambda,
        tolerance,
        leader: leader.policy_id.clone(),
        bounds: bounds.to_vec(),
        shortlist: Vec::new(),
        certified: Vec::new(),
        dominated: Vec::new(),
        unresolved: Vec::new(),
        gate_report: BTreeMap::new(),
    };
    for b in bounds.iter().filter(|b| !b.baseline) {
        let is_leader = b.policy_id == leader.policy_id;
        let mut reasons = Vec::new();
        let label = if b.ucb < threshold {
            Label::Dominated
        } else if is_leader && leader_certified {
            Label::Certified
        } else {
            if !is_leader {
                reasons.push("not the lower-bound leader".to_string());
            }
            if b.lcb_support <= 0.0 {
                reasons.push("support-adjusted lower bound is not positive".to_string());
            }
            if is_leader && leader_segments != Some(true) {
                reasons.push(if leader_segments.is_some() {
                    "segment non-harm not certified".to_string()
                } else {
                    "segment non-harm not evaluated".to_string()
                });
            }
            Label::Unresolved
        };
        match label {
            Label::Certified => out.certified.push(b.policy_id.clone()),
            Label::Dominated => out.dominated.push(b.policy_id.clone()),
            Label::Unresolved => out.unresolved.push(b.policy_id.clone()),
        }
        if label != Label::Dominated {
            out.shortlist.push(b.policy_id.clone());
        }
        out.gate_report.insert(
            b.policy_id.clone(),
            GateRecord {
                label,
                leader: is_leader,
                positive_support_lcb: b.lcb_support > 0.0,
                segment_nonharm: segment_pass.get(&b.policy_id).copied(),
                separated: is_leader && b.lcb_support > max_other_ucb,
                reasons,
            },
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToleranceStep {
    pub tolerance: f64,
    pub shortlist_size: usize,
    pub shortlist: Vec<String>,
}

/// Shortlist at each tolerance, recomputed with [`decide`].
pub fn tolerance_sweep(
    bounds: &[PolicyBounds],
    tolerances: &[f64],
    segment_pass: &BTreeMap<String, bool>,
) -> Result<Vec<ToleranceStep>, DecisionError> {
    tolerances
        .iter()
        .map(|&rho| {
            let d = decide(bounds, rho, segment_pass)?;
            Ok(ToleranceStep { tolerance: rho, shortlist_size: d.shortlist.len(), shortlist: d.shortlist })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogSizeStep {
    pub catalog_size: usize,
    pub z_crit: f64,
    pub leader: String,
    pub leader_lcb_support: f64,
}

/// Bonferroni cost of screening larger catalogs. The catalog of size `k`
/// is the baseline plus the `k - 1` candidates with the largest point
/// estimates (ties by catalog order), so the subsets are nested.
pub fn catalog_size_scaling(
    summaries: &[ReplaySummary],
    alpha: f64,
    lambda: f64,
    sizes: &[usize],
) -> Result<Vec<CatalogSizeStep>, DecisionError> {
    let mut by_lift: Vec<usize> = (0..summaries.len()).filter(|&i| !summaries[i].is_baseline).collect();
    by_lift.sort_by(|&a, &b| summaries[b].lift.total_cmp(&summaries[a].lift).then(a.cmp(&b)));
    let baseline: Vec<usize> = (0..summaries.len()).filter(|&i| summaries[i].is_baseline).collect();
    let mut out = Vec::new();
    for &size in sizes.iter().filter(|&&k| k >= 2 && k <= summaries.len()) {
        let mut chosen: Vec<usize> = baseline.iter().chain(&by_lift).copied().take(size).collect();
        chosen.sort_unstable();
        let subset: Vec<ReplaySummary> = chosen.iter().map(|&i| summaries[i].clone()).collect();
        let bounds = simultaneous_bounds(&subset, alpha, lambda)?;
        let leader = argmax_by(&bounds, |b| b.lcb_support).ok_or(DecisionError::NoCandidates)?;
        out.push(CatalogSizeStep {
            catalog_size: size,
            z_crit: leader.z_crit,
            leader: leader.policy_id.clone(),
            leader_lcb_support: leader.lcb_support,
        });
    }
    Ok(out)
}

/// Replay-only, lower-bound and support-aware selections side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleComparison {
    pub point_estimate: String,
    pub lower_bound: String,
    pub support_aware_leader: String,
    pub support_aware_shortlist: Vec<String>,
}

pub fn rule_comparison(decision: &DecisionObject) -> RuleComparison {
    RuleComparison {
        point_estimate: point_estimate_leader(&decision.bounds).unwrap_or_default().to_string(),
        lower_bound: lower_bound_leader(&decision.bounds).unwrap_or_default().to_string(),
        support_aware_leader: decision.leader.clone(),
        support_aware_shortlist: decision.shortlist.clone(),
    }
}
