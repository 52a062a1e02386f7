//! Per-segment lower bounds and the uniform non-harm certificate.
//!
//! Segment bounds are Bonferroni-adjusted over the `K` covered segments.
//! A policy is certified non-harmful when the smallest segment lower bound
//! exceeds `L_s * cover_radius` strictly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auction_log::{Panel, SegmentKey, SegmentMap};
use crate::policy_catalog::{Policy, QuantileSet};
use crate::replay::{segment_replay, SegmentReplay};
use crate::stats::{bonferroni_z, normal_quantile, sample_sd, StatsError};

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("alpha must lie in (0, 1), got {0}")]
    Alpha(f64),
    #[error("{0} must be nonnegative")]
    Negative(&'static str),
    #[error("{0}")]
    Domain(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentBound {
    pub key: SegmentKey,
    pub n: usize,
    pub days: usize,
    pub lift_hat: f64,
    pub se: f64,
    /// Bonferroni-adjusted over the covered segments.
    pub lcb: f64,
    /// Plain two-sided `1 - alpha` bound, for display only.
    pub lcb_unadjusted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncoveredSegment {
    pub key: SegmentKey,
    pub n: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentBounds {
    pub policy_id: String,
    pub alpha: f64,
    pub k: usize,
    pub z_crit: f64,
    pub segments: Vec<SegmentBound>,
    pub uncovered: Vec<UncoveredSegment>,
}

impl SegmentBounds {
    pub fn lcbs(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.lcb).collect()
    }
}

fn check_alpha(alpha: f64) -> Result<(), SegmentError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(SegmentError::Alpha(alpha))
    }
}

/// Bounds from already computed segment replays. Segments without a defined
/// lift or with fewer than two active days are moved to `uncovered`.
pub fn bounds_from_replays(
    policy_id: &str,
    replays: &[SegmentReplay],
    too_small: &[(SegmentKey, usize)],
    alpha: f64,
) -> Result<SegmentBounds, SegmentError> {
    check_alpha(alpha)?;
    let mut uncovered: Vec<UncoveredSegment> = too_small
        .iter()
        .map(|(key, n)| UncoveredSegment { key: key.clone(), n: *n, reason: "fewer rows than the coverage minimum".into() })
        .collect();
    let mut usable = Vec::new();
    for r in replays {
        let daily: Vec<f64> = r.daily_lifts.iter().map(|d| d.lift).collect();
        match (r.lift, sample_sd(&daily)) {
            (None, _) => uncovered.push(UncoveredSegment {
                key: r.key.clone(),
                n: r.n,
                reason: "zero baseline yield".into(),
            }),
            (Some(_), None) => uncovered.push(UncoveredSegment {
                key: r.key.clone(),
                n: r.n,
                reason: format!("{} active day(s); at least 2 needed", daily.len()),
            }),
            (Some(lift), Some(sd)) => usable.push((r, lift, sd / (daily.len() as f64).sqrt(), daily.len())),
        }
    }
    let k = usable.len();
    let z = if k == 0 { f64::NAN } else { bonferroni_z(alpha, k)? };
    let z1 = normal_quantile(1.0 - alpha / 2.0)?;
    let segments = usable
        .into_iter()
        .map(|(r, lift, se, days)| SegmentBound {
            key: r.key.clone(),
            n: r.n,
            days,
            lift_hat: lift,
            se,
            lcb: lift - z * se,
            lcb_unadjusted: lift - z1 * se,
        })
        .collect();
    uncovered.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(SegmentBounds { policy_id: policy_id.to_string(), alpha, k, z_crit: z, segments, uncovered })
}

/// Segment-local replay and simultaneous lower bounds for one policy.
pub fn segment_bounds(
    panel: &Panel,
    policy: &Policy,
    quantiles: &QuantileSet,
    segments: &SegmentMap,
    alpha: f64,
) -> Result<SegmentBounds, SegmentError> {
    let replays: Vec<SegmentReplay> = segments
        .covered
        .par_iter()
        .map(|(key, rows)| segment_replay(panel, policy, quantiles, key, rows))
        .collect();
    let too_small: Vec<(SegmentKey, usize)> = segments.uncovered.iter().map(|(k, v)| (k.clone(), v.len())).collect();
    bounds_from_replays(&policy.id, &replays, &too_small, alpha)
}

/// Outcome of the margin test on a set of segment lower bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    /// Smallest lower bound; `None` without covered segments.
    pub eta: Option<f64>,
    pub certified: bool,
    pub uniform_margin: Option<f64>,
    /// Segments whose lower bound is at least zero.
    pub nonnegative: usize,
    /// Some lower bound sits exactly on the threshold.
    pub boundary: bool,
}

pub fn certify(lcbs: &[f64], l_s: f64, cover_radius: f64) -> Result<Verdict, SegmentError> {
    if !(l_s >= 0.0) {
        return Err(SegmentError::Negative("L_s"));
    }
    if !(cover_radius >= 0.0) {
        return Err(SegmentError::Negative("cover radius"));
    }
    let threshold = l_s * cover_radius;
    let eta = lcbs.iter().copied().reduce(f64::min);
    Ok(Verdict {
        eta,
        certified: eta.is_some_and(|e| e > threshold),
        uniform_margin: eta.map(|e| e - threshold),
        nonnegative: lcbs.iter().filter(|&&l| l >= 0.0).count(),
        boundary: lcbs.iter().any(|&l| l == threshold),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentCertificate {
    pub policy_id: String,
    pub alpha: f64,
    pub k: usize,
    pub segments: Vec<SegmentBound>,
    pub eta: Option<f64>,
    pub l_s: f64,
    pub cover_radius: f64,
    pub certified: bool,
    pub uniform_margin: Option<f64>,
    pub nonnegative_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub uncovered: Vec<UncoveredSegment>,
}

pub fn nonharm_certificate(bounds: &SegmentBounds, l_s: f64, cover_radius: f64) -> Result<SegmentCertificate, SegmentError> {
    let v = certify(&bounds.lcbs(), l_s, cover_radius)?;
    let reason = if bounds.k == 0 {
        Some("insufficient coverage".to_string())
    } else if v.certified {
        None
    } else if v.boundary {
        Some("boundary, not certified".to_string())
    } else {
        Some("minimum segment lower bound does not exceed the Lipschitz margin".to_string())
    };
    Ok(SegmentCertificate {
        policy_id: bounds.policy_id.clone(),
        alpha: bounds.alpha,
        k: bounds.k,
        segments: bounds.segments.clone(),
        eta: v.eta,
        l_s,
        cover_radius,
        certified: v.certified,
        uniform_margin: v.uniform_margin,
        nonnegative_count: v.nonnegative,
        reason,
        uncovered: bounds.uncovered.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageCount {
    pub radius: f64,
    pub certified_segments: usize,
}

/// Number of segments with `lcb > L_s * radius` at each radius.
pub fn coverage_sensitivity(lcbs: &[f64], l_s: f64, radius_grid: &[f64]) -> Result<Vec<CoverageCount>, SegmentError> {
    if radius_grid.iter().any(|r| !(*r >= 0.0)) || radius_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(SegmentError::Domain("radius grid must be nonnegative and ascending".into()));
    }
    if !(l_s >= 0.0) {
        return Err(SegmentError::Negative("L_s"));
    }
    Ok(radius_grid
        .iter()
        .map(|&r| CoverageCount { radius: r, certified_segments: lcbs.iter().filter(|&&l| l > l_s * r).count() })
        .collect())
}

/// Per-segment sample size `A^2 ln(K / alpha) / (eta + L_s rho)^2`, constant factor 1.
/// Infinite when the denominator is zero.
pub fn required_segment_sample(a: f64, k: usize, alpha: f64, eta: f64, l_s: f64, cover_radius: f64) -> Result<f64, SegmentError> {
    check_alpha(alpha)?;
    if !(a > 0.0) || k == 0 {
        return Err(SegmentError::Domain("A must be positive and K at least 1".into()));
    }
    let margin = eta + l_s * cover_radius;
    if margin < 0.0 {
        return Err(SegmentError::Domain(format!("eta + L_s * radius must be nonnegative, got {margin}")));
    }
    if margin == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(a * a * (k as f64 / alpha).ln() / (margin * margin))
}
