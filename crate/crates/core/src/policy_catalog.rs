//! Finite reserve-policy catalog and frozen quantile anchors.
//!
//! Every rule only raises floors: for any row, the candidate floor is at
//! least the logged floor. [`build_catalog`] rejects parameters that would
//! break this.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::auction_log::{bid_gap, AuctionRow, Panel};
use crate::money::{multiplier_to_basis_points, Price, PRICE_SCALE};

/// Name of the built-in 19-policy catalog.
pub const STANDARD19: &str = "standard19";

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("quantile fit needs at least one positive logged floor")]
    NoPositiveFloors,
    #[error("policy `{id}`: unknown family `{family}`")]
    UnknownFamily { id: String, family: String },
    #[error("policy `{id}`: {reason}")]
    InvalidParameter { id: String, reason: String },
    #[error("duplicate policy id `{0}`")]
    DuplicateId(String),
    #[error("catalog has no candidate policies besides the baseline")]
    NoCandidates,
    #[error("catalog has more than one baseline policy")]
    MultipleBaselines,
    #[error("catalog uses quantile rules but no fitted quantiles were supplied")]
    MissingQuantiles,
    #[error("unknown catalog preset `{0}`")]
    UnknownPreset(String),
    #[error("catalog file: {0}")]
    Parse(#[from] toml::de::Error),
}

/// Positive-floor quartile anchors used by the quantile rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantileSet {
    pub q25: Price,
    pub q50: Price,
    pub q75: Price,
    pub source_panel_id: String,
    pub frozen: bool,
}

impl QuantileSet {
    /// Unfrozen anchors; call [`QuantileSet::freeze`] before evaluation.
    pub fn new(q25: Price, q50: Price, q75: Price, source_panel_id: impl Into<String>) -> Self {
        assert!(Price::ZERO <= q25 && q25 <= q50 && q50 <= q75, "quantiles must be ordered and nonnegative");
        QuantileSet { q25, q50, q75, source_panel_id: source_panel_id.into(), frozen: false }
    }

    /// Placeholder for catalogs without quantile rules.
    pub fn unused() -> Self {
        QuantileSet { q25: Price::ZERO, q50: Price::ZERO, q75: Price::ZERO, source_panel_id: "none".into(), frozen: true }
    }

    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    pub fn get(&self, level: QuantileLevel) -> Price {
        match level {
            QuantileLevel::Q25 => self.q25,
            QuantileLevel::Q50 => self.q50,
            QuantileLevel::Q75 => self.q75,
        }
    }
}

/// Linear interpolation between order statistics at index `q * (k - 1)`.
fn interpolate(sorted: &[i64], q: f64) -> Price {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    let base = Price::from_minor(sorted[lo]);
    if lo + 1 >= sorted.len() || frac == 0.0 {
        return base;
    }
    let span = (sorted[lo + 1] - sorted[lo]) as f64 * PRICE_SCALE as f64;
    base + Price::from_raw((frac * span).round() as i64)
}

/// Fits frozen quartiles of the positive logged floors.
pub fn fit_quantiles(panel: &Panel) -> Result<QuantileSet, CatalogError> {
    let mut floors: Vec<i64> = panel.rows().iter().map(|r| r.floor).filter(|&f| f > 0).collect();
    if floors.is_empty() {
        return Err(CatalogError::NoPositiveFloors);
    }
    floors.sort_unstable();
    Ok(QuantileSet {
        q25: interpolate(&floors, 0.25),
        q50: interpolate(&floors, 0.50),
        q75: interpolate(&floors, 0.75),
        source_panel_id: panel.fingerprint(),
        frozen: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QuantileLevel {
    #[serde(rename = "q25")]
    Q25,
    #[serde(rename = "q50")]
    Q50,
    #[serde(rename = "q75")]
    Q75,
}

impl QuantileLevel {
    fn from_fraction(q: f64) -> Option<Self> {
        match q {
            x if x == 0.25 || x == 25.0 => Some(QuantileLevel::Q25),
            x if x == 0.5 || x == 50.0 => Some(QuantileLevel::Q50),
            x if x == 0.75 || x == 75.0 => Some(QuantileLevel::Q75),
            _ => None,
        }
    }
}

impl fmt::Display for QuantileLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuantileLevel::Q25 => "q25",
            QuantileLevel::Q50 => "q50",
            QuantileLevel::Q75 => "q75",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Baseline,
    UniformPercent,
    AbsoluteIncrement,
    PositiveFloorQuantile,
    AllFloorQuantile,
    MarginGatedIncrement,
    HybridQuantileMargin,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Baseline => "baseline",
            Family::UniformPercent => "uniform-percent",
            Family::AbsoluteIncrement => "absolute-increment",
            Family::PositiveFloorQuantile => "positive-floor-quantile",
            Family::AllFloorQuantile => "all-floor-quantile",
            Family::MarginGatedIncrement => "margin-gated-increment",
            Family::HybridQuantileMargin => "hybrid-quantile-margin",
        }
    }

    fn parse(s: &str) -> Option<Family> {
        Some(match s {
            "baseline" => Family::Baseline,
            "uniform-percent" => Family::UniformPercent,
            "absolute-increment" => Family::AbsoluteIncrement,
            "positive-floor-quantile" => Family::PositiveFloorQuantile,
            "all-floor-quantile" => Family::AllFloorQuantile,
            "margin-gated-increment" => Family::MarginGatedIncrement,
            "hybrid-quantile-margin" => Family::HybridQuantileMargin,
            _ => return None,
        })
    }
}

/// Reserve rule. Money parameters are integer minor units; gap thresholds
/// compare against the logged gap `bid - logged floor`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Rule {
    Baseline,
    UniformPercent { multiplier_bp: i64 },
    AbsoluteIncrement { increment: i64 },
    PositiveFloorQuantile { quantile: QuantileLevel },
    AllFloorQuantile { quantile: QuantileLevel },
    MarginGatedIncrement { gap_threshold: i64, increment: i64 },
    HybridQuantileMargin { gap_threshold: i64, quantile: QuantileLevel },
}

impl Rule {
    pub fn family(&self) -> Family {
        match self {
            Rule::Baseline => Family::Baseline,
            Rule::UniformPercent { .. } => Family::UniformPercent,
            Rule::AbsoluteIncrement { .. } => Family::AbsoluteIncrement,
            Rule::PositiveFloorQuantile { .. } => Family::PositiveFloorQuantile,
            Rule::AllFloorQuantile { .. } => Family::AllFloorQuantile,
            Rule::MarginGatedIncrement { .. } => Family::MarginGatedIncrement,
            Rule::HybridQuantileMargin { .. } => Family::HybridQuantileMargin,
        }
    }

    pub fn uses_quantiles(&self) -> bool {
        matches!(
            self,
            Rule::PositiveFloorQuantile { .. } | Rule::AllFloorQuantile { .. } | Rule::HybridQuantileMargin { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub id: String,
    pub name: String,
    pub rule: Rule,
}

impl Policy {
    pub fn new(id: impl Into<String>, name: impl Into<String>, rule: Rule) -> Self {
        Policy { id: id.into(), name: name.into(), rule }
    }

    pub fn is_baseline(&self) -> bool {
        self.rule == Rule::Baseline
    }

    fn check(&self) -> Result<(), CatalogError> {
        let bad = |reason: &str| Err(CatalogError::InvalidParameter { id: self.id.clone(), reason: reason.into() });
        match self.rule {
            Rule::UniformPercent { multiplier_bp } if multiplier_bp < 10_000 => {
                bad("multiplier below 1 would lower floors")
            }
            Rule::AbsoluteIncrement { increment } | Rule::MarginGatedIncrement { increment, .. } if increment < 0 => {
                bad("negative increment would lower floors")
            }
            Rule::MarginGatedIncrement { gap_threshold, .. } | Rule::HybridQuantileMargin { gap_threshold, .. }
                if gap_threshold < 0 =>
            {
                bad("negative gap threshold")
            }
            _ => Ok(()),
        }
    }
}

/// Counterfactual floor for `row` under `policy`. Never below the logged floor.
pub fn candidate_floor(policy: &Policy, row: &AuctionRow, quantiles: &QuantileSet) -> Price {
    let logged = row.floor_price();
    match policy.rule {
        Rule::Baseline => logged,
        Rule::UniformPercent { multiplier_bp } => Price::from_raw(row.floor * multiplier_bp),
        Rule::AbsoluteIncrement { increment } => Price::from_minor(row.floor + increment),
        Rule::PositiveFloorQuantile { quantile } => {
            if row.floor > 0 {
                logged.max(quantiles.get(quantile))
            } else {
                logged
            }
        }
        Rule::AllFloorQuantile { quantile } => logged.max(quantiles.get(quantile)),
        Rule::MarginGatedIncrement { gap_threshold, increment } => {
            if bid_gap(row) >= gap_threshold {
                Price::from_minor(row.floor + increment)
            } else {
                logged
            }
        }
        Rule::HybridQuantileMargin { gap_threshold, quantile } => {
            if bid_gap(row) >= gap_threshold {
                logged.max(quantiles.get(quantile))
            } else {
                logged
            }
        }
    }
}

/// One `[[policy]]` section of a catalog file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub id: String,
    #[serde(default)]
    pub name: Option<String>,
    pub family: String,
    #[serde(default)]
    pub multiplier: Option<f64>,
    #[serde(default)]
    pub increment: Option<i64>,
    #[serde(default)]
    pub quantile: Option<f64>,
    #[serde(default)]
    pub gap_threshold: Option<i64>,
}

/// Catalog configuration: an optional preset followed by explicit policies.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogSpec {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default, rename = "policy")]
    pub policies: Vec<PolicySpec>,
}

impl CatalogSpec {
    pub fn preset(name: &str) -> Self {
        CatalogSpec { preset: Some(name.into()), policies: Vec::new() }
    }

    pub fn from_toml(text: &str) -> Result<Self, CatalogError> {
        Ok(toml::from_str(text)?)
    }
}

impl PolicySpec {
    fn to_policy(&self) -> Result<Policy, CatalogError> {
        let family = Family::parse(&self.family)
            .ok_or_else(|| CatalogError::UnknownFamily { id: self.id.clone(), family: self.family.clone() })?;
        let missing = |param: &str| CatalogError::InvalidParameter {
            id: self.id.clone(),
            reason: format!("family `{}` needs `{param}`", self.family),
        };
        let quantile = || -> Result<QuantileLevel, CatalogError> {
            let q = self.quantile.ok_or_else(|| missing("quantile"))?;
            QuantileLevel::from_fraction(q).ok_or_else(|| CatalogError::InvalidParameter {
                id: self.id.clone(),
                reason: format!("quantile {q} is not one of 0.25, 0.5, 0.75"),
            })
        };
        let rule = match family {
            Family::Baseline => Rule::Baseline,
            Family::UniformPercent => {
                let m = self.multiplier.ok_or_else(|| missing("multiplier"))?;
                if !m.is_finite() {
                    return Err(missing("finite multiplier"));
                }
                Rule::UniformPercent { multiplier_bp: multiplier_to_basis_points(m) }
            }
            Family::AbsoluteIncrement => {
                Rule::AbsoluteIncrement { increment: self.increment.ok_or_else(|| missing("increment"))? }
            }
            Family::PositiveFloorQuantile => Rule::PositiveFloorQuantile { quantile: quantile()? },
            Family::AllFloorQuantile => Rule::AllFloorQuantile { quantile: quantile()? },
            Family::MarginGatedIncrement => Rule::MarginGatedIncrement {
                gap_threshold: self.gap_threshold.ok_or_else(|| missing("gap_threshold"))?,
                increment: self.increment.ok_or_else(|| missing("increment"))?,
            },
            Family::HybridQuantileMargin => Rule::HybridQuantileMargin {
                gap_threshold: self.gap_threshold.ok_or_else(|| missing("gap_threshold"))?,
                quantile: quantile()?,
            },
        };
        let policy = Policy::new(self.id.clone(), self.name.clone().unwrap_or_else(|| self.id.clone()), rule);
        policy.check()?;
        Ok(policy)
    }
}

/// The 19-policy iPinYou experiment catalog, baseline first.
pub fn standard19() -> Vec<Policy> {
    use QuantileLevel::*;
    use Rule::*;
    vec![
        Policy::new("P0", "Logged Status Quo", Baseline),
        Policy::new("P1", "Uniform +5%", UniformPercent { multiplier_bp: 10_500 }),
        Policy::new("P2", "Uniform +10%", UniformPercent { multiplier_bp: 11_000 }),
        Policy::new("P3", "Uniform +15%", UniformPercent { multiplier_bp: 11_500 }),
        Policy::new("P4", "Uniform +20%", UniformPercent { multiplier_bp: 12_000 }),
        Policy::new("P5", "Uniform +30%", UniformPercent { multiplier_bp: 13_000 }),
        Policy::new("P6", "Add 5 To All Floors", AbsoluteIncrement { increment: 5 }),
        Policy::new("P7", "Add 10 To All Floors", AbsoluteIncrement { increment: 10 }),
        Policy::new("P8", "Add 20 To All Floors", AbsoluteIncrement { increment: 20 }),
        Policy::new("P9", "Positive Floors To Q25", PositiveFloorQuantile { quantile: Q25 }),
        Policy::new("P10", "Positive Floors To Q50", PositiveFloorQuantile { quantile: Q50 }),
        Policy::new("P11", "Positive Floors To Q75", PositiveFloorQuantile { quantile: Q75 }),
        Policy::new("P12", "All Low Floors To Q25", AllFloorQuantile { quantile: Q25 }),
        Policy::new("P13", "All Low Floors To Q50", AllFloorQuantile { quantile: Q50 }),
        Policy::new("P14", "Gap 25 Add 5", MarginGatedIncrement { gap_threshold: 25, increment: 5 }),
        Policy::new("P15", "Gap 50 Add 10", MarginGatedIncrement { gap_threshold: 50, increment: 10 }),
        Policy::new("P16", "Gap 100 Add 20", MarginGatedIncrement { gap_threshold: 100, increment: 20 }),
        Policy::new("P17", "Q50 Margin-Gated Floor", HybridQuantileMargin { gap_threshold: 50, quantile: Q50 }),
        Policy::new("P18", "Q75 Margin-Gated Floor", HybridQuantileMargin { gap_threshold: 100, quantile: Q75 }),
    ]
}

/// Ordered policy catalog, baseline first, with its frozen anchors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    pub policies: Vec<Policy>,
    pub quantiles: QuantileSet,
}

impl Catalog {
    /// Validates and orders `policies`. A missing baseline is inserted as `P0`.
    pub fn new(policies: Vec<Policy>, quantiles: Option<QuantileSet>) -> Result<Catalog, CatalogError> {
        let mut seen = HashSet::new();
        for p in &policies {
            if !seen.insert(p.id.as_str()) {
                return Err(CatalogError::DuplicateId(p.id.clone()));
            }
            p.check()?;
        }
        let (mut baselines, candidates): (Vec<_>, Vec<_>) = policies.into_iter().partition(Policy::is_baseline);
        if baselines.len() > 1 {
            return Err(CatalogError::MultipleBaselines);
        }
        if candidates.is_empty() {
            return Err(CatalogError::NoCandidates);
        }
        let baseline = baselines.pop().unwrap_or_else(|| Policy::new("P0", "Logged Status Quo", Rule::Baseline));
        if candidates.iter().any(|p| p.id == baseline.id) {
            return Err(CatalogError::DuplicateId(baseline.id));
        }
        let needs_quantiles = candidates.iter().any(|p| p.rule.uses_quantiles());
        let quantiles = match quantiles {
            Some(q) => q,
            None if needs_quantiles => return Err(CatalogError::MissingQuantiles),
            None => QuantileSet::unused(),
        };
        let mut ordered = Vec::with_capacity(candidates.len() + 1);
        ordered.push(baseline);
        ordered.extend(candidates);
        Ok(Catalog { policies: ordered, quantiles })
    }

    /// Number of non-baseline policies.
    pub fn m(&self) -> usize {
        self.policies.len() - 1
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn baseline(&self) -> &Policy {
        &self.policies[0]
    }

    pub fn candidates(&self) -> &[Policy] {
        &self.policies[1..]
    }

    pub fn get(&self, id: &str) -> Option<&Policy> {
        self.policies.iter().find(|p| p.id == id)
    }

    pub fn requires_quantiles(&self) -> bool {
        self.policies.iter().any(|p| p.rule.uses_quantiles())
    }

    pub fn candidate_floor(&self, policy: &Policy, row: &AuctionRow) -> Price {
        candidate_floor(policy, row, &self.quantiles)
    }

    /// SHA-256 of the JSON form; used to check that nothing mutates a frozen catalog.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("catalog serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Resolves a preset plus explicit policy sections into policies.
pub fn spec_policies(spec: &CatalogSpec) -> Result<Vec<Policy>, CatalogError> {
    let mut policies = match spec.preset.as_deref() {
        None => Vec::new(),
        Some(STANDARD19) => standard19(),
        Some(other) => return Err(CatalogError::UnknownPreset(other.to_string())),
    };
    for p in &spec.policies {
        policies.push(p.to_policy()?);
    }
    Ok(policies)
}

pub fn spec_requires_quantiles(spec: &CatalogSpec) -> Result<bool, CatalogError> {
    Ok(spec_policies(spec)?.iter().any(|p| p.rule.uses_quantiles()))
}

pub fn build_catalog(spec: &CatalogSpec, quantiles: Option<QuantileSet>) -> Result<Catalog, CatalogError> {
    Catalog::new(spec_policies(spec)?, quantiles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction_log::test_row;
    use proptest::prelude::*;

    fn anchors(q25: i64, q50: i64, q75: i64) -> QuantileSet {
        QuantileSet::new(Price::from_minor(q25), Price::from_minor(q50), Price::from_minor(q75), "test").freeze()
    }

    fn panel_with_floors(floors: &[i64]) -> Panel {
        Panel::new(floors.iter().map(|&f| test_row("d", f, f + 1, 0, false)).collect()).unwrap()
    }

    #[test]
    fn quartiles_interpolate_between_order_statistics() {
        let q = fit_quantiles(&panel_with_floors(&[40, 10, 30, 20])).unwrap();
        assert_eq!(q.q25, Price::from_minor_f64(17.5));
        assert_eq!(q.q50, Price::from_minor(25));
        assert_eq!(q.q75, Price::from_minor_f64(32.5));
        assert!(q.frozen);
    }

    #[test]
    fn constant_and_single_positive_floor() {
        let q = fit_quantiles(&panel_with_floors(&[7, 7, 7])).unwrap();
        assert_eq!((q.q25, q.q50, q.q75), (Price::from_minor(7), Price::from_minor(7), Price::from_minor(7)));
        let q = fit_quantiles(&panel_with_floors(&[0, 0, 5])).unwrap();
        assert_eq!((q.q25, q.q50, q.q75), (Price::from_minor(5), Price::from_minor(5), Price::from_minor(5)));
        assert!(matches!(fit_quantiles(&panel_with_floors(&[0, 0])), Err(CatalogError::NoPositiveFloors)));
    }

    #[test]
    fn standard_preset_has_nineteen_policies() {
        let cat = build_catalog(&CatalogSpec::preset(STANDARD19), Some(anchors(1, 2, 3))).unwrap();
        assert_eq!(cat.len(), 19);
        assert_eq!(cat.m(), 18);
        assert!(cat.baseline().is_baseline());
        let families: Vec<Family> = cat.policies.iter().map(|p| p.rule.family()).collect();
        assert_eq!(families.iter().filter(|f| **f == Family::UniformPercent).count(), 5);
        assert_eq!(families.iter().filter(|f| **f == Family::AbsoluteIncrement).count(), 3);
        assert_eq!(families.iter().filter(|f| **f == Family::PositiveFloorQuantile).count(), 3);
        assert_eq!(families.iter().filter(|f| **f == Family::AllFloorQuantile).count(), 2);
        assert_eq!(families.iter().filter(|f| **f == Family::MarginGatedIncrement).count(), 3);
        assert_eq!(families.iter().filter(|f| **f == Family::HybridQuantileMargin).count(), 2);
    }

    #[test]
    fn preset_needs_quantiles() {
        assert!(matches!(
            build_catalog(&CatalogSpec::preset(STANDARD19), None),
            Err(CatalogError::MissingQuantiles)
        ));
    }

    #[test]
    fn config_rejections() {
        let spec = |body: &str| CatalogSpec::from_toml(body).unwrap();
        let lowering = spec("[[policy]]\nid='A'\nfamily='uniform-percent'\nmultiplier=0.9\n");
        assert!(matches!(build_catalog(&lowering, None), Err(CatalogError::InvalidParameter { .. })));
        let only_base = spec("[[policy]]\nid='B'\nfamily='baseline'\n");
        assert!(matches!(build_catalog(&only_base, None), Err(CatalogError::NoCandidates)));
        let unknown = spec("[[policy]]\nid='C'\nfamily='dynamic'\n");
        assert!(matches!(build_catalog(&unknown, None), Err(CatalogError::UnknownFamily { .. })));
        let negative = spec("[[policy]]\nid='D'\nfamily='absolute-increment'\nincrement=-1\n");
        assert!(matches!(build_catalog(&negative, None), Err(CatalogError::InvalidParameter { .. })));
        let dup = spec(
            "[[policy]]\nid='E'\nfamily='absolute-increment'\nincrement=1\n\
             [[policy]]\nid='E'\nfamily='absolute-increment'\nincrement=2\n",
        );
        assert!(matches!(build_catalog(&dup, None), Err(CatalogError::DuplicateId(_))));
    }

    #[test]
    fn config_file_builds_in_order() {
        let spec = CatalogSpec::from_toml(
            "[[policy]]\nid='G'\nfamily='margin-gated-increment'\ngap_threshold=25\nincrement=5\n\
             [[policy]]\nid='base'\nfamily='baseline'\n\
             [[policy]]\nid='U'\nfamily='uniform-percent'\nmultiplier=1.05\n",
        )
        .unwrap();
        let cat = build_catalog(&spec, None).unwrap();
        let ids: Vec<&str> = cat.policies.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["base", "G", "U"]);
        assert_eq!(cat.policies[2].rule, Rule::UniformPercent { multiplier_bp: 10_500 });
        assert!(!cat.requires_quantiles());
    }

    #[test]
    fn table_rules() {
        let q = anchors(20, 40, 60);
        let preset = standard19();
        let p = |id: &str| preset.iter().find(|p| p.id == id).unwrap().clone();
        let row = test_row("d", 100, 200, 100, true);
        assert_eq!(candidate_floor(&p("P1"), &row, &q), Price::from_minor(105));
        assert_eq!(candidate_floor(&p("P9"), &test_row("d", 0, 50, 10, true), &q), Price::ZERO);
        assert_eq!(candidate_floor(&p("P12"), &test_row("d", 0, 50, 10, true), &q), Price::from_minor(20));
        assert_eq!(candidate_floor(&p("P18"), &test_row("d", 10, 150, 10, true), &q), Price::from_minor(60));
        assert_eq!(candidate_floor(&p("P18"), &test_row("d", 10, 90, 10, true), &q), Price::from_minor(10));
        assert_eq!(candidate_floor(&p("P14"), &test_row("d", 10, 35, 10, true), &q), Price::from_minor(15));
        assert_eq!(candidate_floor(&p("P14"), &test_row("d", 10, 34, 10, true), &q), Price::from_minor(10));
    }

    proptest! {
        #[test]
        fn candidate_floors_never_lower(floor in 0i64..5_000, overshoot in -200i64..5_000, q in 0i64..3_000) {
            let bid = (floor + overshoot).max(0);
            let filled = bid >= floor;
            let row = test_row("d", floor, bid, if filled { floor } else { 0 }, filled);
            let anchors = anchors(q, q + 10, q + 20);
            for policy in standard19() {
                let c = candidate_floor(&policy, &row, &anchors);
                prop_assert!(c >= row.floor_price());
                prop_assert_eq!(c, candidate_floor(&policy, &row, &anchors));
                if policy.is_baseline() {
                    prop_assert_eq!(c, row.floor_price());
                }
            }
        }
    }
}
