//! Seeded synthetic auction logs and a ground-truth replay oracle.
//!
//! Rows are generated in fixed-size blocks; block `b` draws from a ChaCha8
//! stream keyed by `(seed, b)`, so output does not depend on thread count.
//!
//! The oracle re-implements the reserve rules and the replay outcome with
//! exact rational comparisons and compensated float sums. It shares no code
//! with the replay engine beyond the policy data types.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auction_log::{AuctionRow, LogError, Panel};
use crate::policy_catalog::{Policy, QuantileLevel, QuantileSet, Rule};
use crate::stats::NeumaierSum;

/// Rows per generator block.
pub const BLOCK_ROWS: usize = 1 << 16;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("oracle baseline yield is zero")]
    ZeroBaseline,
    #[error(transparent)]
    Log(#[from] LogError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_rows: usize,
    pub n_days: usize,
    pub advertisers: usize,
    pub exchanges: usize,
    pub regions: usize,
    pub categories: usize,
    pub zero_floor_prob: f64,
    /// Log-location and log-scale of positive floors, minor units.
    pub floor_log_mu: f64,
    pub floor_log_sigma: f64,
    /// Log-location and log-scale of `bid - floor`.
    pub overshoot_log_mu: f64,
    pub overshoot_log_sigma: f64,
    /// Share of rows bidding below the floor (never filled).
    pub underbid_prob: f64,
    /// Fill probability `1 / (1 + exp(-(intercept + slope * gap)))`.
    /// An infinite slope means filled iff the gap is nonnegative.
    pub fill_intercept: f64,
    pub fill_slope: f64,
    /// Payment sits this fraction of the way from floor to bid.
    pub payment_frac: f64,
    /// Spread of floor log-location across advertisers; 0 makes them identical.
    pub advertiser_floor_shift: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 0,
            n_rows: 100_000,
            n_days: 14,
            advertisers: 8,
            exchanges: 3,
            regions: 5,
            categories: 4,
            zero_floor_prob: 0.3,
            floor_log_mu: 50f64.ln(),
            floor_log_sigma: 0.8,
            overshoot_log_mu: 30f64.ln(),
            overshoot_log_sigma: 1.0,
            underbid_prob: 0.0,
            fill_intercept: 0.5,
            fill_slope: 0.02,
            payment_frac: 0.3,
            advertiser_floor_shift: 0.0,
        }
    }
}

fn unit(name: &str, p: f64) -> Result<(), SynthError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(SynthError::Config(format!("{name} must lie in [0, 1], got {p}")))
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_rows == 0 {
            return Err(SynthError::Config("n_rows must be positive".into()));
        }
        if self.n_days < 2 {
            return Err(SynthError::Config(format!("n_days must be at least 2, got {}", self.n_days)));
        }
        if self.advertisers == 0 || self.exchanges == 0 || self.regions == 0 || self.categories == 0 {
            return Err(SynthError::Config("segment cardinalities must be positive".into()));
        }
        unit("zero_floor_prob", self.zero_floor_prob)?;
        unit("underbid_prob", self.underbid_prob)?;
        unit("payment_frac", self.payment_frac)?;
        if !(self.floor_log_sigma > 0.0 && self.overshoot_log_sigma > 0.0) {
            return Err(SynthError::Config("log-scales must be positive".into()));
        }
        if !self.floor_log_mu.is_finite() || !self.overshoot_log_mu.is_finite() || !self.advertiser_floor_shift.is_finite() {
            return Err(SynthError::Config("log-locations must be finite".into()));
        }
        if self.fill_slope.is_nan() || self.fill_slope < 0.0 || !self.fill_intercept.is_finite() {
            return Err(SynthError::Config("fill slope must be nonnegative and intercept finite".into()));
        }
        Ok(())
    }
}

/// Interned labels so blocks share one allocation per value.
struct Labels {
    days: Vec<Arc<str>>,
    advertisers: Vec<Arc<str>>,
    exchanges: Vec<Arc<str>>,
    regions: Vec<Arc<str>>,
    categories: Vec<Arc<str>>,
}

impl Labels {
    fn new(c: &GeneratorConfig) -> Labels {
        let make = |prefix: &str, n: usize| (0..n).map(|i| Arc::from(format!("{prefix}{i:03}"))).collect();
        Labels {
            days: make("day-", c.n_days),
            advertisers: make("adv-", c.advertisers),
            exchanges: make("ex-", c.exchanges),
            regions: make("reg-", c.regions),
            categories: make("cat-", c.categories),
        }
    }
}

fn fill_probability(c: &GeneratorConfig, gap: i64) -> f64 {
    if c.fill_slope.is_infinite() {
        return if gap >= 0 { 1.0 } else { 0.0 };
    }
    1.0 / (1.0 + (-(c.fill_intercept + c.fill_slope * gap as f64)).exp())
}

fn generate_block(c: &GeneratorConfig, labels: &Labels, block: usize) -> Vec<AuctionRow> {
    let start = block * BLOCK_ROWS;
    let end = (start + BLOCK_ROWS).min(c.n_rows);
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    rng.set_stream(block as u64);
    let overshoot = LogNormal::new(c.overshoot_log_mu, c.overshoot_log_sigma).expect("validated scale");
    let floor_dists: Vec<LogNormal<f64>> = (0..c.advertisers)
        .map(|a| {
            let pos = if c.advertisers > 1 { a as f64 / (c.advertisers - 1) as f64 - 0.5 } else { 0.0 };
            LogNormal::new(c.floor_log_mu + c.advertiser_floor_shift * pos, c.floor_log_sigma).expect("validated scale")
        })
        .collect();
    let mut rows = Vec::with_capacity(end - start);
    for i in start..end {
        let adv = rng.random_range(0..c.advertisers);
        let ex = rng.random_range(0..c.exchanges);
        let reg = rng.random_range(0..c.regions);
        let cat = rng.random_range(0..c.categories);
        let floor = if rng.random::<f64>() < c.zero_floor_prob {
            0
        } else {
            (floor_dists[adv].sample(&mut rng).round() as i64).max(1)
        };
        let over = overshoot.sample(&mut rng).round() as i64;
        let bid = if rng.random::<f64>() < c.underbid_prob { (floor - over.max(1)).max(0) } else { floor + over };
        let gap = bid - floor;
        let filled = gap >= 0 && rng.random::<f64>() < fill_probability(c, gap);
        let payment = if filled { floor + (c.payment_frac * gap as f64).round() as i64 } else { 0 };
        rows.push(AuctionRow {
            day: labels.days[i % c.n_days].clone(),
            advertiser: labels.advertisers[adv].clone(),
            exchange: labels.exchanges[ex].clone(),
            region: labels.regions[reg].clone(),
            category: labels.categories[cat].clone(),
            floor,
            bid,
            payment,
            filled,
        });
    }
    rows
}

fn n_blocks(n_rows: usize) -> usize {
    n_rows.div_ceil(BLOCK_ROWS)
}

/// Generates the full panel described by `config`.
pub fn generate_log(config: &GeneratorConfig) -> Result<Panel, SynthError> {
    config.validate()?;
    let labels = Labels::new(config);
    let blocks: Vec<Vec<AuctionRow>> = (0..n_blocks(config.n_rows)).into_par_iter().map(|b| generate_block(config, &labels, b)).collect();
    Ok(Panel::new(blocks.into_iter().flatten().collect())?)
}

/// Exact rational `num / den` with a positive denominator.
#[derive(Debug, Clone, Copy)]
struct Ratio {
    num: i128,
    den: i128,
}

impl Ratio {
    fn int(v: i64) -> Ratio {
        Ratio { num: v as i128, den: 1 }
    }

    fn ge(self, o: Ratio) -> bool {
        self.num * o.den >= o.num * self.den
    }

    fn max(self, o: Ratio) -> Ratio {
        if self.ge(o) {
            self
        } else {
            o
        }
    }

    fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn anchor(q: &QuantileSet, level: QuantileLevel) -> Ratio {
    let raw = match level {
        QuantileLevel::Q25 => q.q25,
        QuantileLevel::Q50 => q.q50,
        QuantileLevel::Q75 => q.q75,
    };
    Ratio { num: raw.raw() as i128, den: crate::money::PRICE_SCALE as i128 }
}

/// The oracle's own reading of each reserve rule.
fn oracle_reserve(rule: &Rule, q: &QuantileSet, floor: i64, bid: i64) -> Ratio {
    let f = Ratio::int(floor);
    match *rule {
        Rule::Baseline => f,
        Rule::UniformPercent { multiplier_bp } => Ratio { num: floor as i128 * multiplier_bp as i128, den: 10_000 },
        Rule::AbsoluteIncrement { increment } => Ratio::int(floor + increment),
        Rule::PositiveFloorQuantile { quantile } if floor > 0 => f.max(anchor(q, quantile)),
        Rule::PositiveFloorQuantile { .. } => f,
        Rule::AllFloorQuantile { quantile } => f.max(anchor(q, quantile)),
        Rule::MarginGatedIncrement { gap_threshold, increment } if bid - floor >= gap_threshold => Ratio::int(floor + increment),
        Rule::MarginGatedIncrement { .. } => f,
        Rule::HybridQuantileMargin { gap_threshold, quantile } if bid - floor >= gap_threshold => f.max(anchor(q, quantile)),
        Rule::HybridQuantileMargin { .. } => f,
    }
}

/// `(counterfactual yield, logged yield, retained)` for one row.
fn oracle_row(rule: &Rule, q: &QuantileSet, row: &AuctionRow) -> (Ratio, Ratio, bool) {
    let reserve = oracle_reserve(rule, q, row.floor, row.bid);
    let zero = Ratio::int(0);
    let logged = if row.filled { Ratio::int(row.payment).max(Ratio::int(row.floor)) } else { zero };
    if !row.filled {
        return (zero, logged, false);
    }
    if Ratio::int(row.bid).ge(reserve) {
        (Ratio::int(row.payment).max(reserve), logged, true)
    } else {
        (zero, logged, false)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct OracleAcc {
    z: NeumaierSum,
    base: NeumaierSum,
    zz: NeumaierSum,
    zb: NeumaierSum,
    bb: NeumaierSum,
    n: u64,
    fills: u64,
    kept: u64,
}

impl OracleAcc {
    fn push(&mut self, y: Ratio, b: Ratio, filled: bool, kept: bool) {
        // Both sides share the 1/10_000 grid, so z is exact before conversion.
        let z = Ratio { num: y.num * b.den - b.num * y.den, den: y.den * b.den }.value();
        let b = b.value();
        self.z.add(z);
        self.base.add(b);
        self.zz.add(z * z);
        self.zb.add(z * b);
        self.bb.add(b * b);
        self.n += 1;
        self.fills += filled as u64;
        self.kept += kept as u64;
    }

    fn merge(&mut self, o: &OracleAcc) {
        self.z.add(o.z.value());
        self.base.add(o.base.value());
        self.zz.add(o.zz.value());
        self.zb.add(o.zb.value());
        self.bb.add(o.bb.value());
        self.n += o.n;
        self.fills += o.fills;
        self.kept += o.kept;
    }

    fn finish(&self) -> Result<OracleEstimate, SynthError> {
        let base = self.base.value();
        if base <= 0.0 {
            return Err(SynthError::ZeroBaseline);
        }
        let lift = self.z.value() / base;
        // Delta method for a ratio of sums.
        let resid = (self.zz.value() - 2.0 * lift * self.zb.value() + lift * lift * self.bb.value()).max(0.0);
        Ok(OracleEstimate {
            lift,
            se: resid.sqrt() / base,
            n: self.n,
            retained_share: if self.fills == 0 { 1.0 } else { self.kept as f64 / self.fills as f64 },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub lift: f64,
    pub se: f64,
    pub n: u64,
    pub retained_share: f64,
}

/// Oracle replay over the given rows.
pub fn oracle_replay(rows: &[AuctionRow], policy: &Policy, quantiles: &QuantileSet) -> Result<OracleEstimate, SynthError> {
    let mut acc = OracleAcc::default();
    for r in rows {
        let (y, b, kept) = oracle_row(&policy.rule, quantiles, r);
        acc.push(y, b, r.filled, kept);
    }
    acc.finish()
}

/// Population lift for a fresh `n_oracle`-row draw from `config` (its seed
/// and row count are replaced by `population_seed` and `n_oracle`).
pub fn true_lift_oracle(
    config: &GeneratorConfig,
    policy: &Policy,
    quantiles: &QuantileSet,
    n_oracle: usize,
    population_seed: u64,
) -> Result<OracleEstimate, SynthError> {
    true_lift_oracle_filtered(config, policy, quantiles, n_oracle, population_seed, |_| true)
}

/// As [`true_lift_oracle`], restricted to rows accepted by `keep`.
pub fn true_lift_oracle_filtered(
    config: &GeneratorConfig,
    policy: &Policy,
    quantiles: &QuantileSet,
    n_oracle: usize,
    population_seed: u64,
    keep: impl Fn(&AuctionRow) -> bool + Sync,
) -> Result<OracleEstimate, SynthError> {
    true_lifts_oracle(config, std::slice::from_ref(policy), quantiles, n_oracle, population_seed, keep)?
        .pop()
        .expect("one policy in, one estimate out")
}

/// Population lifts for several policies from one pass over the population.
pub fn true_lifts_oracle(
    config: &GeneratorConfig,
    policies: &[Policy],
    quantiles: &QuantileSet,
    n_oracle: usize,
    population_seed: u64,
    keep: impl Fn(&AuctionRow) -> bool + Sync,
) -> Result<Vec<Result<OracleEstimate, SynthError>>, SynthError> {
    let pop = GeneratorConfig { seed: population_seed, n_rows: n_oracle, ..config.clone() };
    pop.validate()?;
    let labels = Labels::new(&pop);
    let partial: Vec<Vec<OracleAcc>> = (0..n_blocks(n_oracle))
        .into_par_iter()
        .map(|b| {
            let rows = generate_block(&pop, &labels, b);
            let mut accs = vec![OracleAcc::default(); policies.len()];
            for r in rows.iter().filter(|r| keep(r)) {
                for (acc, p) in accs.iter_mut().zip(policies) {
                    let (y, base, kept) = oracle_row(&p.rule, quantiles, r);
                    acc.push(y, base, r.filled, kept);
                }
            }
            accs
        })
        .collect();
    let mut total = vec![OracleAcc::default(); policies.len()];
    for block in &partial {
        for (t, a) in total.iter_mut().zip(block) {
            t.merge(a);
        }
    }
    Ok(total.iter().map(OracleAcc::finish).collect())
}
