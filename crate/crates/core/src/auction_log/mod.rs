//! Logged auction panel: row model, ingestion and segment partitioning.
//!
//! A [`Panel`] is immutable once built. Every downstream stage reads it
//! through shared references, so it can be handed to any number of worker
//! threads.

mod parse;
mod segments;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::money::Price;

pub use parse::{parse_log, parse_reader, write_log, write_log_to, Ingest, IngestOptions, Schema};
pub use segments::{partition_segments, SegmentDimension, SegmentKey, SegmentMap};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error: column `{0}` not found in header")]
    MissingColumn(String),
    #[error("line {line}: cannot parse {field} from `{value}`")]
    BadValue { line: u64, field: &'static str, value: String },
    #[error("line {line}: {violation}")]
    RowInvariant { line: u64, violation: RowViolation },
    #[error("panel has no valid rows")]
    EmptyPanel,
    #[error("segment configuration: {0}")]
    SegmentConfig(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Reason a row fails the logged-row contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowViolation {
    NegativeMoney,
    FilledBelowFloor,
    PaymentAboveBid,
    PaymentWithoutFill,
}

impl fmt::Display for RowViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match self {
            RowViolation::NegativeMoney => "floor, bid and payment must be nonnegative",
            RowViolation::FilledBelowFloor => "filled row has bid below the logged floor",
            RowViolation::PaymentAboveBid => "filled row has payment above the bid",
            RowViolation::PaymentWithoutFill => "unfilled row has nonzero payment",
        };
        f.write_str(msg)
    }
}

/// One logged auction opportunity. Money fields are integer minor units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuctionRow {
    pub day: Arc<str>,
    pub advertiser: Arc<str>,
    pub exchange: Arc<str>,
    pub region: Arc<str>,
    pub category: Arc<str>,
    pub floor: i64,
    pub bid: i64,
    pub payment: i64,
    pub filled: bool,
}

impl AuctionRow {
    pub fn validate(&self) -> Result<(), RowViolation> {
        if self.floor < 0 || self.bid < 0 || self.payment < 0 {
            return Err(RowViolation::NegativeMoney);
        }
        if self.filled {
            if self.bid < self.floor {
                return Err(RowViolation::FilledBelowFloor);
            }
            if self.payment > self.bid {
                return Err(RowViolation::PaymentAboveBid);
            }
        } else if self.payment != 0 {
            return Err(RowViolation::PaymentWithoutFill);
        }
        Ok(())
    }

    pub fn floor_price(&self) -> Price {
        Price::from_minor(self.floor)
    }

    pub fn bid_price(&self) -> Price {
        Price::from_minor(self.bid)
    }

    pub fn payment_price(&self) -> Price {
        Price::from_minor(self.payment)
    }
}

/// Logged bid-floor gap `bid - floor`, in minor units.
pub fn bid_gap(row: &AuctionRow) -> i64 {
    row.bid - row.floor
}

/// Validated, day-partitioned collection of logged rows.
#[derive(Debug, Clone)]
pub struct Panel {
    rows: Vec<AuctionRow>,
    days: Vec<Arc<str>>,
    day_of_row: Vec<u32>,
}

impl Panel {
    /// Builds a panel from rows in ingestion order. Rows must already satisfy
    /// the row contract.
    pub fn new(rows: Vec<AuctionRow>) -> Result<Panel, LogError> {
        if rows.is_empty() {
            return Err(LogError::EmptyPanel);
        }
        for (i, row) in rows.iter().enumerate() {
            row.validate().map_err(|violation| LogError::RowInvariant { line: i as u64 + 1, violation })?;
        }
        let days: Vec<Arc<str>> = rows
            .iter()
            .map(|r| r.day.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let day_of_row = rows
            .iter()
            .map(|r| days.binary_search(&r.day).expect("day collected above") as u32)
            .collect();
        Ok(Panel { rows, days, day_of_row })
    }

    pub fn rows(&self) -> &[AuctionRow] {
        &self.rows
    }

    /// Distinct day labels, ascending.
    pub fn days(&self) -> &[Arc<str>] {
        &self.days
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Index into [`Panel::days`] of row `i`.
    pub fn day_index(&self, i: usize) -> usize {
        self.day_of_row[i] as usize
    }

    pub fn day_indices(&self) -> &[u32] {
        &self.day_of_row
    }

    /// Count of logged fills.
    pub fn fills(&self) -> usize {
        self.rows.iter().filter(|r| r.filled).count()
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut buf = Vec::new();
        write_log_to(self, &mut buf).expect("writing to memory cannot fail");
        hex::encode(Sha256::digest(&buf))
    }
}

#[cfg(test)]
pub(crate) fn test_row(day: &str, floor: i64, bid: i64, payment: i64, filled: bool) -> AuctionRow {
    AuctionRow {
        day: day.into(),
        advertiser: "a1".into(),
        exchange: "x1".into(),
        region: "r1".into(),
        category: "".into(),
        floor,
        bid,
        payment,
        filled,
    }
}
