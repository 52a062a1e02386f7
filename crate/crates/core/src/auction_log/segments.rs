use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{bid_gap, AuctionRow, LogError, Panel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegmentDimension {
    Advertiser,
    Exchange,
    Region,
    Category,
    BidGapBucket,
}

impl SegmentDimension {
    pub fn as_str(self) -> &'static str {
        match self {
            SegmentDimension::Advertiser => "advertiser",
            SegmentDimension::Exchange => "exchange",
            SegmentDimension::Region => "region",
            SegmentDimension::Category => "category",
            SegmentDimension::BidGapBucket => "bid-gap-bucket",
        }
    }
}

impl fmt::Display for SegmentDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentKey {
    pub dimension: SegmentDimension,
    pub value: String,
}

impl SegmentKey {
    pub fn new(dimension: SegmentDimension, value: impl Into<String>) -> Self {
        SegmentKey { dimension, value: value.into() }
    }
}

impl fmt::Display for SegmentKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.dimension, self.value)
    }
}

/// Row-index sets per segment. Segments smaller than the coverage minimum
/// are kept apart in `uncovered`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SegmentMap {
    pub covered: BTreeMap<SegmentKey, Vec<usize>>,
    pub uncovered: BTreeMap<SegmentKey, Vec<usize>>,
}

impl SegmentMap {
    pub fn covered_count(&self) -> usize {
        self.covered.len()
    }
}

fn bucket_label(gap: i64, edges: &[i64]) -> String {
    // Edges are strictly increasing; buckets are [e_k, e_{k+1}) plus the two open ends.
    let pos = edges.partition_point(|&e| e <= gap);
    if pos == 0 {
        format!("(-inf,{})", edges[0])
    } else if pos == edges.len() {
        format!("[{},inf)", edges[pos - 1])
    } else {
        format!("[{},{})", edges[pos - 1], edges[pos])
    }
}

fn label(row: &AuctionRow, dim: SegmentDimension, edges: &[i64]) -> String {
    match dim {
        SegmentDimension::Advertiser => row.advertiser.to_string(),
        SegmentDimension::Exchange => row.exchange.to_string(),
        SegmentDimension::Region => row.region.to_string(),
        SegmentDimension::Category => row.category.to_string(),
        SegmentDimension::BidGapBucket => bucket_label(bid_gap(row), edges),
    }
}

/// Partitions the panel along each requested dimension independently.
///
/// Gap bucket edges are in minor units and only consulted for
/// [`SegmentDimension::BidGapBucket`]. Rows whose gap falls below the first
/// edge land in a `(-inf, e_0)` bucket.
pub fn partition_segments(
    panel: &Panel,
    dimensions: &[SegmentDimension],
    min_rows: usize,
    gap_bucket_edges: &[i64],
) -> Result<SegmentMap, LogError> {
    if dimensions.is_empty() {
        return Err(LogError::SegmentConfig("no segment dimensions requested".into()));
    }
    if min_rows == 0 {
        return Err(LogError::SegmentConfig("min_rows must be at least 1".into()));
    }
    if dimensions.contains(&SegmentDimension::BidGapBucket) {
        if gap_bucket_edges.is_empty() {
            return Err(LogError::SegmentConfig("bid-gap buckets need at least one edge".into()));
        }
        if gap_bucket_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LogError::SegmentConfig("bid-gap bucket edges must be strictly increasing".into()));
        }
    }

    let mut all: BTreeMap<SegmentKey, Vec<usize>> = BTreeMap::new();
    let mut dims = dimensions.to_vec();
    dims.sort();
    dims.dedup();
    for &dim in &dims {
        for (i, row) in panel.rows().iter().enumerate() {
            all.entry(SegmentKey::new(dim, label(row, dim, gap_bucket_edges))).or_default().push(i);
        }
    }
    let mut map = SegmentMap::default();
    for (key, rows) in all {
        if rows.len() >= min_rows {
            map.covered.insert(key, rows);
        } else {
            map.uncovered.insert(key, rows);
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction_log::test_row;

    fn with_adv(adv: &str, floor: i64, bid: i64) -> AuctionRow {
        AuctionRow { advertiser: adv.into(), ..test_row("d", floor, bid, floor, true) }
    }

    #[test]
    fn single_advertiser_one_segment() {
        let panel = Panel::new(vec![with_adv("a", 1, 2), with_adv("a", 1, 3)]).unwrap();
        let map = partition_segments(&panel, &[SegmentDimension::Advertiser], 1, &[]).unwrap();
        assert_eq!(map.covered.len(), 1);
        assert_eq!(map.covered[&SegmentKey::new(SegmentDimension::Advertiser, "a")], vec![0, 1]);
        assert!(map.uncovered.is_empty());
    }

    #[test]
    fn small_segments_are_uncovered() {
        let mut rows: Vec<_> = (0..5).map(|_| with_adv("a", 1, 2)).collect();
        rows.extend((0..2).map(|_| with_adv("b", 1, 2)));
        let panel = Panel::new(rows).unwrap();
        let map = partition_segments(&panel, &[SegmentDimension::Advertiser], 3, &[]).unwrap();
        assert_eq!(map.covered.len(), 1);
        assert_eq!(map.uncovered.len(), 1);
        assert_eq!(map.uncovered[&SegmentKey::new(SegmentDimension::Advertiser, "b")].len(), 2);
        let total: usize = map.covered.values().chain(map.uncovered.values()).map(Vec::len).sum();
        assert_eq!(total, panel.n());
    }

    #[test]
    fn gap_buckets_are_half_open() {
        let panel = Panel::new(vec![with_adv("a", 0, 10), with_adv("a", 0, 30), with_adv("a", 0, 70)]).unwrap();
        let map = partition_segments(&panel, &[SegmentDimension::BidGapBucket], 1, &[0, 25, 50]).unwrap();
        let labels: Vec<_> = map.covered.keys().map(|k| k.value.as_str()).collect();
        assert_eq!(labels, ["[0,25)", "[25,50)", "[50,inf)"]);
        assert!(map.covered.values().all(|v| v.len() == 1));
        assert_eq!(bucket_label(25, &[0, 25, 50]), "[25,50)");
        assert_eq!(bucket_label(-4, &[0, 25, 50]), "(-inf,0)");
    }

    #[test]
    fn configuration_errors() {
        let panel = Panel::new(vec![with_adv("a", 1, 2)]).unwrap();
        assert!(partition_segments(&panel, &[], 1, &[]).is_err());
        assert!(partition_segments(&panel, &[SegmentDimension::BidGapBucket], 1, &[5, 5]).is_err());
    }
}
