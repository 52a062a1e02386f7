//! Replay and certification engine for offline reserve-price policy selection.
//!
//! The crate turns a logged auction panel and a finite reserve-policy catalog
//! into a conservative decision object: a certified validation target,
//! statistically dominated alternatives, and unresolved candidates, together
//! with support, multiplicity, segment-safety and transfer diagnostics.
//!
//! Stages, bottom up:
//!
//! * [`auction_log`]: panel model, ingestion, segment partitioning.
//! * [`policy_catalog`]: reserve rules and frozen quantile anchors.
//! * [`replay`]: fixed-bid replay with exact, worker-independent totals.
//! * [`decision`]: simultaneous bounds, lower-bound leader, elimination.
//! * [`support`]: boundary windows, q-local radii, bound calculators.
//! * [`segment_safety`]: per-segment bounds and the non-harm certificate.
//! * [`validation`]: frozen transfer, rank stability, day bootstrap.
//! * [`synth`]: seeded generator and an independent replay oracle.
//! * [`pipeline`]: file-based stages driven by one run configuration.

pub mod auction_log;
pub mod decision;
pub mod money;
pub mod pipeline;
pub mod policy_catalog;
pub mod replay;
pub mod segment_safety;
pub mod stats;
pub mod support;
pub mod synth;
pub mod validation;

pub use auction_log::{AuctionRow, Panel, SegmentDimension, SegmentKey, SegmentMap};

pub use money::Price;
pub use policy_catalog::{Catalog, Policy, QuantileSet};
pub use replay::ReplaySummary;
pub use decision::{DecisionObject, PolicyBounds};
