//! Fixed-point money.
//!
//! Logged prices are integer minor units (the iPinYou price scale, for
//! example). Counterfactual floors such as `1.05 * f` or an interpolated
//! quantile are not integers, so every candidate floor and replay yield is
//! carried as an integer count of `1 / PRICE_SCALE` minor units. Retention
//! decisions `bid >= floor` are then exact integer comparisons, and yield
//! sums are exact integer sums.

use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

/// Sub-units per minor unit.
pub const PRICE_SCALE: i64 = 10_000;

/// Money in `1 / PRICE_SCALE` minor units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Price(i64);

impl Price {
    pub const ZERO: Price = Price(0);

    /// Wraps a raw sub-unit count.
    pub const fn from_raw(raw: i64) -> Self {
        Price(raw)
    }

    /// Converts integer minor units.
    pub const fn from_minor(minor: i64) -> Self {
        Price(minor * PRICE_SCALE)
    }

    /// Rounds a minor-unit amount to the nearest sub-unit.
    pub fn from_minor_f64(minor: f64) -> Self {
        Price((minor * PRICE_SCALE as f64).round() as i64)
    }

    pub const fn raw(self) -> i64 {
        self.0
    }

    /// Value in minor units.
    pub fn to_minor_f64(self) -> f64 {
        self.0 as f64 / PRICE_SCALE as f64
    }

    pub fn abs_diff(self, other: Price) -> Price {
        Price((self.0 - other.0).abs())
    }
}

impl Add for Price {
    type Output = Price;
    fn add(self, rhs: Price) -> Price {
        Price(self.0 + rhs.0)
    }
}

impl Sub for Price {
    type Output = Price;
    fn sub(self, rhs: Price) -> Price {
        Price(self.0 - rhs.0)
    }
}

impl fmt::Display for Price {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_minor_f64())
    }
}

/// Multiplier expressed in basis points (`10_000` = 1.0).
///
/// Parsed from decimal configuration values; `1.05` becomes `10_500`.
pub fn multiplier_to_basis_points(multiplier: f64) -> i64 {
    (multiplier * 10_000.0).round() as i64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minor_round_trip() {
        assert_eq!(Price::from_minor(105).to_minor_f64(), 105.0);
        assert_eq!(Price::from_minor_f64(17.5).raw(), 175_000);
        assert_eq!(Price::from_minor(3).abs_diff(Price::from_minor(10)), Price::from_minor(7));
    }

    #[test]
    fn basis_points_are_exact_for_catalog_multipliers() {
        for (m, bp) in [(1.05, 10_500), (1.10, 11_000), (1.15, 11_500), (1.2, 12_000), (1.3, 13_000)] {
            assert_eq!(multiplier_to_basis_points(m), bp);
        }
    }
}
