//! Exact two-decimal formatting of rational quantities.
//!
//! Everything printed in the statistics file and the trace log goes through
//! here so that half-up rounding is applied on integers, never on floats.

use std::fmt;

/// A non-negative value held in hundredths, printed as `<int>.<2 digits>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Hundredths(pub u64);

impl Hundredths {
    /// Rounds `num / den` to hundredths, half-up. `den` must be non-zero.
    pub fn from_ratio(num: u128, den: u128) -> Self {
        assert!(den != 0, "zero denominator");
        Hundredths(((num * 200 + den) / (den * 2)) as u64)
    }

    /// Microseconds rendered as milliseconds with two decimals.
    pub fn from_micros(us: u64) -> Self {
        Self::from_ratio(us as u128, 1000)
    }

    /// Mean of `sum_us` over `count` samples, in milliseconds.
    pub fn mean_micros(sum_us: u128, count: u64) -> Self {
        Self::from_ratio(sum_us, count as u128 * 1000)
    }

    /// `100 * part / whole`, i.e. a percentage.
    pub fn percent(part: u64, whole: u64) -> Self {
        Self::from_ratio(part as u128 * 100, whole as u128)
    }
}

impl fmt::Display for Hundredths {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

/// Percent shares of `parts` in their total, in hundredths of a percent.
///
/// Each share starts from its half-up rounding. When the rounded shares drift
/// from 100.00 by more than 0.01, the shares with the largest rounding error
/// in the offending direction are nudged one unit each until the drift is
/// within 0.01. Ties break towards the earlier part. No share moves more than
/// one unit away from its exact value.
pub fn percent_shares(parts: &[u64]) -> Vec<Hundredths> {
    let total: u128 = parts.iter().map(|&p| p as u128).sum();
    if total == 0 {
        return vec![Hundredths(0); parts.len()];
    }
    // Exact share in units of 1/(total) hundredths: p * 10000 / total.
    let mut shares: Vec<u64> = parts
        .iter()
        .map(|&p| Hundredths::percent(p, total as u64).0)
        .collect();
    let target: i128 = 10_000;
    let mut drift: i128 = shares.iter().map(|&s| s as i128).sum::<i128>() - target;
    if drift.abs() <= 1 {
        return shares.into_iter().map(Hundredths).collect();
    }
    // signed error of each rounded share, scaled by total: s*total - p*10000
    let mut order: Vec<usize> = (0..parts.len()).collect();
    let err = |i: usize, s: u64| s as i128 * total as i128 - parts[i] as i128 * 10_000;
    if drift > 0 {
        // rounded too high: lower the shares that were rounded up the most
        order.sort_by_key(|&i| std::cmp::Reverse(err(i, shares[i])));
        for &i in &order {
            if drift <= 1 {
                break;
            }
            if err(i, shares[i]) > 0 {
                shares[i] -= 1;
                drift -= 1;
            }
        }
    } else {
        order.sort_by_key(|&i| err(i, shares[i]));
        for &i in &order {
            if drift >= -1 {
                break;
            }
            if err(i, shares[i]) < 0 {
                shares[i] += 1;
                drift += 1;
            }
        }
    }
    shares.into_iter().map(Hundredths).collect()
}
