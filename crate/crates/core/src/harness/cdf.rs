//! Empirical rate CDFs.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::write_records;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub rate: f64,
    pub quantile: f64,
}

/// Sorted rates paired with `k / n`.
pub fn empirical_cdf(rates: &[f64]) -> Result<Vec<CdfPoint>> {
    if rates.iter().any(|r| r.is_nan()) {
        return Err(Error::Numeric("rate is NaN".into()));
    }
    let mut sorted = rates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(k, rate)| CdfPoint { rate, quantile: (k + 1) as f64 / n })
        .collect())
}

pub fn write_cdf_csv<W: Write>(rates: &[f64], out: W) -> Result<()> {
    write_records(&empirical_cdf(rates)?, out)
}

/// One row of a per-user rate dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRecord {
    pub user: usize,
    pub rate: f64,
}

pub fn write_rates_csv<W: Write>(rates: &[f64], out: W) -> Result<()> {
    let rows: Vec<RateRecord> = rates.iter().enumerate().map(|(user, &rate)| RateRecord { user, rate }).collect();
    write_records(&rows, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::read_records;
    use proptest::prelude::*;

    #[test]
    fn three_point_cdf() {
        let c = empirical_cdf(&[3.0, 1.0, 2.0]).unwrap();
        let pairs: Vec<(f64, f64)> = c.iter().map(|p| (p.rate, p.quantile)).collect();
        assert_eq!(pairs, vec![(1.0, 1.0 / 3.0), (2.0, 2.0 / 3.0), (3.0, 1.0)]);
    }

    #[test]
    fn nan_is_rejected() {
        assert!(empirical_cdf(&[1.0, f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn rates_round_trip(rates in prop::collection::vec(0.0f64..1e6, 0..20)) {
            let mut buf = Vec::new();
            write_rates_csv(&rates, &mut buf).unwrap();
            let back: Vec<RateRecord> = read_records(buf.as_slice()).unwrap();
            prop_assert_eq!(back.iter().map(|r| r.rate).collect::<Vec<_>>(), rates);
        }

        #[test]
        fn cdf_is_monotone(rates in prop::collection::vec(-10.0f64..10.0, 1..30)) {
            let c = empirical_cdf(&rates).unwrap();
            prop_assert!(c.windows(2).all(|w| w[0].rate <= w[1].rate && w[0].quantile < w[1].quantile));
            prop_assert_eq!(c.last().unwrap().quantile, 1.0);
        }
    }
}
