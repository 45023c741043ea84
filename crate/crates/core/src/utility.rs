//! System utilities over per-user rates and their gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default rate floor (nats) guarding `log` and negative powers at zero rate.
pub const DEFAULT_RATE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UtilityKind {
    AlphaFair,
    MaxMin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UtilityConfig {
    pub kind: UtilityKind,
    pub alpha: f64,
    pub rate_floor: f64,
}

impl Default for UtilityConfig {
    fn default() -> Self {
        UtilityConfig::sum_rate()
    }
}

impl UtilityConfig {
    pub fn alpha_fair(alpha: f64) -> Self {
        UtilityConfig {
            kind: UtilityKind::AlphaFair,
            alpha,
            rate_floor: DEFAULT_RATE_FLOOR,
        }
    }

    pub fn sum_rate() -> Self {
        UtilityConfig::alpha_fair(0.0)
    }

    pub fn proportional_fair() -> Self {
        UtilityConfig::alpha_fair(1.0)
    }

    pub fn max_min() -> Self {
        UtilityConfig {
            kind: UtilityKind::MaxMin,
            alpha: 0.0,
            rate_floor: DEFAULT_RATE_FLOOR,
        }
    }

    pub fn is_sum_rate(&self) -> bool {
        self.kind == UtilityKind::AlphaFair && self.alpha == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("utility alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.rate_floor > 0.0) {
            return Err(Error::Config(format!("utility rate_floor must be > 0, got {}", self.rate_floor)));
        }
        Ok(())
    }

    /// Utility of one rate (alpha-fair family only).
    fn single(&self, r: f64) -> f64 {
        let a = self.alpha;
        if a == 0.0 {
            r
        } else if a == 1.0 {
            r.max(self.rate_floor).ln()
        } else {
            r.max(self.rate_floor).powf(1.0 - a) / (1.0 - a)
        }
    }

    fn single_gradient(&self, r: f64) -> f64 {
        let a = self.alpha;
        if a == 0.0 {
            1.0
        } else if r < self.rate_floor {
            // flat below the floor; report the one-sided limit
            self.rate_floor.powf(-a)
        } else {
            r.powf(-a)
        }
    }

    /// Total utility of `rates`.
    pub fn evaluate(&self, rates: &[f64]) -> Result<f64> {
        check_rates(rates)?;
        Ok(match self.kind {
            UtilityKind::AlphaFair => rates.iter().map(|&r| self.single(r)).sum(),
            UtilityKind::MaxMin => rates.iter().copied().fold(f64::INFINITY, f64::min),
        })
    }

    /// `dU / dR_i`. For max-min this is the indicator of the first minimizer.
    pub fn rate_gradient(&self, rates: &[f64]) -> Result<Vec<f64>> {
        check_rates(rates)?;
        Ok(match self.kind {
            UtilityKind::AlphaFair => rates.iter().map(|&r| self.single_gradient(r)).collect(),
            UtilityKind::MaxMin => {
                let mut g = vec![0.0; rates.len()];
                if let Some((k, _)) = rates
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(a.0.cmp(&b.0)))
                {
                    g[k] = 1.0;
                }
                g
            }
        })
    }
}

fn check_rates(rates: &[f64]) -> Result<()> {
    match rates.iter().find(|r| !(**r >= 0.0)) {
        Some(r) => Err(Error::Domain(format!("rates must be nonnegative, got {r}"))),
        None => Ok(()),
    }
}

pub fn evaluate(config: &UtilityConfig, rates: &[f64]) -> Result<f64> {
    config.evaluate(rates)
}

pub fn rate_gradient(config: &UtilityConfig, rates: &[f64]) -> Result<Vec<f64>> {
    config.rate_gradient(rates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn evaluate_examples() {
        assert_eq!(UtilityConfig::sum_rate().evaluate(&[1.0, 2.0]).unwrap(), 3.0);
        let pf = UtilityConfig::proportional_fair().evaluate(&[1.0, 2.0]).unwrap();
        assert!((pf - 2f64.ln()).abs() < 1e-15);
        let a2 = UtilityConfig::alpha_fair(2.0).evaluate(&[1.0, 2.0]).unwrap();
        assert!((a2 + 1.5).abs() < 1e-15);
        assert_eq!(UtilityConfig::max_min().evaluate(&[3.0, 2.0, 5.0]).unwrap(), 2.0);
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(UtilityConfig::sum_rate().rate_gradient(&[0.3, 7.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(UtilityConfig::proportional_fair().rate_gradient(&[1.0, 2.0]).unwrap(), vec![1.0, 0.5]);
        assert_eq!(UtilityConfig::alpha_fair(2.0).rate_gradient(&[1.0, 2.0]).unwrap(), vec![1.0, 0.25]);
        assert_eq!(UtilityConfig::max_min().rate_gradient(&[2.0, 1.0, 1.0]).unwrap(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn negative_rate_is_domain_error() {
        assert!(matches!(UtilityConfig::sum_rate().evaluate(&[-1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn config_keys_parse() {
        let c: UtilityConfig = toml::from_str("kind = \"alpha-fair\"\nalpha = 1.0\n").unwrap();
        assert_eq!(c, UtilityConfig::proportional_fair());
        let c: UtilityConfig = toml::from_str("kind = \"max-min\"").unwrap();
        assert_eq!(c.kind, UtilityKind::MaxMin);
    }

    proptest! {
        #[test]
        fn gradient_matches_central_differences(alpha in 0.0f64..3.0, rates in prop::collection::vec(0.05f64..10.0, 1..6)) {
            // near alpha = 1 the closed form loses digits to cancellation
            prop_assume!((alpha - 1.0).abs() > 1e-3);
            let cfg = UtilityConfig::alpha_fair(alpha);
            let g = cfg.rate_gradient(&rates).unwrap();
            for k in 0..rates.len() {
                let h = 1e-6 * rates[k];
                let mut up = rates.clone();
                let mut dn = rates.clone();
                up[k] += h;
                dn[k] -= h;
                let fd = (cfg.evaluate(&up).unwrap() - cfg.evaluate(&dn).unwrap()) / (2.0 * h);
                prop_assert!((fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1e-12), "fd {} vs {}", fd, g[k]);
            }
        }

        #[test]
        fn alpha_fair_is_concave(alpha in 0.0f64..3.0, a in prop::collection::vec(0.01f64..10.0, 3), b in prop::collection::vec(0.01f64..10.0, 3)) {
            let cfg = UtilityConfig::alpha_fair(alpha);
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let lhs = cfg.evaluate(&mid).unwrap();
            let rhs = 0.5 * (cfg.evaluate(&a).unwrap() + cfg.evaluate(&b).unwrap());
            prop_assert!(lhs >= rhs - 1e-12 * rhs.abs().max(1.0));
        }
    }
}
