//! Population AQR tables across distributions, families and τ, with the
//! ordering checks and the heavy-tail limit ratios.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist_oracle::{family_limit_ratio, population_aqr, AnalyticDistribution, TailDomain};
use crate::error::{AqrError, Result};
use crate::weight_family::{omega, AlphaSchedule, TauLevel, WeightFamily};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub distributions: Vec<AnalyticDistribution>,
    /// Listed in the expected decreasing order of `ω_τ ξ_τ`.
    pub families: Vec<WeightFamily>,
    pub taus: Vec<TauLevel>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            distributions: AnalyticDistribution::comparison_six(),
            families: vec![
                WeightFamily::Ges { a: 1.0 },
                WeightFamily::Es,
                WeightFamily::Extremile,
                WeightFamily::Ge { schedule: AlphaSchedule::HalfInverse },
                WeightFamily::Tcrm { schedule: AlphaSchedule::HalfInverse },
            ],
            taus: (90..=98).map(|k| TauLevel::new(k as f64 / 100.0).expect("valid level")).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub distribution: String,
    pub domain: TailDomain,
    pub family: String,
    pub tau: f64,
    pub value: f64,
    /// `value / quantile(τ)`, reported for Fréchet rows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    /// Limit of that ratio as τ → 1, where one is known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit_ratio: Option<f64>,
}

/// A strict chain `a > b > …` of `ω_τ`-signed values checked at one
/// (distribution, τ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub distribution: String,
    pub tau: f64,
    pub chain: Vec<String>,
    pub values: Vec<f64>,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareResult {
    pub rows: Vec<CompareRow>,
    pub checks: Vec<OrderingCheck>,
}

impl CompareResult {
    pub fn all_hold(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }
}

fn strictly_decreasing(v: &[f64], sign: f64) -> bool {
    v.windows(2).all(|w| sign * w[0] > sign * w[1])
}

pub fn run(cfg: &CompareConfig) -> Result<CompareResult> {
    if cfg.distributions.is_empty() || cfg.families.is_empty() || cfg.taus.is_empty() {
        return Err(AqrError::EmptyInput);
    }
    cfg.distributions.iter().try_for_each(AnalyticDistribution::check)?;
    let jobs: Vec<(&AnalyticDistribution, TauLevel)> =
        cfg.distributions.iter().flat_map(|d| cfg.taus.iter().map(move |&t| (d, t))).collect();
    let per_job = jobs
        .par_iter()
        .map(|&(dist, tau)| -> Result<(Vec<CompareRow>, Vec<OrderingCheck>)> {
            let q = dist.quantile(tau.value())?;
            let gamma = dist.tail_index();
            let mut rows = Vec::new();
            let mut values = Vec::new();
            for fam in &cfg.families {
                let value = population_aqr(dist, fam, tau)?;
                values.push(value);
                rows.push(CompareRow {
                    distribution: dist.label(),
                    domain: dist.tail_domain(),
                    family: fam.label(),
                    tau: tau.value(),
                    value,
                    ratio: gamma.map(|_| value / q),
                    limit_ratio: gamma.and_then(|g| family_limit_ratio(fam, g)),
                });
            }
            let mut checks = vec![OrderingCheck {
                distribution: dist.label(),
                tau: tau.value(),
                chain: cfg.families.iter().map(WeightFamily::label).collect(),
                holds: strictly_decreasing(&values, omega(tau)),
                values: values.clone(),
            }];
            // Where QR sits relative to the extremile depends on the tail.
            let find = |k: &str| cfg.families.iter().position(|f| f.short_name() == k).map(|i| (cfg.families[i].label(), values[i]));
            let qr = ("QR".to_string(), q);
            let extra = match (dist.tail_domain(), find("Extremile"), find("GE")) {
                (TailDomain::Gumbel, Some(ex), Some(ge)) => Some(vec![ex, qr, ge]),
                (TailDomain::Weibull, Some(ex), _) => Some(vec![qr, ex]),
                _ => None,
            };
            if let Some(chain) = extra {
                let values: Vec<f64> = chain.iter().map(|c| c.1).collect();
                checks.push(OrderingCheck {
                    distribution: dist.label(),
                    tau: tau.value(),
                    holds: strictly_decreasing(&values, omega(tau)),
                    chain: chain.into_iter().map(|c| c.0).collect(),
                    values,
                });
            }
            Ok((rows, checks))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for (r, c) in per_job {
        rows.extend(r);
        checks.extend(c);
    }
    Ok(CompareResult { rows, checks })
}

/// Ratio `ξ_τ / Q(τ)` near the upper endpoint against its limit for a
/// Fréchet law with tail index γ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitRow {
    pub gamma: f64,
    pub family: String,
    pub tau: f64,
    pub ratio: f64,
    pub limit: f64,
    pub rel_error: f64,
}

pub fn limit_table(gammas: &[f64], families: &[WeightFamily], tau: TauLevel) -> Result<Vec<LimitRow>> {
    let jobs: Vec<(f64, &WeightFamily)> = gammas.iter().flat_map(|&g| families.iter().map(move |f| (g, f))).collect();
    jobs.par_iter()
        .map(|&(gamma, fam)| {
            let dist = AnalyticDistribution::frechet(gamma)?;
            let limit = family_limit_ratio(fam, gamma)
                .ok_or_else(|| AqrError::InvalidParameter(format!("no known limit ratio for {}", fam.label())))?;
            let ratio = population_aqr(&dist, fam, tau)? / dist.quantile(tau.value())?;
            Ok(LimitRow { gamma, family: fam.label(), tau: tau.value(), ratio, limit, rel_error: (ratio - limit).abs() / limit })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_tau_table_shape() {
        let cfg = CompareConfig { taus: vec![TauLevel::new(0.95).unwrap()], ..Default::default() };
        let r = run(&cfg).unwrap();
        assert_eq!(r.rows.len(), 6 * 5);
        let bad: Vec<_> = r.checks.iter().filter(|c| !c.holds).collect();
        assert!(bad.is_empty(), "{bad:?}");
        // Gumbel: normal and exponential; Weibull: uniform and beta.
        assert_eq!(r.checks.len(), 6 + 4);
    }

    #[test]
    fn frechet_rows_carry_ratios() {
        let cfg = CompareConfig {
            distributions: vec![AnalyticDistribution::frechet(0.5).unwrap()],
            taus: vec![TauLevel::new(0.9).unwrap()],
            ..Default::default()
        };
        let r = run(&cfg).unwrap();
        assert!(r.rows.iter().all(|row| row.ratio.is_some()));
        assert!(r.rows.iter().filter(|row| row.family.starts_with("GES")).all(|row| row.limit_ratio.is_some()));
    }
}
