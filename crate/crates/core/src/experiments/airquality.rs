//! Average conditional AQR over the sample, `n⁻¹ Σ_i ξ̂_τ(Y | X_i·β̂)`, for a
//! site-sharded dataset, with full-data and distributed index estimates.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{rate_bandwidth, BandwidthRule};
use crate::aqr_np::aqr_profile;
use crate::dist_runtime::{default_rounds, run_distributed, ShardPlan};
use crate::error::{AqrError, Result};
use crate::kernel_cde::{index_cde_curve, Bandwidth, Dataset};
use crate::numeric::{mean_sd, ExactSum};
use crate::psis_index::{fit_full, ols_direction};
use crate::weight_family::{TauLevel, WeightFamily};

/// Covariate columns, in model order.
pub const COVARIATES: [&str; 4] = ["TEMP", "PRES", "DEWP", "WSPM"];
pub const RESPONSE: &str = "PM2.5";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AirConfig {
    pub families: Vec<WeightFamily>,
    pub taus: Vec<TauLevel>,
    pub rounds: Option<usize>,
    pub rate_exponent: f64,
    pub bandwidth: BandwidthRule,
    /// Standardize covariates to zero mean and unit variance.
    pub standardize: bool,
}

impl Default for AirConfig {
    fn default() -> Self {
        let taus = [0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99];
        let mut families = vec![WeightFamily::Qr];
        families.extend(WeightFamily::standard_five());
        Self {
            families,
            taus: taus.iter().map(|&t| TauLevel::new(t).expect("valid level")).collect(),
            rounds: None,
            rate_exponent: 0.15,
            bandwidth: BandwidthRule::Cv,
            standardize: true,
        }
    }
}

/// One raw observation. `day` is any key identifying the calendar day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AirRecord {
    pub site: String,
    pub day: String,
    pub pm25: f64,
    pub covariates: [f64; 4],
}

/// Averages records per (site, day), skipping non-finite fields, and drops
/// days where any variable has no finite reading. Shard labels follow the
/// sorted site names.
pub fn daily_dataset(records: &[AirRecord]) -> Result<(Dataset, Vec<String>)> {
    #[derive(Default)]
    struct Acc {
        sum: [f64; 5],
        count: [usize; 5],
    }
    let mut groups: BTreeMap<(&str, &str), Acc> = BTreeMap::new();
    for r in records {
        let acc = groups.entry((r.site.as_str(), r.day.as_str())).or_default();
        for (k, v) in std::iter::once(r.pm25).chain(r.covariates).enumerate() {
            if v.is_finite() {
                acc.sum[k] += v;
                acc.count[k] += 1;
            }
        }
    }
    let sites: Vec<String> = {
        let mut s: Vec<String> = groups.keys().map(|(site, _)| site.to_string()).collect();
        s.dedup();
        s
    };
    let mut y = Vec::new();
    let mut rows = Vec::new();
    let mut shard = Vec::new();
    for ((site, _), acc) in &groups {
        if acc.count.contains(&0) {
            continue;
        }
        let m: Vec<f64> = (0..5).map(|k| acc.sum[k] / acc.count[k] as f64).collect();
        y.push(m[0]);
        rows.push(m[1..].to_vec());
        shard.push(sites.iter().position(|s| s == site).expect("site collected above"));
    }
    if y.is_empty() {
        return Err(AqrError::EmptyInput);
    }
    Ok((Dataset::new(y, rows)?.with_shards(shard)?, sites))
}

/// Centres and scales each covariate column; constant columns are only centred.
pub fn standardize(data: &Dataset) -> Result<Dataset> {
    let p = data.p();
    let stats: Vec<(f64, f64)> = (0..p).map(|j| mean_sd(&data.column(j))).collect();
    let x: Vec<f64> = data
        .x_flat()
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let (m, s) = stats[k % p];
            if s > 0.0 { (v - m) / s } else { v - m }
        })
        .collect();
    Dataset::from_flat(data.y().to_vec(), x, p)?.with_shards(data.shard_of().to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub family: String,
    pub tau: f64,
    pub full: f64,
    pub distributed: f64,
    pub abs_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AirResult {
    pub n: usize,
    pub sites: usize,
    pub beta_full: Vec<f64>,
    pub beta_distributed: Vec<f64>,
    pub h: Bandwidth,
    pub h1: Bandwidth,
    pub rounds: usize,
    pub rows: Vec<AverageRow>,
}

/// `n⁻¹ Σ_i ξ̂_τ(Y | X_i·β)` for every (family, τ), in config order.
pub fn average_profile(data: &Dataset, beta: &[f64], h: Bandwidth, families: &[WeightFamily], taus: &[TauLevel]) -> Result<Vec<f64>> {
    let per_row: Vec<Result<Vec<f64>>> = (0..data.n())
        .into_par_iter()
        .map(|i| {
            let cdf = index_cde_curve(data, beta, h, data.row(i))?;
            let mut out = Vec::with_capacity(families.len() * taus.len());
            for fam in families {
                out.extend(aqr_profile(&cdf, fam, taus)?.into_iter().map(|e| e.value));
            }
            Ok(out)
        })
        .collect();
    let mut acc = vec![ExactSum::new(); families.len() * taus.len()];
    for row in per_row {
        acc.iter_mut().zip(row?).for_each(|(a, v)| a.add(v));
    }
    Ok(acc.iter().map(|a| a.value() / data.n() as f64).collect())
}

pub fn run(data: &Dataset, cfg: &AirConfig) -> Result<AirResult> {
    if cfg.families.is_empty() || cfg.taus.is_empty() {
        return Err(AqrError::EmptyInput);
    }
    let data = if cfg.standardize { standardize(data)? } else { data.clone() };
    let k = data.shard_count();
    let plan = ShardPlan::new((0..k).map(|s| data.shard_rows(s).len()).collect())?;
    let central = data.subset(&data.shard_rows(plan.central()))?;
    let h = rate_bandwidth(&data, cfg.rate_exponent)?;
    let h1 = rate_bandwidth(&central, cfg.rate_exponent)?;

    let beta_full = fit_full(&data, h, &ols_direction(&data)?)?.beta;
    let rounds = cfg.rounds.unwrap_or_else(|| default_rounds(data.n(), central.n(), h1.h).0);
    let beta_distributed = run_distributed(&data, &plan, rounds, h, h1, None)?.model.beta;

    let h_full = cfg.bandwidth.select(&data, Some(&beta_full))?;
    let h_dist = cfg.bandwidth.select(&data, Some(&beta_distributed))?;
    let full = average_profile(&data, &beta_full, h_full, &cfg.families, &cfg.taus)?;
    let dist = average_profile(&data, &beta_distributed, h_dist, &cfg.families, &cfg.taus)?;
    let mut rows = Vec::with_capacity(full.len());
    for (fi, fam) in cfg.families.iter().enumerate() {
        for (ti, tau) in cfg.taus.iter().enumerate() {
            let c = fi * cfg.taus.len() + ti;
            rows.push(AverageRow {
                family: fam.label(),
                tau: tau.value(),
                full: full[c],
                distributed: dist[c],
                abs_deviation: (full[c] - dist[c]).abs(),
            });
        }
    }
    Ok(AirResult { n: data.n(), sites: k, beta_full, beta_distributed, h: h_full, h1, rounds, rows })
}
