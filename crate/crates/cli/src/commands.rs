use std::collections::BTreeMap;
use std::path::Path;

use aqr_core::dist_oracle::{population_aqr, AnalyticDistribution};
use aqr_core::dist_runtime::{default_rounds, partition, run_distributed, ShardPlan};
use aqr_core::experiments::airquality::{self, AirConfig, AirRecord, COVARIATES, RESPONSE};
use aqr_core::experiments::{compare, rate_bandwidth, sim1, sim2, validate};
use aqr_core::kernel_cde::{Bandwidth, Dataset};
use aqr_core::portfolio::{evaluate, optimize_weights, portfolio_risk, PortfolioOptions, ReturnsMatrix};
use aqr_core::psis_index::{fit_full_with, ols_direction, FitOptions};
use aqr_core::sample_risk::{aqr_sample, AqrMode, Sample};
use aqr_core::{TauLevel, WeightFamily};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::io::{Output, Table};
use crate::{CliError, Globals};

type Outcome = Result<bool, CliError>;

fn load<T: DeserializeOwned + Default>(g: &Globals) -> Result<T, CliError> {
    let Some(path) = &g.config else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| CliError::Config { path: path.clone(), source })
}

fn levels(values: &[f64]) -> Vec<TauLevel> {
    values.iter().map(|&t| TauLevel::new(t).expect("valid level")).collect()
}

fn qr_and_standard_five() -> Vec<WeightFamily> {
    let mut v = vec![WeightFamily::Qr];
    v.extend(WeightFamily::standard_five());
    v
}

pub fn validate(g: &Globals) -> Outcome {
    let cfg: validate::ValidateConfig = load(g)?;
    let mut out = Output::new(&g.out)?;
    let result = validate::run(&cfg)?;

    #[derive(Serialize)]
    struct Row<'a> {
        family: &'a str,
        condition: &'static str,
        status: String,
        checked: usize,
        violations: usize,
        witness_tau: Option<f64>,
        witness_at: Option<f64>,
        detail: Option<&'a str>,
    }
    let mut rows = Vec::new();
    for r in &result.reports {
        for (condition, c) in [
            ("positivity-normalization", &r.positivity_normalization),
            ("reverse-monotone", &r.reverse_monotone),
            ("tau-monotone-g", &r.tau_monotone_g),
        ] {
            rows.push(Row {
                family: &r.family,
                condition,
                status: format!("{:?}", c.status).to_lowercase(),
                checked: c.checked,
                violations: c.violations,
                witness_tau: c.witness.as_ref().map(|w| w.tau),
                witness_at: c.witness.as_ref().map(|w| w.at),
                detail: c.witness.as_ref().map(|w| w.detail.as_str()),
            });
        }
    }
    out.csv("validate.csv", &rows)?;
    out.json("validate.json", &result)?;
    out.sidecar("validate", &cfg, None, &[])?;
    Ok(result.passed)
}

pub fn compare(g: &Globals) -> Outcome {
    let cfg: compare::CompareConfig = load(g)?;
    let mut out = Output::new(&g.out)?;
    let result = compare::run(&cfg)?;

    #[derive(Serialize)]
    struct Row<'a> {
        distribution: &'a str,
        domain: String,
        family: &'a str,
        tau: f64,
        value: f64,
        ratio: Option<f64>,
        limit_ratio: Option<f64>,
    }
    let rows: Vec<Row> = result
        .rows
        .iter()
        .map(|r| Row {
            distribution: &r.distribution,
            domain: format!("{:?}", r.domain).to_lowercase(),
            family: &r.family,
            tau: r.tau,
            value: r.value,
            ratio: r.ratio,
            limit_ratio: r.limit_ratio,
        })
        .collect();
    out.csv("compare.csv", &rows)?;
    out.json("compare.json", &result)?;
    out.sidecar("compare", &cfg, None, &[])?;
    Ok(result.all_hold())
}

pub fn sim1(g: &Globals) -> Outcome {
    let mut cfg: sim1::Sim1Config = load(g)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    let mut out = Output::new(&g.out)?;
    let result = sim1::run(&cfg)?;

    #[derive(Serialize)]
    struct Row<'a> {
        error: &'a str,
        family: &'a str,
        tau: f64,
        x0: f64,
        truth: f64,
        rpad_mean: f64,
        rpad_sd: f64,
        reps: usize,
    }
    let rows: Vec<Row> = result
        .cells
        .iter()
        .map(|c| Row {
            error: &c.error,
            family: &c.family,
            tau: c.tau,
            x0: c.x0,
            truth: c.truth,
            rpad_mean: c.rpad.mean,
            rpad_sd: c.rpad.sd,
            reps: c.rpad.reps,
        })
        .collect();
    out.csv("sim1.csv", &rows)?;
    out.json("sim1.json", &result)?;
    out.sidecar("sim1", &cfg, Some(cfg.seed), &["RPAD values are percentages"])?;
    Ok(true)
}

pub fn sim2(g: &Globals) -> Outcome {
    let mut cfg: sim2::Sim2Config = load(g)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    let mut out = Output::new(&g.out)?;
    let result = sim2::run(&cfg)?;

    #[derive(Serialize)]
    struct Row<'a> {
        family: &'a str,
        tau: f64,
        truth: f64,
        all_mean: f64,
        all_sd: f64,
        de_mean: f64,
        de_sd: f64,
    }
    let rows: Vec<Row> = result
        .cells
        .iter()
        .map(|c| Row {
            family: &c.family,
            tau: c.tau,
            truth: c.truth,
            all_mean: c.all.mean,
            all_sd: c.all.sd,
            de_mean: c.de.mean,
            de_sd: c.de.sd,
        })
        .collect();

    #[derive(Serialize)]
    struct AaeRow {
        estimator: &'static str,
        mean: f64,
        sd: f64,
        reps: usize,
    }
    let aae: Vec<AaeRow> = [("all", &result.aae_all), ("init", &result.aae_init), ("de", &result.aae_de)]
        .into_iter()
        .map(|(estimator, s)| AaeRow { estimator, mean: s.mean, sd: s.sd, reps: s.reps })
        .collect();
    out.csv("sim2.csv", &rows)?;
    out.csv("sim2_aae.csv", &aae)?;
    out.json("sim2.json", &result)?;
    out.sidecar("sim2", &cfg, Some(cfg.seed), &["RPAD values are percentages"])?;
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PortfolioConfig {
    pub families: Vec<WeightFamily>,
    pub taus: Vec<TauLevel>,
    pub options: PortfolioOptions,
}

impl Default for PortfolioConfig {
    fn default() -> Self {
        Self { families: qr_and_standard_five(), taus: levels(&[0.05]), options: PortfolioOptions::default() }
    }
}

fn read_returns(path: &Path) -> Result<ReturnsMatrix, CliError> {
    let t = Table::read(path)?;
    let cols = (0..t.headers.len()).map(|j| t.numeric(j, false)).collect::<Result<Vec<_>, _>>()?;
    let rows = (0..t.rows.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
    Ok(ReturnsMatrix::new(t.headers.clone(), rows)?)
}

pub fn portfolio(g: &Globals, fit: &Path, test: &Path, bench: &Path) -> Outcome {
    let mut cfg: PortfolioConfig = load(g)?;
    if let Some(s) = g.seed {
        cfg.options.seed = s;
    }
    let mut out = Output::new(&g.out)?;
    let fit_r = read_returns(fit)?;
    let test_r = read_returns(test)?;
    if fit_r.labels() != test_r.labels() {
        return Err(CliError::Usage(format!("asset columns differ: {:?} vs {:?}", fit_r.labels(), test_r.labels())));
    }
    let bench_t = Table::read(bench)?;
    if bench_t.headers.len() != 1 {
        return Err(CliError::Parse { path: bench.to_path_buf(), line: 1, column: String::new(), message: "expected a single column".into() });
    }
    let bench_v = bench_t.numeric(0, false)?;

    #[derive(Serialize)]
    struct Report {
        family: String,
        tau: f64,
        weights: BTreeMap<String, f64>,
        risk: f64,
        sharpe: f64,
        pct_days: f64,
        total_log_return: f64,
        best_start: usize,
        improved: bool,
        warnings: Vec<String>,
    }
    let mut reports = Vec::new();
    let mut header = vec!["family".to_string(), "tau".into(), "risk".into(), "sharpe".into(), "pct_days".into(), "total_log_return".into()];
    header.extend(fit_r.labels().iter().cloned());
    let mut records = Vec::new();
    for fam in &cfg.families {
        for &tau in &cfg.taus {
            let res = optimize_weights(&fit_r, fam, tau, &cfg.options)?;
            let risk = portfolio_risk(&fit_r, &res.weights, fam, tau, cfg.options.mode)?;
            let perf = evaluate(&test_r, &res.weights, &bench_v)?;
            let mut rec = vec![
                fam.label(),
                tau.value().to_string(),
                risk.to_string(),
                perf.sharpe.to_string(),
                perf.pct_days.to_string(),
                perf.total_log_return.to_string(),
            ];
            rec.extend(res.weights.alpha.iter().map(f64::to_string));
            records.push(rec);
            reports.push(Report {
                family: fam.label(),
                tau: tau.value(),
                weights: fit_r.labels().iter().cloned().zip(res.weights.alpha.iter().copied()).collect(),
                risk,
                sharpe: perf.sharpe,
                pct_days: perf.pct_days,
                total_log_return: perf.total_log_return,
                best_start: res.best_start,
                improved: res.improved,
                warnings: res.warnings,
            });
        }
    }
    out.records("portfolio.csv", &header, &records)?;
    out.json("portfolio.json", &reports)?;
    out.sidecar(
        "portfolio",
        &cfg,
        Some(cfg.options.seed),
        &["risk is the fit-window objective; sharpe and pct_days are computed on the test window"],
    )?;
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AirCmdConfig {
    /// Inclusive first and last day keys (`YYYY-MM-DD`) to keep.
    pub start: Option<String>,
    pub end: Option<String>,
    pub model: AirConfig,
}

impl Default for AirCmdConfig {
    fn default() -> Self {
        Self { start: None, end: None, model: AirConfig::default() }
    }
}

/// Reads hourly or daily rows. The site comes from a `station` or `site`
/// column, the day from `date` or `year`/`month`/`day` columns; without
/// them every row is its own day at one site.
pub fn read_air_records(path: &Path) -> Result<Vec<AirRecord>, CliError> {
    let t = Table::read(path)?;
    let pm = t.numeric(t.require(RESPONSE)?, true)?;
    let cov = COVARIATES.iter().map(|c| t.numeric(t.require(c)?, true)).collect::<Result<Vec<_>, _>>()?;
    let site = t.position("station").or_else(|| t.position("site")).map(|j| t.text(j));
    let day: Vec<String> = if let Some(j) = t.position("date") {
        t.text(j)
    } else if let (Some(y), Some(m), Some(d)) = (t.position("year"), t.position("month"), t.position("day")) {
        let parts = [y, m, d].map(|j| t.numeric(j, false));
        let [y, m, d] = parts;
        let (y, m, d) = (y?, m?, d?);
        (0..t.rows.len()).map(|i| format!("{:04}-{:02}-{:02}", y[i] as i64, m[i] as i64, d[i] as i64)).collect()
    } else {
        (0..t.rows.len()).map(|i| format!("row{i:08}")).collect()
    };
    Ok((0..t.rows.len())
        .map(|i| AirRecord {
            site: site.as_ref().map_or_else(|| "all".to_string(), |s| s[i].clone()),
            day: day[i].clone(),
            pm25: pm[i],
            covariates: [cov[0][i], cov[1][i], cov[2][i], cov[3][i]],
        })
        .collect())
}

pub fn airquality(g: &Globals, data: &Path) -> Outcome {
    let cfg: AirCmdConfig = load(g)?;
    let mut out = Output::new(&g.out)?;
    let records: Vec<AirRecord> = read_air_records(data)?
        .into_iter()
        .filter(|r| cfg.start.as_ref().is_none_or(|s| r.day.as_str() >= s.as_str()))
        .filter(|r| cfg.end.as_ref().is_none_or(|e| r.day.as_str() <= e.as_str()))
        .collect();
    let (dataset, sites) = airquality::daily_dataset(&records)?;
    let result = airquality::run(&dataset, &cfg.model)?;
    out.csv("airquality.csv", &result.rows)?;

    #[derive(Serialize)]
    struct Full<'a> {
        site_names: &'a [String],
        #[serde(flatten)]
        result: &'a airquality::AirResult,
    }
    out.json("airquality.json", &Full { site_names: &sites, result: &result })?;
    out.sidecar(
        "airquality",
        &cfg,
        None,
        &[
            "observations are averaged to daily means per site, ignoring missing readings",
            "days with no reading of some variable are dropped",
            "each site is one shard; the first site in sorted order is the central machine",
        ],
    )?;
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub response: String,
    /// Covariate columns; all other columns when omitted.
    pub covariates: Option<Vec<String>>,
    /// Fixed bandwidth; otherwise `σ̂ n^{-rate_exponent}`.
    pub h: Option<f64>,
    pub rate_exponent: f64,
    /// Starting direction; least squares when omitted.
    pub init: Option<Vec<f64>>,
    pub max_iter: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { response: "y".into(), covariates: None, h: None, rate_exponent: 0.15, init: None, max_iter: FitOptions::default().max_iter }
    }
}

fn read_dataset(path: &Path, response: &str, covariates: Option<&[String]>, exclude: &[&str]) -> Result<(Dataset, Table, Vec<String>), CliError> {
    let t = Table::read(path)?;
    let y = t.numeric(t.require(response)?, false)?;
    let names: Vec<String> = match covariates {
        Some(c) => c.to_vec(),
        None => t.headers.iter().filter(|h| *h != response && !exclude.contains(&h.as_str())).cloned().collect(),
    };
    if names.is_empty() {
        return Err(CliError::Usage("no covariate columns".into()));
    }
    let cols = names.iter().map(|c| t.numeric(t.require(c)?, false)).collect::<Result<Vec<_>, _>>()?;
    let rows = (0..y.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
    Ok((Dataset::new(y, rows)?, t, names))
}

fn bandwidth(data: &Dataset, fixed: Option<f64>, c: f64) -> Result<Bandwidth, CliError> {
    Ok(match fixed {
        Some(h) => Bandwidth::new(h)?,
        None => rate_bandwidth(data, c)?,
    })
}

pub fn fit(g: &Globals, data: &Path) -> Outcome {
    let cfg: FitConfig = load(g)?;
    let mut out = Output::new(&g.out)?;
    let (d, _, names) = read_dataset(data, &cfg.response, cfg.covariates.as_deref(), &[])?;
    let h = bandwidth(&d, cfg.h, cfg.rate_exponent)?;
    let init = match &cfg.init {
        Some(b) => b.clone(),
        None => ols_direction(&d)?,
    };
    let report = fit_full_with(&d, h, &init, FitOptions { max_iter: cfg.max_iter, ..Default::default() })?;

    #[derive(Serialize)]
    struct Fit<'a> {
        covariates: &'a [String],
        init: &'a [f64],
        #[serde(flatten)]
        report: &'a aqr_core::psis_index::FitReport,
    }
    out.json("fit.json", &Fit { covariates: &names, init: &init, report: &report })?;
    out.sidecar("fit", &cfg, None, &[])?;
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistFitConfig {
    pub response: String,
    pub covariates: Option<Vec<String>>,
    /// Column naming each row's machine; the first label in sorted order is central.
    pub shard_column: Option<String>,
    /// Without a shard column, rows are shuffled into this many near-equal shards.
    pub workers: usize,
    /// Newton rounds; the rate formula when omitted.
    pub rounds: Option<usize>,
    pub h: Option<f64>,
    pub h1: Option<f64>,
    pub rate_exponent: f64,
    pub init: Option<Vec<f64>>,
}

impl Default for DistFitConfig {
    fn default() -> Self {
        Self { response: "y".into(), covariates: None, shard_column: None, workers: 1, rounds: None, h: None, h1: None, rate_exponent: 0.15, init: None }
    }
}

pub fn dist_fit(g: &Globals, data: &Path) -> Outcome {
    let cfg: DistFitConfig = load(g)?;
    let seed = g.seed.unwrap_or(0);
    let mut out = Output::new(&g.out)?;
    let exclude: Vec<&str> = cfg.shard_column.iter().map(String::as_str).collect();
    let (d, table, names) = read_dataset(data, &cfg.response, cfg.covariates.as_deref(), &exclude)?;
    let (d, plan, labels) = match &cfg.shard_column {
        Some(col) => {
            let raw = table.text(table.require(col)?);
            let mut labels = raw.clone();
            labels.sort();
            labels.dedup();
            let shard: Vec<usize> = raw.iter().map(|l| labels.binary_search(l).expect("label collected")).collect();
            let d = d.with_shards(shard)?;
            let plan = ShardPlan::new((0..labels.len()).map(|k| d.shard_rows(k).len()).collect())?;
            (d, plan, labels)
        }
        None => {
            if cfg.workers == 0 || cfg.workers > d.n() {
                return Err(CliError::Usage(format!("workers must be between 1 and {}", d.n())));
            }
            let (q, r) = (d.n() / cfg.workers, d.n() % cfg.workers);
            let plan = ShardPlan::new((0..cfg.workers).map(|k| q + usize::from(k < r)).collect())?;
            let d = partition(&d, &plan, seed)?;
            (d, plan, (0..cfg.workers).map(|k| k.to_string()).collect())
        }
    };
    let central = d.subset(&d.shard_rows(plan.central()))?;
    let h = bandwidth(&d, cfg.h, cfg.rate_exponent)?;
    let h1 = bandwidth(&central, cfg.h1, cfg.rate_exponent)?;
    let (q_default, formula) = default_rounds(d.n(), central.n(), h1.h);
    let rounds = cfg.rounds.unwrap_or(q_default);
    let fit = run_distributed(&d, &plan, rounds, h, h1, cfg.init.as_deref())?;

    #[derive(Serialize)]
    struct DistOut<'a> {
        covariates: &'a [String],
        shards: &'a [String],
        shard_sizes: &'a [usize],
        h1: Bandwidth,
        rounds_formula: f64,
        #[serde(flatten)]
        fit: &'a aqr_core::dist_runtime::DistFit,
    }
    out.json(
        "dist_fit.json",
        &DistOut { covariates: &names, shards: &labels, shard_sizes: plan.sizes(), h1, rounds_formula: formula, fit: &fit },
    )?;
    out.sidecar("dist_fit", &cfg, cfg.shard_column.is_none().then_some(seed), &[])?;
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskConfig {
    pub families: Vec<WeightFamily>,
    pub taus: Vec<TauLevel>,
    pub mode: AqrMode,
    /// Sample column; the first column when omitted.
    pub column: Option<String>,
    pub distribution: Option<AnalyticDistribution>,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            families: qr_and_standard_five(), taus: levels(&[0.05, 0.1, 0.9, 0.95]), mode: AqrMode::Normalized, column: None, distribution: None }
    }
}

pub fn risk(g: &Globals, data: Option<&Path>) -> Outcome {
    let cfg: RiskConfig = load(g)?;
    if data.is_none() && cfg.distribution.is_none() {
        return Err(CliError::Usage("risk needs --data or a distribution in the configuration".into()));
    }
    let mut out = Output::new(&g.out)?;

    #[derive(Serialize)]
    struct Row {
        source: String,
        family: String,
        tau: f64,
        value: f64,
    }
    let mut rows = Vec::new();
    if let Some(path) = data {
        let t = Table::read(path)?;
        let j = match &cfg.column {
            Some(c) => t.require(c)?,
            None => 0,
        };
        let sample = Sample::new(t.numeric(j, false)?)?;
        for fam in &cfg.families {
            for &tau in &cfg.taus {
                rows.push(Row { source: t.headers[j].clone(), family: fam.label(), tau: tau.value(), value: aqr_sample(&sample, fam, tau, cfg.mode)? });
            }
        }
    }
    if let Some(dist) = &cfg.distribution {
        for fam in &cfg.families {
            for &tau in &cfg.taus {
                rows.push(Row { source: dist.label(), family: fam.label(), tau: tau.value(), value: population_aqr(dist, fam, tau)? });
            }
        }
    }
    out.csv("risk.csv", &rows)?;
    out.sidecar("risk", &cfg, None, &[])?;
    Ok(true)
}
