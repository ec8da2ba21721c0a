//! Python bindings: weight families, analytic distributions, sample and
//! conditional AQR, single-index fitting and portfolio optimization.

use aqr_core::aqr_np;
use aqr_core::dist_oracle::{self, AnalyticDistribution};
use aqr_core::dist_runtime::{self, ShardPlan};
use aqr_core::kernel_cde::{self, Bandwidth};
use aqr_core::portfolio::{self, PortfolioOptions, PortfolioWeights, ReturnsMatrix};
use aqr_core::psis_index;
use aqr_core::sample_risk::{self, AqrMode};
use aqr_core::weight_family::{default_grids, validate_c1, AlphaSchedule, TauLevel};
use aqr_core::AqrError;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: AqrError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn level(t: f64) -> PyResult<TauLevel> {
    TauLevel::new(t).map_err(err)
}

fn bw(h: f64) -> PyResult<Bandwidth> {
    Bandwidth::new(h).map_err(err)
}

fn alpha_schedule(name: &str) -> PyResult<AlphaSchedule> {
    Ok(match name {
        "half-inverse" => AlphaSchedule::HalfInverse,
        "cotangent" => AlphaSchedule::Cotangent,
        "extremile-equivalent" => AlphaSchedule::ExtremileEquivalent,
        "linear" => AlphaSchedule::Linear,
        _ => return Err(PyValueError::new_err(format!("unknown schedule {name:?}"))),
    })
}

fn aqr_mode(name: &str) -> PyResult<AqrMode> {
    match name {
        "normalized" => Ok(AqrMode::Normalized),
        "raw" => Ok(AqrMode::Raw),
        _ => Err(PyValueError::new_err(format!("mode must be 'normalized' or 'raw', got {name:?}"))),
    }
}

/// A weight family over quantile levels.
#[pyclass(frozen, name = "WeightFamily", module = "aqr")]
struct PyFamily(aqr_core::WeightFamily);

#[pymethods]
impl PyFamily {
    /// Builds a family from its kind: qr, es, ges (a), extremile, ge or tcrm
    /// (schedule), exp-spectral.
    #[new]
    #[pyo3(signature = (kind, a=None, schedule=None))]
    fn new(kind: &str, a: Option<f64>, schedule: Option<&str>) -> PyResult<Self> {
        use aqr_core::WeightFamily as W;
        let sched = || alpha_schedule(schedule.unwrap_or("half-inverse"));
        let f = match kind {
            "qr" => W::Qr,
            "es" => W::Es,
            "ges" => W::Ges { a: a.unwrap_or(1.0) },
            "extremile" => W::Extremile,
            "ge" => W::Ge { schedule: sched()? },
            "tcrm" => W::Tcrm { schedule: sched()? },
            "exp-spectral" => W::ExpSpectral,
            _ => return Err(PyValueError::new_err(format!("unknown family kind {kind:?}"))),
        };
        f.check().map_err(err)?;
        Ok(Self(f))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let f: aqr_core::WeightFamily = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        f.check().map_err(err)?;
        Ok(Self(f))
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.0).expect("family serializes")
    }

    #[getter]
    fn label(&self) -> String {
        self.0.label()
    }

    /// Weight density `J_τ(s)`.
    fn j(&self, tau: f64, s: f64) -> PyResult<f64> {
        self.0.j(level(tau)?, s).map_err(err)
    }

    /// Cumulative weight `G_τ(u)`.
    fn g(&self, tau: f64, u: f64) -> PyResult<f64> {
        self.0.g(level(tau)?, u).map_err(err)
    }

    /// Checks the weight conditions on the default grids; returns
    /// `(passed, report_json)`.
    fn validate(&self) -> PyResult<(bool, String)> {
        let (taus, s) = default_grids();
        let r = validate_c1(&self.0, &taus, &s).map_err(err)?;
        Ok((r.passed(), serde_json::to_string(&r).expect("report serializes")))
    }

    fn __repr__(&self) -> String {
        format!("WeightFamily({})", self.0.label())
    }
}

/// An analytic response distribution.
#[pyclass(frozen, name = "Distribution", module = "aqr")]
struct PyDistribution(AnalyticDistribution);

#[pymethods]
impl PyDistribution {
    /// Parses `{"kind": ..., params}`, e.g. `{"kind": "normal", "mu": 0, "sigma": 1}`.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let d: AnalyticDistribution = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        d.check().map_err(err)?;
        Ok(Self(d))
    }

    #[staticmethod]
    #[pyo3(signature = (mu=0.0, sigma=1.0))]
    fn normal(mu: f64, sigma: f64) -> PyResult<Self> {
        AnalyticDistribution::normal(mu, sigma).map(Self).map_err(err)
    }

    #[staticmethod]
    fn student_t(df: f64) -> PyResult<Self> {
        AnalyticDistribution::student_t(df).map(Self).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (rate=1.0))]
    fn exponential(rate: f64) -> PyResult<Self> {
        AnalyticDistribution::exponential(rate).map(Self).map_err(err)
    }

    #[staticmethod]
    fn frechet(gamma: f64) -> PyResult<Self> {
        AnalyticDistribution::frechet(gamma).map(Self).map_err(err)
    }

    fn quantile(&self, s: f64) -> PyResult<f64> {
        self.0.quantile(s).map_err(err)
    }

    fn cdf(&self, y: f64) -> f64 {
        self.0.cdf(y)
    }

    #[getter]
    fn label(&self) -> String {
        self.0.label()
    }

    fn __repr__(&self) -> String {
        format!("Distribution({})", self.0.label())
    }
}

/// A right-continuous step CDF.
#[pyclass(frozen, name = "StepCDF", module = "aqr")]
struct PyStepCdf(kernel_cde::StepCDF);

#[pymethods]
impl PyStepCdf {
    #[new]
    fn new(knots: Vec<f64>, levels: Vec<f64>) -> PyResult<Self> {
        kernel_cde::StepCDF::new(knots, levels).map(Self).map_err(err)
    }

    #[getter]
    fn knots(&self) -> Vec<f64> {
        self.0.knots().to_vec()
    }

    #[getter]
    fn levels(&self) -> Vec<f64> {
        self.0.levels().to_vec()
    }

    fn __call__(&self, y: f64) -> f64 {
        self.0.eval(y)
    }
}

/// Responses, covariate rows and optional machine labels.
#[pyclass(frozen, name = "Dataset", module = "aqr")]
struct PyDataset(kernel_cde::Dataset);

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (y, x, shards=None))]
    fn new(y: Vec<f64>, x: Vec<Vec<f64>>, shards: Option<Vec<usize>>) -> PyResult<Self> {
        let mut d = kernel_cde::Dataset::new(y, x).map_err(err)?;
        if let Some(s) = shards {
            d = d.with_shards(s).map_err(err)?;
        }
        Ok(Self(d))
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn p(&self) -> usize {
        self.0.p()
    }
}

#[pyfunction]
fn population_aqr(dist: &PyDistribution, family: &PyFamily, tau: f64) -> PyResult<f64> {
    dist_oracle::population_aqr(&dist.0, &family.0, level(tau)?).map_err(err)
}

/// Order-statistic AQR estimate of a sample.
#[pyfunction]
#[pyo3(signature = (values, family, tau, mode="normalized"))]
fn aqr_sample(values: Vec<f64>, family: &PyFamily, tau: f64, mode: &str) -> PyResult<f64> {
    let s = sample_risk::Sample::new(values).map_err(err)?;
    sample_risk::aqr_sample(&s, &family.0, level(tau)?, aqr_mode(mode)?).map_err(err)
}

/// AQR of a step CDF.
#[pyfunction]
fn aqr_conditional(cdf: &PyStepCdf, family: &PyFamily, tau: f64) -> PyResult<f64> {
    Ok(aqr_np::aqr_conditional(&cdf.0, &family.0, level(tau)?).map_err(err)?.value)
}

/// Kernel estimate of `F(y | x = x0)` for a single covariate.
#[pyfunction]
fn cde_curve(data: &PyDataset, h: f64, x0: f64) -> PyResult<PyStepCdf> {
    kernel_cde::cde_curve(&data.0, bw(h)?, x0).map(PyStepCdf).map_err(err)
}

/// Kernel estimate of `F(y | x·β = x0·β)`.
#[pyfunction]
fn index_cde_curve(data: &PyDataset, beta: Vec<f64>, h: f64, x0: Vec<f64>) -> PyResult<PyStepCdf> {
    kernel_cde::index_cde_curve(&data.0, &beta, bw(h)?, &x0).map(PyStepCdf).map_err(err)
}

/// Leave-one-out CV bandwidth over the default grid, on `x` or on `x·β`.
#[pyfunction]
#[pyo3(signature = (data, beta=None))]
fn cv_bandwidth(data: &PyDataset, beta: Option<Vec<f64>>) -> PyResult<f64> {
    let grid = kernel_cde::default_bandwidth_grid(&data.0, beta.as_deref()).map_err(err)?;
    Ok(kernel_cde::cv_bandwidth(&data.0, beta.as_deref(), &grid).map_err(err)?.h)
}

#[pyfunction]
fn psis_objective(data: &PyDataset, beta: Vec<f64>, h: f64) -> PyResult<f64> {
    psis_index::psis_objective(&data.0, &beta, bw(h)?).map_err(err)
}

#[pyfunction]
fn psis_gradient(data: &PyDataset, beta: Vec<f64>, h: f64) -> PyResult<Vec<f64>> {
    psis_index::psis_gradient(&data.0, &beta, bw(h)?).map_err(err)
}

/// Full-data single-index fit; starts from least squares when `init` is omitted.
#[pyfunction]
#[pyo3(signature = (data, h, init=None))]
fn fit_full(data: &PyDataset, h: f64, init: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
    let init = match init {
        Some(b) => b,
        None => psis_index::ols_direction(&data.0).map_err(err)?,
    };
    Ok(psis_index::fit_full(&data.0, bw(h)?, &init).map_err(err)?.beta)
}

/// Distributed fit over the dataset's shard labels; returns `(beta, comm_json)`.
#[pyfunction]
#[pyo3(signature = (data, rounds, h, h1, init=None))]
fn run_distributed(data: &PyDataset, rounds: usize, h: f64, h1: f64, init: Option<Vec<f64>>) -> PyResult<(Vec<f64>, String)> {
    let d = &data.0;
    let plan = ShardPlan::new((0..d.shard_count()).map(|k| d.shard_rows(k).len()).collect()).map_err(err)?;
    let fit = dist_runtime::run_distributed(d, &plan, rounds, bw(h)?, bw(h1)?, init.as_deref()).map_err(err)?;
    Ok((fit.model.beta, serde_json::to_string(&fit.comm).expect("report serializes")))
}

fn returns(rows: Vec<Vec<f64>>) -> PyResult<ReturnsMatrix> {
    let d = rows.first().map_or(0, Vec::len);
    ReturnsMatrix::new((0..d).map(|j| format!("a{j}")).collect(), rows).map_err(err)
}

/// Long-only weights minimizing `ω_τ ξ̂_τ(Rα)`; returns `(alpha, risk)`.
#[pyfunction]
#[pyo3(signature = (rows, family, tau, starts=20, iterations=2000, seed=7))]
fn optimize_weights(rows: Vec<Vec<f64>>, family: &PyFamily, tau: f64, starts: usize, iterations: usize, seed: u64) -> PyResult<(Vec<f64>, f64)> {
    let r = returns(rows)?;
    let opts = PortfolioOptions { starts, iterations, seed, ..Default::default() };
    let fit = portfolio::optimize_weights(&r, &family.0, level(tau)?, &opts).map_err(err)?;
    Ok((fit.weights.alpha, fit.risk))
}

/// Out-of-sample `(sharpe, pct_days)` against a benchmark series.
#[pyfunction]
fn evaluate(rows: Vec<Vec<f64>>, alpha: Vec<f64>, bench: Vec<f64>) -> PyResult<(f64, f64)> {
    let r = returns(rows)?;
    let w = PortfolioWeights::new(alpha).map_err(err)?;
    let p = portfolio::evaluate(&r, &w, &bench).map_err(err)?;
    Ok((p.sharpe, p.pct_days))
}

#[pymodule]
fn aqr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFamily>()?;
    m.add_class::<PyDistribution>()?;
    m.add_class::<PyStepCdf>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(population_aqr, m)?)?;
    m.add_function(wrap_pyfunction!(aqr_sample, m)?)?;
    m.add_function(wrap_pyfunction!(aqr_conditional, m)?)?;
    m.add_function(wrap_pyfunction!(cde_curve, m)?)?;
    m.add_function(wrap_pyfunction!(index_cde_curve, m)?)?;
    m.add_function(wrap_pyfunction!(cv_bandwidth, m)?)?;
    m.add_function(wrap_pyfunction!(psis_objective, m)?)?;
    m.add_function(wrap_pyfunction!(psis_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(fit_full, m)?)?;
    m.add_function(wrap_pyfunction!(run_distributed, m)?)?;
    m.add_function(wrap_pyfunction!(optimize_weights, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
