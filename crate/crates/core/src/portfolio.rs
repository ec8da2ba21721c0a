//! Long-only portfolios minimizing `ω_τ ξ̂_τ(αᵀY)` over the probability
//! simplex, and out-of-sample Sharpe ratio / percentage-of-days evaluation.

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AqrError, Result};
use crate::experiments::replication_rng;
use crate::numeric::{mean_sd, ExactSum};
use crate::sample_risk::{aqr_sorted, plotting_weights, AqrMode};
use crate::weight_family::{omega, TauLevel, WeightFamily};

/// Trading days per year.
pub const TRADING_DAYS: f64 = 252.0;

/// `T × d` daily log returns, row-major, with asset labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnsMatrix {
    labels: Vec<String>,
    t: usize,
    d: usize,
    values: Vec<f64>,
}

impl ReturnsMatrix {
    pub fn new(labels: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = labels.len();
        if d == 0 {
            return Err(AqrError::EmptyInput);
        }
        if rows.len() < 2 {
            return Err(AqrError::InvalidParameter(format!("need at least 2 days, got {}", rows.len())));
        }
        let t = rows.len();
        let mut values = Vec::with_capacity(t * d);
        for row in rows {
            if row.len() != d {
                return Err(AqrError::ShapeMismatch { expected: d, got: row.len() });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(AqrError::NonFinite("returns"));
            }
            values.extend(row);
        }
        Ok(Self { labels, t, d, values })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn days(&self) -> usize {
        self.t
    }

    pub fn assets(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.t).map(|i| self.values[i * self.d + j]).collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let rows = (0..self.t).map(|i| self.row(i).iter().map(|&v| f(v)).collect()).collect();
        Self::new(self.labels.clone(), rows)
    }

    /// Daily returns of the portfolio `α`.
    pub fn portfolio_returns(&self, alpha: &PortfolioWeights) -> Result<Vec<f64>> {
        if alpha.alpha.len() != self.d {
            return Err(AqrError::ShapeMismatch { expected: self.d, got: alpha.alpha.len() });
        }
        Ok((0..self.t).map(|i| self.row(i).iter().zip(&alpha.alpha).map(|(r, a)| r * a).sum()).collect())
    }
}

/// Long-only weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioWeights {
    pub alpha: Vec<f64>,
}

impl PortfolioWeights {
    /// Validates `Σα = 1` within 1e-10 and `α ≥ -1e-12`; tiny negatives are clipped to 0.
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(AqrError::EmptyInput);
        }
        if alpha.iter().any(|a| !a.is_finite() || *a < -1e-12) {
            return Err(AqrError::InvalidParameter("weights must be finite and non-negative".into()));
        }
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(AqrError::InvalidParameter(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self { alpha: alpha.into_iter().map(|a| a.max(0.0)).collect() })
    }

    pub fn vertex(d: usize, j: usize) -> Self {
        let mut alpha = vec![0.0; d];
        alpha[j] = 1.0;
        Self { alpha }
    }

    pub fn uniform(d: usize) -> Self {
        Self { alpha: vec![1.0 / d as f64; d] }
    }
}

/// `ω_τ · ξ̂_τ(Rα)`.
pub fn portfolio_risk(r: &ReturnsMatrix, alpha: &PortfolioWeights, family: &WeightFamily, tau: TauLevel, mode: AqrMode) -> Result<f64> {
    let mut z = r.portfolio_returns(alpha)?;
    z.sort_by(f64::total_cmp);
    Ok(omega(tau) * aqr_sorted(&z, family, tau, mode)?)
}

/// Coefficients `c_k` with `ξ̂ = Σ_k c_k z_(k)` over the sorted sample.
fn order_coefficients(family: &WeightFamily, tau: TauLevel, t: usize, mode: AqrMode) -> Result<Vec<f64>> {
    if family.is_singular() {
        // Interpolated quantile between two order statistics.
        let mut c = vec![0.0; t];
        let h = tau.value() * (t + 1) as f64;
        if h <= 1.0 {
            c[0] = 1.0;
        } else if h >= t as f64 {
            c[t - 1] = 1.0;
        } else {
            let k = h.floor() as usize;
            let frac = h - k as f64;
            c[k - 1] = 1.0 - frac;
            c[k] = frac;
        }
        return Ok(c);
    }
    let w = plotting_weights(family, tau, t)?;
    let scale = match mode {
        AqrMode::Raw => t as f64,
        AqrMode::Normalized => {
            let mass = w.iter().copied().collect::<ExactSum>().value();
            if mass <= 0.0 {
                return Err(AqrError::ZeroWeightMass { n: t });
            }
            mass
        }
    };
    Ok(w.into_iter().map(|v| v / scale).collect())
}

/// Objective and a subgradient at `alpha`. Tied portfolio returns share the
/// average of their coefficients.
fn risk_and_subgradient(r: &ReturnsMatrix, alpha: &[f64], coef: &[f64], sign: f64) -> (f64, Vec<f64>) {
    let z: Vec<f64> = (0..r.t).map(|i| r.row(i).iter().zip(alpha).map(|(x, a)| x * a).sum()).collect();
    let mut order: Vec<usize> = (0..r.t).collect();
    order.sort_by(|&a, &b| z[a].total_cmp(&z[b]).then(a.cmp(&b)));
    let mut value = ExactSum::new();
    let mut grad = vec![0.0; r.d];
    let mut k = 0;
    while k < r.t {
        let mut end = k + 1;
        while end < r.t && z[order[end]] == z[order[k]] {
            end += 1;
        }
        let c_avg = coef[k..end].iter().sum::<f64>() / (end - k) as f64;
        for &i in &order[k..end] {
            value.add(c_avg * z[i]);
            for (g, x) in grad.iter_mut().zip(r.row(i)) {
                *g += sign * c_avg * x;
            }
        }
        k = end;
    }
    (sign * value.value(), grad)
}

/// Euclidean projection onto the probability simplex (sort and threshold).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|x| (x - theta).max(0.0)).collect();
    // Remove the rounding drift of the threshold.
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= s);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PortfolioOptions {
    pub starts: usize,
    pub iterations: usize,
    /// Initial step length; step `t` is `step0 / √(t+1)` along the unit subgradient.
    pub step0: f64,
    pub seed: u64,
    pub mode: AqrMode,
}

impl Default for PortfolioOptions {
    fn default() -> Self {
        Self { starts: 20, iterations: 2000, step0: 0.5, seed: 7, mode: AqrMode::Normalized }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioFit {
    pub weights: PortfolioWeights,
    pub risk: f64,
    pub best_start: usize,
    /// Objective at each starting point.
    pub start_risks: Vec<f64>,
    /// Whether descent improved on the best starting point.
    pub improved: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn starting_points(d: usize, opts: &PortfolioOptions) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = (0..d.min(opts.starts)).map(|j| PortfolioWeights::vertex(d, j).alpha).collect();
    let mut rng = replication_rng(opts.seed, 0);
    while out.len() < opts.starts.max(1) {
        // Flat Dirichlet via normalized unit exponentials.
        let e: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let s: f64 = e.iter().sum();
        out.push(e.into_iter().map(|v| v / s).collect());
    }
    out
}

/// Projected subgradient descent from several starts; returns the best point visited.
pub fn optimize_weights(r: &ReturnsMatrix, family: &WeightFamily, tau: TauLevel, opts: &PortfolioOptions) -> Result<PortfolioFit> {
    family.check()?;
    let d = r.assets();
    let mut warnings = Vec::new();
    if r.days() <= d {
        warnings.push(format!("only {} days for {} assets", r.days(), d));
    }
    let coef = order_coefficients(family, tau, r.days(), opts.mode)?;
    let sign = omega(tau);
    if d == 1 {
        let w = PortfolioWeights::vertex(1, 0);
        let risk = risk_and_subgradient(r, &w.alpha, &coef, sign).0;
        return Ok(PortfolioFit { weights: w, risk, best_start: 0, start_risks: vec![risk], improved: false, warnings });
    }
    let starts = starting_points(d, opts);
    let runs: Vec<(f64, f64, Vec<f64>)> = starts
        .par_iter()
        .map(|start| {
            let mut alpha = start.clone();
            let (f0, mut g) = risk_and_subgradient(r, &alpha, &coef, sign);
            let mut best = (f0, alpha.clone());
            for it in 0..opts.iterations {
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    break;
                }
                let step = opts.step0 / ((it + 1) as f64).sqrt() / norm;
                let trial: Vec<f64> = alpha.iter().zip(&g).map(|(a, gi)| a - step * gi).collect();
                alpha = project_simplex(&trial);
                let (f, gn) = risk_and_subgradient(r, &alpha, &coef, sign);
                if f < best.0 {
                    best = (f, alpha.clone());
                }
                g = gn;
            }
            (f0, best.0, best.1)
        })
        .collect();
    let start_risks: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let (best_start, (_, risk, alpha)) = runs
        .into_iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(a.0.cmp(&b.0)))
        .expect("at least one start");
    let best_initial = start_risks.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(PortfolioFit {
        weights: PortfolioWeights { alpha },
        risk,
        best_start,
        improved: risk < best_initial,
        start_risks,
        warnings,
    })
}

/// Out-of-sample performance against a benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Performance {
    /// Annualized mean over annualized volatility.
    pub sharpe: f64,
    /// Percentage of days the portfolio strictly beats the benchmark.
    pub pct_days: f64,
    /// Sum of daily log returns.
    pub total_log_return: f64,
}

pub fn evaluate(test: &ReturnsMatrix, alpha: &PortfolioWeights, bench: &[f64]) -> Result<Performance> {
    if bench.len() != test.days() {
        return Err(AqrError::ShapeMismatch { expected: test.days(), got: bench.len() });
    }
    let z = test.portfolio_returns(alpha)?;
    let (mean, sd) = mean_sd(&z);
    // Rounding in the mean leaves a residual sd on constant series.
    let scale = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(sd > 1e-12 * scale) {
        return Err(AqrError::DegenerateSeries);
    }
    let beats = z.iter().zip(bench).filter(|(p, b)| p > b).count();
    Ok(Performance {
        sharpe: mean * TRADING_DAYS / (sd * TRADING_DAYS.sqrt()),
        pct_days: 100.0 * beats as f64 / z.len() as f64,
        total_log_return: z.iter().sum(),
    })
}
