//! The PSIS criterion for the single-index model, its derivatives, and the
//! full-data Newton fit.
//!
//! `L̄(β) = n^{-2} Σ_i Σ_j {I(Y_i ≤ Y_j) - F̂(Y_j | X_i·β)}²`, with `F̂` the
//! kernel CDF on the index built from all rows (pairs `i = j` included).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AqrError, Result};
use crate::kernel_cde::{kernel_derivs, Bandwidth, CdeDerivs, Dataset, EvalPoint, Order, SortedView};
use crate::numeric::ExactSum;

/// Smallest eigenvalue enforced by the ridge repair.
const RIDGE_FLOOR: f64 = 1e-8;

/// A fitted single-index direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexModel {
    pub beta: Vec<f64>,
    pub h: Bandwidth,
}

/// Scales to unit length and flips the sign so the first component is positive.
pub fn normalize_beta(beta: &[f64]) -> Result<Vec<f64>> {
    let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(AqrError::ZeroVector);
    }
    if !norm.is_finite() {
        return Err(AqrError::NonFinite("beta"));
    }
    let first = beta.first().copied().unwrap_or(0.0);
    if first == 0.0 {
        return Err(AqrError::IdentificationFail);
    }
    let sign = first.signum();
    Ok(beta.iter().map(|b| sign * b / norm).collect())
}

/// Least-squares slope of `y` on `[1, X]`, normalized. A cheap starting point
/// for [`fit_full`] when no better initial direction is known.
pub fn ols_direction(data: &Dataset) -> Result<Vec<f64>> {
    let (n, p) = (data.n(), data.p());
    if n <= p {
        return Err(AqrError::InvalidParameter(format!("least squares needs n > p, got n = {n}, p = {p}")));
    }
    let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { data.row(i)[j - 1] });
    let y = DVector::from_column_slice(data.y());
    let coef = design.svd(true, true).solve(&y, 1e-12).map_err(|_| AqrError::IllConditioned)?;
    normalize_beta(&coef.as_slice()[1..])
}

/// Exact partial sums of the PSIS double sum over a set of evaluation rows.
#[derive(Debug, Clone)]
pub struct PsisPartial {
    pub p: usize,
    pub objective: ExactSum,
    pub gradient: Vec<ExactSum>,
    pub hessian: Vec<ExactSum>,
}

impl PsisPartial {
    pub fn new(p: usize, order: Order) -> Self {
        let gp = if order >= Order::Gradient { p } else { 0 };
        let hp = if order >= Order::Hessian { p * p } else { 0 };
        Self { p, objective: ExactSum::new(), gradient: vec![ExactSum::new(); gp], hessian: vec![ExactSum::new(); hp] }
    }

    pub fn merge(&mut self, other: &PsisPartial) {
        self.objective.merge(&other.objective);
        self.gradient.iter_mut().zip(&other.gradient).for_each(|(a, b)| a.merge(b));
        self.hessian.iter_mut().zip(&other.hessian).for_each(|(a, b)| a.merge(b));
    }

    /// Divides by the number of pairs `n²`.
    pub fn finish(&self, n: usize) -> PsisEval {
        let scale = 1.0 / (n as f64 * n as f64);
        let p = self.p;
        PsisEval {
            objective: self.objective.value() * scale,
            gradient: self.gradient.iter().map(|s| s.value() * scale).collect(),
            hessian: (!self.hessian.is_empty()).then(|| {
                let mut m = DMatrix::from_fn(p, p, |a, b| self.hessian[a * p + b].value() * scale);
                // Symmetrize exactly: the two triangles come from identical terms
                // up to the order of the product d_a·d_b.
                for a in 0..p {
                    for b in 0..a {
                        let v = 0.5 * (m[(a, b)] + m[(b, a)]);
                        m[(a, b)] = v;
                        m[(b, a)] = v;
                    }
                }
                m
            }),
        }
    }
}

/// PSIS value and requested derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct PsisEval {
    pub objective: f64,
    pub gradient: Vec<f64>,
    pub hessian: Option<DMatrix<f64>>,
}

/// Adds the pair terms `(i, j)` for all `j` given `F̂(·|u_i)` and its derivatives.
pub(crate) fn accumulate_row(view: &SortedView, i: usize, d: &CdeDerivs, acc: &mut PsisPartial) {
    let p = acc.p;
    let gp = acc.gradient.len();
    let hp = acc.hessian.len();
    let ti = view.threshold_of_row[i];
    for &tj in &view.threshold_of_row {
        let r = if ti <= tj { 1.0 } else { 0.0 } - d.f[tj];
        acc.objective.add(r * r);
        if gp > 0 {
            let g = &d.grad[tj * p..(tj + 1) * p];
            for (a, s) in acc.gradient.iter_mut().enumerate() {
                s.add(-2.0 * r * g[a]);
            }
            if hp > 0 {
                let hm = &d.hess[tj * p * p..(tj + 1) * p * p];
                for a in 0..p {
                    for b in 0..p {
                        acc.hessian[a * p + b].add(2.0 * g[a] * g[b] - 2.0 * r * hm[a * p + b]);
                    }
                }
            }
        }
    }
}

/// PSIS and derivatives up to `order`, on all rows.
pub fn psis_eval(data: &Dataset, beta: &[f64], h: Bandwidth, order: Order) -> Result<PsisEval> {
    let index = data.index(beta)?;
    let view = SortedView::new(data.y());
    let n = data.n();
    let parts: Vec<Result<PsisPartial>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let ep = EvalPoint { x: data.row(i), u: index[i], exclude: None };
            let d = kernel_derivs(data, &index, &view, &view.order, ep, h.h, order)?;
            let mut acc = PsisPartial::new(data.p(), order);
            accumulate_row(&view, i, &d, &mut acc);
            Ok(acc)
        })
        .collect();
    let mut total = PsisPartial::new(data.p(), order);
    for part in parts {
        total.merge(&part?);
    }
    Ok(total.finish(n))
}

pub fn psis_objective(data: &Dataset, beta: &[f64], h: Bandwidth) -> Result<f64> {
    Ok(psis_eval(data, beta, h, Order::Value)?.objective)
}

pub fn psis_gradient(data: &Dataset, beta: &[f64], h: Bandwidth) -> Result<Vec<f64>> {
    Ok(psis_eval(data, beta, h, Order::Gradient)?.gradient)
}

pub fn psis_hessian(data: &Dataset, beta: &[f64], h: Bandwidth) -> Result<DMatrix<f64>> {
    Ok(psis_eval(data, beta, h, Order::Hessian)?.hessian.expect("hessian requested"))
}

/// Solves `(H + λI) d = -g` with `λ = max(0, 1e-8 - λ_min(H))`.
pub fn newton_direction(gradient: &[f64], hessian: &DMatrix<f64>) -> Result<Vec<f64>> {
    let p = gradient.len();
    if hessian.iter().any(|v| !v.is_finite()) || gradient.iter().any(|v| !v.is_finite()) {
        return Err(AqrError::IllConditioned);
    }
    if hessian.iter().all(|v| v.abs() < 1e-300) {
        return Err(AqrError::IllConditioned);
    }
    let eig = SymmetricEigen::new(hessian.clone());
    let lmin = eig.eigenvalues.min();
    let ridge = (RIDGE_FLOOR - lmin).max(0.0);
    let g = DVector::from_column_slice(gradient);
    let proj = eig.eigenvectors.transpose() * &g;
    let mut scaled = DVector::zeros(p);
    for k in 0..p {
        let mu = eig.eigenvalues[k] + ridge;
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(AqrError::IllConditioned);
        }
        scaled[k] = -proj[k] / mu;
    }
    let d = &eig.eigenvectors * scaled;
    if d.iter().any(|v| !v.is_finite()) {
        return Err(AqrError::IllConditioned);
    }
    Ok(d.iter().copied().collect())
}

/// Newton direction on the unit sphere at `beta` (unit norm): the step
/// `U s` with `U` an orthonormal basis of `β⊥` and
/// `(UᵀHU - (β·g) I) s = -Uᵀg`, using the same ridge repair. The `-(β·g)`
/// term is the curvature of the sphere, so iterating `normalize(β + U s)`
/// converges quadratically to a constrained stationary point.
pub fn sphere_newton_direction(beta: &[f64], gradient: &[f64], hessian: &DMatrix<f64>) -> Result<Vec<f64>> {
    let p = beta.len();
    if p < 2 {
        return Ok(vec![0.0; p]);
    }
    // Householder reflection swapping ±β and e₁; its other columns span β⊥.
    let mut v = DVector::from_column_slice(beta);
    v[0] += if beta[0] >= 0.0 { 1.0 } else { -1.0 };
    let vv = v.dot(&v);
    let householder = DMatrix::<f64>::identity(p, p) - (&v * v.transpose()) * (2.0 / vv);
    let u = householder.columns(1, p - 1).into_owned();
    let g = DVector::from_column_slice(gradient);
    let radial = DVector::from_column_slice(beta).dot(&g);
    let g_t = u.transpose() * &g;
    let h_t = u.transpose() * hessian * &u - DMatrix::<f64>::identity(p - 1, p - 1) * radial;
    let s = newton_direction(g_t.as_slice(), &h_t)?;
    Ok((u * DVector::from_vec(s)).iter().copied().collect())
}

/// One undamped Newton step followed by renormalization.
pub fn newton_step(data: &Dataset, beta: &[f64], h: Bandwidth) -> Result<Vec<f64>> {
    let e = psis_eval(data, beta, h, Order::Hessian)?;
    let d = newton_direction(&e.gradient, e.hessian.as_ref().expect("hessian requested"))?;
    normalize_beta(&beta.iter().zip(&d).map(|(b, s)| b + s).collect::<Vec<_>>())
}

/// Why the full-data fit stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// `‖β_new - β‖ < tol`.
    SmallStep,
    /// Neither the Newton direction nor the projected gradient decreases the
    /// objective: a numerical stationary point on the unit sphere.
    NoDecrease,
    MaxIterations,
    /// `p = 1`: the unit sphere has one admissible point.
    Trivial,
}

/// Settings for [`fit_full_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    pub step_tol: f64,
    pub max_halvings: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iter: 100, step_tol: 1e-8, max_halvings: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: IndexModel,
    pub objective: f64,
    pub initial_objective: f64,
    pub iterations: usize,
    pub stop: StopReason,
}

/// Damped Newton on the PSIS criterion over the unit sphere, renormalizing
/// after every step.
pub fn fit_full(data: &Dataset, h: Bandwidth, init: &[f64]) -> Result<IndexModel> {
    Ok(fit_full_with(data, h, init, FitOptions::default())?.model)
}

pub fn fit_full_with(data: &Dataset, h: Bandwidth, init: &[f64], opts: FitOptions) -> Result<FitReport> {
    if init.len() != data.p() {
        return Err(AqrError::ShapeMismatch { expected: data.p(), got: init.len() });
    }
    let mut beta = normalize_beta(init)?;
    if data.p() == 1 {
        let objective = psis_objective(data, &beta, h)?;
        return Ok(FitReport {
            model: IndexModel { beta, h },
            objective,
            initial_objective: objective,
            iterations: 0,
            stop: StopReason::Trivial,
        });
    }
    let mut current = psis_eval(data, &beta, h, Order::Hessian)?;
    let initial_objective = current.objective;
    for iter in 1..=opts.max_iter {
        let hess = current.hessian.as_ref().expect("hessian requested");
        let d = sphere_newton_direction(&beta, &current.gradient, hess)?;
        if norm(&d) < opts.step_tol {
            return Ok(FitReport {
                model: IndexModel { beta, h },
                objective: current.objective,
                initial_objective,
                iterations: iter,
                stop: StopReason::SmallStep,
            });
        }
        let accepted = backtrack(data, h, &beta, &d, current.objective, opts.max_halvings)?
            .map(Ok)
            .or_else(|| {
                // Fall back to steepest descent along the sphere.
                let tangent = project_tangent(&beta, &current.gradient);
                let norm = tangent.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return None;
                }
                let dir: Vec<f64> = tangent.iter().map(|v| -v / norm * 0.1).collect();
                backtrack(data, h, &beta, &dir, current.objective, opts.max_halvings).transpose()
            })
            .transpose()?;
        let Some((next, _)) = accepted else {
            return Ok(FitReport {
                model: IndexModel { beta, h },
                objective: current.objective,
                initial_objective,
                iterations: iter,
                stop: StopReason::NoDecrease,
            });
        };
        let step = next.iter().zip(&beta).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        beta = next;
        current = psis_eval(data, &beta, h, Order::Hessian)?;
        if step < opts.step_tol {
            return Ok(FitReport {
                model: IndexModel { beta, h },
                objective: current.objective,
                initial_objective,
                iterations: iter,
                stop: StopReason::SmallStep,
            });
        }
    }
    Ok(FitReport {
        model: IndexModel { beta, h },
        objective: current.objective,
        initial_objective,
        iterations: opts.max_iter,
        stop: StopReason::MaxIterations,
    })
}

/// Halving search along `d` from `beta`, renormalizing each candidate. Returns
/// the first candidate with a strictly smaller objective.
fn backtrack(
    data: &Dataset,
    h: Bandwidth,
    beta: &[f64],
    d: &[f64],
    f0: f64,
    max_halvings: usize,
) -> Result<Option<(Vec<f64>, f64)>> {
    let mut t = 1.0;
    let len = norm(d);
    for _ in 0..=max_halvings {
        if t * len < MIN_TRIAL_STEP {
            break;
        }
        let cand: Vec<f64> = beta.iter().zip(d).map(|(b, s)| b + t * s).collect();
        if let Ok(cand) = normalize_beta(&cand) {
            let f = psis_objective(data, &cand, h)?;
            if f < f0 {
                return Ok(Some((cand, f)));
            }
        }
        t *= 0.5;
    }
    Ok(None)
}

/// Trial steps shorter than this cannot change a unit vector meaningfully.
const MIN_TRIAL_STEP: f64 = 1e-12;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn project_tangent(beta: &[f64], g: &[f64]) -> Vec<f64> {
    let radial: f64 = beta.iter().zip(g).map(|(b, v)| b * v).sum();
    g.iter().zip(beta).map(|(v, b)| v - radial * b).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel_cde::index_cde_eval;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn bw(h: f64) -> Bandwidth {
        Bandwidth::new(h).unwrap()
    }

    fn random_data(seed: u64, n: usize, p: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * p).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let u: f64 = (0..p).map(|j| x[i * p + j] * (j + 1) as f64).sum();
                u * u * 0.3 + 0.5 * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        Dataset::from_flat(y, x, p).unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_beta(&[3.0, 4.0]).unwrap(), vec![0.6, 0.8]);
        assert_eq!(normalize_beta(&[-3.0, -4.0]).unwrap(), vec![0.6, 0.8]);
        assert_eq!(normalize_beta(&[0.0, 1.0]), Err(AqrError::IdentificationFail));
        assert_eq!(normalize_beta(&[0.0, 0.0]), Err(AqrError::ZeroVector));
    }

    #[test]
    fn objective_matches_literal_double_loop() {
        let d = random_data(1, 10, 2);
        let beta = [0.6, 0.8];
        let h = bw(0.7);
        let mut acc = ExactSum::new();
        for i in 0..10 {
            for j in 0..10 {
                let f = index_cde_eval(&d, &beta, h, d.row(i), d.y()[j]).unwrap();
                let ind = if d.y()[i] <= d.y()[j] { 1.0 } else { 0.0 };
                acc.add((ind - f) * (ind - f));
            }
        }
        assert_eq!(psis_objective(&d, &beta, h).unwrap(), acc.value() / 100.0);
    }

    #[test]
    fn separated_clusters_give_small_objective() {
        // Two tight index clusters whose responses do not overlap: F̂ reproduces
        // the within-cluster indicators except for the within-cluster ranks.
        let mut y = Vec::new();
        let mut x = Vec::new();
        for k in 0..5 {
            y.push(k as f64 * 1e-3);
            x.push(0.0 + k as f64 * 1e-6);
            y.push(10.0 + k as f64 * 1e-3);
            x.push(100.0 + k as f64 * 1e-6);
        }
        let d = Dataset::univariate(y.clone(), x.clone()).unwrap();
        let v = psis_objective(&d, &[1.0], bw(0.5)).unwrap();
        // Brute force: within each cluster F̂ is the cluster ECDF, across clusters it is 0 or 1.
        let mut brute = 0.0;
        for i in 0..10 {
            for j in 0..10 {
                let same = (x[i] - x[j]).abs() < 1.0;
                let f = if same {
                    (0..10).filter(|&k| (x[k] - x[i]).abs() < 1.0 && y[k] <= y[j]).count() as f64 / 5.0
                } else if y[j] > y[i] {
                    0.0
                } else {
                    1.0
                };
                let f = if same { f } else if x[i] < 50.0 { if y[j] >= y[i].max(1.0) { 1.0 } else { f } } else { 0.0 };
                let ind = if y[i] <= y[j] { 1.0 } else { 0.0 };
                brute += (ind - f).powi(2);
            }
        }
        brute /= 100.0;
        assert!((v - brute).abs() < 1e-12, "{v} vs {brute}");
        assert!(v < 0.25);
    }

    #[test]
    fn permutation_invariance() {
        let d = random_data(2, 15, 3);
        let perm: Vec<usize> = (0..15).rev().collect();
        let d2 = d.subset(&perm).unwrap();
        let beta = [0.5, 0.5, 0.70710678];
        assert_eq!(psis_objective(&d, &beta, bw(0.6)).unwrap(), psis_objective(&d2, &beta, bw(0.6)).unwrap());
        assert_eq!(psis_gradient(&d, &beta, bw(0.6)).unwrap(), psis_gradient(&d2, &beta, bw(0.6)).unwrap());
    }

    #[test]
    fn identical_rows_have_zero_gradient() {
        let d = Dataset::new((0..8).map(|i| i as f64).collect(), vec![vec![1.0, 2.0]; 8]).unwrap();
        assert_eq!(psis_gradient(&d, &[0.6, 0.8], bw(0.5)).unwrap(), vec![0.0, 0.0]);
        assert_eq!(fit_full(&d, bw(0.5), &[0.6, 0.8]), Err(AqrError::IllConditioned));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..10 {
            let p = 2 + seed as usize % 3;
            let d = random_data(10 + seed, 25, p);
            let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h = bw(0.9);
            let e = psis_eval(&d, &beta, h, Order::Hessian).unwrap();
            let hess = e.hessian.unwrap();
            for j in 0..p {
                let mut bp = beta.clone();
                let mut bm = beta.clone();
                bp[j] += 1e-5;
                bm[j] -= 1e-5;
                let fd = (psis_objective(&d, &bp, h).unwrap() - psis_objective(&d, &bm, h).unwrap()) / 2e-5;
                let g = e.gradient[j];
                assert!((fd - g).abs() <= 1e-4 * g.abs().max(1e-4), "grad seed {seed}: {fd} vs {g}");
                let gp = psis_gradient(&d, &bp, h).unwrap();
                let gm = psis_gradient(&d, &bm, h).unwrap();
                for k in 0..p {
                    let fdh = (gp[k] - gm[k]) / 2e-5;
                    let hv = hess[(k, j)];
                    assert!((fdh - hv).abs() <= 1e-3 * hv.abs().max(1e-3), "hess seed {seed}: {fdh} vs {hv}");
                }
            }
            for a in 0..p {
                for b in 0..p {
                    assert!((hess[(a, b)] - hess[(b, a)]).abs() <= 1e-12 * hess[(a, b)].abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn ols_recovers_linear_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let y = rows.iter().map(|r| 1.0 + 3.0 * r[0] + 4.0 * r[1]).collect();
        let b = ols_direction(&Dataset::new(y, rows).unwrap()).unwrap();
        assert!((b[0] - 0.6).abs() < 1e-10 && (b[1] - 0.8).abs() < 1e-10);
    }

    #[test]
    fn univariate_fit_is_trivial() {
        let d = random_data(3, 12, 1);
        let r = fit_full_with(&d, bw(0.5), &[-2.0], FitOptions::default()).unwrap();
        assert_eq!(r.model.beta, vec![1.0]);
        assert_eq!(r.stop, StopReason::Trivial);
    }

    #[test]
    fn fit_decreases_objective_and_ignores_init_scale() {
        let d = random_data(4, 80, 2);
        let h = bw(0.5);
        let a = fit_full_with(&d, h, &[0.8, 0.6], FitOptions::default()).unwrap();
        assert!(a.objective <= a.initial_objective);
        let b = fit_full_with(&d, h, &[8.0, 6.0], FitOptions::default()).unwrap();
        for (x, y) in a.model.beta.iter().zip(&b.model.beta) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn sphere_step_is_tangent_and_solves_quadratics() {
        // f(β) = ½ βᵀAβ on the circle: minimizer is the eigenvector of the
        // smallest eigenvalue; one step from nearby lands close to it.
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 5.0]);
        let beta = normalize_beta(&[1.0, 0.05]).unwrap();
        let g = &a * DVector::from_column_slice(&beta);
        let d = sphere_newton_direction(&beta, g.as_slice(), &a).unwrap();
        assert!((d[0] * beta[0] + d[1] * beta[1]).abs() < 1e-15);
        let next = normalize_beta(&[beta[0] + d[0], beta[1] + d[1]]).unwrap();
        assert!(next[1].abs() < 1e-2 * beta[1].abs());
    }

    #[test]
    fn ridge_repairs_indefinite_hessian() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0]);
        let d = newton_direction(&[1.0, 1.0], &h).unwrap();
        // Eigenvalues become 3 + 1e-8 and 1e-8.
        assert!((d[0] + 1.0 / (3.0 + 1e-8)).abs() < 1e-12);
        assert!((d[1] + 1e8).abs() < 1.0);
    }
}
