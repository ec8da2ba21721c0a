//! Gaussian-kernel estimates of the conditional CDF `F̂(y | x)` for a scalar
//! conditioning variable (a raw covariate or an index `x·β`), the β-gradient
//! and Hessian of `F̂` through the kernel sums S1–S6, and cross-validated
//! bandwidth selection.
//!
//! With `w_k = K_h(u_k - u_0)` and `d_k = X_k - x_0`:
//!
//! ```text
//! S1(y) = Σ w_k I(Y_k ≤ y)           S2 = Σ w_k
//! S3(y) = Σ K'_h d_k I(Y_k ≤ y)      S4 = Σ K'_h d_k
//! S5(y) = Σ K''_h d_k d_kᵀ I(Y_k ≤ y) S6 = Σ K''_h d_k d_kᵀ
//! ```
//!
//! Every sum is accumulated exactly, so partial sums over disjoint row groups
//! merge to bit-identical results regardless of grouping.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AqrError, Result};
use crate::numeric::{log_space, mean_sd, std_normal_pdf, ExactSum};

/// Kernel sums below this are treated as underflow.
const UNDERFLOW: f64 = 1e-300;

/// Responses, an `n × p` covariate matrix (row-major) and shard labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    y: Vec<f64>,
    x: Vec<f64>,
    p: usize,
    shard_of: Vec<usize>,
}

impl Dataset {
    /// Builds a single-machine dataset from rows of covariates.
    pub fn new(y: Vec<f64>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let p = rows.first().map(Vec::len).unwrap_or(0);
        if rows.len() != y.len() {
            return Err(AqrError::ShapeMismatch { expected: y.len(), got: rows.len() });
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(AqrError::ShapeMismatch { expected: p, got: bad.len() });
        }
        Self::from_flat(y, rows.into_iter().flatten().collect(), p)
    }

    /// Builds from a row-major flat covariate buffer.
    pub fn from_flat(y: Vec<f64>, x: Vec<f64>, p: usize) -> Result<Self> {
        if y.is_empty() {
            return Err(AqrError::EmptyInput);
        }
        if p == 0 {
            return Err(AqrError::InvalidParameter("dataset needs at least one covariate".into()));
        }
        if x.len() != y.len() * p {
            return Err(AqrError::ShapeMismatch { expected: y.len() * p, got: x.len() });
        }
        if y.iter().chain(&x).any(|v| !v.is_finite()) {
            return Err(AqrError::NonFinite("dataset"));
        }
        let n = y.len();
        Ok(Self { y, x, p, shard_of: vec![0; n] })
    }

    /// Scalar-covariate convenience constructor.
    pub fn univariate(y: Vec<f64>, x: Vec<f64>) -> Result<Self> {
        Self::from_flat(y, x, 1)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x_flat(&self) -> &[f64] {
        &self.x
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n()).map(|i| self.x[i * self.p + j]).collect()
    }

    pub fn shard_of(&self) -> &[usize] {
        &self.shard_of
    }

    pub fn shard_count(&self) -> usize {
        self.shard_of.iter().max().map_or(0, |m| m + 1)
    }

    /// Replaces shard labels.
    pub fn with_shards(mut self, shard_of: Vec<usize>) -> Result<Self> {
        if shard_of.len() != self.n() {
            return Err(AqrError::ShapeMismatch { expected: self.n(), got: shard_of.len() });
        }
        self.shard_of = shard_of;
        Ok(self)
    }

    /// Row indices carrying label `k`, in row order.
    pub fn shard_rows(&self, k: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.shard_of[i] == k).collect()
    }

    /// New dataset with the given rows (shard labels reset to 0).
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let y = rows.iter().map(|&i| self.y[i]).collect();
        let x = rows.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Self::from_flat(y, x, self.p)
    }

    /// Index values `X_i·β`.
    pub fn index(&self, beta: &[f64]) -> Result<Vec<f64>> {
        if beta.len() != self.p {
            return Err(AqrError::ShapeMismatch { expected: self.p, got: beta.len() });
        }
        Ok((0..self.n()).map(|i| dot(self.row(i), beta)).collect())
    }

    /// Same data with `c` added to every response.
    pub fn shift_y(&self, c: f64) -> Result<Self> {
        let mut d = self.clone();
        d.y.iter_mut().for_each(|v| *v += c);
        if d.y.iter().any(|v| !v.is_finite()) {
            return Err(AqrError::NonFinite("dataset"));
        }
        Ok(d)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A kernel bandwidth `h > 0`, optionally tagged with the rate exponent `c`
/// in `h ∝ n^{-c}` for audit output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth {
    pub h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_exponent: Option<f64>,
}

impl Bandwidth {
    pub fn new(h: f64) -> Result<Self> {
        if h > 0.0 && h.is_finite() {
            Ok(Self { h, rate_exponent: None })
        } else {
            Err(AqrError::Domain { value: h, domain: "(0, inf)" })
        }
    }

    /// `scale · n^{-c}`.
    pub fn from_rate(scale: f64, n: usize, c: f64) -> Result<Self> {
        let mut b = Self::new(scale * (n as f64).powf(-c))?;
        b.rate_exponent = Some(c);
        Ok(b)
    }
}

/// A right-continuous step CDF in `y`: `F(y) = levels[k]` on `[knots[k], knots[k+1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCDF {
    knots: Vec<f64>,
    levels: Vec<f64>,
}

impl StepCDF {
    /// Knots must be finite and strictly increasing; levels finite,
    /// non-decreasing and within `[0, 1]`. A final level below 1 is allowed
    /// and reported through [`StepCDF::mass_deficit`].
    pub fn new(knots: Vec<f64>, levels: Vec<f64>) -> Result<Self> {
        if knots.is_empty() {
            return Err(AqrError::EmptyInput);
        }
        if knots.len() != levels.len() {
            return Err(AqrError::ShapeMismatch { expected: knots.len(), got: levels.len() });
        }
        if knots.iter().chain(&levels).any(|v| !v.is_finite()) {
            return Err(AqrError::NonFinite("step CDF"));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(AqrError::InvalidParameter("step CDF knots must be strictly increasing".into()));
        }
        if levels.windows(2).any(|w| w[1] < w[0]) || levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(AqrError::InvalidParameter("step CDF levels must be non-decreasing within [0, 1]".into()));
        }
        Ok(Self { knots, levels })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    /// `1 - F(max knot)`.
    pub fn mass_deficit(&self) -> f64 {
        1.0 - self.levels.last().copied().unwrap_or(0.0)
    }

    pub fn eval(&self, y: f64) -> f64 {
        let k = self.knots.partition_point(|&t| t <= y);
        if k == 0 {
            0.0
        } else {
            self.levels[k - 1]
        }
    }
}

/// Gaussian kernel `K_h(t) = φ(t/h)/h`.
#[inline]
pub fn kernel(t: f64, h: f64) -> f64 {
    std_normal_pdf(t / h) / h
}

/// `K_h'(t) = -(t/h) φ(t/h) / h²`.
#[inline]
pub fn kernel_d1(t: f64, h: f64) -> f64 {
    let z = t / h;
    -z * std_normal_pdf(z) / (h * h)
}

/// `K_h''(t) = ((t/h)² - 1) φ(t/h) / h³`.
#[inline]
pub fn kernel_d2(t: f64, h: f64) -> f64 {
    let z = t / h;
    (z * z - 1.0) * std_normal_pdf(z) / (h * h * h)
}

/// Derivative order requested from the kernel sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Order {
    Value,
    Gradient,
    Hessian,
}

/// An evaluation point: the covariate vector `x_0`, its index `u_0 = x_0·β`
/// and an optional row left out of the sums.
#[derive(Debug, Clone, Copy)]
pub struct EvalPoint<'a> {
    pub x: &'a [f64],
    pub u: f64,
    pub exclude: Option<usize>,
}

/// Rows of a dataset arranged for cumulative sums in `y`.
#[derive(Debug, Clone)]
pub struct SortedView {
    /// Row indices sorted by `(y, row)`.
    pub order: Vec<usize>,
    /// Distinct response values in increasing order.
    pub thresholds: Vec<f64>,
    /// For each row, the position of its response in `thresholds`.
    pub threshold_of_row: Vec<usize>,
}

impl SortedView {
    pub fn new(y: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..y.len()).collect();
        order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
        let mut thresholds: Vec<f64> = Vec::new();
        let mut threshold_of_row = vec![0; y.len()];
        for &i in &order {
            if thresholds.last() != Some(&y[i]) {
                thresholds.push(y[i]);
            }
            threshold_of_row[i] = thresholds.len() - 1;
        }
        Self { order, thresholds, threshold_of_row }
    }

    /// The sorted order restricted to `rows`.
    pub fn restrict(&self, rows: &[usize], n: usize) -> Vec<usize> {
        let mut keep = vec![false; n];
        rows.iter().for_each(|&r| keep[r] = true);
        self.order.iter().copied().filter(|&r| keep[r]).collect()
    }
}

/// Exact kernel-sum partials at every threshold for one evaluation point,
/// over one group of rows.
#[derive(Debug, Clone)]
pub struct PartialSums {
    pub order: Order,
    pub p: usize,
    /// `S1` at each threshold.
    pub s1: Vec<ExactSum>,
    /// `S3` at each threshold, `p` entries each.
    pub s3: Vec<ExactSum>,
    /// `S5` at each threshold, `p²` entries each.
    pub s5: Vec<ExactSum>,
    pub s2: ExactSum,
    pub s4: Vec<ExactSum>,
    pub s6: Vec<ExactSum>,
}

impl PartialSums {
    /// Number of logical scalars carried by this partial.
    pub fn scalar_count(&self) -> usize {
        self.s1.len() + self.s3.len() + self.s5.len() + 1 + self.s4.len() + self.s6.len()
    }

    pub fn merge(&mut self, other: &PartialSums) {
        let pairs = [
            (&mut self.s1, &other.s1),
            (&mut self.s3, &other.s3),
            (&mut self.s5, &other.s5),
            (&mut self.s4, &other.s4),
            (&mut self.s6, &other.s6),
        ];
        for (a, b) in pairs {
            a.iter_mut().zip(b).for_each(|(x, y)| x.merge(y));
        }
        self.s2.merge(&other.s2);
    }
}

/// Where the cumulative sums are recorded at each threshold.
trait Snapshots {
    fn record(&mut self, run1: &ExactSum, run3: &[ExactSum], run5: &[ExactSum]);
}

impl Snapshots for PartialSums {
    fn record(&mut self, run1: &ExactSum, run3: &[ExactSum], run5: &[ExactSum]) {
        self.s1.push(run1.clone());
        self.s3.extend(run3.iter().cloned());
        self.s5.extend(run5.iter().cloned());
    }
}

/// Rounded snapshots, for callers that never merge partials.
#[derive(Default)]
struct ValueSnapshots {
    s1: Vec<f64>,
    s3: Vec<f64>,
    s5: Vec<f64>,
}

impl Snapshots for ValueSnapshots {
    fn record(&mut self, run1: &ExactSum, run3: &[ExactSum], run5: &[ExactSum]) {
        self.s1.push(run1.value());
        self.s3.extend(run3.iter().map(ExactSum::value));
        self.s5.extend(run5.iter().map(ExactSum::value));
    }
}

/// Running sums over `rows` (in `(y, row)` order), recorded at every
/// threshold. Returns the totals `(S2, S4, S6)`.
#[allow(clippy::too_many_arguments)]
fn accumulate<S: Snapshots>(
    data: &Dataset,
    index: &[f64],
    view: &SortedView,
    rows: &[usize],
    ep: EvalPoint<'_>,
    h: f64,
    order: Order,
    out: &mut S,
) -> (ExactSum, Vec<ExactSum>, Vec<ExactSum>) {
    let p = data.p();
    let gp = if order >= Order::Gradient { p } else { 0 };
    let hp = if order >= Order::Hessian { p * p } else { 0 };
    let mut run1 = ExactSum::new();
    let mut run3 = vec![ExactSum::new(); gp];
    let mut run5 = vec![ExactSum::new(); hp];
    let mut d = vec![0.0; p];
    let mut cursor = 0;
    for t in 0..view.thresholds.len() {
        while cursor < rows.len() && view.threshold_of_row[rows[cursor]] == t {
            let k = rows[cursor];
            cursor += 1;
            if ep.exclude == Some(k) {
                continue;
            }
            let du = index[k] - ep.u;
            run1.add(kernel(du, h));
            if gp > 0 {
                let k1 = kernel_d1(du, h);
                for (j, dj) in d.iter_mut().enumerate() {
                    *dj = data.row(k)[j] - ep.x[j];
                    run3[j].add(k1 * *dj);
                }
            }
            if hp > 0 {
                let k2 = kernel_d2(du, h);
                for a in 0..p {
                    for b in 0..p {
                        run5[a * p + b].add(k2 * d[a] * d[b]);
                    }
                }
            }
        }
        out.record(&run1, &run3, &run5);
    }
    (run1, run3, run5)
}

/// Accumulates kernel sums for `ep` over `rows` (already in `(y, row)` order),
/// snapshotting the cumulative sums at every threshold.
pub fn partial_sums(
    data: &Dataset,
    index: &[f64],
    view: &SortedView,
    rows: &[usize],
    ep: EvalPoint<'_>,
    h: f64,
    order: Order,
) -> PartialSums {
    let p = data.p();
    let t_count = view.thresholds.len();
    let gp = if order >= Order::Gradient { p } else { 0 };
    let hp = if order >= Order::Hessian { p * p } else { 0 };
    let mut out = PartialSums {
        order,
        p,
        s1: Vec::with_capacity(t_count),
        s3: Vec::with_capacity(t_count * gp),
        s5: Vec::with_capacity(t_count * hp),
        s2: ExactSum::new(),
        s4: Vec::new(),
        s6: Vec::new(),
    };
    let (s2, s4, s6) = accumulate(data, index, view, rows, ep, h, order, &mut out);
    out.s2 = s2;
    out.s4 = s4;
    out.s6 = s6;
    out
}

/// Same values as `partial_sums(..).finalize(..)` without keeping the
/// mergeable snapshots.
pub fn kernel_derivs(
    data: &Dataset,
    index: &[f64],
    view: &SortedView,
    rows: &[usize],
    ep: EvalPoint<'_>,
    h: f64,
    order: Order,
) -> Result<CdeDerivs> {
    let mut snaps = ValueSnapshots::default();
    let (s2, s4, s6) = accumulate(data, index, view, rows, ep, h, order, &mut snaps);
    let s4: Vec<f64> = s4.iter().map(ExactSum::value).collect();
    let s6: Vec<f64> = s6.iter().map(ExactSum::value).collect();
    finalize_values(data.p(), &snaps.s1, &snaps.s3, &snaps.s5, s2.value(), &s4, &s6, ep.u)
}

/// `F̂`, `∇F̂` and `∇²F̂` at every threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct CdeDerivs {
    pub p: usize,
    pub f: Vec<f64>,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

impl PartialSums {
    /// Converts merged sums into `F̂` and its derivatives.
    pub fn finalize(&self, at: f64) -> Result<CdeDerivs> {
        let vals = |v: &[ExactSum]| v.iter().map(ExactSum::value).collect::<Vec<f64>>();
        let (s1, s3, s5) = (vals(&self.s1), vals(&self.s3), vals(&self.s5));
        finalize_values(self.p, &s1, &s3, &s5, self.s2.value(), &vals(&self.s4), &vals(&self.s6), at)
    }
}

#[allow(clippy::too_many_arguments)]
fn finalize_values(
    p: usize,
    s1: &[f64],
    s3: &[f64],
    s5: &[f64],
    s2: f64,
    s4: &[f64],
    s6: &[f64],
    at: f64,
) -> Result<CdeDerivs> {
    if !(s2 >= UNDERFLOW) {
        return Err(AqrError::KernelUnderflow { at });
    }
    let t_count = s1.len();
    let gp = s4.len();
    let hp = s6.len();
    let mut out = CdeDerivs {
        p,
        f: Vec::with_capacity(t_count),
        grad: Vec::with_capacity(t_count * gp),
        hess: Vec::with_capacity(t_count * hp),
    };
    let mut g = vec![0.0; gp];
    let mut hs = vec![0.0; hp];
    for t in 0..t_count {
        let f = cde_derivs(s1[t], s2, &s3[t * gp..(t + 1) * gp], s4, &s5[t * hp..(t + 1) * hp], s6, &mut g, &mut hs);
        out.f.push(f);
        out.grad.extend_from_slice(&g);
        out.hess.extend_from_slice(&hs);
    }
    Ok(out)
}

/// Quotient-rule derivatives of `F = S1/S2`. Writes `∇F` into `g` (when
/// `s3` is non-empty) and `∇²F` into `hs` (when `s5` is non-empty).
#[allow(clippy::too_many_arguments)]
pub(crate) fn cde_derivs(
    s1: f64,
    s2: f64,
    s3: &[f64],
    s4: &[f64],
    s5: &[f64],
    s6: &[f64],
    g: &mut [f64],
    hs: &mut [f64],
) -> f64 {
    let f = s1 / s2;
    let s2sq = s2 * s2;
    for j in 0..s3.len() {
        g[j] = s3[j] / s2 - s1 * s4[j] / s2sq;
    }
    if !s5.is_empty() {
        let p = s3.len();
        let s2cu = s2sq * s2;
        for a in 0..p {
            for b in 0..p {
                let k = a * p + b;
                hs[k] = s5[k] / s2 - (s3[a] * s4[b] + s4[a] * s3[b]) / s2sq - s1 * s6[k] / s2sq
                    + 2.0 * s1 * s4[a] * s4[b] / s2cu;
            }
        }
    }
    f
}

/// Direct kernel sums at one `(x_0, y_0)` pair.
fn point_derivs(data: &Dataset, index: &[f64], ep: EvalPoint<'_>, y0: f64, h: f64, order: Order) -> Result<CdeDerivs> {
    let p = data.p();
    let gp = if order >= Order::Gradient { p } else { 0 };
    let mut s1 = ExactSum::new();
    let mut s2 = ExactSum::new();
    let mut s3 = vec![ExactSum::new(); gp];
    let mut s4 = vec![ExactSum::new(); gp];
    for k in 0..data.n() {
        if ep.exclude == Some(k) {
            continue;
        }
        let du = index[k] - ep.u;
        let w = kernel(du, h);
        let below = data.y[k] <= y0;
        s2.add(w);
        if below {
            s1.add(w);
        }
        if gp > 0 {
            let k1 = kernel_d1(du, h);
            for j in 0..p {
                let v = k1 * (data.row(k)[j] - ep.x[j]);
                s4[j].add(v);
                if below {
                    s3[j].add(v);
                }
            }
        }
    }
    let s2 = s2.value();
    if !(s2 >= UNDERFLOW) {
        return Err(AqrError::KernelUnderflow { at: ep.u });
    }
    let s3: Vec<f64> = s3.iter().map(ExactSum::value).collect();
    let s4: Vec<f64> = s4.iter().map(ExactSum::value).collect();
    let mut g = vec![0.0; gp];
    let f = cde_derivs(s1.value(), s2, &s3, &s4, &[], &[], &mut g, &mut []);
    Ok(CdeDerivs { p, f: vec![f], grad: g, hess: Vec::new() })
}

fn require_univariate(data: &Dataset) -> Result<()> {
    if data.p() != 1 {
        return Err(AqrError::ShapeMismatch { expected: 1, got: data.p() });
    }
    Ok(())
}

/// `F̂(y_0 | x_0)` for a scalar covariate.
pub fn cde_eval(data: &Dataset, h: Bandwidth, x0: f64, y0: f64) -> Result<f64> {
    require_univariate(data)?;
    let ep = EvalPoint { x: &[x0], u: x0, exclude: None };
    Ok(point_derivs(data, data.x_flat(), ep, y0, h.h, Order::Value)?.f[0])
}

/// The whole curve `y ↦ F̂(y | x_0)` as a step function on the distinct responses.
pub fn cde_curve(data: &Dataset, h: Bandwidth, x0: f64) -> Result<StepCDF> {
    require_univariate(data)?;
    curve_on_index(data, data.x_flat(), &[x0], x0, h)
}

/// `F̂(· | x_0·β)` as a step function.
pub fn index_cde_curve(data: &Dataset, beta: &[f64], h: Bandwidth, x0: &[f64]) -> Result<StepCDF> {
    let index = data.index(beta)?;
    check_point(data, x0)?;
    curve_on_index(data, &index, x0, dot(x0, beta), h)
}

fn curve_on_index(data: &Dataset, index: &[f64], x0: &[f64], u0: f64, h: Bandwidth) -> Result<StepCDF> {
    let view = SortedView::new(data.y());
    let ep = EvalPoint { x: x0, u: u0, exclude: None };
    let d = kernel_derivs(data, index, &view, &view.order, ep, h.h, Order::Value)?;
    StepCDF::new(view.thresholds, d.f)
}

fn check_point(data: &Dataset, x0: &[f64]) -> Result<()> {
    if x0.len() != data.p() {
        return Err(AqrError::ShapeMismatch { expected: data.p(), got: x0.len() });
    }
    Ok(())
}

/// `F̂(y_0 | x_0·β)` on the index `X·β`.
pub fn index_cde_eval(data: &Dataset, beta: &[f64], h: Bandwidth, x0: &[f64], y0: f64) -> Result<f64> {
    let index = data.index(beta)?;
    check_point(data, x0)?;
    let ep = EvalPoint { x: x0, u: dot(x0, beta), exclude: None };
    Ok(point_derivs(data, &index, ep, y0, h.h, Order::Value)?.f[0])
}

/// `∇_β F̂(y_0 | x_0·β) = S3/S2 - S1·S4/S2²`.
pub fn index_cde_grad(data: &Dataset, beta: &[f64], h: Bandwidth, x0: &[f64], y0: f64) -> Result<Vec<f64>> {
    let index = data.index(beta)?;
    check_point(data, x0)?;
    let ep = EvalPoint { x: x0, u: dot(x0, beta), exclude: None };
    Ok(point_derivs(data, &index, ep, y0, h.h, Order::Gradient)?.grad)
}

/// Leave-one-out criterion `n^{-2} Σ_i Σ_j {I(Y_i ≤ Y_j) - F̂_{-i}(Y_j | u_i)}²`.
/// Returns `+∞` when any leave-one-out denominator underflows.
pub fn cv_criterion(data: &Dataset, index: &[f64], h: f64) -> f64 {
    let n = data.n();
    let view = SortedView::new(data.y());
    let per_row: Vec<Option<ExactSum>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let ep = EvalPoint { x: data.row(i), u: index[i], exclude: Some(i) };
            let d = kernel_derivs(data, index, &view, &view.order, ep, h, Order::Value).ok()?;
            let ti = view.threshold_of_row[i];
            let mut acc = ExactSum::new();
            for j in 0..n {
                let tj = view.threshold_of_row[j];
                let ind = if ti <= tj { 1.0 } else { 0.0 };
                let r = ind - d.f[tj];
                acc.add(r * r);
            }
            Some(acc)
        })
        .collect();
    let mut total = ExactSum::new();
    for r in per_row {
        match r {
            Some(a) => total.merge(&a),
            None => return f64::INFINITY,
        }
    }
    total.value() / (n as f64 * n as f64)
}

/// Default CV grid: 12 log-spaced bandwidths from 0.1 to 10 times `σ̂_u n^{-1/5}`,
/// with `σ̂_u` the standard deviation of the conditioning variable.
pub fn default_bandwidth_grid(data: &Dataset, beta: Option<&[f64]>) -> Result<Vec<Bandwidth>> {
    let u = conditioning_values(data, beta)?;
    let (_, sd) = mean_sd(&u);
    let scale = if sd > 0.0 { sd } else { 1.0 };
    let centre = scale * (data.n() as f64).powf(-0.2);
    log_space(0.1 * centre, 10.0 * centre, 12)
        .into_iter()
        .map(|h| Ok(Bandwidth { h, rate_exponent: Some(0.2) }))
        .collect()
}

fn conditioning_values(data: &Dataset, beta: Option<&[f64]>) -> Result<Vec<f64>> {
    match beta {
        Some(b) => data.index(b),
        None => {
            require_univariate(data)?;
            Ok(data.x_flat().to_vec())
        }
    }
}

/// Grid member minimizing the leave-one-out criterion; ties go to the smallest `h`.
pub fn cv_bandwidth(data: &Dataset, beta: Option<&[f64]>, grid: &[Bandwidth]) -> Result<Bandwidth> {
    if grid.is_empty() {
        return Err(AqrError::EmptyGrid);
    }
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let u = conditioning_values(data, beta)?;
    let mut best: Option<(f64, Bandwidth)> = None;
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.h.total_cmp(&b.h));
    for bw in sorted {
        let cv = cv_criterion(data, &u, bw.h);
        if best.as_ref().is_none_or(|(c, _)| cv < *c) {
            best = Some((cv, bw));
        }
    }
    let (cv, bw) = best.expect("grid is non-empty");
    if !cv.is_finite() {
        return Err(AqrError::KernelUnderflow { at: f64::NAN });
    }
    Ok(bw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_data(seed: u64, n: usize, p: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * p).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = (0..n).map(|i| x[i * p] + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        Dataset::from_flat(y, x, p).unwrap()
    }

    fn bw(h: f64) -> Bandwidth {
        Bandwidth::new(h).unwrap()
    }

    // Independent naive oracle: plain loops, no exact sums, no sorting.
    fn naive(data: &Dataset, beta: &[f64], h: f64, x0: &[f64], y0: f64) -> (f64, Vec<f64>) {
        let u0 = dot(x0, beta);
        let p = data.p();
        let (mut s1, mut s2) = (0.0, 0.0);
        let (mut s3, mut s4) = (vec![0.0; p], vec![0.0; p]);
        for k in 0..data.n() {
            let t = dot(data.row(k), beta) - u0;
            let w = (-0.5 * (t / h).powi(2)).exp() / (h * (2.0 * std::f64::consts::PI).sqrt());
            let wd = -t / (h * h) * w;
            s2 += w;
            for j in 0..p {
                s4[j] += wd * (data.row(k)[j] - x0[j]);
            }
            if data.y()[k] <= y0 {
                s1 += w;
                for j in 0..p {
                    s3[j] += wd * (data.row(k)[j] - x0[j]);
                }
            }
        }
        let g = (0..p).map(|j| s3[j] / s2 - s1 * s4[j] / (s2 * s2)).collect();
        (s1 / s2, g)
    }

    #[test]
    fn identical_covariates_give_empirical_cdf() {
        let y = vec![3.0, 1.0, 2.0, 2.0, 5.0];
        let d = Dataset::univariate(y.clone(), vec![0.7; 5]).unwrap();
        for y0 in [0.0, 1.0, 1.5, 2.0, 4.9, 5.0, 9.0] {
            let want = y.iter().filter(|&&v| v <= y0).count() as f64 / 5.0;
            assert!((cde_eval(&d, bw(0.3), 0.7, y0).unwrap() - want).abs() < 1e-15);
        }
    }

    #[test]
    fn extremes_are_zero_and_one() {
        let d = random_data(1, 30, 1);
        let max = d.y().iter().cloned().fold(f64::MIN, f64::max);
        let min = d.y().iter().cloned().fold(f64::MAX, f64::min);
        assert_eq!(cde_eval(&d, bw(0.5), 0.1, max).unwrap(), 1.0);
        assert_eq!(cde_eval(&d, bw(0.5), 0.1, min - 1e-9).unwrap(), 0.0);
    }

    #[test]
    fn underflow_reported() {
        let d = Dataset::univariate(vec![1.0, 2.0], vec![0.0, 0.1]).unwrap();
        assert!(matches!(cde_eval(&d, bw(1e-3), 100.0, 1.0), Err(AqrError::KernelUnderflow { .. })));
    }

    #[test]
    fn curve_matches_pointwise_exactly() {
        let d = random_data(2, 40, 1);
        let c = cde_curve(&d, bw(0.4), 0.2).unwrap();
        for (k, l) in c.knots().iter().zip(c.levels()) {
            assert_eq!(cde_eval(&d, bw(0.4), 0.2, *k).unwrap(), *l);
        }
        assert!(c.levels().windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*c.levels().last().unwrap(), 1.0);
    }

    #[test]
    fn single_row_curve() {
        let d = Dataset::univariate(vec![4.0], vec![1.0]).unwrap();
        let c = cde_curve(&d, bw(1.0), 0.0).unwrap();
        assert_eq!(c.knots(), &[4.0]);
        assert_eq!(c.levels(), &[1.0]);
    }

    #[test]
    fn index_matches_naive_oracle() {
        let d = random_data(3, 20, 3);
        let beta = [0.6, -0.64, 0.48];
        let x0 = [0.1, 0.3, -0.2];
        for y0 in [-1.0, 0.0, 0.4] {
            let (f, g) = naive(&d, &beta, 0.7, &x0, y0);
            assert!((index_cde_eval(&d, &beta, bw(0.7), &x0, y0).unwrap() - f).abs() < 1e-13);
            let got = index_cde_grad(&d, &beta, bw(0.7), &x0, y0).unwrap();
            for j in 0..3 {
                assert!((got[j] - g[j]).abs() < 1e-12 * (1.0 + g[j].abs()));
            }
        }
    }

    #[test]
    fn index_with_unit_beta_is_raw_cde() {
        let d = random_data(4, 25, 1);
        for y0 in [-0.5, 0.3] {
            assert_eq!(index_cde_eval(&d, &[1.0], bw(0.5), &[0.2], y0).unwrap(), cde_eval(&d, bw(0.5), 0.2, y0).unwrap());
        }
    }

    #[test]
    fn rotation_leaving_index_unchanged() {
        let d = random_data(5, 20, 2);
        let beta = [0.8, 0.6];
        // Rotate the covariates by R and beta by R: (R x)·(R b) = x·b.
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let rot = |v: &[f64]| vec![c * v[0] - s * v[1], s * v[0] + c * v[1]];
        let rows: Vec<Vec<f64>> = (0..d.n()).map(|i| rot(d.row(i))).collect();
        let d2 = Dataset::new(d.y().to_vec(), rows).unwrap();
        let x0 = [0.4, -0.1];
        let a = index_cde_eval(&d, &beta, bw(0.6), &x0, 0.1).unwrap();
        let b = index_cde_eval(&d2, &rot(&beta), bw(0.6), &rot(&x0), 0.1).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn identical_rows_have_zero_gradient() {
        let rows = vec![vec![0.5, -1.0]; 10];
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let d = Dataset::new(y, rows).unwrap();
        let g = index_cde_grad(&d, &[0.6, 0.8], bw(0.4), &[0.5, -1.0], 4.0).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn symmetric_design_gives_odd_gradient() {
        // x symmetric about x0 = 0 with the same y at ±x, so F̂ is even in β and
        // its derivative is odd, vanishing at β = 0.
        let x = vec![-2.0, -1.0, 1.0, 2.0, 0.0];
        let y = vec![1.0, 3.0, 3.0, 1.0, 2.0];
        let d = Dataset::univariate(y, x).unwrap();
        let g = |b: f64| index_cde_grad(&d, &[b], bw(0.8), &[0.0], 2.0).unwrap()[0];
        for b in [0.3, 1.0, 2.5] {
            assert!((g(b) + g(-b)).abs() < 1e-12);
        }
        assert!(g(0.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..20 {
            let p = 1 + seed as usize % 4;
            let d = random_data(100 + seed, 30, p);
            let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x0: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y0 = rng.random_range(-1.0..1.0);
            let h = bw(0.8);
            let g = index_cde_grad(&d, &beta, h, &x0, y0).unwrap();
            for j in 0..p {
                let mut bp = beta.clone();
                let mut bm = beta.clone();
                bp[j] += 1e-5;
                bm[j] -= 1e-5;
                let fd = (index_cde_eval(&d, &bp, h, &x0, y0).unwrap() - index_cde_eval(&d, &bm, h, &x0, y0).unwrap()) / 2e-5;
                assert!((fd - g[j]).abs() <= 1e-4 * g[j].abs().max(1e-3), "seed {seed} j {j}: {fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn shard_partials_merge_bit_identically() {
        let d = random_data(6, 37, 2);
        let beta = [0.6, 0.8];
        let index = d.index(&beta).unwrap();
        let view = SortedView::new(d.y());
        let ep = EvalPoint { x: d.row(3), u: index[3], exclude: None };
        let full = partial_sums(&d, &index, &view, &view.order, ep, 0.5, Order::Hessian).finalize(0.0).unwrap();
        let groups: Vec<Vec<usize>> = (0..3).map(|g| (0..37).filter(|i| i % 3 == g).collect()).collect();
        let mut merged: Option<PartialSums> = None;
        for g in &groups {
            let part = partial_sums(&d, &index, &view, &view.restrict(g, 37), ep, 0.5, Order::Hessian);
            match merged.as_mut() {
                None => merged = Some(part),
                Some(m) => m.merge(&part),
            }
        }
        let merged = merged.unwrap().finalize(0.0).unwrap();
        assert_eq!(full, merged);
    }

    #[test]
    fn cv_examples() {
        let d = random_data(7, 60, 1);
        let one = [bw(0.37)];
        assert_eq!(cv_bandwidth(&d, None, &one).unwrap(), one[0]);
        assert_eq!(cv_bandwidth(&d, None, &[]), Err(AqrError::EmptyGrid));
        let grid = default_bandwidth_grid(&d, None).unwrap();
        let h = cv_bandwidth(&d, None, &grid).unwrap();
        let shifted = cv_bandwidth(&d.shift_y(17.0).unwrap(), None, &grid).unwrap();
        assert_eq!(h, shifted);
    }

    proptest! {
        #[test]
        fn cde_in_unit_interval_and_monotone(seed in 0u64..1000, h in 0.05f64..3.0, x0 in -2.0f64..2.0) {
            let d = random_data(seed, 25, 1);
            let mut prev = 0.0;
            let mut ys = d.y().to_vec();
            ys.push(-10.0);
            ys.push(10.0);
            ys.sort_by(f64::total_cmp);
            for y0 in ys {
                let f = cde_eval(&d, bw(h), x0, y0).unwrap();
                prop_assert!((0.0..=1.0).contains(&f));
                prop_assert!(f >= prev);
                prev = f;
            }
        }
    }
}
