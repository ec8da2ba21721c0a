//! Quantile weight densities `J_τ(s)` and their cumulatives `G_τ(u)`.
//!
//! Every parametric family is written down for `τ ∈ (0, 1/2]` and extended to
//! the upper half by reflection, `J_τ(s) = J_{1-τ}(1-s)`. Internally densities
//! are evaluated from an `(s, 1 - s)` pair so that values near `s = 1` keep full
//! relative precision when the caller knows the complement exactly.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{AqrError, Result};
use crate::numeric::{integrate, QuadOptions};

/// Tolerance below which removable singularities collapse to the flat density.
const CENTER_EPS: f64 = 1e-8;

/// A quantile level strictly inside `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TauLevel(f64);

impl TauLevel {
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value < 1.0 {
            Ok(Self(value))
        } else {
            Err(AqrError::Domain { value, domain: "(0, 1)" })
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// The reflected level `1 - τ`.
    pub fn mirror(self) -> Self {
        Self(1.0 - self.0)
    }

    pub fn is_lower(self) -> bool {
        self.0 <= 0.5
    }

    /// Builds a grid of levels, rejecting any value outside `(0, 1)`.
    pub fn grid(values: &[f64]) -> Result<Vec<Self>> {
        values.iter().map(|&v| Self::new(v)).collect()
    }
}

impl TryFrom<f64> for TauLevel {
    type Error = AqrError;
    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<TauLevel> for f64 {
    fn from(t: TauLevel) -> f64 {
        t.0
    }
}

/// Sign that turns an AQR value into a risk: `-1` on the lower half
/// (including `τ = 1/2`), `+1` above.
pub fn omega(tau: TauLevel) -> f64 {
    if tau.value() <= 0.5 {
        -1.0
    } else {
        1.0
    }
}

/// Closed-form `τ ↦ α_τ` maps used by the generalized extremile and the
/// truncated-Cauchy families. Each is stated for `τ ∈ (0, 1/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaSchedule {
    /// `α_τ = 0.5/τ - 1`
    HalfInverse,
    /// `α_τ = 0.5π·cot(πτ)`
    Cotangent,
    /// `α_τ = -ln(2 - 2τ) / ln(1 - τ)`, which reproduces the extremile.
    ExtremileEquivalent,
    /// `α_τ = τ`. Increasing in τ, so it breaks the τ-monotonicity of `G`;
    /// kept as a negative fixture for validation.
    Linear,
}

impl AlphaSchedule {
    pub const ALL_DECREASING: [AlphaSchedule; 3] =
        [AlphaSchedule::HalfInverse, AlphaSchedule::Cotangent, AlphaSchedule::ExtremileEquivalent];

    /// `α_τ` for a lower-half level `τ ∈ (0, 1/2]`.
    pub fn alpha(self, tau: f64) -> f64 {
        match self {
            AlphaSchedule::HalfInverse => 0.5 / tau - 1.0,
            AlphaSchedule::Cotangent => {
                if (2.0 * tau - 1.0).abs() < CENTER_EPS {
                    0.0
                } else {
                    0.5 * PI / (PI * tau).tan()
                }
            }
            AlphaSchedule::ExtremileEquivalent => -(1.0 - 2.0 * tau).ln_1p() / (-tau).ln_1p(),
            AlphaSchedule::Linear => tau,
        }
    }

    /// `A = lim_{t→0} t·α_t`, the constant governing the heavy-tail limit ratio.
    pub fn tail_constant(self) -> Option<f64> {
        match self {
            AlphaSchedule::HalfInverse | AlphaSchedule::Cotangent => Some(0.5),
            AlphaSchedule::ExtremileEquivalent => Some(LN_2),
            AlphaSchedule::Linear => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AlphaSchedule::HalfInverse => "half-inverse",
            AlphaSchedule::Cotangent => "cotangent",
            AlphaSchedule::ExtremileEquivalent => "extremile-equivalent",
            AlphaSchedule::Linear => "linear",
        }
    }
}

/// A weight family `(J_τ, G_τ)`.
///
/// `Tabulated` is a τ-independent piecewise-linear density on a grid over
/// `[0, 1]`; it exists so that tests and validation runs can feed arbitrary
/// (including invalid) densities through the same machinery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WeightFamily {
    Qr,
    Es,
    Ges { a: f64 },
    Extremile,
    Ge { schedule: AlphaSchedule },
    Tcrm { schedule: AlphaSchedule },
    ExpSpectral,
    Tabulated { grid: Vec<f64>, density: Vec<f64> },
}

impl WeightFamily {
    pub fn ges(a: f64) -> Result<Self> {
        let f = WeightFamily::Ges { a };
        f.check()?;
        Ok(f)
    }

    pub fn tabulated(grid: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        let f = WeightFamily::Tabulated { grid, density };
        f.check()?;
        Ok(f)
    }

    /// GES(a=1), ES, Extremile, GE and TCRM with the half-inverse schedule:
    /// the five families used throughout the comparisons and simulations.
    pub fn standard_five() -> Vec<WeightFamily> {
        vec![
            WeightFamily::Es,
            WeightFamily::Ges { a: 1.0 },
            WeightFamily::Extremile,
            WeightFamily::Ge { schedule: AlphaSchedule::HalfInverse },
            WeightFamily::Tcrm { schedule: AlphaSchedule::HalfInverse },
        ]
    }

    /// Every built-in parametrisation that is expected to satisfy C1.
    pub fn c1_suite() -> Vec<WeightFamily> {
        let mut v = vec![
            WeightFamily::Es,
            WeightFamily::Ges { a: 0.0 },
            WeightFamily::Ges { a: 1.0 },
            WeightFamily::Ges { a: 2.0 },
            WeightFamily::Extremile,
            WeightFamily::Ge { schedule: AlphaSchedule::HalfInverse },
            WeightFamily::Ge { schedule: AlphaSchedule::Cotangent },
        ];
        v.extend(AlphaSchedule::ALL_DECREASING.iter().map(|&schedule| WeightFamily::Tcrm { schedule }));
        v.push(WeightFamily::ExpSpectral);
        v
    }

    /// One representative per family kind, QR included.
    pub fn kinds() -> Vec<WeightFamily> {
        vec![
            WeightFamily::Qr,
            WeightFamily::Es,
            WeightFamily::Ges { a: 1.0 },
            WeightFamily::Extremile,
            WeightFamily::Ge { schedule: AlphaSchedule::HalfInverse },
            WeightFamily::Tcrm { schedule: AlphaSchedule::HalfInverse },
            WeightFamily::ExpSpectral,
        ]
    }

    /// Validates family parameters.
    pub fn check(&self) -> Result<()> {
        match self {
            WeightFamily::Ges { a } if !(a.is_finite() && *a >= 0.0) => {
                Err(AqrError::InvalidParameter(format!("GES shape a must be finite and >= 0, got {a}")))
            }
            WeightFamily::Tabulated { grid, density } => {
                if grid.len() < 2 || grid.len() != density.len() {
                    return Err(AqrError::InvalidParameter(
                        "tabulated density needs matching grid/density of length >= 2".into(),
                    ));
                }
                if grid[0] != 0.0 || *grid.last().unwrap() != 1.0 || grid.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(AqrError::InvalidParameter(
                        "tabulated grid must increase strictly from 0 to 1".into(),
                    ));
                }
                if density.iter().any(|d| !d.is_finite()) {
                    return Err(AqrError::NonFinite("tabulated density"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// True for the Dirac weight of quantile regression.
    pub fn is_singular(&self) -> bool {
        matches!(self, WeightFamily::Qr)
    }

    pub fn label(&self) -> String {
        match self {
            WeightFamily::Qr => "QR".into(),
            WeightFamily::Es => "ES".into(),
            WeightFamily::Ges { a } => format!("GES(a={a})"),
            WeightFamily::Extremile => "Extremile".into(),
            WeightFamily::Ge { schedule } => format!("GE({})", schedule.name()),
            WeightFamily::Tcrm { schedule } => format!("TCRM({})", schedule.name()),
            WeightFamily::ExpSpectral => "ExpSpectral".into(),
            WeightFamily::Tabulated { .. } => "Tabulated".into(),
        }
    }

    /// Short name used in tables (`GES`, `GE`, `TCRM`, ...).
    pub fn short_name(&self) -> &'static str {
        match self {
            WeightFamily::Qr => "QR",
            WeightFamily::Es => "ES",
            WeightFamily::Ges { .. } => "GES",
            WeightFamily::Extremile => "Extremile",
            WeightFamily::Ge { .. } => "GE",
            WeightFamily::Tcrm { .. } => "TCRM",
            WeightFamily::ExpSpectral => "ExpSpectral",
            WeightFamily::Tabulated { .. } => "Tabulated",
        }
    }

    /// `J_τ(s)`.
    pub fn j(&self, tau: TauLevel, s: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&s) {
            return Err(AqrError::Domain { value: s, domain: "[0, 1]" });
        }
        if self.is_singular() {
            return Err(AqrError::SingularDensity);
        }
        if let Some(alpha) = self.schedule_alpha(tau) {
            if !(alpha.is_finite() && alpha > -1.0) {
                return Err(AqrError::ScheduleDomain { tau: tau.value() });
            }
        }
        Ok(self.density_pair(tau.value(), s, 1.0 - s))
    }

    /// `G_τ(u) = ∫_0^u J_τ(s) ds`; the unit step `I(u ≥ τ)` for QR.
    pub fn g(&self, tau: TauLevel, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(AqrError::Domain { value: u, domain: "[0, 1]" });
        }
        Ok(self.cdf_pair(tau.value(), u, 1.0 - u))
    }

    fn schedule_alpha(&self, tau: TauLevel) -> Option<f64> {
        let lower = if tau.is_lower() { tau.value() } else { 1.0 - tau.value() };
        match self {
            WeightFamily::Ge { schedule } | WeightFamily::Tcrm { schedule } => Some(schedule.alpha(lower)),
            _ => None,
        }
    }

    /// Density evaluated from `s` and its complement `sc = 1 - s`.
    ///
    /// Callers must not pass the singular QR family.
    pub(crate) fn density_pair(&self, tau: f64, s: f64, sc: f64) -> f64 {
        if let WeightFamily::Tabulated { grid, density } = self {
            return interp(grid, density, s);
        }
        if tau <= 0.5 {
            self.density_at_level(tau, false, s, sc)
        } else {
            self.density_at_level(1.0 - tau, true, s, sc)
        }
    }

    /// Density at the level whose lower-half representative is `lower`;
    /// `upper` selects the reflected level `1 - lower`. Passing the
    /// representative directly avoids the roundoff in `1 - (1 - τ)`.
    fn density_at_level(&self, lower: f64, upper: bool, s: f64, sc: f64) -> f64 {
        if let WeightFamily::Tabulated { grid, density } = self {
            return interp(grid, density, s);
        }
        if self.flat_at_center(lower) {
            return 1.0;
        }
        if upper {
            self.lower_density(lower, sc, s)
        } else {
            self.lower_density(lower, s, sc)
        }
    }

    /// Cumulative evaluated from `u` and `uc = 1 - u`.
    pub(crate) fn cdf_pair(&self, tau: f64, u: f64, uc: f64) -> f64 {
        match self {
            WeightFamily::Qr => {
                if u >= tau {
                    1.0
                } else {
                    0.0
                }
            }
            WeightFamily::Tabulated { grid, density } => tabulated_cdf(grid, density, u),
            _ if self.flat_at_center(tau) => u,
            _ if tau <= 0.5 => self.lower_cdf(tau, u, uc),
            _ => 1.0 - self.lower_cdf(1.0 - tau, uc, u),
        }
    }

    /// ES and GES have no reflection-symmetric form at `τ = 1/2` other than the
    /// flat density, which is what C1 forces there.
    fn flat_at_center(&self, tau: f64) -> bool {
        matches!(self, WeightFamily::Es | WeightFamily::Ges { .. }) && (2.0 * tau - 1.0).abs() < CENTER_EPS
    }

    fn lower_density(&self, tau: f64, s: f64, sc: f64) -> f64 {
        match self {
            WeightFamily::Es => {
                if s < tau {
                    1.0 / tau
                } else {
                    0.0
                }
            }
            WeightFamily::Ges { a } => {
                if s < tau {
                    (1.0 + a) / tau * ((tau - s) / tau).powf(*a)
                } else {
                    0.0
                }
            }
            WeightFamily::Extremile => {
                let r = extremile_r(tau);
                r * sc.powf(r - 1.0)
            }
            WeightFamily::Ge { schedule } => {
                let alpha = schedule.alpha(tau);
                (1.0 + alpha) * sc.powf(alpha)
            }
            WeightFamily::Tcrm { schedule } => {
                let alpha = schedule.alpha(tau);
                if alpha.abs() < CENTER_EPS {
                    1.0
                } else {
                    alpha / ((1.0 + (alpha * s).powi(2)) * alpha.atan())
                }
            }
            WeightFamily::ExpSpectral => {
                let c = 2.0 * tau;
                if (c - 1.0).abs() < CENTER_EPS {
                    1.0
                } else {
                    c.powf(s) * c.ln() / (c - 1.0)
                }
            }
            WeightFamily::Qr | WeightFamily::Tabulated { .. } => unreachable!("handled by caller"),
        }
    }

    fn lower_cdf(&self, tau: f64, u: f64, uc: f64) -> f64 {
        match self {
            WeightFamily::Es => (u / tau).min(1.0),
            WeightFamily::Ges { a } => {
                if u < tau {
                    -(((tau - u) / tau).ln() * (a + 1.0)).exp_m1()
                } else {
                    1.0
                }
            }
            WeightFamily::Extremile => -(extremile_r(tau) * uc.ln()).exp_m1(),
            WeightFamily::Ge { schedule } => -((schedule.alpha(tau) + 1.0) * uc.ln()).exp_m1(),
            WeightFamily::Tcrm { schedule } => {
                let alpha = schedule.alpha(tau);
                if alpha.abs() < CENTER_EPS {
                    u
                } else {
                    (alpha * u).atan() / alpha.atan()
                }
            }
            WeightFamily::ExpSpectral => {
                let c = 2.0 * tau;
                if (c - 1.0).abs() < CENTER_EPS {
                    u
                } else {
                    (u * c.ln()).exp_m1() / (c - 1.0)
                }
            }
            WeightFamily::Qr | WeightFamily::Tabulated { .. } => unreachable!("handled by caller"),
        }
    }

    /// Points in `s` where `J_τ` is discontinuous or has a kink.
    pub fn breakpoints(&self, tau: TauLevel) -> Vec<f64> {
        match self {
            WeightFamily::Es | WeightFamily::Ges { .. } if !self.flat_at_center(tau.value()) => vec![tau.value()],
            WeightFamily::Tabulated { grid, .. } => grid.clone(),
            WeightFamily::Qr => vec![tau.value()],
            _ => Vec::new(),
        }
    }

    /// Tail-limit constant `A` for schedule-driven families; `ln 2` for the extremile.
    pub fn tail_constant(&self) -> Option<f64> {
        match self {
            WeightFamily::Extremile => Some(LN_2),
            WeightFamily::Ge { schedule } | WeightFamily::Tcrm { schedule } => schedule.tail_constant(),
            _ => None,
        }
    }
}

/// Extremile exponent `r(τ) = ln(1/2) / ln(1 - τ)` for `τ ≤ 1/2`.
fn extremile_r(tau: f64) -> f64 {
    -LN_2 / (-tau).ln_1p()
}

fn interp(grid: &[f64], values: &[f64], x: f64) -> f64 {
    let k = grid.partition_point(|&g| g <= x);
    if k == 0 {
        return values[0];
    }
    if k >= grid.len() {
        return *values.last().unwrap();
    }
    let (x0, x1) = (grid[k - 1], grid[k]);
    let w = (x - x0) / (x1 - x0);
    values[k - 1] + w * (values[k] - values[k - 1])
}

fn tabulated_cdf(grid: &[f64], values: &[f64], u: f64) -> f64 {
    let mut acc = 0.0;
    for k in 1..grid.len() {
        let (x0, x1) = (grid[k - 1], grid[k]);
        if u <= x0 {
            break;
        }
        let hi = u.min(x1);
        let v_hi = interp(grid, values, hi);
        acc += 0.5 * (values[k - 1] + v_hi) * (hi - x0);
    }
    acc
}

/// Status of one C1 sub-condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Exempt,
}

/// The first grid point at which a sub-condition was violated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub tau: f64,
    /// `s` for density checks, `u` for the cumulative check.
    pub at: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub status: CheckStatus,
    pub checked: usize,
    pub violations: usize,
    pub witness: Option<Witness>,
}

impl ConditionReport {
    fn exempt() -> Self {
        Self { status: CheckStatus::Exempt, checked: 0, violations: 0, witness: None }
    }
}

#[derive(Default)]
struct Tally {
    checked: usize,
    violations: usize,
    witness: Option<Witness>,
}

impl Tally {
    fn record(&mut self, ok: bool, tau: f64, at: f64, detail: impl FnOnce() -> String) {
        self.checked += 1;
        if !ok {
            self.violations += 1;
            if self.witness.is_none() {
                self.witness = Some(Witness { tau, at, detail: detail() });
            }
        }
    }

    fn finish(self) -> ConditionReport {
        ConditionReport {
            status: if self.violations == 0 { CheckStatus::Pass } else { CheckStatus::Fail },
            checked: self.checked,
            violations: self.violations,
            witness: self.witness,
        }
    }
}

/// Outcome of checking condition C1 on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub family: String,
    pub singular: bool,
    /// (i) non-negative, bounded and normalized.
    pub positivity_normalization: ConditionReport,
    /// (ii) reflection symmetry and monotonicity in `s`.
    pub reverse_monotone: ConditionReport,
    /// (iii) `G_τ(u)` non-increasing in τ.
    pub tau_monotone_g: ConditionReport,
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        [&self.positivity_normalization, &self.reverse_monotone, &self.tau_monotone_g]
            .iter()
            .all(|c| c.status != CheckStatus::Fail)
    }
}

/// Default validation grids: `τ ∈ {0.01, ..., 0.99}` and `s ∈ {0, 1/400, ..., 1}`.
pub fn default_grids() -> (Vec<TauLevel>, Vec<f64>) {
    let taus = (1..100).map(|k| TauLevel(k as f64 / 100.0)).collect();
    let s = (0..=400).map(|k| k as f64 / 400.0).collect();
    (taus, s)
}

const NORMALIZATION_TOL: f64 = 1e-10;
const SHAPE_TOL: f64 = 1e-12;

/// Checks C1 (i)–(iii) for `family` on the given grids. Failures are reported
/// as data with the first witnessing grid point.
pub fn validate_c1(family: &WeightFamily, tau_grid: &[TauLevel], s_grid: &[f64]) -> Result<ValidationReport> {
    family.check()?;
    if tau_grid.is_empty() || s_grid.is_empty() {
        return Err(AqrError::EmptyInput);
    }
    if s_grid.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(AqrError::Domain { value: f64::NAN, domain: "s grid within [0, 1]" });
    }
    let mut taus: Vec<TauLevel> = tau_grid.to_vec();
    taus.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut s_vals = s_grid.to_vec();
    s_vals.sort_by(f64::total_cmp);

    let mut notes = Vec::new();
    let singular = family.is_singular();

    let (cond_i, cond_ii) = if singular {
        notes.push(
            "QR uses a Dirac weight: density conditions (i) and (ii) are exempt; only G is checked".to_string(),
        );
        (ConditionReport::exempt(), ConditionReport::exempt())
    } else {
        (check_positivity_normalization(family, &taus, &s_vals), check_reverse_monotone(family, &taus, &s_vals))
    };

    let mut t3 = Tally::default();
    let interior: Vec<f64> = s_vals.iter().copied().filter(|&u| u > 0.0 && u < 1.0).collect();
    for w in taus.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        for &u in &interior {
            let g_lo = family.cdf_pair(lo.0, u, 1.0 - u);
            let g_hi = family.cdf_pair(hi.0, u, 1.0 - u);
            t3.record(g_hi <= g_lo + SHAPE_TOL, hi.0, u, || {
                format!("G increases from {g_lo} at tau={} to {g_hi} at tau={}", lo.0, hi.0)
            });
        }
    }

    Ok(ValidationReport {
        family: family.label(),
        singular,
        positivity_normalization: cond_i,
        reverse_monotone: cond_ii,
        tau_monotone_g: t3.finish(),
        notes,
    })
}

fn check_positivity_normalization(family: &WeightFamily, taus: &[TauLevel], s_vals: &[f64]) -> ConditionReport {
    let mut tally = Tally::default();
    let opts = QuadOptions { abs_tol: 1e-13, rel_tol: 1e-14, max_intervals: 2000 };
    for &tau in taus {
        for &s in s_vals {
            let j = family.density_pair(tau.0, s, 1.0 - s);
            tally.record(j.is_finite() && j >= 0.0, tau.0, s, || format!("density {j} is negative or unbounded"));
        }
        let breaks = family.breakpoints(tau);
        let q = integrate(|s| family.density_pair(tau.0, s, 1.0 - s), 0.0, 1.0, &breaks, opts);
        let err = (q.value - 1.0).abs();
        tally.record(err < NORMALIZATION_TOL, tau.0, 1.0, || format!("integral of density is {}", q.value));
    }
    tally.finish()
}

fn check_reverse_monotone(family: &WeightFamily, taus: &[TauLevel], s_vals: &[f64]) -> ConditionReport {
    let mut tally = Tally::default();
    for &tau in taus {
        let t = tau.0;
        let row: Vec<f64> = s_vals.iter().map(|&s| family.density_pair(t, s, 1.0 - s)).collect();
        for (&s, &j) in s_vals.iter().zip(&row) {
            let (lower, upper) = if t <= 0.5 { (t, false) } else { (1.0 - t, true) };
            let mirrored = family.density_at_level(lower, !upper, 1.0 - s, s);
            let ok = (j - mirrored).abs() <= SHAPE_TOL * j.abs().max(1.0);
            tally.record(ok, t, s, || format!("J_tau(s)={j} but J_(1-tau)(1-s)={mirrored}"));
        }
        for (k, w) in row.windows(2).enumerate() {
            let tol = SHAPE_TOL * w[0].abs().max(w[1].abs()).max(1.0);
            if t <= 0.5 {
                tally.record(w[1] <= w[0] + tol, t, s_vals[k + 1], || {
                    format!("density increases in s ({} -> {}) for tau <= 1/2", w[0], w[1])
                });
            }
            if t >= 0.5 {
                tally.record(w[1] >= w[0] - tol, t, s_vals[k + 1], || {
                    format!("density decreases in s ({} -> {}) for tau >= 1/2", w[0], w[1])
                });
            }
        }
    }
    tally.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tau(v: f64) -> TauLevel {
        TauLevel::new(v).unwrap()
    }

    #[test]
    fn tau_level_rejects_endpoints() {
        assert!(TauLevel::new(0.0).is_err());
        assert!(TauLevel::new(1.0).is_err());
        assert!(TauLevel::new(f64::NAN).is_err());
        assert!(TauLevel::new(0.3).is_ok());
    }

    #[test]
    fn j_value_examples() {
        let ges0 = WeightFamily::Ges { a: 0.0 };
        assert_eq!(ges0.j(tau(0.2), 0.1).unwrap(), 5.0);
        let ge = WeightFamily::Ge { schedule: AlphaSchedule::HalfInverse };
        assert_eq!(ge.j(tau(0.25), 0.5).unwrap(), 1.0);
        for schedule in AlphaSchedule::ALL_DECREASING {
            let f = WeightFamily::Tcrm { schedule };
            for s in [0.0, 0.3, 0.77, 1.0] {
                assert_eq!(f.j(tau(0.5), s).unwrap(), 1.0, "{schedule:?}");
            }
        }
        for s in [0.0, 0.5, 0.9] {
            assert!((WeightFamily::Extremile.j(tau(0.5), s).unwrap() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn g_value_examples() {
        assert!((WeightFamily::Ges { a: 1.0 }.g(tau(0.2), 0.1).unwrap() - 0.75).abs() < 1e-15);
        let ge = WeightFamily::Ge { schedule: AlphaSchedule::HalfInverse };
        assert!((ge.g(tau(0.25), 0.5).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(WeightFamily::Qr.g(tau(0.3), 0.2).unwrap(), 0.0);
        assert_eq!(WeightFamily::Qr.g(tau(0.3), 0.3).unwrap(), 1.0);
    }

    #[test]
    fn qr_has_no_density() {
        assert_eq!(WeightFamily::Qr.j(tau(0.3), 0.2), Err(AqrError::SingularDensity));
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(WeightFamily::Es.j(tau(0.3), 1.5), Err(AqrError::Domain { .. })));
        assert!(matches!(WeightFamily::Es.g(tau(0.3), -0.1), Err(AqrError::Domain { .. })));
        assert!(WeightFamily::ges(-1.0).is_err());
    }

    #[test]
    fn omega_sign() {
        assert_eq!(omega(tau(0.3)), -1.0);
        assert_eq!(omega(tau(0.5)), -1.0);
        assert_eq!(omega(tau(0.7)), 1.0);
    }

    #[test]
    fn ges_cdf_saturates_past_tau() {
        for a in [0.0, 1.0, 2.0, 3.5] {
            let f = WeightFamily::Ges { a };
            for u in [0.2, 0.25, 0.6, 1.0] {
                assert_eq!(f.g(tau(0.2), u).unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn ge_half_inverse_copies_match_table() {
        // 1 + α_τ independent copies: τ = 0.25 → 2, 0.1 → 5, 0.05 → 10, 0.02 → 25, 0.01 → 50.
        for (t, copies) in [(0.25, 2.0), (0.1, 5.0), (0.05, 10.0), (0.02, 25.0), (0.01, 50.0)] {
            let alpha = AlphaSchedule::HalfInverse.alpha(t);
            assert!((1.0 + alpha - copies).abs() < 1e-12, "tau {t}");
        }
    }

    #[test]
    fn extremile_equivalent_schedule_matches_extremile() {
        let a = WeightFamily::Extremile;
        let b = WeightFamily::Ge { schedule: AlphaSchedule::ExtremileEquivalent };
        for t in [0.03, 0.2, 0.45, 0.7, 0.96] {
            for s in [0.0, 0.1, 0.5, 0.93] {
                let (x, y) = (a.j(tau(t), s).unwrap(), b.j(tau(t), s).unwrap());
                assert!((x - y).abs() < 1e-12 * x.max(1.0), "tau {t} s {s}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn cdf_matches_quadrature_of_density() {
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let families = WeightFamily::c1_suite();
        for _ in 0..60 {
            let t = tau(0.01 + 0.98 * next());
            let u = next();
            for f in &families {
                let breaks = f.breakpoints(t);
                let q = integrate(|s| f.j(t, s).unwrap(), 0.0, u, &breaks, QuadOptions::default());
                let g = f.g(t, u).unwrap();
                assert!((q.value - g).abs() < 1e-8, "{} tau {} u {u}: {} vs {g}", f.label(), t.value(), q.value);
            }
        }
    }

    #[test]
    fn reflection_holds_pointwise() {
        for f in WeightFamily::c1_suite() {
            for t in [0.05, 0.2, 0.35, 0.5, 0.66] {
                for k in 0..=40 {
                    let s = k as f64 / 40.0;
                    let a = f.j(tau(t), s).unwrap();
                    let b = f.j(tau(1.0 - t), 1.0 - s).unwrap();
                    assert!((a - b).abs() <= 1e-12 * a.max(1.0), "{} tau {t} s {s}: {a} vs {b}", f.label());
                }
            }
        }
    }

    #[test]
    fn c1_suite_passes_and_es_passes_on_coarse_grid() {
        let taus = TauLevel::grid(&(1..20).map(|k| k as f64 * 0.05).collect::<Vec<_>>()).unwrap();
        let s: Vec<f64> = (0..=400).map(|k| k as f64 / 400.0).collect();
        let r = validate_c1(&WeightFamily::Es, &taus, &s).unwrap();
        assert!(r.passed(), "{r:#?}");
    }

    #[test]
    fn builtin_families_satisfy_c1_on_default_grids() {
        let (taus, s) = default_grids();
        for f in WeightFamily::c1_suite().into_iter().chain([WeightFamily::Qr]) {
            let r = validate_c1(&f, &taus, &s).unwrap();
            assert!(r.passed(), "{r:#?}");
        }
    }

    #[test]
    fn increasing_tabulated_density_fails_reverse_condition() {
        let f = WeightFamily::tabulated(vec![0.0, 1.0], vec![0.0, 2.0]).unwrap();
        let (taus, s) = default_grids();
        let r = validate_c1(&f, &taus, &s).unwrap();
        assert_eq!(r.positivity_normalization.status, CheckStatus::Pass);
        assert_eq!(r.reverse_monotone.status, CheckStatus::Fail);
    }

    #[test]
    fn linear_schedule_fails_tau_monotonicity() {
        let (taus, s) = default_grids();
        let f = WeightFamily::Ge { schedule: AlphaSchedule::Linear };
        let r = validate_c1(&f, &taus, &s).unwrap();
        assert_eq!(r.tau_monotone_g.status, CheckStatus::Fail);
        let w = r.tau_monotone_g.witness.unwrap();
        assert!(w.tau <= 0.5 && w.at > 0.0 && w.at < 1.0);
    }

    #[test]
    fn crafted_negative_density_fails_positivity() {
        let f = WeightFamily::tabulated(vec![0.0, 1.0], vec![-0.5, 1.5]).unwrap();
        let (taus, s) = default_grids();
        let r = validate_c1(&f, &taus, &s).unwrap();
        assert_eq!(r.positivity_normalization.status, CheckStatus::Fail);
        let w = r.positivity_normalization.witness.unwrap();
        assert!(w.at < 0.25, "{w:?}");
    }

    #[test]
    fn qr_is_exempt_but_g_checked() {
        let (taus, s) = default_grids();
        let r = validate_c1(&WeightFamily::Qr, &taus, &s).unwrap();
        assert!(r.singular);
        assert_eq!(r.positivity_normalization.status, CheckStatus::Exempt);
        assert_eq!(r.tau_monotone_g.status, CheckStatus::Pass);
        assert!(r.passed());
    }

    #[test]
    fn family_json_round_trip() {
        let f = WeightFamily::Tcrm { schedule: AlphaSchedule::Cotangent };
        let txt = serde_json::to_string(&f).unwrap();
        assert_eq!(txt, r#"{"kind":"tcrm","schedule":"cotangent"}"#);
        let back: WeightFamily = serde_json::from_str(&txt).unwrap();
        assert_eq!(back, f);
        assert!(serde_json::from_str::<TauLevel>("1.5").is_err());
    }
}
