//! Unconditional sample AQR as an L-estimator over order statistics, and an
//! empirical check of the coherence axioms.

use serde::{Deserialize, Serialize};

use crate::error::{AqrError, Result};
use crate::numeric::ExactSum;
use crate::weight_family::{omega, TauLevel, WeightFamily};

/// A finite, non-empty sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Sample {
    values: Vec<f64>,
}

impl Sample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(AqrError::EmptyInput);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AqrError::NonFinite("sample"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values in non-decreasing order.
    pub fn sorted(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Sample, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.len() != other.len() {
            return Err(AqrError::ShapeMismatch { expected: self.len(), got: other.len() });
        }
        Self::new(self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect())
    }
}

impl TryFrom<Vec<f64>> for Sample {
    type Error = AqrError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Sample> for Vec<f64> {
    fn from(s: Sample) -> Self {
        s.values
    }
}

/// How plotting-position weights are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AqrMode {
    /// `n^{-1} Σ Y_(i) J_τ(i/(n+1))` as written.
    Raw,
    /// Weights rescaled to sum to one.
    #[default]
    Normalized,
}

/// Plotting-position weights `J_τ(i/(n+1))`, `i = 1..n`.
pub fn plotting_weights(family: &WeightFamily, tau: TauLevel, n: usize) -> Result<Vec<f64>> {
    if family.is_singular() {
        return Err(AqrError::SingularDensity);
    }
    family.j(tau, 0.5)?;
    let m = (n + 1) as f64;
    Ok((1..=n).map(|i| family.density_pair(tau.value(), i as f64 / m, (n + 1 - i) as f64 / m)).collect())
}

/// Empirical quantile of sorted data by linear interpolation between order
/// statistics placed at `i/(n+1)`, clamped to the sample range.
pub fn empirical_quantile(sorted: &[f64], tau: TauLevel) -> Result<f64> {
    let n = sorted.len();
    if n == 0 {
        return Err(AqrError::EmptyInput);
    }
    let h = tau.value() * (n + 1) as f64;
    if h <= 1.0 {
        return Ok(sorted[0]);
    }
    if h >= n as f64 {
        return Ok(sorted[n - 1]);
    }
    let k = h.floor() as usize;
    let frac = h - k as f64;
    Ok(sorted[k - 1] + frac * (sorted[k] - sorted[k - 1]))
}

/// Sample AQR of an already sorted vector.
pub fn aqr_sorted(sorted: &[f64], family: &WeightFamily, tau: TauLevel, mode: AqrMode) -> Result<f64> {
    let n = sorted.len();
    if n == 0 {
        return Err(AqrError::EmptyInput);
    }
    if family.is_singular() {
        return empirical_quantile(sorted, tau);
    }
    let w = plotting_weights(family, tau, n)?;
    let mut num = ExactSum::new();
    for (y, wi) in sorted.iter().zip(&w) {
        num.add(y * wi);
    }
    match mode {
        AqrMode::Raw => Ok(num.value() / n as f64),
        AqrMode::Normalized => {
            let mass: ExactSum = w.iter().copied().collect();
            let mass = mass.value();
            if mass <= 0.0 {
                return Err(AqrError::ZeroWeightMass { n });
            }
            Ok(num.value() / mass)
        }
    }
}

/// Sample AQR `Σ Y_(i) J_τ(i/(n+1))` over the ordered sample.
pub fn aqr_sample(sample: &Sample, family: &WeightFamily, tau: TauLevel, mode: AqrMode) -> Result<f64> {
    aqr_sorted(&sample.sorted(), family, tau, mode)
}

/// Residuals of the coherence axioms for `ρ = ω_τ · aqr_sample` in normalized mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub lambda: f64,
    pub shift: f64,
    /// `|aqr(λx) - λ aqr(x)|`
    pub homogeneity_residual: f64,
    /// `|aqr(x + c) - aqr(x) - c|`
    pub translation_residual: f64,
    /// Whether `x` and `y` share a rank order.
    pub comonotone: bool,
    /// `|aqr(x + y) - aqr(x) - aqr(y)|`, reported only for comonotone pairs.
    pub comonotone_residual: Option<f64>,
    /// `ρ(x) + ρ(y) - ρ(x + y)`; non-negative when subadditivity holds.
    pub subadditivity_slack: f64,
}

impl CoherenceReport {
    pub fn subadditive(&self, tol: f64) -> bool {
        self.subadditivity_slack >= -tol
    }
}

/// True when `y` is non-decreasing along the stable `(value, index)` sort order of `x`.
pub fn is_comonotone(x: &[f64], y: &[f64]) -> bool {
    if x.len() != y.len() {
        return false;
    }
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    idx.windows(2).all(|w| y[w[0]] <= y[w[1]])
}

/// Checks positive homogeneity (λ = 2), translation (c = 1), comonotone
/// additivity and subadditivity on one pair of samples.
pub fn coherence_check(x: &Sample, y: &Sample, family: &WeightFamily, tau: TauLevel) -> Result<CoherenceReport> {
    coherence_check_with(x, y, family, tau, 2.0, 1.0)
}

pub fn coherence_check_with(
    x: &Sample,
    y: &Sample,
    family: &WeightFamily,
    tau: TauLevel,
    lambda: f64,
    shift: f64,
) -> Result<CoherenceReport> {
    if x.len() != y.len() {
        return Err(AqrError::ShapeMismatch { expected: x.len(), got: y.len() });
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(AqrError::InvalidParameter(format!("scale must be positive, got {lambda}")));
    }
    let mode = AqrMode::Normalized;
    let a = |s: &Sample| aqr_sample(s, family, tau, mode);
    let ax = a(x)?;
    let ay = a(y)?;
    let homogeneity_residual = (a(&x.map(|v| lambda * v)?)? - lambda * ax).abs();
    let translation_residual = (a(&x.map(|v| v + shift)?)? - (ax + shift)).abs();
    let sum = x.zip_with(y, |p, q| p + q)?;
    let axy = a(&sum)?;
    let comonotone = is_comonotone(x.values(), y.values());
    let comonotone_residual = comonotone.then(|| (axy - ax - ay).abs());
    let w = omega(tau);
    Ok(CoherenceReport {
        lambda,
        shift,
        homogeneity_residual,
        translation_residual,
        comonotone,
        comonotone_residual,
        subadditivity_slack: w * ax + w * ay - w * axy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weight_family::AlphaSchedule;
    use proptest::prelude::*;

    fn tau(v: f64) -> TauLevel {
        TauLevel::new(v).unwrap()
    }

    #[test]
    fn flat_weights_give_mean() {
        let s = Sample::new(vec![3.0, -1.0, 4.0, 1.5, 9.0]).unwrap();
        let ge = WeightFamily::Ge { schedule: AlphaSchedule::HalfInverse };
        for mode in [AqrMode::Raw, AqrMode::Normalized] {
            assert!((aqr_sample(&s, &ge, tau(0.5), mode).unwrap() - 3.3).abs() < 1e-15);
        }
    }

    #[test]
    fn three_point_es_by_hand() {
        // At τ = 0.25 the strict indicator s < τ gives J(1/4) = J(2/4) = J(3/4) = 0,
        // so the renormalized sum is 0/0.
        let s = Sample::new(vec![3.0, 1.0, 2.0]).unwrap();
        assert_eq!(aqr_sample(&s, &WeightFamily::Es, tau(0.25), AqrMode::Normalized), Err(AqrError::ZeroWeightMass { n: 3 }));
        // At τ = 0.6 the mirrored weight is I(s > 0.6)/0.4, so only s = 3/4 counts.
        let v = aqr_sample(&s, &WeightFamily::Es, tau(0.6), AqrMode::Normalized).unwrap();
        assert_eq!(v, 3.0);
        // GES(a=1) at τ = 0.4: J(s) = 2/0.4 * (0.4 - s)/0.4 for s < 0.4 -> only s = 1/4 carries weight.
        let v = aqr_sample(&s, &WeightFamily::Ges { a: 1.0 }, tau(0.4), AqrMode::Raw).unwrap();
        let j = 2.0 / 0.4 * (0.4 - 0.25) / 0.4;
        assert!((v - j * 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn three_point_extremile_by_hand() {
        let s = Sample::new(vec![1.0, 2.0, 3.0]).unwrap();
        let t = 0.25;
        let r = (0.5f64).ln() / (1.0f64 - t).ln();
        let w: Vec<f64> = [0.25, 0.5, 0.75].iter().map(|&p: &f64| r * (1.0 - p).powf(r - 1.0)).collect();
        let want = (w[0] + 2.0 * w[1] + 3.0 * w[2]) / (w[0] + w[1] + w[2]);
        let got = aqr_sample(&s, &WeightFamily::Extremile, tau(t), AqrMode::Normalized).unwrap();
        assert!((got - want).abs() < 1e-14, "{got} vs {want}");
    }

    #[test]
    fn empty_sample_rejected() {
        assert_eq!(Sample::new(vec![]), Err(AqrError::EmptyInput));
        assert!(Sample::new(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn empirical_quantile_positions() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(empirical_quantile(&v, tau(0.5)).unwrap(), 2.5);
        assert_eq!(empirical_quantile(&v, tau(0.1)).unwrap(), 1.0);
        assert_eq!(empirical_quantile(&v, tau(0.9)).unwrap(), 4.0);
        assert!((empirical_quantile(&v, tau(0.3)).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn comonotone_pair_is_additive() {
        let x = Sample::new(vec![0.3, -1.2, 2.2, 0.0, 0.9, -0.4]).unwrap();
        let y = x.map(f64::exp).unwrap();
        let r = coherence_check(&x, &y, &WeightFamily::Es, tau(0.3)).unwrap();
        assert!(r.comonotone);
        assert!(r.comonotone_residual.unwrap() < 1e-12);
        assert_eq!(r.homogeneity_residual, 0.0);
    }

    #[test]
    fn antithetic_pair_has_positive_slack() {
        let x = Sample::new(vec![0.3, -1.2, 2.2, 0.05, 0.9, -0.4, 1.7, -2.1, 0.6, -0.8]).unwrap();
        let y = x.map(|v| -v).unwrap();
        let r = coherence_check(&x, &y, &WeightFamily::Es, tau(0.1)).unwrap();
        assert!(!r.comonotone);
        assert!(r.subadditivity_slack > 0.0);
    }

    #[test]
    fn length_mismatch() {
        let x = Sample::new(vec![1.0, 2.0]).unwrap();
        let y = Sample::new(vec![1.0]).unwrap();
        assert!(matches!(coherence_check(&x, &y, &WeightFamily::Es, tau(0.3)), Err(AqrError::ShapeMismatch { .. })));
    }

    fn family_strategy() -> impl Strategy<Value = WeightFamily> {
        prop::sample::select(WeightFamily::c1_suite())
    }

    proptest! {
        #[test]
        fn homogeneity_and_translation(
            values in prop::collection::vec(-50.0f64..50.0, 5..60),
            family in family_strategy(),
            t in 0.2f64..0.8,
            lambda in 0.1f64..10.0,
        ) {
            let s = Sample::new(values).unwrap();
            let t = tau(t);
            let base = aqr_sample(&s, &family, t, AqrMode::Normalized).unwrap();
            let scaled = aqr_sample(&s.map(|v| lambda * v).unwrap(), &family, t, AqrMode::Normalized).unwrap();
            prop_assert!((scaled - lambda * base).abs() <= 1e-12 * (1.0 + scaled.abs()));
            let shifted = aqr_sample(&s.map(|v| v + 3.0).unwrap(), &family, t, AqrMode::Normalized).unwrap();
            prop_assert!((shifted - base - 3.0).abs() <= 1e-12 * (1.0 + shifted.abs()));
        }

        #[test]
        fn monotone_in_data(
            values in prop::collection::vec(-50.0f64..50.0, 5..60),
            bumps in prop::collection::vec(0.0f64..5.0, 60),
            family in family_strategy(),
            t in 0.05f64..0.95,
        ) {
            let x = Sample::new(values.clone()).unwrap();
            let y = Sample::new(values.iter().zip(&bumps).map(|(v, b)| v + b).collect()).unwrap();
            let t = tau(t);
            let ax = aqr_sample(&x, &family, t, AqrMode::Normalized);
            let ay = aqr_sample(&y, &family, t, AqrMode::Normalized);
            if let (Ok(ax), Ok(ay)) = (ax, ay) {
                prop_assert!(ax <= ay + 1e-12 * (1.0 + ay.abs()));
            }
        }

        #[test]
        fn subadditive_for_random_pairs(
            x in prop::collection::vec(-10.0f64..10.0, 20),
            y in prop::collection::vec(-10.0f64..10.0, 20),
            family in prop::sample::select(WeightFamily::standard_five()),
            t in prop::sample::select(vec![0.05, 0.1, 0.9, 0.95]),
        ) {
            let r = coherence_check(&Sample::new(x).unwrap(), &Sample::new(y).unwrap(), &family, tau(t)).unwrap();
            prop_assert!(r.subadditive(1e-10), "{r:?}");
        }
    }
}
