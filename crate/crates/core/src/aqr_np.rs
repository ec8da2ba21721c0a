//! Plug-in conditional AQR computed exactly from a step CDF, and the RPAD metric.

use serde::{Deserialize, Serialize};

use crate::error::{AqrError, Result};
use crate::kernel_cde::{cde_curve, index_cde_curve, Bandwidth, Dataset, StepCDF};
use crate::numeric::ExactSum;
use crate::weight_family::{TauLevel, WeightFamily};

/// One conditional AQR estimate with diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AqrEstimate {
    pub value: f64,
    pub tau: TauLevel,
    pub family: WeightFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    pub knots: usize,
    /// Total `G`-increment mass `G_τ(F(max knot))`.
    pub g_mass: f64,
    /// True when the step CDF stops short of level 1.
    pub mass_deficit: bool,
}

/// Conditional AQR of a step CDF.
///
/// For a step function the two y-integrals collapse to
/// `Σ_i y_i [G(L_i) - G(L_{i-1})]`; it is evaluated in the summation-by-parts
/// form `y_m G(L_m) - Σ_{i<m} (y_{i+1} - y_i) G(L_i)` with exact accumulation.
/// Every term is monotone in `G`, so the result is exactly non-decreasing in τ
/// for families whose `G_τ` is non-increasing in τ.
pub fn aqr_conditional(cdf: &StepCDF, family: &WeightFamily, tau: TauLevel) -> Result<AqrEstimate> {
    family.check()?;
    if !family.is_singular() {
        family.j(tau, 0.5)?;
    }
    let knots = cdf.knots();
    let levels = cdf.levels();
    let m = knots.len();
    let t = tau.value();
    let g = |l: f64| family.cdf_pair(t, l, 1.0 - l);
    let g_last = g(levels[m - 1]);
    let mut acc = ExactSum::new();
    acc.add(knots[m - 1] * g_last);
    for i in 0..m - 1 {
        let gi = g(levels[i]);
        if gi != 0.0 {
            acc.add(-((knots[i + 1] - knots[i]) * gi));
        }
    }
    Ok(AqrEstimate {
        value: acc.value(),
        tau,
        family: family.clone(),
        x0: None,
        knots: m,
        g_mass: g_last,
        mass_deficit: cdf.mass_deficit() > 0.0,
    })
}

/// [`aqr_conditional`] over a τ-grid.
pub fn aqr_profile(cdf: &StepCDF, family: &WeightFamily, taus: &[TauLevel]) -> Result<Vec<AqrEstimate>> {
    taus.iter().map(|&t| aqr_conditional(cdf, family, t)).collect()
}

/// Conditional AQR at a scalar covariate value from the kernel CDF estimate.
pub fn estimate_at(data: &Dataset, h: Bandwidth, x0: f64, family: &WeightFamily, tau: TauLevel) -> Result<AqrEstimate> {
    let cdf = cde_curve(data, h, x0)?;
    let mut e = aqr_conditional(&cdf, family, tau)?;
    e.x0 = Some(vec![x0]);
    Ok(e)
}

/// Conditional AQR at `x0` through the index `x0·β`.
pub fn estimate_at_index(
    data: &Dataset,
    beta: &[f64],
    h: Bandwidth,
    x0: &[f64],
    family: &WeightFamily,
    tau: TauLevel,
) -> Result<AqrEstimate> {
    let cdf = index_cde_curve(data, beta, h, x0)?;
    let mut e = aqr_conditional(&cdf, family, tau)?;
    e.x0 = Some(x0.to_vec());
    Ok(e)
}

/// Relative percentage absolute deviation `100·|est - truth| / |truth|`.
pub fn rpad(estimate: f64, truth: f64) -> Result<f64> {
    if truth == 0.0 {
        return Err(AqrError::ZeroTruth);
    }
    Ok(100.0 * (estimate - truth).abs() / truth.abs())
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
    fn single_knot_returns_the_knot() {
        let f = StepCDF::new(vec![2.5], vec![1.0]).unwrap();
        for fam in WeightFamily::kinds() {
            for t in [0.05, 0.5, 0.93] {
                assert_eq!(aqr_conditional(&f, &fam, tau(t)).unwrap().value, 2.5);
            }
        }
    }

    #[test]
    fn two_knot_es_example() {
        let f = StepCDF::new(vec![0.0, 1.0], vec![0.5, 1.0]).unwrap();
        assert_eq!(aqr_conditional(&f, &WeightFamily::Es, tau(0.25)).unwrap().value, 0.0);
    }

    #[test]
    fn qr_picks_first_knot_reaching_tau() {
        let f = StepCDF::new(vec![1.0, 2.0, 3.0], vec![0.2, 0.6, 1.0]).unwrap();
        assert_eq!(aqr_conditional(&f, &WeightFamily::Qr, tau(0.2)).unwrap().value, 1.0);
        assert_eq!(aqr_conditional(&f, &WeightFamily::Qr, tau(0.3)).unwrap().value, 2.0);
        assert_eq!(aqr_conditional(&f, &WeightFamily::Qr, tau(0.61)).unwrap().value, 3.0);
    }

    #[test]
    fn matches_direct_increment_sum() {
        let f = StepCDF::new(vec![-1.0, 0.5, 2.0, 4.0], vec![0.1, 0.35, 0.8, 1.0]).unwrap();
        let fam = WeightFamily::Ges { a: 1.0 };
        let t = tau(0.4);
        let g = |l: f64| fam.g(t, l).unwrap();
        let levels = [0.0, 0.1, 0.35, 0.8, 1.0];
        let knots = [-1.0, 0.5, 2.0, 4.0];
        let direct: f64 = (0..4).map(|i| knots[i] * (g(levels[i + 1]) - g(levels[i]))).sum();
        let v = aqr_conditional(&f, &fam, t).unwrap();
        assert!((v.value - direct).abs() < 1e-14);
        assert_eq!(v.g_mass, 1.0);
        assert!(!v.mass_deficit);
    }

    #[test]
    fn deficit_is_flagged() {
        let f = StepCDF::new(vec![0.0, 1.0], vec![0.3, 0.9]).unwrap();
        let e = aqr_conditional(&f, &WeightFamily::Es, tau(0.7)).unwrap();
        assert!(e.mass_deficit);
        assert!(e.g_mass < 1.0);
    }

    #[test]
    fn rpad_examples() {
        assert_eq!(rpad(5.0, 5.0).unwrap(), 0.0);
        assert!((rpad(1.1, 1.0).unwrap() - 10.0).abs() < 1e-12);
        assert!((rpad(-2.1, -2.0).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(rpad(1.0, 0.0), Err(AqrError::ZeroTruth));
    }

    fn step_cdf() -> impl Strategy<Value = StepCDF> {
        (2usize..25).prop_flat_map(|m| {
            (prop::collection::vec(0.01f64..3.0, m), prop::collection::vec(0.0f64..1.0, m - 1), -5.0f64..5.0)
        })
        .prop_map(|(gaps, mut levels, start)| {
            let mut knots = Vec::with_capacity(gaps.len());
            let mut y = start;
            for g in gaps {
                knots.push(y);
                y += g;
            }
            levels.sort_by(f64::total_cmp);
            levels.push(1.0);
            StepCDF::new(knots, levels).unwrap()
        })
    }

    proptest! {
        #[test]
        fn profile_is_monotone(cdf in step_cdf(), fam in prop::sample::select(WeightFamily::c1_suite())) {
            let taus: Vec<TauLevel> = [0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99]
                .iter().map(|&t| tau(t)).collect();
            let prof = aqr_profile(&cdf, &fam, &taus).unwrap();
            prop_assert!(prof.windows(2).all(|w| w[0].value <= w[1].value));
        }

        #[test]
        fn bounded_by_support(cdf in step_cdf(), t in 0.01f64..0.99) {
            let fam = WeightFamily::Tcrm { schedule: AlphaSchedule::Cotangent };
            let v = aqr_conditional(&cdf, &fam, tau(t)).unwrap().value;
            let lo = cdf.knots()[0];
            let hi = *cdf.knots().last().unwrap();
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}
