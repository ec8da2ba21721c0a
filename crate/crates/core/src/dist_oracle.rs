//! Analytic distributions with accurate quantile functions, population AQR
//! values by quadrature, and closed-form heavy-tail limit ratios.

use std::f64::consts::{FRAC_PI_2, SQRT_2};

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta as StatrsBeta, ContinuousCDF, Normal as StatrsNormal, StudentsT};
use statrs::function::beta::{beta_reg, ln_beta};
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{AqrError, Result};
use crate::numeric::{integrate, QuadOptions};
use crate::weight_family::{TauLevel, WeightFamily};

/// A response distribution with a known quantile function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AnalyticDistribution {
    Normal { mu: f64, sigma: f64 },
    StudentT { df: f64 },
    Exponential { rate: f64 },
    Uniform { a: f64, b: f64 },
    Beta { p: f64, q: f64 },
    Frechet { gamma: f64 },
    PointMass { c: f64 },
}

/// Extreme-value domain of attraction of the upper tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailDomain {
    Frechet,
    Gumbel,
    Weibull,
    Degenerate,
}

impl AnalyticDistribution {
    pub fn normal(mu: f64, sigma: f64) -> Result<Self> {
        Self::Normal { mu, sigma }.validated()
    }
    pub fn student_t(df: f64) -> Result<Self> {
        Self::StudentT { df }.validated()
    }
    pub fn exponential(rate: f64) -> Result<Self> {
        Self::Exponential { rate }.validated()
    }
    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        Self::Uniform { a, b }.validated()
    }
    pub fn beta(p: f64, q: f64) -> Result<Self> {
        Self::Beta { p, q }.validated()
    }
    pub fn frechet(gamma: f64) -> Result<Self> {
        Self::Frechet { gamma }.validated()
    }
    pub fn point_mass(c: f64) -> Result<Self> {
        Self::PointMass { c }.validated()
    }

    fn validated(self) -> Result<Self> {
        self.check()?;
        Ok(self)
    }

    /// t(3), t(1.2), N(0,1), Exp(1), U(0,1) and Beta(2,3).
    pub fn comparison_six() -> Vec<Self> {
        vec![
            Self::StudentT { df: 3.0 },
            Self::StudentT { df: 1.2 },
            Self::Normal { mu: 0.0, sigma: 1.0 },
            Self::Exponential { rate: 1.0 },
            Self::Uniform { a: 0.0, b: 1.0 },
            Self::Beta { p: 2.0, q: 3.0 },
        ]
    }

    /// Checks parameter invariants (finite first moment, positive scales).
    pub fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(AqrError::InvalidParameter(msg));
        match *self {
            Self::Normal { mu, sigma } if !(mu.is_finite() && sigma.is_finite() && sigma > 0.0) => {
                bad(format!("normal needs finite mu and sigma > 0, got ({mu}, {sigma})"))
            }
            Self::StudentT { df } if !(df.is_finite() && df > 1.0) => bad(format!("student-t needs df > 1, got {df}")),
            Self::Exponential { rate } if !(rate.is_finite() && rate > 0.0) => {
                bad(format!("exponential needs rate > 0, got {rate}"))
            }
            Self::Uniform { a, b } if !(a.is_finite() && b.is_finite() && b > a) => {
                bad(format!("uniform needs a < b, got ({a}, {b})"))
            }
            Self::Beta { p, q } if !(p.is_finite() && q.is_finite() && p > 0.0 && q > 0.0) => {
                bad(format!("beta needs p, q > 0, got ({p}, {q})"))
            }
            Self::Frechet { gamma } if !(gamma > 0.0 && gamma < 1.0) => {
                bad(format!("frechet needs 0 < gamma < 1, got {gamma}"))
            }
            Self::PointMass { c } if !c.is_finite() => bad(format!("point mass must be finite, got {c}")),
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Self::Normal { mu, sigma } => format!("Normal({mu},{sigma})"),
            Self::StudentT { df } => format!("t({df})"),
            Self::Exponential { rate } => format!("Exp({rate})"),
            Self::Uniform { a, b } => format!("U({a},{b})"),
            Self::Beta { p, q } => format!("Beta({p},{q})"),
            Self::Frechet { gamma } => format!("Frechet({gamma})"),
            Self::PointMass { c } => format!("PointMass({c})"),
        }
    }

    pub fn tail_domain(&self) -> TailDomain {
        match self {
            Self::StudentT { .. } | Self::Frechet { .. } => TailDomain::Frechet,
            Self::Normal { .. } | Self::Exponential { .. } => TailDomain::Gumbel,
            Self::Uniform { .. } | Self::Beta { .. } => TailDomain::Weibull,
            Self::PointMass { .. } => TailDomain::Degenerate,
        }
    }

    /// Upper-tail index γ for Fréchet-domain members.
    pub fn tail_index(&self) -> Option<f64> {
        match *self {
            Self::StudentT { df } => Some(1.0 / df),
            Self::Frechet { gamma } => Some(gamma),
            _ => None,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Normal { mu, .. } => mu,
            Self::StudentT { .. } => 0.0,
            Self::Exponential { rate } => 1.0 / rate,
            Self::Uniform { a, b } => 0.5 * (a + b),
            Self::Beta { p, q } => p / (p + q),
            Self::Frechet { gamma: g } => gamma(1.0 - g),
            Self::PointMass { c } => c,
        }
    }

    /// Quantile function `Q(s)`.
    pub fn quantile(&self, s: f64) -> Result<f64> {
        if !(s > 0.0 && s < 1.0) {
            return Err(AqrError::Domain { value: s, domain: "(0, 1)" });
        }
        Ok(if s <= 0.5 { self.q_lower(s) } else { self.q_upper(1.0 - s) })
    }

    /// `Q(s)` for `s ∈ (0, 1/2]`.
    pub(crate) fn q_lower(&self, s: f64) -> f64 {
        match *self {
            Self::Normal { mu, sigma } => mu + sigma * std_normal_lower_quantile(s),
            Self::StudentT { df } => student_t_lower_quantile(df, s),
            Self::Exponential { rate } => -(-s).ln_1p() / rate,
            Self::Uniform { a, b } => a + (b - a) * s,
            Self::Beta { p, q } => beta_lower_quantile(p, q, s),
            Self::Frechet { gamma } => (-s.ln()).powf(-gamma),
            Self::PointMass { c } => c,
        }
    }

    /// `Q(1 - t)` for `t ∈ (0, 1/2]`, accurate for tiny `t`.
    pub(crate) fn q_upper(&self, t: f64) -> f64 {
        match *self {
            Self::Normal { mu, sigma } => mu - sigma * std_normal_lower_quantile(t),
            Self::StudentT { df } => -student_t_lower_quantile(df, t),
            Self::Exponential { rate } => -t.ln() / rate,
            Self::Uniform { a, b } => b - (b - a) * t,
            Self::Beta { p, q } => 1.0 - beta_lower_quantile(q, p, t),
            Self::Frechet { gamma } => (-(-t).ln_1p()).powf(-gamma),
            Self::PointMass { c } => c,
        }
    }

    /// Cumulative distribution function.
    pub fn cdf(&self, y: f64) -> f64 {
        match *self {
            Self::Normal { mu, sigma } => 0.5 * erfc(-(y - mu) / (sigma * SQRT_2)),
            Self::StudentT { df } => student_t_cdf(df, y),
            Self::Exponential { rate } => {
                if y <= 0.0 {
                    0.0
                } else {
                    -(-rate * y).exp_m1()
                }
            }
            Self::Uniform { a, b } => ((y - a) / (b - a)).clamp(0.0, 1.0),
            Self::Beta { p, q } => {
                if y <= 0.0 {
                    0.0
                } else if y >= 1.0 {
                    1.0
                } else {
                    beta_reg(p, q, y)
                }
            }
            Self::Frechet { gamma } => {
                if y <= 0.0 {
                    0.0
                } else {
                    (-y.powf(-1.0 / gamma)).exp()
                }
            }
            Self::PointMass { c } => {
                if y >= c {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Draws `Y` by inverse transform.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let u: f64 = rng.random();
            if u > 0.0 {
                return self.quantile(u).expect("u in (0, 1)");
            }
        }
    }
}

/// Population AQR `ξ_τ = ∫_0^1 Q(s) J_τ(s) ds`.
///
/// Each half of `(0, 1)` is mapped to a logarithmic variable (`s = e^v` below
/// 1/2, `1 - s = e^v` above) so that tail mass near the endpoints is resolved
/// without clipping. QR returns `Q(τ)`.
pub fn population_aqr(dist: &AnalyticDistribution, family: &WeightFamily, tau: TauLevel) -> Result<f64> {
    dist.check()?;
    family.check()?;
    if let AnalyticDistribution::PointMass { c } = *dist {
        return Ok(c);
    }
    if family.is_singular() {
        return dist.quantile(tau.value());
    }
    // Surface schedule-domain errors before integrating.
    family.j(tau, 0.5)?;

    let t = tau.value();
    let t_low = t.min(1.0 - t);
    let v_max = 0.5f64.ln();
    let v_min = -230.0;
    let mut base: Vec<f64> = [-2.0, -4.0, -8.0, -16.0, -32.0, -64.0, -128.0].to_vec();
    let lt = t_low.ln();
    for d in [-6.0, -3.0, -1.0, 0.0, 1.0, 3.0] {
        base.push(lt + d);
    }
    base.retain(|v| *v > v_min && *v < v_max);

    let opts = QuadOptions { abs_tol: 1e-11, rel_tol: 1e-11, max_intervals: 4000 };

    let lower = integrate(
        |v| {
            let s = v.exp();
            let j = family.density_pair(t, s, 1.0 - s);
            if j == 0.0 {
                0.0
            } else {
                dist.q_lower(s) * j * s
            }
        },
        v_min,
        v_max,
        &base,
        opts,
    );
    let upper = integrate(
        |v| {
            let r = v.exp();
            let j = family.density_pair(t, 1.0 - r, r);
            if j == 0.0 {
                0.0
            } else {
                dist.q_upper(r) * j * r
            }
        },
        v_min,
        v_max,
        &base,
        opts,
    );
    let value = lower.value + upper.value;
    let error = lower.error + upper.error;
    if !value.is_finite() || !lower.converged || !upper.converged {
        if value.is_finite() && error <= 1e-8f64.max(1e-9 * value.abs()) {
            return Ok(value);
        }
        return Err(AqrError::QuadratureFail { estimate: value, error });
    }
    Ok(value)
}

/// Draws `Z_τ = Q(G_τ^{-1}(U))`, whose mean is `ξ_τ`.
pub fn sample_z<R: Rng + ?Sized>(
    dist: &AnalyticDistribution,
    family: &WeightFamily,
    tau: TauLevel,
    rng: &mut R,
) -> Result<f64> {
    let u: f64 = rng.random();
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if family.g(tau, mid)? < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = (0.5 * (lo + hi)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
    dist.quantile(s)
}

/// Which closed-form heavy-tail limit applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LimitKind {
    Ges,
    Ge,
    Tcrm,
}

/// `lim_{τ→1} ξ_τ / Q(τ)` for a Fréchet-domain response with tail index γ.
///
/// `param` is the GES shape `a ≥ 0`, or the schedule constant `A > 0` for GE
/// and TCRM.
pub fn frechet_limit_ratio(kind: LimitKind, gamma_idx: f64, param: f64) -> Result<f64> {
    if !(gamma_idx > 0.0 && gamma_idx < 1.0) {
        return Err(AqrError::Domain { value: gamma_idx, domain: "(0, 1)" });
    }
    match kind {
        LimitKind::Ges => {
            if !(param.is_finite() && param >= 0.0) {
                return Err(AqrError::Domain { value: param, domain: "[0, inf)" });
            }
            Ok((1.0 + param) * ln_beta(1.0 - gamma_idx, 1.0 + param).exp())
        }
        LimitKind::Ge | LimitKind::Tcrm => {
            if !(param.is_finite() && param > 0.0) {
                return Err(AqrError::Domain { value: param, domain: "(0, inf)" });
            }
            let scale = param.powf(gamma_idx);
            Ok(match kind {
                LimitKind::Ge => scale * gamma(1.0 - gamma_idx),
                _ => scale / (gamma_idx * FRAC_PI_2).cos(),
            })
        }
    }
}

/// The limit ratio matching a weight family, if one exists.
pub fn family_limit_ratio(family: &WeightFamily, gamma_idx: f64) -> Option<f64> {
    let (kind, param) = match family {
        WeightFamily::Es => (LimitKind::Ges, 0.0),
        WeightFamily::Ges { a } => (LimitKind::Ges, *a),
        WeightFamily::Extremile | WeightFamily::Ge { .. } => (LimitKind::Ge, family.tail_constant()?),
        WeightFamily::Tcrm { .. } => (LimitKind::Tcrm, family.tail_constant()?),
        _ => return None,
    };
    frechet_limit_ratio(kind, gamma_idx, param).ok()
}

/// Solves `r(w) = 0` for `r` increasing in `w`, using Newton steps safeguarded
/// by a shrinking bracket. `f` returns `(r(w), r'(w))`.
fn solve_increasing(mut w: f64, mut lo: f64, mut hi: f64, f: impl Fn(f64) -> (f64, f64)) -> f64 {
    for _ in 0..400 {
        let (r, dr) = f(w);
        if r == 0.0 {
            return w;
        }
        if r.is_nan() {
            // Outside the representable range; move back into the bracket.
            w = if lo.is_finite() && hi.is_finite() { 0.5 * (lo + hi) } else { 0.5 * w };
            continue;
        }
        if r < 0.0 {
            lo = lo.max(w);
        } else {
            hi = hi.min(w);
        }
        let newton = w - r / dr;
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else if lo.is_finite() && hi.is_finite() {
            0.5 * (lo + hi)
        } else if r < 0.0 {
            w + w.abs().max(1.0)
        } else {
            w - w.abs().max(1.0)
        };
        if (next - w).abs() <= 1e-15 * w.abs().max(1.0) {
            return next;
        }
        if lo.is_finite() && hi.is_finite() && (hi - lo) <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()) {
            return 0.5 * (lo + hi);
        }
        w = next;
    }
    w
}

/// `ln Φ(z)`.
fn ln_std_normal_cdf(z: f64) -> f64 {
    (0.5 * erfc(-z / SQRT_2)).ln()
}

/// Standard normal quantile for `s ∈ (0, 1/2]`, polished by Newton on `ln Φ`.
pub(crate) fn std_normal_lower_quantile(s: f64) -> f64 {
    if s == 0.5 {
        return 0.0;
    }
    let guess = StatrsNormal::standard().inverse_cdf(s.max(1e-300));
    let ln_s = s.ln();
    solve_increasing(guess, f64::NEG_INFINITY, 0.0, |z| {
        let ln_f = ln_std_normal_cdf(z);
        let ln_pdf = -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln();
        (ln_f - ln_s, (ln_pdf - ln_f).exp())
    })
}

fn student_t_ln_pdf(df: f64, x: f64) -> f64 {
    ln_gamma(0.5 * (df + 1.0))
        - ln_gamma(0.5 * df)
        - 0.5 * (df * std::f64::consts::PI).ln()
        - 0.5 * (df + 1.0) * (x * x / df).ln_1p()
}

/// Lower-tail CDF of Student t for `x ≤ 0`.
fn student_t_lower_cdf(df: f64, x: f64) -> f64 {
    let x2 = x * x;
    if x2 >= df {
        0.5 * beta_reg(0.5 * df, 0.5, df / (df + x2))
    } else {
        0.5 - 0.5 * beta_reg(0.5, 0.5 * df, x2 / (df + x2))
    }
}

fn student_t_cdf(df: f64, x: f64) -> f64 {
    if x <= 0.0 {
        student_t_lower_cdf(df, x)
    } else {
        1.0 - student_t_lower_cdf(df, -x)
    }
}

/// Student t quantile for `s ∈ (0, 1/2]`.
pub(crate) fn student_t_lower_quantile(df: f64, s: f64) -> f64 {
    if s == 0.5 {
        return 0.0;
    }
    let ln_s = s.ln();
    if s > 1e-3 {
        let guess = StudentsT::new(0.0, 1.0, df).map(|d| d.inverse_cdf(s)).unwrap_or(-1.0).min(-1e-12);
        solve_increasing(guess, f64::NEG_INFINITY, 0.0, |x| {
            let ln_f = student_t_lower_cdf(df, x).ln();
            (ln_f - ln_s, (student_t_ln_pdf(df, x) - ln_f).exp())
        })
    } else {
        // Work in w = ln(-x); the residual is increasing in w when negated.
        let ln_c = ln_gamma(0.5 * (df + 1.0)) - ln_gamma(0.5 * df) - 0.5 * (df * std::f64::consts::PI).ln();
        let guess = (ln_c + 0.5 * (df - 1.0) * df.ln() - ln_s) / df;
        let w = solve_increasing(guess, f64::NEG_INFINITY, f64::INFINITY, |w| {
            let x = -w.exp();
            let ln_f = student_t_lower_cdf(df, x).ln();
            let dlnf_dx = (student_t_ln_pdf(df, x) - ln_f).exp();
            (ln_s - ln_f, -dlnf_dx * x)
        });
        -w.exp()
    }
}

/// Beta(p, q) quantile for `s ∈ (0, 1/2]`, solved in `w = ln x`.
pub(crate) fn beta_lower_quantile(p: f64, q: f64, s: f64) -> f64 {
    let ln_s = s.ln();
    let ln_b = ln_beta(p, q);
    let guess = if s > 1e-12 {
        StatrsBeta::new(p, q).map(|d| d.inverse_cdf(s)).unwrap_or(0.5).clamp(1e-300, 1.0 - 1e-16).ln()
    } else {
        ((ln_s + p.ln() + ln_b) / p).min(-1e-3)
    };
    let w = solve_increasing(guess, f64::NEG_INFINITY, 0.0, |w| {
        let x = w.exp();
        let ln_f = beta_reg(p, q, x).ln();
        let ln_pdf = (p - 1.0) * w + (q - 1.0) * (-x).ln_1p() - ln_b;
        (ln_f - ln_s, (ln_pdf - ln_f + w).exp())
    });
    w.exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weight_family::AlphaSchedule;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tau(v: f64) -> TauLevel {
        TauLevel::new(v).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn quantile_examples() {
        let n = AnalyticDistribution::normal(0.0, 1.0).unwrap();
        assert_eq!(n.quantile(0.5).unwrap(), 0.0);
        let e = AnalyticDistribution::exponential(1.0).unwrap();
        assert!((e.quantile(1.0 - (-1.0f64).exp()).unwrap() - 1.0).abs() < 1e-15);
        let f = AnalyticDistribution::frechet(0.4).unwrap();
        assert!((f.quantile((-1.0f64).exp()).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(n.quantile(0.0), Err(AqrError::Domain { .. })));
        assert!(matches!(n.quantile(1.0), Err(AqrError::Domain { .. })));
    }

    #[test]
    fn constructors_enforce_invariants() {
        assert!(AnalyticDistribution::student_t(1.0).is_err());
        assert!(AnalyticDistribution::student_t(1.2).is_ok());
        assert!(AnalyticDistribution::frechet(1.0).is_err());
        assert!(AnalyticDistribution::normal(0.0, 0.0).is_err());
        assert!(AnalyticDistribution::uniform(1.0, 1.0).is_err());
        assert!(AnalyticDistribution::beta(0.0, 2.0).is_err());
        assert!(AnalyticDistribution::exponential(-1.0).is_err());
    }

    // Reference quantiles from an arbitrary-precision evaluation.
    #[test]
    fn tail_quantiles_match_reference() {
        let cases: [(AnalyticDistribution, f64, f64); 7] = [
            (AnalyticDistribution::Normal { mu: 0.0, sigma: 1.0 }, 1e-10, -6.361340902404057),
            (AnalyticDistribution::Normal { mu: 0.0, sigma: 1.0 }, 1e-100, -21.273453560965326),
            (AnalyticDistribution::StudentT { df: 3.0 }, 0.05, -2.3533634348018238),
            (AnalyticDistribution::StudentT { df: 3.0 }, 1e-12, -10331.108244292485),
            (AnalyticDistribution::StudentT { df: 1.2 }, 1e-30, -4.020549315132999e+24),
            (AnalyticDistribution::Beta { p: 2.0, q: 3.0 }, 0.05, 0.09761146288641434),
            (AnalyticDistribution::Beta { p: 2.0, q: 3.0 }, 1e-40, 4.08248290463863e-21),
        ];
        for (d, s, want) in cases {
            let got = d.quantile(s).unwrap();
            assert!(rel(got, want) < 1e-11, "{} at {s}: {got} vs {want}", d.label());
        }
        // Upper tail through the complement, since 1 - 1e-12 is not representable exactly.
        let b = AnalyticDistribution::Beta { p: 2.0, q: 3.0 };
        assert!(rel(b.q_upper(1e-12), 0.9999370029553327) < 1e-14);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for d in AnalyticDistribution::comparison_six() {
            for s in [1e-9, 1e-4, 0.01, 0.2, 0.5, 0.77, 0.99, 1.0 - 1e-6] {
                let y = d.quantile(s).unwrap();
                let back = d.cdf(y);
                assert!((back - s).abs() < 1e-12 * s.max(1e-3) * 1e3, "{} at {s}: cdf {back}", d.label());
            }
        }
    }

    #[test]
    fn population_trivial_values() {
        let n = AnalyticDistribution::normal(0.0, 1.0).unwrap();
        let ge = WeightFamily::Ge { schedule: AlphaSchedule::HalfInverse };
        assert!(population_aqr(&n, &ge, tau(0.5)).unwrap().abs() < 1e-10);
        let pm = AnalyticDistribution::point_mass(3.7).unwrap();
        for f in WeightFamily::kinds() {
            assert_eq!(population_aqr(&pm, &f, tau(0.23)).unwrap(), 3.7);
        }
        assert_eq!(population_aqr(&n, &WeightFamily::Qr, tau(0.3)).unwrap(), n.quantile(0.3).unwrap());
    }

    #[test]
    fn normal_es_matches_closed_form() {
        let n = AnalyticDistribution::normal(0.0, 1.0).unwrap();
        let z = n.quantile(0.05).unwrap();
        let closed = -crate::numeric::std_normal_pdf(z) / 0.05;
        let v = population_aqr(&n, &WeightFamily::Es, tau(0.05)).unwrap();
        assert!((v - closed).abs() < 1e-9, "{v} vs {closed}");
        assert!((v + 2.0627).abs() < 1e-4);
    }

    #[test]
    fn exponential_es_matches_closed_form() {
        // Upper ES of Exp(1): 1 - ln(1 - τ).
        let e = AnalyticDistribution::exponential(1.0).unwrap();
        for t in [0.6, 0.9, 0.999] {
            let v = population_aqr(&e, &WeightFamily::Es, tau(t)).unwrap();
            let want = 1.0 - (1.0f64 - t).ln();
            assert!((v - want).abs() < 1e-9, "{t}: {v} vs {want}");
        }
    }

    #[test]
    fn frechet_ge_matches_closed_form() {
        // GE weight on the upper half: J(s) = (1+α) s^α, so ξ = (1+α) Γ(1-γ) (1+α)^{γ-1}... via E[max].
        // The maximum of m = 1+α iid Fréchet(γ) variables is Fréchet with scale m^γ.
        let g = 0.3;
        let d = AnalyticDistribution::frechet(g).unwrap();
        let f = WeightFamily::Ge { schedule: AlphaSchedule::HalfInverse };
        for t in [0.75, 0.9, 0.99] {
            let m = 1.0 + AlphaSchedule::HalfInverse.alpha(1.0 - t);
            let want = m.powf(g) * gamma(1.0 - g);
            let v = population_aqr(&d, &f, tau(t)).unwrap();
            assert!(rel(v, want) < 1e-9, "{t}: {v} vs {want}");
        }
    }

    #[test]
    fn ordering_t3_at_095() {
        let d = AnalyticDistribution::student_t(3.0).unwrap();
        let vals: Vec<f64> = [
            WeightFamily::Ges { a: 1.0 },
            WeightFamily::Es,
            WeightFamily::Extremile,
            WeightFamily::Ge { schedule: AlphaSchedule::HalfInverse },
            WeightFamily::Tcrm { schedule: AlphaSchedule::HalfInverse },
        ]
        .iter()
        .map(|f| population_aqr(&d, f, tau(0.95)).unwrap())
        .collect();
        assert!(vals.windows(2).all(|w| w[0] > w[1]), "{vals:?}");
    }

    #[test]
    fn symmetry_and_location_scale() {
        let n = AnalyticDistribution::normal(0.0, 1.0).unwrap();
        let ls = AnalyticDistribution::normal(1.5, 2.5).unwrap();
        for f in WeightFamily::c1_suite() {
            for t in [0.03, 0.2, 0.4] {
                let lo = population_aqr(&n, &f, tau(t)).unwrap();
                let hi = population_aqr(&n, &f, tau(1.0 - t)).unwrap();
                assert!((lo + hi).abs() < 1e-7, "{} {t}: {lo} {hi}", f.label());
                let shifted = population_aqr(&ls, &f, tau(t)).unwrap();
                assert!((shifted - (1.5 + 2.5 * lo)).abs() < 1e-7, "{} {t}", f.label());
            }
        }
    }

    #[test]
    fn lower_support_bound() {
        let d = AnalyticDistribution::student_t(3.0).unwrap();
        for f in [WeightFamily::Es, WeightFamily::Ges { a: 0.5 }, WeightFamily::Ges { a: 3.0 }] {
            for t in [0.02, 0.1, 0.3] {
                let v = population_aqr(&d, &f, tau(t)).unwrap();
                assert!(v <= d.quantile(t).unwrap());
            }
        }
    }

    #[test]
    fn tau_monotone_population() {
        let grid: Vec<f64> = (1..20).map(|k| k as f64 * 0.05).collect();
        for d in AnalyticDistribution::comparison_six() {
            for f in WeightFamily::c1_suite() {
                let vals: Vec<f64> = grid.iter().map(|&t| population_aqr(&d, &f, tau(t)).unwrap()).collect();
                assert!(vals.windows(2).all(|w| w[1] >= w[0]), "{} {}: {vals:?}", d.label(), f.label());
            }
        }
    }

    #[test]
    fn limit_ratio_examples() {
        assert!((frechet_limit_ratio(LimitKind::Ges, 0.5, 0.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((frechet_limit_ratio(LimitKind::Tcrm, 0.5, 0.5).unwrap() - 1.0).abs() < 1e-12);
        let ge = frechet_limit_ratio(LimitKind::Ge, 0.5, std::f64::consts::LN_2).unwrap();
        assert!((ge - 1.4757).abs() < 1e-4, "{ge}");
        assert!(frechet_limit_ratio(LimitKind::Ge, 1.0, 0.5).is_err());
        assert!(frechet_limit_ratio(LimitKind::Tcrm, 0.5, 0.0).is_err());
    }

    #[test]
    fn z_sampler_mean_matches_population() {
        let d = AnalyticDistribution::normal(0.0, 1.0).unwrap();
        let f = WeightFamily::Ges { a: 1.0 };
        let t = tau(0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 40_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_z(&d, &f, t, &mut rng).unwrap()).collect();
        let (m, sd) = crate::numeric::mean_sd(&draws);
        let truth = population_aqr(&d, &f, t).unwrap();
        assert!((m - truth).abs() < 4.0 * sd / (n as f64).sqrt(), "{m} vs {truth}");
    }

    #[test]
    fn json_round_trip() {
        let d = AnalyticDistribution::student_t(3.0).unwrap();
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(s, r#"{"kind":"student-t","df":3.0}"#);
        assert_eq!(serde_json::from_str::<AnalyticDistribution>(&s).unwrap(), d);
    }
}
