//! Numerical building blocks shared across the estimators.

pub mod exact_sum;
pub mod quad;

pub use exact_sum::{exact_sum, ExactSum};
pub use quad::{integrate, QuadOptions, QuadResult};

/// Standard normal density.
#[inline]
pub fn std_normal_pdf(u: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_677_939_946_059_934_4;
    INV_SQRT_2PI * (-0.5 * u * u).exp()
}

/// `n` points spaced evenly on a log scale from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n).map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp()).collect()
        }
    }
}

/// Sample mean and standard deviation (n - 1 denominator; 0 for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}
