//! Replicated simulation studies, population comparison tables and the
//! family validation suite. Each runner is deterministic given its config.

pub mod airquality;
pub mod compare;
pub mod sim1;
pub mod sim2;
pub mod validate;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kernel_cde::{cv_bandwidth, default_bandwidth_grid, Bandwidth, Dataset};
use crate::numeric::mean_sd;

/// Generator for replication `rep`: the master seed selects the key and the
/// replication counter selects the stream.
pub fn replication_rng(master: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(rep);
    rng
}

/// `σ̂·n^{-c}` with `σ̂` the root mean column variance of the covariates.
pub fn rate_bandwidth(data: &Dataset, c: f64) -> Result<Bandwidth> {
    let var: f64 = (0..data.p())
        .map(|j| {
            let (_, sd) = mean_sd(&data.column(j));
            sd * sd
        })
        .sum::<f64>()
        / data.p() as f64;
    let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    Bandwidth::from_rate(scale, data.n(), c)
}

/// How the bandwidth of a conditional AQR estimate is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule", deny_unknown_fields)]
pub enum BandwidthRule {
    /// Leave-one-out CV over the default grid.
    Cv,
    Fixed { h: f64 },
}

impl BandwidthRule {
    pub fn select(&self, data: &Dataset, beta: Option<&[f64]>) -> Result<Bandwidth> {
        match *self {
            BandwidthRule::Cv => cv_bandwidth(data, beta, &default_bandwidth_grid(data, beta)?),
            BandwidthRule::Fixed { h } => Bandwidth::new(h),
        }
    }
}

/// Mean and standard deviation of a replicated metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub reps: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let (mean, sd) = mean_sd(values);
        Self { mean, sd, reps: values.len() }
    }
}
