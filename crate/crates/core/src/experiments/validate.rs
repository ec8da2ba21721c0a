//! C1 validation over a list of families.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AqrError, Result};
use crate::weight_family::{default_grids, validate_c1, TauLevel, ValidationReport, WeightFamily};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    pub families: Vec<WeightFamily>,
    /// τ-grid; the default is `k/100`, `k = 1..99`.
    pub tau_grid: Option<Vec<TauLevel>>,
    /// s-grid; the default is `k/400`, `k = 0..400`.
    pub s_grid: Option<Vec<f64>>,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        let mut families = vec![WeightFamily::Qr];
        families.extend(WeightFamily::c1_suite());
        Self { families, tau_grid: None, s_grid: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateResult {
    pub passed: bool,
    pub reports: Vec<ValidationReport>,
}

pub fn run(cfg: &ValidateConfig) -> Result<ValidateResult> {
    if cfg.families.is_empty() {
        return Err(AqrError::EmptyInput);
    }
    let (taus, s) = default_grids();
    let taus = cfg.tau_grid.clone().unwrap_or(taus);
    let s = cfg.s_grid.clone().unwrap_or(s);
    let reports = cfg
        .families
        .par_iter()
        .map(|f| validate_c1(f, &taus, &s))
        .collect::<Result<Vec<_>>>()?;
    Ok(ValidateResult { passed: reports.iter().all(ValidationReport::passed), reports })
}
