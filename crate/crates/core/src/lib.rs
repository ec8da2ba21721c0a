//! Average quantile regression.

pub mod error;
pub mod experiments;
pub mod numeric;
pub mod aqr_np;
pub mod dist_oracle;
pub mod kernel_cde;
pub mod dist_runtime;
pub mod portfolio;
pub mod psis_index;
pub mod sample_risk;
pub mod weight_family;

pub use error::{AqrError, Result};
pub use weight_family::{omega, validate_c1, AlphaSchedule, TauLevel, ValidationReport, WeightFamily};
