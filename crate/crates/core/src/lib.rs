//! Dynamic credibility model for claim frequency and severity.
//!
//! Gamma and inverse-gamma state-space filters with closed-form predictive
//! laws, likelihood and posterior premium, together with GLM estimation,
//! portfolio rating and numerical oracles for cross-checking the closed forms.

// `!(x > 0.0)` style guards are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod crm;
pub mod dist;
pub mod fit;
pub mod error;
pub mod glm;
pub mod history;
pub mod optim;
pub mod portfolio;
pub mod oracle;
pub mod ssm_freq;
pub mod ssm_sev;

pub use crm::{CrmParams, CrmState, PeriodRates, Premium, Variant};
pub use dist::Law;
pub use error::{Error, Result};
pub use history::{Observation, Period, PolicyHistory};
