//! Brute-force engines for checking the closed forms: nested quadrature,
//! a bootstrap particle filter and Monte-Carlo transition checks.

mod chain;
pub mod gauss;
pub mod particle;
pub mod quad;
pub mod transition;
pub mod verify;

pub use particle::{particle_filter, ParticleEstimate, ParticleStep};
pub use quad::{
    freq_posteriors, gb2_pdf_quadrature, nb_pmf_quadrature, quadrature_filter, sev_posteriors, GridPosterior,
    QuadConfig, QuadratureFilter, SevPeriod,
};
pub use transition::{laplace_count_mc, transition_check, SampleStats, TransitionSpec};
pub use verify::{run_verification, VerifyConfig, VerifyReport};
