//! Oracle comparisons bundled for the `verify` command.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::particle::particle_filter;
use super::quad::{gb2_pdf_quadrature, nb_pmf_quadrature, quadrature_filter, QuadConfig};
use super::transition::{laplace_count_mc, transition_check, TransitionSpec};
use crate::crm::{self, laplace_count_term, CrmParams, PeriodRates, Variant};
use crate::dist::Law;
use crate::error::Result;
use crate::history::Observation;
use crate::ssm_freq::GammaState;
use crate::ssm_sev::{InvGammaState, QSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Observed discrepancy (relative error or z-score, see `measure`).
    pub value: f64,
    pub tolerance: f64,
    pub measure: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub seed: u64,
    pub particles: usize,
    pub draws: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { seed: 2024, particles: 100_000, draws: 1_000_000 }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

struct Checks(Vec<Check>);

impl Checks {
    fn rel(&mut self, name: impl Into<String>, got: f64, want: f64, tol: f64) {
        let v = rel(got, want);
        self.0.push(Check { name: name.into(), passed: v <= tol, value: v, tolerance: tol, measure: "relative error".into() });
    }

    fn z(&mut self, name: impl Into<String>, est: f64, se: f64, want: f64, k: f64) {
        let z = (est - want).abs() / se;
        self.0.push(Check { name: name.into(), passed: z <= k, value: z, tolerance: k, measure: "|z|".into() });
    }
}

/// Toy bivariate model and history used by the filter comparisons.
pub fn toy_case() -> (CrmParams, Vec<(PeriodRates, Observation)>) {
    let params = CrmParams {
        q1: 0.75,
        q2: 0.85,
        alpha0_1: 1.5,
        beta0_1: 1.5,
        alpha0_2: 6.0,
        beta0_2: 5.0,
        covariate_names: vec![],
        zeta1: vec![],
        zeta2: vec![],
        eta: -0.3,
        psi2: 1.2,
        variant: Variant::Plain,
    };
    let r = |l1: f64, l2: f64| PeriodRates::new(l1, l2).unwrap();
    let o = |n: u64, y: f64| Observation::new(n, y).unwrap();
    let rated = vec![(r(0.4, 2.0), o(1, 1.7)), (r(0.5, 2.5), o(0, 0.0)), (r(0.45, 2.2), o(2, 6.1))];
    (params, rated)
}

pub fn run_verification(cfg: &VerifyConfig) -> Result<VerifyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut c = Checks(Vec::new());

    let (params, rated) = toy_case();
    let states = crm::filter(&params, &rated)?;
    let quad = quadrature_filter(&params, &rated, &QuadConfig::default())?;
    for (t, s) in states.iter().enumerate() {
        let (qf, qs) = (&quad.freq[t + 1], &quad.sev[t + 1]);
        c.rel(format!("quadrature freq mean t={}", t + 1), s.freq.mean(), qf.mean, 1e-6);
        c.rel(format!("quadrature freq variance t={}", t + 1), s.freq.variance(), qf.variance.unwrap_or(f64::NAN), 1e-6);
        c.rel(format!("quadrature sev mean t={}", t + 1), s.sev.mean(), qs.mean, 1e-6);
        if let (Some(v), Some(qv)) = (s.sev.variance(), qs.variance) {
            c.rel(format!("quadrature sev variance t={}", t + 1), v, qv, 1e-6);
        }
    }
    c.rel("quadrature log-likelihood", crm::loglik_rated(&params, &rated)?, quad.loglik, 1e-8);

    let pf = particle_filter(&params, &rated, cfg.particles, &mut rng)?;
    for (t, s) in states.iter().enumerate() {
        let e = &pf[t + 1];
        c.z(format!("particle freq mean t={}", t + 1), e.freq.mean, e.freq.mean_se, s.freq.mean(), 3.0);
        c.z(format!("particle sev mean t={}", t + 1), e.sev.mean, e.sev.mean_se, s.sev.mean(), 3.0);
        c.z(format!("particle vs quadrature freq mean t={}", t + 1), e.freq.mean, e.freq.mean_se, quad.freq[t + 1].mean, 3.0);
    }

    let g = GammaState::new(1.7, 1.3)?;
    for y in [0u64, 1, 2, 5] {
        let closed = g.forecast_obs(0.7, 0.6)?.density(y as f64)?;
        c.rel(format!("NB pmf mixture y={y}"), closed, nb_pmf_quadrature(&g, 0.7, 0.6, y)?, 1e-8);
    }
    let ig = InvGammaState::new(3.5, 2.0)?;
    let sch = QSchedule::standard(0.8)?;
    for y in [0.3, 1.0, 4.0] {
        let closed = ig.forecast_sum(&sch, 1.4, 1.5, 2)?.density(y)?;
        c.rel(format!("GB2 pdf mixture y={y}"), closed, gb2_pdf_quadrature(&ig, &sch, 1.4, 1.5, 2, y)?, 1e-8);
    }

    let cases = [
        ("gamma transition", TransitionSpec::Gamma { state: GammaState::new(2.0, 2.0)?, q: 0.5 }),
        ("inverse gamma standard transition", TransitionSpec::InverseGamma { state: InvGammaState::new(10.0, 9.0)?, schedule: QSchedule::standard(0.8)? }),
        ("inverse gamma EWMA transition", TransitionSpec::InverseGamma { state: InvGammaState::new(10.0, 9.0)?, schedule: QSchedule::alternative_ewma(0.8)? }),
    ];
    for (name, spec) in cases {
        let s = transition_check(&spec, cfg.draws, &mut rng)?;
        let law: Law = match spec {
            TransitionSpec::Gamma { state, q } => state.predict_state(q)?,
            TransitionSpec::InverseGamma { state, schedule } => state.predict_state(&schedule)?,
        };
        let m = law.moments();
        c.z(format!("{name} mean"), s.mean, s.mean_se, m.mean.unwrap_or(f64::NAN), 4.0);
        c.z(format!("{name} variance"), s.variance, s.variance_se, m.variance.unwrap_or(f64::NAN), 4.0);
    }

    let g = GammaState::new(1.0, 1.0)?;
    let mc = laplace_count_mc(&g, 0.8, 0.2, -0.4538, cfg.draws, &mut rng)?;
    c.z("count Laplace term", mc.mean, mc.mean_se, laplace_count_term(&g, 0.8, 0.2, -0.4538)?, 3.0);

    let passed = c.0.iter().all(|x| x.passed);
    Ok(VerifyReport { seed: cfg.seed, passed, checks: c.0 })
}
