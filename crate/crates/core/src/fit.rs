//! Step-two estimation of the dependence parameters and the four benchmark
//! configurations.
//!
//! Regression coefficients, `eta` and the severity dispersion come from the
//! GLM step and stay fixed. The discount factors and prior shapes are
//! estimated by maximizing the closed-form likelihood, with the prior rates
//! tied to the shapes so that every random effect has prior mean one.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crm::{independent_loglik_rated, loglik_rated, CrmParams, PeriodRates, Variant};
use crate::error::{Error, Result};
use crate::glm::GlmEstimates;
use crate::history::{Observation, PolicyHistory};
use crate::optim::{bfgs, gradient, nelder_mead, BfgsConfig, SimplexConfig};
use crate::ssm_sev::ScheduleKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    /// Independent Poisson and gamma GLMs, no random effects, `eta = 0`.
    Naive,
    /// Naive with the claim count in the severity regression.
    Dglm,
    /// Random effects with discount factors fixed at one.
    Static,
    /// Random effects with estimated discount factors.
    Proposed,
}

impl Benchmark {
    pub const ALL: [Benchmark; 4] = [Benchmark::Naive, Benchmark::Dglm, Benchmark::Static, Benchmark::Proposed];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Naive => "naive",
            Benchmark::Dglm => "dglm",
            Benchmark::Static => "static",
            Benchmark::Proposed => "proposed",
        }
    }

    pub fn has_random_effects(self) -> bool {
        matches!(self, Benchmark::Static | Benchmark::Proposed)
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Benchmark::ALL
            .into_iter()
            .find(|b| b.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::domain(format!("unknown benchmark {s:?} (naive, dglm, static, proposed)")))
    }
}

/// Prior shape standing in for the infinite shapes of the benchmarks without
/// random effects; those benchmarks never filter, so the value only keeps the
/// parameter file well formed.
pub const DEGENERATE_PRIOR_SHAPE: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub benchmark: Benchmark,
    #[serde(default)]
    pub variant: Variant,
}

impl BenchmarkSpec {
    pub fn new(benchmark: Benchmark, variant: Variant) -> Self {
        BenchmarkSpec { benchmark, variant }
    }

    pub fn free_parameters(&self) -> &'static [&'static str] {
        match self.benchmark {
            Benchmark::Naive | Benchmark::Dglm => &[],
            Benchmark::Static => &["alpha0_1", "alpha0_2"],
            Benchmark::Proposed => &["q1", "q2", "alpha0_1", "alpha0_2"],
        }
    }

    /// Open lower bound on the severity prior shape. The standard schedule
    /// needs shapes above 2 for a proper beta innovation.
    pub fn alpha0_2_floor(&self) -> f64 {
        match self.variant.schedule_kind() {
            ScheduleKind::Standard => 2.0,
            ScheduleKind::AlternativeEwma => 1.0,
        }
    }

    pub fn uses_eta(&self) -> bool {
        self.benchmark != Benchmark::Naive
    }
}

/// Starting point in natural parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartPoint {
    pub q1: f64,
    pub q2: f64,
    pub alpha0_1: f64,
    pub alpha0_2: f64,
}

impl Default for StartPoint {
    fn default() -> Self {
        StartPoint { q1: 0.7, q2: 0.7, alpha0_1: 2.0, alpha0_2: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub simplex: SimplexConfig,
    pub bfgs: BfgsConfig,
    /// Run the quasi-Newton refinement after the simplex search.
    pub refine: bool,
    /// Estimate the severity dispersion jointly instead of taking it from the GLM.
    pub estimate_psi: bool,
    pub starts: Vec<StartPoint>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            simplex: SimplexConfig::default(),
            bfgs: BfgsConfig::default(),
            refine: true,
            estimate_psi: false,
            starts: vec![StartPoint::default()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub spec: BenchmarkSpec,
    pub params: CrmParams,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    /// Largest gradient component of the reparameterized objective.
    pub max_gradient: f64,
    /// Parameters that ended up at (or numerically next to) a bound.
    pub boundary: Vec<String>,
}

/// Regression part of the parameters for a benchmark, taken from the GLM step.
pub fn base_params(glm: &GlmEstimates, spec: &BenchmarkSpec, covariate_names: &[String]) -> CrmParams {
    let sev = if spec.uses_eta() { &glm.severity_dependent } else { &glm.severity_independent };
    CrmParams {
        q1: 1.0,
        q2: 1.0,
        alpha0_1: DEGENERATE_PRIOR_SHAPE,
        beta0_1: DEGENERATE_PRIOR_SHAPE,
        alpha0_2: DEGENERATE_PRIOR_SHAPE,
        beta0_2: DEGENERATE_PRIOR_SHAPE - 1.0,
        covariate_names: covariate_names.to_vec(),
        zeta1: glm.frequency.coefficients.clone(),
        zeta2: sev.covariate_coefficients(),
        eta: if spec.uses_eta() { glm.eta() } else { 0.0 },
        psi2: sev.dispersion,
        variant: spec.variant,
    }
}

type Rated = Vec<(PeriodRates, Observation)>;

fn rate_portfolio(params: &CrmParams, portfolio: &[PolicyHistory]) -> Result<Vec<Rated>> {
    portfolio.iter().map(|h| params.rated(&h.periods)).collect()
}

/// Sum of per-policy terms in input order, independent of the thread count.
fn ordered_sum(terms: Vec<Result<f64>>) -> Result<f64> {
    let mut total = 0.0;
    for t in terms {
        total += t?;
    }
    Ok(total)
}

/// Joint log-likelihood of a portfolio under a benchmark.
pub fn portfolio_loglik(params: &CrmParams, benchmark: Benchmark, rated: &[Rated]) -> Result<f64> {
    let terms: Vec<Result<f64>> = if benchmark.has_random_effects() {
        rated.par_iter().map(|r| loglik_rated(params, r)).collect()
    } else {
        rated.par_iter().map(|r| independent_loglik_rated(params, r)).collect()
    };
    ordered_sum(terms)
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

struct Mapping {
    spec: BenchmarkSpec,
    estimate_psi: bool,
    base: CrmParams,
}

impl Mapping {
    fn to_params(&self, z: &[f64]) -> CrmParams {
        let mut p = self.base.clone();
        let floor = self.spec.alpha0_2_floor();
        let mut i = 0;
        if self.spec.benchmark == Benchmark::Proposed {
            p.q1 = logistic(z[0]);
            p.q2 = logistic(z[1]);
            i = 2;
        }
        p.alpha0_1 = z[i].exp();
        p.alpha0_2 = floor + z[i + 1].exp();
        if self.estimate_psi {
            p.psi2 = z[i + 2].exp();
        }
        p.beta0_1 = p.alpha0_1;
        p.beta0_2 = p.alpha0_2 - 1.0;
        p
    }

    fn start_vector(&self, s: &StartPoint) -> Vec<f64> {
        let mut z = Vec::new();
        if self.spec.benchmark == Benchmark::Proposed {
            z.push(logit(s.q1));
            z.push(logit(s.q2));
        }
        z.push(s.alpha0_1.ln());
        z.push((s.alpha0_2 - self.spec.alpha0_2_floor()).max(1e-3).ln());
        if self.estimate_psi {
            z.push(self.base.psi2.ln());
        }
        z
    }

    fn boundary(&self, p: &CrmParams) -> Vec<String> {
        let mut out = Vec::new();
        if self.spec.benchmark == Benchmark::Proposed {
            for (name, q) in [("q1", p.q1), ("q2", p.q2)] {
                if q > 0.999 {
                    out.push(format!("{name} at 1 (static limit)"));
                } else if q < 1e-3 {
                    out.push(format!("{name} at 0"));
                }
            }
        }
        if p.alpha0_1 > 1e6 {
            out.push("alpha0_1 unbounded (no frequency heterogeneity)".into());
        }
        if p.alpha0_2 - self.spec.alpha0_2_floor() < 1e-6 {
            out.push("alpha0_2 at its lower bound".into());
        }
        if p.alpha0_2 > 1e6 {
            out.push("alpha0_2 unbounded (no severity heterogeneity)".into());
        }
        out
    }
}

/// Maximize the portfolio likelihood for one benchmark.
pub fn fit_dependence(
    portfolio: &[PolicyHistory],
    glm: &GlmEstimates,
    covariate_names: &[String],
    spec: &BenchmarkSpec,
    cfg: &OptimizerConfig,
) -> Result<FittedModel> {
    if !portfolio.iter().flat_map(|h| &h.periods).any(|p| p.obs.count > 0) {
        return Err(Error::data("portfolio has no claims; severity parameters are not identifiable"));
    }
    let base = base_params(glm, spec, covariate_names);
    base.validate()?;
    let rated = rate_portfolio(&base, portfolio)?;

    if !spec.benchmark.has_random_effects() {
        let loglik = portfolio_loglik(&base, spec.benchmark, &rated)?;
        return Ok(FittedModel {
            spec: *spec,
            params: base,
            loglik,
            converged: true,
            iterations: 0,
            evaluations: 1,
            max_gradient: 0.0,
            boundary: Vec::new(),
        });
    }

    let map = Mapping { spec: *spec, estimate_psi: cfg.estimate_psi, base };
    let mut objective = |z: &[f64]| -> f64 {
        let p = map.to_params(z);
        match portfolio_loglik(&p, spec.benchmark, &rated) {
            Ok(v) if v.is_finite() => -v,
            _ => f64::INFINITY,
        }
    };

    let starts = if cfg.starts.is_empty() { vec![StartPoint::default()] } else { cfg.starts.clone() };
    let mut best: Option<crate::optim::Minimum> = None;
    let mut iterations = 0;
    let mut evaluations = 0;
    for s in &starts {
        let z0 = map.start_vector(s);
        let mut m = nelder_mead(&mut objective, &z0, &cfg.simplex);
        // a restart from the best vertex guards against a collapsed simplex
        let again = nelder_mead(&mut objective, &m.x, &cfg.simplex);
        iterations += m.iterations + again.iterations;
        evaluations += m.evaluations + again.evaluations;
        if again.f <= m.f {
            m = again;
        }
        if cfg.refine {
            let r = bfgs(&mut objective, &m.x, &cfg.bfgs);
            iterations += r.iterations;
            evaluations += r.evaluations;
            if r.f <= m.f {
                m = crate::optim::Minimum { converged: m.converged || r.converged, ..r };
            }
        }
        if best.as_ref().is_none_or(|b| m.f < b.f) {
            best = Some(m);
        }
    }
    let best = best.expect("at least one start");
    if !best.f.is_finite() {
        return Err(Error::numeric("likelihood is not finite anywhere along the search"));
    }
    let g = gradient(&mut objective, &best.x, cfg.bfgs.diff_step);
    let max_gradient = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let params = map.to_params(&best.x);
    let boundary = map.boundary(&params);
    if !best.converged {
        log::warn!("{} fit stopped without meeting the convergence tolerances", spec.benchmark);
    }
    Ok(FittedModel {
        spec: *spec,
        params,
        loglik: -best.f,
        converged: best.converged,
        iterations,
        evaluations,
        max_gradient,
        boundary,
    })
}
