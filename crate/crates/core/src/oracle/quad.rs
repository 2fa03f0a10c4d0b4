//! Quadrature filter: posterior laws of the random effects by direct integration
//! over the transition innovations, with no use of conjugacy.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use super::chain::{Chain, Mixture, Move, Step};
use crate::crm::{CrmParams, PeriodRates};
use crate::error::{Error, Result};
use crate::history::Observation;
use crate::ssm_freq::GammaState;
use crate::ssm_sev::{InvGammaState, QSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadConfig {
    /// Starting node count per innovation.
    pub nodes: usize,
    pub max_nodes: usize,
    /// Agreement required between successive refinements (log scale).
    pub rel_tol: f64,
    pub grid_points: usize,
    /// Largest posterior mass allowed outside the grid.
    pub tail_mass: f64,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig { nodes: 12, max_nodes: 60, rel_tol: 1e-10, grid_points: 200, tail_mass: 1e-8 }
    }
}

/// Discretized posterior of one random effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPosterior {
    /// Cell centres (geometric), increasing.
    pub theta: Vec<f64>,
    /// Cell probabilities, normalized.
    pub weights: Vec<f64>,
    /// Posterior mean from the moment integrals.
    pub mean: f64,
    /// Posterior variance; `None` when infinite.
    pub variance: Option<f64>,
    /// Mass outside the grid before normalization.
    pub tail_mass: f64,
}

impl GridPosterior {
    pub fn grid_mean(&self) -> f64 {
        self.theta.iter().zip(&self.weights).map(|(t, w)| t * w).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Effect {
    /// `theta = phi`
    Frequency,
    /// `theta = 1 / phi`
    Severity,
}

impl Effect {
    /// Mixture mass of `theta < x`.
    fn lower_mass(self, mix: &Mixture, x: f64) -> f64 {
        mix.components
            .iter()
            .map(|(w, rate)| {
                w * match self {
                    Effect::Frequency => gamma_lr(mix.shape, rate * x),
                    Effect::Severity => gamma_ur(mix.shape, rate / x),
                }
            })
            .sum()
    }

    fn upper_mass(self, mix: &Mixture, x: f64) -> f64 {
        mix.components
            .iter()
            .map(|(w, rate)| {
                w * match self {
                    Effect::Frequency => gamma_ur(mix.shape, rate * x),
                    Effect::Severity => gamma_lr(mix.shape, rate / x),
                }
            })
            .sum()
    }
}

struct Summary {
    grid: GridPosterior,
    /// Gamma shape of `phi` matched to its first two posterior moments.
    shape: f64,
}

fn moment(chain: &Chain, k: f64, cfg: &QuadConfig) -> Result<Option<f64>> {
    chain.ln_integral_converged(k, cfg.nodes, cfg.max_nodes, cfg.rel_tol)
}

fn build_grid(effect: Effect, mix: &Mixture, mean: f64, cfg: &QuadConfig) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let (mut lo, mut hi) = (mean / 8.0, mean * 8.0);
    let mut extensions = 0;
    loop {
        let below = effect.lower_mass(mix, lo);
        let above = effect.upper_mass(mix, hi);
        if below + above <= cfg.tail_mass {
            break;
        }
        extensions += 1;
        if extensions > 60 {
            return Err(Error::numeric(format!(
                "grid could not cover the posterior (tail mass {:.3e})",
                below + above
            )));
        }
        if below > cfg.tail_mass / 2.0 {
            lo /= 4.0;
        }
        if above > cfg.tail_mass / 2.0 {
            hi *= 4.0;
        }
    }
    let n = cfg.grid_points.max(2);
    let (llo, lhi) = (lo.ln(), hi.ln());
    let edges: Vec<f64> = (0..=n).map(|i| (llo + (lhi - llo) * i as f64 / n as f64).exp()).collect();
    let cdf: Vec<f64> = edges.iter().map(|&e| effect.lower_mass(mix, e)).collect();
    let tail = cdf[0] + (1.0 - cdf[n]);
    let raw: Vec<f64> = cdf.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
    let total: f64 = raw.iter().sum();
    let theta = edges.windows(2).map(|w| (w[0] * w[1]).sqrt()).collect();
    Ok((theta, raw.into_iter().map(|m| m / total).collect(), tail))
}

fn summarize(chain: &Chain, effect: Effect, cfg: &QuadConfig) -> Result<Summary> {
    let (a0, b0) = (chain.a0, chain.b0);
    let (mean, variance, shape) = if chain.steps.is_empty() {
        match effect {
            Effect::Frequency => (a0 / b0, Some(a0 / (b0 * b0)), a0),
            Effect::Severity => {
                let m = b0 / (a0 - 1.0);
                (m, (a0 > 2.0).then(|| m * m / (a0 - 2.0)), a0)
            }
        }
    } else {
        let i0 = moment(chain, 0.0, cfg)?.expect("zeroth moment exists");
        let ratio = |k: f64| -> Result<Option<f64>> { Ok(moment(chain, k, cfg)?.map(|v| (v - i0).exp())) };
        let p1 = ratio(1.0)?.expect("positive moments exist");
        let p2 = ratio(2.0)?.expect("positive moments exist");
        let shape = p1 * p1 / (p2 - p1 * p1);
        match effect {
            Effect::Frequency => (p1, Some(p2 - p1 * p1), shape),
            Effect::Severity => {
                let m = ratio(-1.0)?
                    .ok_or_else(|| Error::numeric("posterior severity mean is infinite"))?;
                (m, ratio(-2.0)?.map(|m2| m2 - m * m), shape)
            }
        }
    };
    let mix = if chain.steps.is_empty() {
        Mixture { shape: a0, components: vec![(1.0, b0)] }
    } else {
        chain.mixture(cfg.nodes)?
    };
    let (theta, weights, tail_mass) = build_grid(effect, &mix, mean, cfg)?;
    Ok(Summary { grid: GridPosterior { theta, weights, mean, variance, tail_mass }, shape })
}

/// Filtering posteriors of a gamma (frequency) effect; entry 0 is the prior.
///
/// Each transition uses a beta innovation whose shape is matched to the
/// previous posterior computed here, so no closed-form recursion is consulted.
pub fn freq_posteriors(
    q: f64,
    alpha0: f64,
    beta0: f64,
    lambdas: &[f64],
    counts: &[u64],
    cfg: &QuadConfig,
) -> Result<(Vec<GridPosterior>, f64)> {
    GammaState::new(alpha0, beta0)?;
    let mut chain = Chain { a0: alpha0, b0: beta0, steps: Vec::new() };
    let first = summarize(&chain, Effect::Frequency, cfg)?;
    let mut alpha = first.shape;
    let mut out = vec![first.grid];
    for (&lambda, &y) in lambdas.iter().zip(counts) {
        let mv = if q >= 1.0 {
            Move::Stay
        } else {
            Move::Beta { a: q * alpha, b: (1.0 - q) * alpha, c: q }
        };
        chain.steps.push(Step { mv, p: y as f64, r: lambda });
        let s = summarize(&chain, Effect::Frequency, cfg)?;
        alpha = s.shape;
        out.push(s.grid);
    }
    let ln_joint = moment(&chain, 0.0, cfg)?.expect("zeroth moment exists")
        + lambdas
            .iter()
            .zip(counts)
            .map(|(l, &y)| y as f64 * l.ln() - ln_factorial(y))
            .sum::<f64>();
    Ok((out, ln_joint))
}

/// One period of a severity history as seen by the oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SevPeriod {
    pub lambda: f64,
    pub count: u64,
    pub total: f64,
    /// No transition and no observation in this period.
    pub frozen: bool,
}

fn sev_move(schedule: &QSchedule, alpha: f64) -> Result<Move> {
    let st = schedule.step(alpha)?;
    Ok(if st.q_t >= 1.0 {
        Move::Scale(st.q_star)
    } else {
        Move::Beta { a: st.shape, b: alpha - st.shape, c: st.q_star }
    })
}

/// Filtering posteriors of an inverse-gamma (severity) effect; entry 0 is the prior.
pub fn sev_posteriors(
    schedule: &QSchedule,
    alpha0: f64,
    beta0: f64,
    psi: f64,
    periods: &[SevPeriod],
    cfg: &QuadConfig,
) -> Result<(Vec<GridPosterior>, f64)> {
    InvGammaState::new(alpha0, beta0)?;
    let mut chain = Chain { a0: alpha0, b0: beta0, steps: Vec::new() };
    let first = summarize(&chain, Effect::Severity, cfg)?;
    let mut alpha = first.shape;
    let mut out = vec![first.grid];
    let mut ln_const = 0.0;
    for per in periods {
        let step = if per.frozen {
            Step { mv: Move::Stay, p: 0.0, r: 0.0 }
        } else {
            let p = per.count as f64 / psi;
            if per.count > 0 {
                ln_const += (p - 1.0) * per.total.ln() - p * (per.lambda * psi).ln() - ln_gamma(p);
            }
            Step { mv: sev_move(schedule, alpha)?, p, r: per.total / (per.lambda * psi) }
        };
        chain.steps.push(step);
        let s = summarize(&chain, Effect::Severity, cfg)?;
        alpha = s.shape;
        out.push(s.grid);
    }
    let ln_joint = moment(&chain, 0.0, cfg)?.expect("zeroth moment exists") + ln_const;
    Ok((out, ln_joint))
}

/// Quadrature filter output for a bivariate history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureFilter {
    /// `freq[t]` is the posterior of the frequency effect after `t` periods.
    pub freq: Vec<GridPosterior>,
    pub sev: Vec<GridPosterior>,
    /// Log joint density of the whole history.
    pub loglik: f64,
}

/// Longest history the nested quadrature accepts.
pub const MAX_QUAD_PERIODS: usize = 6;

pub fn quadrature_filter(
    params: &CrmParams,
    rated: &[(PeriodRates, Observation)],
    cfg: &QuadConfig,
) -> Result<QuadratureFilter> {
    params.validate()?;
    if rated.len() > MAX_QUAD_PERIODS {
        return Err(Error::domain(format!(
            "quadrature filter handles at most {MAX_QUAD_PERIODS} periods, got {}",
            rated.len()
        )));
    }
    for (_, o) in rated {
        o.validate()?;
    }
    let lambdas: Vec<f64> = rated.iter().map(|(r, _)| r.lambda1).collect();
    let counts: Vec<u64> = rated.iter().map(|(_, o)| o.count).collect();
    let (freq, ll1) = freq_posteriors(params.q1, params.alpha0_1, params.beta0_1, &lambdas, &counts, cfg)?;
    let sev_periods: Vec<SevPeriod> = rated
        .iter()
        .map(|(r, o)| SevPeriod {
            lambda: r.lambda2(params.eta, o.count),
            count: o.count,
            total: o.total,
            frozen: o.count == 0 && params.variant.freezes_without_claims(),
        })
        .collect();
    let (sev, ll2) = sev_posteriors(
        &params.schedule(),
        params.alpha0_2,
        params.beta0_2,
        params.psi2,
        &sev_periods,
        cfg,
    )?;
    Ok(QuadratureFilter { freq, sev, loglik: ll1 + ll2 })
}

fn one_step(chain: Chain, ln_const: f64) -> Result<f64> {
    let v = chain
        .ln_integral_converged(0.0, 32, 800, 1e-12)?
        .expect("zeroth moment exists");
    Ok((v + ln_const).exp())
}

/// Predictive count probability by integrating the Poisson law over the
/// transition innovation and the current gamma state.
pub fn nb_pmf_quadrature(state: &GammaState, q: f64, lambda: f64, y: u64) -> Result<f64> {
    let mv = if q >= 1.0 {
        Move::Stay
    } else {
        Move::Beta { a: q * state.alpha, b: (1.0 - q) * state.alpha, c: q }
    };
    let chain = Chain { a0: state.alpha, b0: state.beta, steps: vec![Step { mv, p: y as f64, r: lambda }] };
    one_step(chain, y as f64 * lambda.ln() - ln_factorial(y))
}

/// Predictive density of an aggregate severity of `count` claims, by
/// integrating the gamma law over the innovation and the inverse-gamma state.
pub fn gb2_pdf_quadrature(
    state: &InvGammaState,
    schedule: &QSchedule,
    lambda: f64,
    psi: f64,
    count: u64,
    y: f64,
) -> Result<f64> {
    if count == 0 || !(y > 0.0) {
        return Err(Error::domain("severity density needs count >= 1 and y > 0"));
    }
    let p = count as f64 / psi;
    let chain = Chain {
        a0: state.alpha,
        b0: state.beta,
        steps: vec![Step { mv: sev_move(schedule, state.alpha)?, p, r: y / (lambda * psi) }],
    };
    one_step(chain, (p - 1.0) * y.ln() - p * (lambda * psi).ln() - ln_gamma(p))
}
