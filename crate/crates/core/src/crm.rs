//! Bivariate frequency–severity state-space model.
//!
//! A gamma random effect drives claim counts and an inverse-gamma random effect
//! scales claim amounts. Given the past, the two effects are independent with
//! conjugate filtering laws, so forecasting, the likelihood and the posterior
//! premium are all available in closed form. Frequency–severity dependence
//! enters through `lambda2 = lambda2* * exp(eta * count)` and, for the
//! three-part variants, through freezing the severity state in claim-free periods.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{ln_pdf_gamma, ln_pdf_gb2, ln_pmf_nb, ln_pmf_poisson, sample_beta, sample_gamma, sample_poisson, Law};
use crate::error::{Error, Result};
use crate::history::{Observation, Period};
use crate::ssm_freq::{check_discount, check_rate, forecast_weights, ForecastWeights, GammaState, HfParams};
use crate::ssm_sev::{weights_from_path, InvGammaState, QSchedule, ScheduleKind};

/// Updating rule of the severity random effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Mean-preserving, variance-inflating schedule; severity state evolves every period.
    #[default]
    Plain,
    /// EWMA schedule for the severity state.
    EwmaSeverity,
    /// Plain schedule, severity state held fixed in claim-free periods.
    ThreePart,
    /// EWMA schedule, severity state held fixed in claim-free periods.
    EwmaThreePart,
}

impl Variant {
    pub fn schedule_kind(self) -> ScheduleKind {
        match self {
            Variant::Plain | Variant::ThreePart => ScheduleKind::Standard,
            Variant::EwmaSeverity | Variant::EwmaThreePart => ScheduleKind::AlternativeEwma,
        }
    }

    pub fn freezes_without_claims(self) -> bool {
        matches!(self, Variant::ThreePart | Variant::EwmaThreePart)
    }
}

/// Full model parameterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrmParams {
    /// Frequency discount factor in (0, 1]; 1 is the static model.
    pub q1: f64,
    /// Severity discount factor in (0, 1].
    pub q2: f64,
    pub alpha0_1: f64,
    pub beta0_1: f64,
    pub alpha0_2: f64,
    pub beta0_2: f64,
    /// Names of the design columns `zeta1`/`zeta2` refer to.
    #[serde(default)]
    pub covariate_names: Vec<String>,
    pub zeta1: Vec<f64>,
    pub zeta2: Vec<f64>,
    /// Coefficient of the claim count in the severity regression.
    pub eta: f64,
    /// Severity dispersion.
    pub psi2: f64,
    #[serde(default)]
    pub variant: Variant,
}

/// Prior rates of one period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodRates {
    pub lambda1: f64,
    /// Severity rate before the claim-count adjustment.
    pub lambda2_star: f64,
}

impl PeriodRates {
    pub fn new(lambda1: f64, lambda2_star: f64) -> Result<Self> {
        check_rate("lambda1", lambda1)?;
        check_rate("lambda2*", lambda2_star)?;
        Ok(PeriodRates { lambda1, lambda2_star })
    }

    /// Severity rate given the realized count: `lambda2* exp(eta count)`.
    pub fn lambda2(&self, eta: f64, count: u64) -> f64 {
        self.lambda2_star * (eta * count as f64).exp()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl CrmParams {
    pub fn validate(&self) -> Result<()> {
        check_discount("q1", self.q1)?;
        check_discount("q2", self.q2)?;
        check_rate("alpha0_1", self.alpha0_1)?;
        check_rate("beta0_1", self.beta0_1)?;
        InvGammaState::new(self.alpha0_2, self.beta0_2)?;
        check_rate("psi2", self.psi2)?;
        if !self.eta.is_finite() {
            return Err(Error::domain("eta must be finite"));
        }
        if self.zeta1.len() != self.zeta2.len() {
            return Err(Error::domain(format!(
                "regression vectors differ in length ({} vs {})",
                self.zeta1.len(),
                self.zeta2.len()
            )));
        }
        if !self.covariate_names.is_empty() && self.covariate_names.len() != self.zeta1.len() {
            return Err(Error::domain("covariate names do not match coefficient count"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> QSchedule {
        QSchedule { kind: self.variant.schedule_kind(), q: self.q2 }
    }

    pub fn initial_state(&self) -> CrmState {
        CrmState {
            freq: GammaState { alpha: self.alpha0_1, beta: self.beta0_1, t: 0 },
            sev: InvGammaState { alpha: self.alpha0_2, beta: self.beta0_2, t: 0 },
            t: 0,
        }
    }

    /// Prior rates from a design row: `exp(x zeta1)` and `exp(x zeta2)`.
    pub fn rates(&self, x: &[f64]) -> Result<PeriodRates> {
        if x.len() != self.zeta1.len() {
            return Err(Error::domain(format!(
                "design row has {} entries, model expects {}",
                x.len(),
                self.zeta1.len()
            )));
        }
        PeriodRates::new(dot(x, &self.zeta1).exp(), dot(x, &self.zeta2).exp())
    }

    pub fn rated(&self, periods: &[Period]) -> Result<Vec<(PeriodRates, Observation)>> {
        periods
            .iter()
            .map(|p| Ok((self.rates(&p.covariates)?, p.obs)))
            .collect()
    }
}

/// Joint filtering state: gamma (frequency) and inverse gamma (severity).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrmState {
    pub freq: GammaState,
    pub sev: InvGammaState,
    pub t: usize,
}

/// Severity part of a one-step forecast, conditional on the period's count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityForecast {
    pub q_t: f64,
    pub q_star: f64,
    /// Predictive shape `q_t alpha`.
    pub shape: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda2_star: f64,
    pub eta: f64,
    pub psi: f64,
}

impl SeverityForecast {
    /// Shape of the predictive severity effect, `q_t alpha`.
    pub fn predictive_shape(&self) -> f64 {
        self.shape
    }

    /// The predictive variance of the severity effect exists only when the
    /// predictive shape exceeds 2.
    pub fn variance_exists(&self) -> bool {
        self.predictive_shape() > 2.0
    }

    /// Law of the aggregate severity given `count` claims.
    pub fn law_given(&self, count: u64) -> Result<Law> {
        if count == 0 {
            return Ok(Law::PointMassZero);
        }
        let lambda2 = self.lambda2_star * (self.eta * count as f64).exp();
        Law::gb2(
            1.0,
            self.q_star * self.beta * lambda2 * self.psi,
            count as f64 / self.psi,
            self.predictive_shape(),
        )
    }

    /// `count * lambda2 * beta / (alpha - 1)`.
    pub fn mean_given(&self, count: u64) -> f64 {
        let lambda2 = self.lambda2_star * (self.eta * count as f64).exp();
        count as f64 * lambda2 * self.beta / (self.alpha - 1.0)
    }

    pub fn variance_given(&self, count: u64) -> Result<Option<f64>> {
        Ok(self.law_given(count)?.variance())
    }
}

/// One-step forecast of a period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrmForecast {
    pub count: Law,
    pub severity: SeverityForecast,
}

/// Posterior premium components for the next period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Premium {
    pub freq_mean: f64,
    /// Expected aggregate severity (the pure premium).
    pub sev_mean: f64,
    pub credibility_freq: f64,
    pub credibility_sev: f64,
    /// `E[exp(eta N) N]` under the predictive count law.
    pub laplace: f64,
}

impl Premium {
    /// Combined credibility multiplier applied to the prior compound mean.
    pub fn multiplier(&self) -> f64 {
        self.credibility_freq * self.credibility_sev
    }
}

/// Upper bound on `eta` for the count Laplace term to exist.
pub fn eta_bound(freq: &GammaState, q1: f64, lambda1: f64) -> f64 {
    ((q1 * freq.beta + lambda1) / lambda1).ln()
}

/// `E[exp(eta N) N]` for `N ~ NB(lambda alpha/beta, q alpha)`.
///
/// Writing `D = lambda + q beta - lambda e^eta` (positive iff `eta` is below
/// [`eta_bound`]), the value is `q alpha lambda e^eta (q beta / D)^(q alpha) / D`.
pub fn laplace_count_term(freq: &GammaState, q1: f64, lambda1: f64, eta: f64) -> Result<f64> {
    check_discount("q1", q1)?;
    check_rate("lambda1", lambda1)?;
    let bound = eta_bound(freq, q1, lambda1);
    let qb = q1 * freq.beta;
    let d = lambda1 + qb - lambda1 * eta.exp();
    if !(eta < bound && d > 0.0) {
        return Err(Error::Existence { eta, bound });
    }
    let size = q1 * freq.alpha;
    Ok(size * lambda1 * eta.exp() * (size * (qb / d).ln()).exp() / d)
}

impl CrmState {
    pub fn credibility(&self) -> (f64, f64) {
        (self.freq.mean(), self.sev.mean())
    }

    pub fn predict(&self, params: &CrmParams, rates: &PeriodRates) -> Result<CrmForecast> {
        let count = self.freq.forecast_obs(params.q1, rates.lambda1)?;
        let step = params.schedule().step(self.sev.alpha)?;
        Ok(CrmForecast {
            count,
            severity: SeverityForecast {
                q_t: step.q_t,
                shape: step.shape,
                q_star: step.q_star,
                alpha: self.sev.alpha,
                beta: self.sev.beta,
                lambda2_star: rates.lambda2_star,
                eta: params.eta,
                psi: params.psi2,
            },
        })
    }

    pub fn update(&self, params: &CrmParams, rates: &PeriodRates, obs: &Observation) -> Result<CrmState> {
        obs.validate()?;
        let freq = self.freq.update(params.q1, rates.lambda1, obs.count)?;
        let sev = if obs.count == 0 && params.variant.freezes_without_claims() {
            InvGammaState { t: self.sev.t + 1, ..self.sev }
        } else {
            let lambda2 = rates.lambda2(params.eta, obs.count);
            self.sev
                .update_sum(&params.schedule(), lambda2, params.psi2, obs.count, obs.total)?
        };
        Ok(CrmState { freq, sev, t: self.t + 1 })
    }

    pub fn premium(&self, params: &CrmParams, rates: &PeriodRates) -> Result<Premium> {
        let laplace = laplace_count_term(&self.freq, params.q1, rates.lambda1, params.eta)?;
        let (cf, cs) = self.credibility();
        Ok(Premium {
            freq_mean: rates.lambda1 * cf,
            sev_mean: rates.lambda2_star * laplace * cs,
            credibility_freq: cf,
            credibility_sev: cs,
            laplace,
        })
    }

    /// Log predictive density of one period's outcome.
    pub fn ln_predictive(&self, params: &CrmParams, rates: &PeriodRates, obs: &Observation) -> Result<f64> {
        let mut ll = ln_pmf_nb(obs.count, rates.lambda1 * self.freq.mean(), params.q1 * self.freq.alpha)?;
        if obs.count > 0 {
            let step = params.schedule().step(self.sev.alpha)?;
            let lambda2 = rates.lambda2(params.eta, obs.count);
            ll += ln_pdf_gb2(
                obs.total,
                1.0,
                step.q_star * self.sev.beta * lambda2 * params.psi2,
                obs.count as f64 / params.psi2,
                step.shape,
            )?;
        }
        Ok(ll)
    }
}

/// Filtering states after each period (`states[t]` follows period `t + 1`).
pub fn filter(params: &CrmParams, rated: &[(PeriodRates, Observation)]) -> Result<Vec<CrmState>> {
    let mut state = params.initial_state();
    let mut out = Vec::with_capacity(rated.len());
    for (rates, obs) in rated {
        state = state.update(params, rates, obs)?;
        out.push(state);
    }
    Ok(out)
}

/// Filtering state after the whole history.
pub fn final_state(params: &CrmParams, rated: &[(PeriodRates, Observation)]) -> Result<CrmState> {
    let mut state = params.initial_state();
    for (rates, obs) in rated {
        state = state.update(params, rates, obs)?;
    }
    Ok(state)
}

/// Closed-form joint log-likelihood of a rated history.
pub fn loglik_rated(params: &CrmParams, rated: &[(PeriodRates, Observation)]) -> Result<f64> {
    let mut state = params.initial_state();
    let mut ll = 0.0;
    for (rates, obs) in rated {
        ll += state.ln_predictive(params, rates, obs)?;
        state = state.update(params, rates, obs)?;
    }
    Ok(ll)
}

/// Closed-form joint log-likelihood of a policy history.
pub fn loglik(params: &CrmParams, periods: &[Period]) -> Result<f64> {
    loglik_rated(params, &params.rated(periods)?)
}

/// Log-likelihood without random effects (both effects fixed at 1):
/// Poisson counts and gamma aggregate severities.
pub fn independent_loglik_rated(params: &CrmParams, rated: &[(PeriodRates, Observation)]) -> Result<f64> {
    let mut ll = 0.0;
    for (rates, obs) in rated {
        obs.validate()?;
        ll += ln_pmf_poisson(obs.count, rates.lambda1)?;
        if obs.count > 0 {
            let shape = obs.count as f64 / params.psi2;
            let rate = 1.0 / (rates.lambda2(params.eta, obs.count) * params.psi2);
            ll += ln_pdf_gamma(obs.total, shape, rate)?;
        }
    }
    Ok(ll)
}

/// Linear-representation weights of the posterior premium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PremiumWeights {
    pub freq: ForecastWeights,
    pub sev: ForecastWeights,
}

impl PremiumWeights {
    /// Rebuild `(freq_mean, sev_mean)` for the next period from the weights.
    pub fn reconstruct(
        &self,
        params: &CrmParams,
        rated: &[(PeriodRates, Observation)],
        next: &PeriodRates,
        laplace: f64,
    ) -> (f64, f64) {
        let counts: Vec<f64> = rated.iter().map(|(_, o)| o.count as f64).collect();
        let l1: Vec<f64> = rated.iter().map(|(r, _)| r.lambda1).collect();
        let totals: Vec<f64> = rated.iter().map(|(_, o)| o.total).collect();
        let l2: Vec<f64> = rated.iter().map(|(r, o)| r.lambda2(params.eta, o.count)).collect();
        let freq = self.freq.forecast(next.lambda1, &counts, &l1);
        let sev = self.sev.forecast(next.lambda2_star, &totals, &l2) * laplace;
        (freq, sev)
    }
}

/// Weights `omega^[1]` and `omega^[2]` of the premium for the period after `rated`.
pub fn premium_weights(params: &CrmParams, rated: &[(PeriodRates, Observation)]) -> Result<PremiumWeights> {
    let hf = HfParams::new(
        params.q1,
        params.alpha0_1,
        params.beta0_1,
        rated.iter().map(|(r, _)| r.lambda1).collect(),
    )?;
    let freq = forecast_weights(&hf, rated.len() + 1)?;

    let schedule = params.schedule();
    let mut state = params.initial_state();
    let mut path = Vec::with_capacity(rated.len());
    for (rates, obs) in rated {
        let frozen = obs.count == 0 && params.variant.freezes_without_claims();
        path.push(if frozen { 1.0 } else { schedule.step(state.sev.alpha)?.q_star });
        state = state.update(params, rates, obs)?;
    }
    let sev = weights_from_path(params.beta0_2, params.psi2, state.sev.alpha, &path);
    Ok(PremiumWeights { freq, sev })
}

/// One simulated period: the random effects and the observed outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimStep {
    pub theta1: f64,
    pub theta2: f64,
    pub obs: Observation,
}

/// Simulate a trajectory over the given prior rates.
///
/// The initial effects are drawn from the prior laws. Each period applies the
/// beta transitions (with parameters taken from the current filtering state),
/// draws the count and the aggregate severity, then updates the filter.
pub fn simulate_rated<R: Rng + ?Sized>(params: &CrmParams, rates: &[PeriodRates], rng: &mut R) -> Result<Vec<SimStep>> {
    params.validate()?;
    let schedule = params.schedule();
    let mut theta1 = sample_gamma(rng, params.alpha0_1) / params.beta0_1;
    let mut theta2 = params.beta0_2 / sample_gamma(rng, params.alpha0_2);
    let mut state = params.initial_state();
    let mut out = Vec::with_capacity(rates.len());
    for r in rates {
        let a1 = state.freq.alpha;
        let b1 = sample_beta(rng, params.q1 * a1, (1.0 - params.q1) * a1);
        theta1 *= b1 / params.q1;
        let count = sample_poisson(rng, r.lambda1 * theta1) as u64;

        if !(count == 0 && params.variant.freezes_without_claims()) {
            let step = schedule.step(state.sev.alpha)?;
            if step.q_t > 1.0 + 1e-12 {
                return Err(Error::Invariant(format!(
                    "severity transition needs q_t <= 1, got {} at shape {}",
                    step.q_t, state.sev.alpha
                )));
            }
            let a2 = state.sev.alpha;
            let b2 = sample_beta(rng, step.shape, (a2 - step.shape).max(0.0));
            theta2 *= step.q_star / b2;
        }
        let total = if count > 0 {
            let scale = theta2 * r.lambda2(params.eta, count) * params.psi2;
            // a zero draw can only come from underflow; keep the two-part invariant
            (sample_gamma(rng, count as f64 / params.psi2) * scale).max(f64::MIN_POSITIVE)
        } else {
            0.0
        };
        let obs = Observation { count, total };
        state = state.update(params, r, &obs)?;
        out.push(SimStep { theta1, theta2, obs });
    }
    Ok(out)
}

/// Simulate a trajectory over a path of design rows.
pub fn simulate<R: Rng + ?Sized>(params: &CrmParams, x_path: &[Vec<f64>], rng: &mut R) -> Result<Vec<SimStep>> {
    let rates = x_path.iter().map(|x| params.rates(x)).collect::<Result<Vec<_>>>()?;
    simulate_rated(params, &rates, rng)
}
