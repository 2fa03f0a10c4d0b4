//! Positive-valued process with an inverse-gamma random effect.
//!
//! The effect evolves as `theta_t = theta_{t-1} * q_t^* / B_t` with
//! `B_t ~ Beta(q_t alpha, (1 - q_t) alpha)`, where `(q_t, q_t^*)` are functions of
//! the current filtering shape. Two schedules are supported:
//!
//! * [`ScheduleKind::Standard`] keeps the mean and multiplies the variance by `1/q`.
//! * [`ScheduleKind::AlternativeEwma`] keeps the mean and turns the forecast into
//!   an exponentially weighted moving average; the variance may stop existing.
//!
//! Observations are `Gamma(1/psi, rate 1/(theta lambda psi))`, giving a GB2
//! one-step predictive law.

use serde::{Deserialize, Serialize};

use crate::dist::{ln_pdf_gb2, Law};
use crate::error::{Error, Result};
use crate::ssm_freq::{check_discount, check_rate, ForecastWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Standard,
    AlternativeEwma,
}

/// Rule producing `(q_t, q_t^*)` from the previous filtering shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QSchedule {
    pub kind: ScheduleKind,
    pub q: f64,
}

/// Output of one schedule evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QStep {
    pub q_t: f64,
    pub q_star: f64,
    /// Predictive shape `q_t alpha`, evaluated without the division in `q_t`
    /// so that boundary cases such as `q_t alpha = 2` are exact.
    pub shape: f64,
}

impl QStep {
    /// True when `0 < q_t < 1` and `q_t^* > 0`, i.e. the beta innovation is proper.
    pub fn is_interior(&self) -> bool {
        self.q_t > 0.0 && self.q_t < 1.0 && self.q_star > 0.0
    }

    /// True at or beyond the `q_t = 1` boundary, where the innovation is a point
    /// mass and the transition reduces to a deterministic rescaling.
    pub fn is_degenerate(&self) -> bool {
        self.q_t >= 1.0
    }
}

/// Whether the EWMA schedule keeps a finite predictive variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EwmaConditions {
    /// `q (alpha0 - 1) > 1`, equivalently `q_1 alpha0 > 2`.
    pub initial: bool,
    /// `q (1/psi + 1) + 1 >= 2`, which propagates the first condition forward.
    pub propagating: bool,
}

impl EwmaConditions {
    pub fn variance_always_finite(&self) -> bool {
        self.initial && self.propagating
    }
}

impl QSchedule {
    pub fn standard(q: f64) -> Result<Self> {
        check_discount("q", q)?;
        Ok(QSchedule { kind: ScheduleKind::Standard, q })
    }

    pub fn alternative_ewma(q: f64) -> Result<Self> {
        check_discount("q", q)?;
        Ok(QSchedule { kind: ScheduleKind::AlternativeEwma, q })
    }

    pub fn step(&self, alpha_prev: f64) -> Result<QStep> {
        if !(alpha_prev.is_finite() && alpha_prev > 1.0) {
            return Err(Error::Invariant(format!(
                "severity shape must exceed 1 before a transition, got {alpha_prev}"
            )));
        }
        let q = self.q;
        let a = alpha_prev;
        Ok(match self.kind {
            ScheduleKind::Standard => QStep {
                q_t: (q * (a - 2.0) + 2.0) / a,
                q_star: (q * (a - 2.0) + 1.0) / (a - 1.0),
                shape: q * (a - 2.0) + 2.0,
            },
            ScheduleKind::AlternativeEwma => QStep {
                q_t: (q * (a - 1.0) + 1.0) / a,
                q_star: q,
                shape: q * (a - 1.0) + 1.0,
            },
        })
    }

    pub fn ewma_conditions(&self, alpha0: f64, psi: f64) -> EwmaConditions {
        EwmaConditions {
            initial: self.q * (alpha0 - 1.0) > 1.0,
            propagating: self.q * (1.0 / psi + 1.0) + 1.0 >= 2.0,
        }
    }
}

/// Inverse-gamma filtering state `(alpha, beta)`; `alpha > 1` always.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvGammaState {
    pub alpha: f64,
    pub beta: f64,
    pub t: usize,
}

impl InvGammaState {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 1.0) {
            return Err(Error::Invariant(format!("severity shape must exceed 1, got {alpha}")));
        }
        check_rate("severity scale", beta)?;
        Ok(InvGammaState { alpha, beta, t: 0 })
    }

    pub fn law(&self) -> Law {
        Law::InverseGamma { shape: self.alpha, scale: self.beta }
    }

    /// Posterior mean `beta / (alpha - 1)`, the severity credibility factor.
    pub fn mean(&self) -> f64 {
        self.beta / (self.alpha - 1.0)
    }

    pub fn variance(&self) -> Option<f64> {
        self.law().variance()
    }

    /// Predictive law of the next random effect: `IG(q_t alpha, q_t^* beta)`.
    pub fn predict_state(&self, schedule: &QSchedule) -> Result<Law> {
        let s = schedule.step(self.alpha)?;
        Law::inverse_gamma(s.shape, s.q_star * self.beta)
    }

    /// Shape `q_t alpha` of the predictive law; its variance exists iff this exceeds 2.
    pub fn predictive_shape(&self, schedule: &QSchedule) -> Result<f64> {
        Ok(schedule.step(self.alpha)?.shape)
    }

    /// One-step predictive law of a single positive observation.
    pub fn forecast_obs(&self, schedule: &QSchedule, lambda: f64, psi: f64) -> Result<Law> {
        self.forecast_sum(schedule, lambda, psi, 1)
    }

    /// Predictive law of the sum of `count` claims sharing the effect:
    /// `GB2(1, q* beta lambda psi, count/psi, q_t alpha)`, a point mass when `count = 0`.
    pub fn forecast_sum(&self, schedule: &QSchedule, lambda: f64, psi: f64, count: u64) -> Result<Law> {
        check_rate("lambda", lambda)?;
        check_rate("psi", psi)?;
        if count == 0 {
            return Ok(Law::PointMassZero);
        }
        let s = schedule.step(self.alpha)?;
        Law::gb2(1.0, s.q_star * self.beta * lambda * psi, count as f64 / psi, s.shape)
    }

    /// Bayes update after one positive observation.
    pub fn update(&self, schedule: &QSchedule, lambda: f64, psi: f64, y: f64) -> Result<InvGammaState> {
        if !(y.is_finite() && y > 0.0) {
            return Err(Error::domain(format!("severity observation must be > 0, got {y}")));
        }
        self.update_sum(schedule, lambda, psi, 1, y)
    }

    /// Bayes update after `count` claims totalling `total`. With `count = 0` the
    /// state still evolves through the transition.
    pub fn update_sum(
        &self,
        schedule: &QSchedule,
        lambda: f64,
        psi: f64,
        count: u64,
        total: f64,
    ) -> Result<InvGammaState> {
        check_rate("lambda", lambda)?;
        check_rate("psi", psi)?;
        let s = schedule.step(self.alpha)?;
        Ok(InvGammaState {
            alpha: s.shape + count as f64 / psi,
            beta: s.q_star * self.beta + total / (lambda * psi),
            t: self.t + 1,
        })
    }
}

/// Parameters of the single-series positive model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SevParams {
    pub schedule: QSchedule,
    pub alpha0: f64,
    pub beta0: f64,
    pub psi: f64,
    pub lambda: Vec<f64>,
}

impl SevParams {
    pub fn new(schedule: QSchedule, alpha0: f64, beta0: f64, psi: f64, lambda: Vec<f64>) -> Result<Self> {
        InvGammaState::new(alpha0, beta0)?;
        check_rate("psi", psi)?;
        for (t, &l) in lambda.iter().enumerate() {
            check_rate(&format!("lambda[{}]", t + 1), l)?;
        }
        Ok(SevParams { schedule, alpha0, beta0, psi, lambda })
    }

    pub fn initial_state(&self) -> InvGammaState {
        InvGammaState { alpha: self.alpha0, beta: self.beta0, t: 0 }
    }

    fn rate(&self, t: usize) -> Result<f64> {
        self.lambda
            .get(t)
            .copied()
            .ok_or_else(|| Error::domain(format!("no prior rate for period {}", t + 1)))
    }

    /// Filtering states after each observation.
    pub fn filter(&self, ys: &[f64]) -> Result<Vec<InvGammaState>> {
        let mut state = self.initial_state();
        let mut out = Vec::with_capacity(ys.len());
        for (t, &y) in ys.iter().enumerate() {
            state = state.update(&self.schedule, self.rate(t)?, self.psi, y)?;
            out.push(state);
        }
        Ok(out)
    }
}

/// Weights of the severity forecast from a realized path of scale multipliers.
///
/// `q_star_path[k]` is the multiplier applied to the scale in period `k + 1`
/// (use 1 for periods in which the state was held fixed), and `alpha_last` is the
/// filtering shape after the last observed period.
pub fn weights_from_path(beta0: f64, psi: f64, alpha_last: f64, q_star_path: &[f64]) -> ForecastWeights {
    let n = q_star_path.len();
    // suffix[t] = prod_{k > t} q*_k over the observed periods
    let mut suffix = vec![1.0; n + 1];
    for k in (0..n).rev() {
        suffix[k] = suffix[k + 1] * q_star_path[k];
    }
    let denom = alpha_last - 1.0;
    ForecastWeights {
        intercept: beta0 * suffix[0] / denom,
        data: (1..=n).map(|t| suffix[t] / (denom * psi)).collect(),
    }
}

/// Forecast weights for period `tau`, built from the observed history `ys`
/// (the realized shape path determines the weights).
pub fn forecast_weights(params: &SevParams, ys: &[f64], tau: usize) -> Result<ForecastWeights> {
    if tau == 0 || ys.len() < tau - 1 {
        return Err(Error::domain(format!(
            "forecast period {tau} needs {} observations, got {}",
            tau.saturating_sub(1),
            ys.len()
        )));
    }
    let mut state = params.initial_state();
    let mut path = Vec::with_capacity(tau - 1);
    for (t, &y) in ys.iter().take(tau - 1).enumerate() {
        path.push(params.schedule.step(state.alpha)?.q_star);
        state = state.update(&params.schedule, params.rate(t)?, params.psi, y)?;
    }
    Ok(weights_from_path(params.beta0, params.psi, state.alpha, &path))
}

/// Closed-form log-likelihood of a positive series.
pub fn loglik(params: &SevParams, ys: &[f64]) -> Result<f64> {
    let mut state = params.initial_state();
    let mut ll = 0.0;
    for (t, &y) in ys.iter().enumerate() {
        let lambda = params.rate(t)?;
        let s = params.schedule.step(state.alpha)?;
        ll += ln_pdf_gb2(
            y,
            1.0,
            s.q_star * state.beta * lambda * params.psi,
            1.0 / params.psi,
            s.shape,
        )?;
        state = state.update(&params.schedule, lambda, params.psi, y)?;
    }
    Ok(ll)
}
