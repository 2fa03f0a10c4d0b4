//! Count process with a gamma random effect and beta-thinning transition.
//!
//! The filtering law of the random effect is `Gamma(alpha, beta)`. One step of
//! the model multiplies the effect by `B / q` with `B ~ Beta(q alpha, (1 - q) alpha)`,
//! which keeps the mean and inflates the variance by `1 / q`. Counts are
//! Poisson with mean `lambda_t * theta_t`, so the one-step predictive law is
//! negative binomial and the filter stays in the gamma family.
//!
//! `q = 1` is accepted as the static limit (no state evolution).

use serde::{Deserialize, Serialize};

use crate::dist::{ln_pmf_nb, Law};
use crate::error::{Error, Result};

/// Validate a discount factor `q` in `(0, 1]`.
pub(crate) fn check_discount(name: &str, q: f64) -> Result<()> {
    if q.is_finite() && q > 0.0 && q <= 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must lie in (0, 1], got {q}")))
    }
}

pub(crate) fn check_rate(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be finite and > 0, got {v}")))
    }
}

/// Gamma filtering state `(alpha, beta)` after `t` observed periods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaState {
    pub alpha: f64,
    pub beta: f64,
    pub t: usize,
}

impl GammaState {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::domain(format!("gamma state alpha must be >= 0, got {alpha}")));
        }
        check_rate("gamma state beta", beta)?;
        Ok(GammaState { alpha, beta, t: 0 })
    }

    /// Filtering law of the random effect.
    pub fn law(&self) -> Law {
        Law::gamma(self.alpha, self.beta).expect("state invariants hold")
    }

    pub fn mean(&self) -> f64 {
        self.alpha / self.beta
    }

    pub fn variance(&self) -> f64 {
        self.alpha / (self.beta * self.beta)
    }

    /// Predictive law of the next random effect: `Gamma(q alpha, q beta)`.
    pub fn predict_state(&self, q: f64) -> Result<Law> {
        check_discount("q", q)?;
        Law::gamma(q * self.alpha, q * self.beta)
    }

    /// One-step predictive law of the next count: `NB(lambda alpha / beta, q alpha)`.
    pub fn forecast_obs(&self, q: f64, lambda: f64) -> Result<Law> {
        check_discount("q", q)?;
        check_rate("lambda", lambda)?;
        Law::neg_binomial(lambda * self.alpha / self.beta, q * self.alpha)
    }

    /// Bayes update after observing `y` claims with prior rate `lambda`.
    pub fn update(&self, q: f64, lambda: f64, y: u64) -> Result<GammaState> {
        check_discount("q", q)?;
        check_rate("lambda", lambda)?;
        Ok(GammaState {
            alpha: q * self.alpha + y as f64,
            beta: q * self.beta + lambda,
            t: self.t + 1,
        })
    }
}

/// Parameters of the count model with a per-period prior rate path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HfParams {
    pub q: f64,
    pub alpha0: f64,
    pub beta0: f64,
    pub lambda: Vec<f64>,
}

impl HfParams {
    pub fn new(q: f64, alpha0: f64, beta0: f64, lambda: Vec<f64>) -> Result<Self> {
        check_discount("q", q)?;
        check_rate("alpha0", alpha0)?;
        check_rate("beta0", beta0)?;
        for (t, &l) in lambda.iter().enumerate() {
            check_rate(&format!("lambda[{}]", t + 1), l)?;
        }
        Ok(HfParams { q, alpha0, beta0, lambda })
    }

    /// Same prior rate in each of `periods` periods.
    pub fn constant_rate(q: f64, alpha0: f64, beta0: f64, lambda: f64, periods: usize) -> Result<Self> {
        Self::new(q, alpha0, beta0, vec![lambda; periods])
    }

    pub fn initial_state(&self) -> GammaState {
        GammaState { alpha: self.alpha0, beta: self.beta0, t: 0 }
    }

    fn rate(&self, t: usize) -> Result<f64> {
        self.lambda
            .get(t)
            .copied()
            .ok_or_else(|| Error::domain(format!("no prior rate for period {}", t + 1)))
    }

    /// Filtering states after each observed count (`states[t]` is after `t + 1` periods).
    pub fn filter(&self, counts: &[u64]) -> Result<Vec<GammaState>> {
        let mut state = self.initial_state();
        let mut out = Vec::with_capacity(counts.len());
        for (t, &y) in counts.iter().enumerate() {
            state = state.update(self.q, self.rate(t)?, y)?;
            out.push(state);
        }
        Ok(out)
    }
}

/// Linear representation of a one-step forecast:
/// `E[y_tau | past] = lambda_tau * (intercept + sum_t data[t] * y_t / lambda_t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastWeights {
    pub intercept: f64,
    /// Weights of periods `1..tau-1`, oldest first.
    pub data: Vec<f64>,
}

impl ForecastWeights {
    pub fn forecast(&self, lambda_tau: f64, ys: &[f64], lambdas: &[f64]) -> f64 {
        let past: f64 = self
            .data
            .iter()
            .zip(ys)
            .zip(lambdas)
            .map(|((w, y), l)| w * y / l)
            .sum();
        lambda_tau * (self.intercept + past)
    }
}

/// Exponentially decaying forecast weights for period `tau >= 1`.
pub fn forecast_weights(params: &HfParams, tau: usize) -> Result<ForecastWeights> {
    if tau == 0 {
        return Err(Error::domain("forecast period must be >= 1"));
    }
    let q = params.q;
    let n = tau - 1;
    let mut denom = q.powi(n as i32) * params.beta0;
    let mut raw = Vec::with_capacity(n);
    for t in 1..=n {
        let w = q.powi((n - t) as i32) * params.rate(t - 1)?;
        denom += w;
        raw.push(w);
    }
    Ok(ForecastWeights {
        intercept: q.powi(n as i32) * params.alpha0 / denom,
        data: raw.into_iter().map(|w| w / denom).collect(),
    })
}

/// Closed-form log-likelihood of a count history.
pub fn loglik(params: &HfParams, counts: &[u64]) -> Result<f64> {
    let mut state = params.initial_state();
    let mut ll = 0.0;
    for (t, &y) in counts.iter().enumerate() {
        let lambda = params.rate(t)?;
        let mean = lambda * state.alpha / state.beta;
        ll += ln_pmf_nb(y, mean, params.q * state.alpha)?;
        state = state.update(params.q, lambda, y)?;
    }
    Ok(ll)
}
