//! Monte-Carlo checks of single transitions and of the count Laplace term.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{sample_beta, sample_gamma, sample_poisson};
use crate::error::{Error, Result};
use crate::ssm_freq::{check_discount, GammaState};
use crate::ssm_sev::{InvGammaState, QSchedule};

const BLOCK: usize = 1 << 16;

/// Random effect and its transition rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum TransitionSpec {
    Gamma { state: GammaState, q: f64 },
    InverseGamma { state: InvGammaState, schedule: QSchedule },
}

/// Sample mean and variance with their standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub n: usize,
    pub mean: f64,
    pub mean_se: f64,
    pub variance: f64,
    pub variance_se: f64,
}

impl SampleStats {
    fn from_draws(x: &[f64]) -> Self {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let (m2, m4) = x.iter().fold((0.0, 0.0), |(a, b), v| {
            let d = (v - mean) * (v - mean);
            (a + d, b + d * d)
        });
        let (m2, m4) = (m2 / n, m4 / n);
        SampleStats {
            n: x.len(),
            mean,
            mean_se: (m2 / n).sqrt(),
            variance: m2 * n / (n - 1.0),
            variance_se: ((m4 - m2 * m2).max(0.0) / n).sqrt(),
        }
    }

    /// Whether `target` lies within `k` standard errors of the sample mean.
    pub fn mean_within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.mean_se
    }

    pub fn variance_within(&self, target: f64, k: f64) -> bool {
        (self.variance - target).abs() <= k * self.variance_se
    }
}

fn draws<R, F>(n: usize, rng: &mut R, f: F) -> Vec<f64>
where
    R: Rng + ?Sized,
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    let blocks = n.div_ceil(BLOCK);
    let seeds: Vec<u64> = (0..blocks).map(|_| rng.random()).collect();
    seeds
        .par_iter()
        .enumerate()
        .flat_map_iter(|(b, &s)| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            let len = BLOCK.min(n - b * BLOCK);
            (0..len).map(|_| f(&mut r)).collect::<Vec<_>>()
        })
        .collect()
}

/// Draw from the current law, push through one transition and report the
/// sample moments of the propagated effect.
pub fn transition_check<R: Rng + ?Sized>(spec: &TransitionSpec, n_draws: usize, rng: &mut R) -> Result<SampleStats> {
    if n_draws < 2 {
        return Err(Error::domain("transition check needs at least 2 draws"));
    }
    let x = match *spec {
        TransitionSpec::Gamma { state, q } => {
            check_discount("q", q)?;
            let (a, b) = (state.alpha, state.beta);
            draws(n_draws, rng, move |r| {
                let theta = sample_gamma(r, a) / b;
                if q < 1.0 {
                    theta * sample_beta(r, q * a, (1.0 - q) * a) / q
                } else {
                    theta
                }
            })
        }
        TransitionSpec::InverseGamma { state, schedule } => {
            let st = schedule.step(state.alpha)?;
            let (a, b) = (state.alpha, state.beta);
            draws(n_draws, rng, move |r| {
                let theta = b / sample_gamma(r, a);
                let inn = if st.q_t < 1.0 { sample_beta(r, st.shape, a - st.shape) } else { 1.0 };
                theta * st.q_star / inn
            })
        }
    };
    Ok(SampleStats::from_draws(&x))
}

/// Monte-Carlo estimate of `E[N exp(eta N)]` where `N` is the next count:
/// state draw, beta transition, then a Poisson draw.
pub fn laplace_count_mc<R: Rng + ?Sized>(
    state: &GammaState,
    q: f64,
    lambda: f64,
    eta: f64,
    n_draws: usize,
    rng: &mut R,
) -> Result<SampleStats> {
    check_discount("q", q)?;
    if n_draws < 2 {
        return Err(Error::domain("Monte-Carlo estimate needs at least 2 draws"));
    }
    let (a, b) = (state.alpha, state.beta);
    let x = draws(n_draws, rng, move |r| {
        let mut theta = sample_gamma(r, a) / b;
        if q < 1.0 {
            theta *= sample_beta(r, q * a, (1.0 - q) * a) / q;
        }
        let n = sample_poisson(r, lambda * theta);
        n * (eta * n).exp()
    });
    Ok(SampleStats::from_draws(&x))
}
