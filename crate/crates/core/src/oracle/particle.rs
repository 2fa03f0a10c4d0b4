//! Bootstrap particle filter for the two random effects.
//!
//! Particles are split into independent islands, each with its own ChaCha
//! stream and its own resampling. Island estimates are averaged and their
//! spread gives the Monte-Carlo standard error, so the result does not depend
//! on the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crm::{CrmParams, PeriodRates};
use crate::dist::{sample_beta, sample_gamma};
use crate::error::{Error, Result};
use crate::history::Observation;

pub const ISLANDS: usize = 32;
pub const MIN_PARTICLES: usize = 1000;
/// Resampling fails below this effective-sample-size fraction.
pub const MIN_ESS_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleEstimate {
    pub mean: f64,
    pub mean_se: f64,
    pub variance: f64,
    pub variance_se: f64,
}

/// Filtering estimates after a number of periods (entry 0 is the prior).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleStep {
    pub freq: ParticleEstimate,
    pub sev: ParticleEstimate,
    /// Smallest effective-sample-size fraction over islands and effects.
    pub min_ess: f64,
}

#[derive(Clone, Copy)]
struct Raw {
    m1: f64,
    v1: f64,
    m2: f64,
    v2: f64,
    ess: f64,
}

fn weighted(theta: &[f64], logw: &[f64]) -> (Vec<f64>, f64, f64, f64) {
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    let mean: f64 = w.iter().zip(theta).map(|(w, t)| w * t).sum();
    let var: f64 = w.iter().zip(theta).map(|(w, t)| w * (t - mean).powi(2)).sum();
    let ess = 1.0 / w.iter().map(|x| x * x).sum::<f64>() / theta.len() as f64;
    (w, mean, var, ess)
}

fn unweighted(theta: &[f64]) -> (f64, f64) {
    let n = theta.len() as f64;
    let mean = theta.iter().sum::<f64>() / n;
    (mean, theta.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n)
}

fn systematic<R: Rng>(theta: &[f64], w: &[f64], rng: &mut R) -> Vec<f64> {
    let n = theta.len();
    let u0: f64 = rng.random::<f64>() / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cum = w[0];
    let mut j = 0;
    for i in 0..n {
        let u = u0 + i as f64 / n as f64;
        while u > cum && j + 1 < n {
            j += 1;
            cum += w[j];
        }
        out.push(theta[j]);
    }
    out
}

fn island(params: &CrmParams, rated: &[(PeriodRates, Observation)], n: usize, seed: u64) -> Result<Vec<Raw>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schedule = params.schedule();
    let mut th1: Vec<f64> = (0..n).map(|_| sample_gamma(&mut rng, params.alpha0_1) / params.beta0_1).collect();
    let mut th2: Vec<f64> = (0..n).map(|_| params.beta0_2 / sample_gamma(&mut rng, params.alpha0_2)).collect();
    let (m1, v1) = unweighted(&th1);
    let (m2, v2) = unweighted(&th2);
    let mut out = vec![Raw { m1, v1, m2, v2, ess: 1.0 }];
    let (mut a1, mut a2) = (params.alpha0_1, params.alpha0_2);
    for (t, (r, o)) in rated.iter().enumerate() {
        let q1 = params.q1;
        if q1 < 1.0 {
            for x in th1.iter_mut() {
                *x *= sample_beta(&mut rng, q1 * a1, (1.0 - q1) * a1) / q1;
            }
        }
        let y = o.count as f64;
        let lw1: Vec<f64> = th1.iter().map(|x| y * x.ln() - r.lambda1 * x).collect();

        let frozen = o.count == 0 && params.variant.freezes_without_claims();
        let mut next_a2 = a2;
        let lw2: Vec<f64> = if frozen {
            vec![0.0; n]
        } else {
            let st = schedule.step(a2)?;
            for x in th2.iter_mut() {
                let b = if st.q_t < 1.0 { sample_beta(&mut rng, st.shape, a2 - st.shape) } else { 1.0 };
                *x *= st.q_star / b;
            }
            let p = y / params.psi2;
            next_a2 = st.shape + p;
            if o.count > 0 {
                let s = r.lambda2(params.eta, o.count) * params.psi2;
                th2.iter().map(|x| -p * x.ln() - o.total / (x * s)).collect()
            } else {
                vec![0.0; n]
            }
        };
        let (w1, m1, v1, e1) = weighted(&th1, &lw1);
        let (w2, m2, v2, e2) = weighted(&th2, &lw2);
        let ess = e1.min(e2);
        if !(ess >= MIN_ESS_FRACTION) {
            return Err(Error::numeric(format!(
                "particle weights degenerate in period {} (ESS fraction {ess:.2e})",
                t + 1
            )));
        }
        out.push(Raw { m1, v1, m2, v2, ess });
        th1 = systematic(&th1, &w1, &mut rng);
        th2 = systematic(&th2, &w2, &mut rng);
        a1 = q1 * a1 + y;
        a2 = next_a2;
    }
    Ok(out)
}

fn combine(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let k = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / k;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Bootstrap filter estimates of the posterior mean and variance of both
/// effects after each period.
pub fn particle_filter<R: Rng + ?Sized>(
    params: &CrmParams,
    rated: &[(PeriodRates, Observation)],
    n_particles: usize,
    rng: &mut R,
) -> Result<Vec<ParticleStep>> {
    params.validate()?;
    if n_particles < MIN_PARTICLES {
        return Err(Error::domain(format!("particle filter needs at least {MIN_PARTICLES} particles")));
    }
    for (_, o) in rated {
        o.validate()?;
    }
    let per = n_particles / ISLANDS;
    let seeds: Vec<u64> = (0..ISLANDS).map(|_| rng.random()).collect();
    let runs = seeds
        .par_iter()
        .map(|&s| island(params, rated, per, s))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..=rated.len())
        .map(|t| {
            let col = || runs.iter().map(move |r| r[t]);
            let est = |f: fn(&Raw) -> f64, g: fn(&Raw) -> f64| {
                let (mean, mean_se) = combine(col().map(move |r| f(&r)));
                let (variance, variance_se) = combine(col().map(move |r| g(&r)));
                ParticleEstimate { mean, mean_se, variance, variance_se }
            };
            ParticleStep {
                freq: est(|r| r.m1, |r| r.v1),
                sev: est(|r| r.m2, |r| r.v2),
                min_ess: col().map(|r| r.ess).fold(f64::INFINITY, f64::min),
            }
        })
        .collect())
}
