//! Distribution toolkit: densities, distribution functions, moments and
//! sampling for the laws that appear in the filtering recursions.
//!
//! Parameterizations follow the actuarial convention used throughout the crate:
//!
//! * `Gamma(shape, rate)`: mean `shape / rate`.
//! * `InverseGamma(shape, scale)`: law of `1 / G` with `G ~ Gamma(shape, scale)`.
//! * `NegBinomial(mean, size)`: variance `mean + mean^2 / size`.
//! * `Gb2(a, scale, p, q)`: generalized beta of the second kind.
//!
//! Degenerate members (a gamma law with zero shape, a GB2 law with `p = q = 0`)
//! collapse to [`Law::PointMassZero`].

use rand::Rng;
use rand_distr::{Distribution, Gamma as GammaSampler, Poisson as PoissonSampler};
use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};
use statrs::function::factorial::ln_factorial;
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};

/// A one-dimensional law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Law {
    Gamma { shape: f64, rate: f64 },
    InverseGamma { shape: f64, scale: f64 },
    Beta { a: f64, b: f64 },
    NegBinomial { mean: f64, size: f64 },
    Gb2 { a: f64, scale: f64, p: f64, q: f64 },
    PointMassZero,
}

/// Mean and variance of a law; `None` marks a moment that does not exist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: Option<f64>,
    pub variance: Option<f64>,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be finite and > 0, got {v}")))
    }
}

fn nonnegative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be finite and >= 0, got {v}")))
    }
}

/// `ln(1 + exp(t))` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

impl Law {
    /// Gamma law; a zero shape collapses to a point mass at zero.
    pub fn gamma(shape: f64, rate: f64) -> Result<Law> {
        nonnegative("gamma shape", shape)?;
        positive("gamma rate", rate)?;
        Ok(if shape == 0.0 {
            Law::PointMassZero
        } else {
            Law::Gamma { shape, rate }
        })
    }

    pub fn inverse_gamma(shape: f64, scale: f64) -> Result<Law> {
        positive("inverse-gamma shape", shape)?;
        positive("inverse-gamma scale", scale)?;
        Ok(Law::InverseGamma { shape, scale })
    }

    pub fn beta(a: f64, b: f64) -> Result<Law> {
        positive("beta a", a)?;
        positive("beta b", b)?;
        Ok(Law::Beta { a, b })
    }

    /// Negative binomial law by mean and size; a zero mean is a point mass at zero.
    pub fn neg_binomial(mean: f64, size: f64) -> Result<Law> {
        nonnegative("negative binomial mean", mean)?;
        positive("negative binomial size", size)?;
        Ok(if mean == 0.0 {
            Law::PointMassZero
        } else {
            Law::NegBinomial { mean, size }
        })
    }

    /// GB2 law; `p = q = 0` collapses to a point mass at zero.
    pub fn gb2(a: f64, scale: f64, p: f64, q: f64) -> Result<Law> {
        if p == 0.0 && q == 0.0 {
            return Ok(Law::PointMassZero);
        }
        if !(a.is_finite() && a != 0.0) {
            return Err(Error::domain(format!("GB2 a must be finite and non-zero, got {a}")));
        }
        positive("GB2 scale", scale)?;
        positive("GB2 p", p)?;
        positive("GB2 q", q)?;
        Ok(Law::Gb2 { a, scale, p, q })
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Law::NegBinomial { .. } | Law::PointMassZero)
    }

    /// Log density (continuous laws) or log probability mass (discrete laws).
    pub fn ln_density(&self, x: f64) -> Result<f64> {
        match *self {
            Law::Gamma { shape, rate } => ln_pdf_gamma(x, shape, rate),
            Law::InverseGamma { shape, scale } => ln_pdf_inverse_gamma(x, shape, scale),
            Law::Beta { a, b } => ln_pdf_beta(x, a, b),
            Law::NegBinomial { mean, size } => {
                if x < 0.0 || x.fract() != 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                ln_pmf_nb(x as u64, mean, size)
            }
            Law::Gb2 { a, scale, p, q } => {
                if x <= 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                ln_pdf_gb2(x, a, scale, p, q)
            }
            Law::PointMassZero => Ok(if x == 0.0 { 0.0 } else { f64::NEG_INFINITY }),
        }
    }

    pub fn density(&self, x: f64) -> Result<f64> {
        self.ln_density(x).map(f64::exp)
    }

    /// Cumulative distribution function `P(X <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Law::Gamma { shape, rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    gamma_lr(shape, rate * x)
                }
            }
            Law::InverseGamma { shape, scale } => {
                if x <= 0.0 {
                    0.0
                } else {
                    gamma_ur(shape, scale / x)
                }
            }
            Law::Beta { a, b } => {
                if x <= 0.0 {
                    0.0
                } else if x >= 1.0 {
                    1.0
                } else {
                    beta_reg(a, b, x)
                }
            }
            Law::NegBinomial { mean, size } => {
                if x < 0.0 {
                    0.0
                } else {
                    let k = x.floor();
                    beta_reg(size, k + 1.0, size / (size + mean))
                }
            }
            Law::Gb2 { a, scale, p, q } => {
                if x <= 0.0 {
                    return 0.0;
                }
                let t = a * (x / scale).ln();
                // z = u / (1 + u) with u = (x/b)^a
                let z = (t - softplus(t)).exp();
                let i = beta_reg(p, q, z.clamp(0.0, 1.0));
                if a > 0.0 {
                    i
                } else {
                    1.0 - i
                }
            }
            Law::PointMassZero => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Closed-form mean and variance with existence conditions applied.
    pub fn moments(&self) -> Moments {
        match *self {
            Law::Gamma { shape, rate } => Moments {
                mean: Some(shape / rate),
                variance: Some(shape / (rate * rate)),
            },
            Law::InverseGamma { shape, scale } => Moments {
                mean: (shape > 1.0).then(|| scale / (shape - 1.0)),
                variance: (shape > 2.0)
                    .then(|| scale * scale / ((shape - 1.0).powi(2) * (shape - 2.0))),
            },
            Law::Beta { a, b } => {
                let s = a + b;
                Moments {
                    mean: Some(a / s),
                    variance: Some(a * b / (s * s * (s + 1.0))),
                }
            }
            Law::NegBinomial { mean, size } => Moments {
                mean: Some(mean),
                variance: Some(mean + mean * mean / size),
            },
            Law::Gb2 { a, scale, p, q } => {
                if a != 1.0 {
                    // only the a = 1 family has closed forms here
                    return Moments { mean: None, variance: None };
                }
                Moments {
                    mean: (q > 1.0).then(|| scale * p / (q - 1.0)),
                    variance: (q > 2.0).then(|| {
                        scale * scale * p / (q - 1.0) * ((p + q - 1.0) / ((q - 2.0) * (q - 1.0)))
                    }),
                }
            }
            Law::PointMassZero => Moments {
                mean: Some(0.0),
                variance: Some(0.0),
            },
        }
    }

    pub fn mean(&self) -> Option<f64> {
        self.moments().mean
    }

    pub fn variance(&self) -> Option<f64> {
        self.moments().variance
    }

    /// Draw one value. Deterministic for a deterministic `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Law::Gamma { shape, rate } => sample_gamma(rng, shape) / rate,
            Law::InverseGamma { shape, scale } => scale / sample_gamma(rng, shape),
            Law::Beta { a, b } => sample_beta(rng, a, b),
            Law::NegBinomial { mean, size } => {
                let rate = sample_gamma(rng, size) * mean / size;
                sample_poisson(rng, rate)
            }
            Law::Gb2 { a, scale, p, q } => {
                let ratio = sample_gamma(rng, p) / sample_gamma(rng, q);
                scale * ratio.powf(1.0 / a)
            }
            Law::PointMassZero => 0.0,
        }
    }
}

/// Standard gamma draw (unit rate). Zero shape gives zero.
pub fn sample_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    if shape <= 0.0 {
        return 0.0;
    }
    GammaSampler::new(shape, 1.0)
        .expect("shape validated positive")
        .sample(rng)
}

/// Beta draw built from two gamma draws.
pub fn sample_beta<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    if b <= 0.0 {
        return 1.0;
    }
    if a <= 0.0 {
        return 0.0;
    }
    let x = sample_gamma(rng, a);
    let y = sample_gamma(rng, b);
    let s = x + y;
    if s > 0.0 {
        x / s
    } else if rng.random::<f64>() < a / (a + b) {
        // both draws underflowed; fall back to the limiting two-point law
        1.0
    } else {
        0.0
    }
}

pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    PoissonSampler::new(mean)
        .expect("mean validated positive")
        .sample(rng)
}

/// Log probability mass of the negative binomial law `NB(mean, size)` at `y`.
pub fn ln_pmf_nb(y: u64, mean: f64, size: f64) -> Result<f64> {
    positive("negative binomial mean", mean)?;
    positive("negative binomial size", size)?;
    let y = y as f64;
    // size * ln(size/(size+mean)) = -size * ln(1 + mean/size)
    Ok(ln_gamma(y + size) - ln_factorial(y as u64) - ln_gamma(size)
        - size * (mean / size).ln_1p()
        + y * (mean / (size + mean)).ln())
}

pub fn pmf_nb(y: u64, mean: f64, size: f64) -> Result<f64> {
    ln_pmf_nb(y, mean, size).map(f64::exp)
}

/// Log density of `GB2(a, b, p, q)` at `y > 0`.
pub fn ln_pdf_gb2(y: f64, a: f64, b: f64, p: f64, q: f64) -> Result<f64> {
    if !(y.is_finite() && y > 0.0) {
        return Err(Error::domain(format!("GB2 density needs y > 0, got {y}")));
    }
    if !(a.is_finite() && a != 0.0) {
        return Err(Error::domain(format!("GB2 a must be finite and non-zero, got {a}")));
    }
    positive("GB2 scale", b)?;
    positive("GB2 p", p)?;
    positive("GB2 q", q)?;
    let t = a * (y / b).ln();
    Ok(a.abs().ln() + (a * p - 1.0) * y.ln() - a * p * b.ln() - ln_beta(p, q) - (p + q) * softplus(t))
}

pub fn pdf_gb2(y: f64, a: f64, b: f64, p: f64, q: f64) -> Result<f64> {
    ln_pdf_gb2(y, a, b, p, q).map(f64::exp)
}

pub fn ln_pdf_gamma(x: f64, shape: f64, rate: f64) -> Result<f64> {
    positive("gamma shape", shape)?;
    positive("gamma rate", rate)?;
    if x <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(shape * rate.ln() + (shape - 1.0) * x.ln() - rate * x - ln_gamma(shape))
}

pub fn ln_pdf_inverse_gamma(x: f64, shape: f64, scale: f64) -> Result<f64> {
    positive("inverse-gamma shape", shape)?;
    positive("inverse-gamma scale", scale)?;
    if x <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(shape * scale.ln() - (shape + 1.0) * x.ln() - scale / x - ln_gamma(shape))
}

pub fn ln_pdf_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    positive("beta a", a)?;
    positive("beta b", b)?;
    if x <= 0.0 || x >= 1.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok((a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - ln_beta(a, b))
}

pub fn ln_pmf_poisson(y: u64, mean: f64) -> Result<f64> {
    nonnegative("poisson mean", mean)?;
    if mean == 0.0 {
        return Ok(if y == 0 { 0.0 } else { f64::NEG_INFINITY });
    }
    Ok(y as f64 * mean.ln() - mean - ln_factorial(y))
}
