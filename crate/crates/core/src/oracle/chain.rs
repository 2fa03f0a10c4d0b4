//! Nested quadrature over a chain of multiplicative beta transitions.
//!
//! The chain is `phi_0 ~ Gamma(a0, b0)` followed by `phi_s = phi_{s-1} * f_s`
//! with `f_s = B_s / c_s`, `B_s ~ Beta(a_s, b_s)`, and a likelihood factor
//! `phi_s^{p_s} exp(-r_s phi_s)` per step. Conditional on the innovations the
//! integral over `phi_0` is a gamma function, so only the innovations are
//! integrated numerically. The monomial powers are moved into the Jacobi weight
//! functions, which leaves a smooth integrand `(b0 + S)^{-(A + 1)}`.

use std::collections::BTreeMap;

use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use super::gauss::jacobi01;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Move {
    Stay,
    Scale(f64),
    Beta { a: f64, b: f64, c: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Step {
    pub mv: Move,
    pub p: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Chain {
    pub a0: f64,
    pub b0: f64,
    pub steps: Vec<Step>,
}

enum Factor {
    Fixed(f64),
    Nodes { x: Vec<f64>, lnw: Vec<f64> },
}

struct Level {
    factor: Factor,
    r: f64,
}

struct Prepared {
    /// `A + 1`, the shape of `phi_0` given the innovations.
    shape: f64,
    ln_const: f64,
    levels: Vec<Level>,
}

/// Streaming log-sum-exp.
#[derive(Default)]
struct Lse {
    max: f64,
    sum: f64,
    started: bool,
}

impl Lse {
    fn push(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if !self.started {
            self.max = x;
            self.sum = 1.0;
            self.started = true;
        } else if x > self.max {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        } else {
            self.sum += (x - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        if self.started {
            self.max + self.sum.ln()
        } else {
            f64::NEG_INFINITY
        }
    }
}

fn walk<F: FnMut(f64, f64, f64)>(levels: &[Level], m: f64, s: f64, lw: f64, f: &mut F) {
    let Some((head, rest)) = levels.split_first() else {
        f(lw, s, m);
        return;
    };
    match &head.factor {
        Factor::Fixed(g) => {
            let m2 = m * g;
            walk(rest, m2, s + head.r * m2, lw, f);
        }
        Factor::Nodes { x, lnw } => {
            for (xi, wi) in x.iter().zip(lnw) {
                let m2 = m * xi;
                walk(rest, m2, s + head.r * m2, lw + wi, f);
            }
        }
    }
}

/// Gamma mixture `sum_j w_j Gamma(shape, rate_j)` for the last state.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Mixture {
    pub shape: f64,
    pub components: Vec<(f64, f64)>,
}

/// Work budget on the number of quadrature points per integral.
const MAX_POINTS: f64 = 4.0e7;

impl Chain {
    pub fn total_power(&self) -> f64 {
        self.steps.iter().map(|s| s.p).sum()
    }

    fn beta_levels(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s.mv, Move::Beta { .. })).count()
    }

    /// `None` when the `k`-th moment of the last state is infinite.
    fn prepare(&self, k: f64, n: usize) -> Result<Option<Prepared>> {
        let big_a = self.a0 - 1.0 + self.total_power() + k;
        if big_a <= -1.0 {
            return Ok(None);
        }
        let mut ln_const = self.a0 * self.b0.ln() - ln_gamma(self.a0) + ln_gamma(big_a + 1.0);
        let mut levels = Vec::with_capacity(self.steps.len());
        let mut suffix = self.total_power() + k;
        for step in &self.steps {
            let factor = match step.mv {
                Move::Stay => Factor::Fixed(1.0),
                Move::Scale(c) => {
                    ln_const -= suffix * c.ln();
                    Factor::Fixed(1.0 / c)
                }
                Move::Beta { a, b, c } => {
                    let u = a - 1.0 + suffix;
                    if u <= -1.0 {
                        return Ok(None);
                    }
                    let rule = jacobi01(n, u, b - 1.0)?;
                    ln_const += rule.ln_mass - ln_beta(a, b) - suffix * c.ln();
                    Factor::Nodes {
                        x: rule.nodes.iter().map(|x| x / c).collect(),
                        lnw: rule.weights.iter().map(|w| w.ln()).collect(),
                    }
                }
            };
            levels.push(Level { factor, r: step.r });
            suffix -= step.p;
        }
        Ok(Some(Prepared { shape: big_a + 1.0, ln_const, levels }))
    }

    fn check_budget(&self, n: usize) -> Result<()> {
        let points = (n as f64).powi(self.beta_levels() as i32);
        if points > MAX_POINTS {
            return Err(Error::numeric(format!(
                "quadrature needs {points:.3e} points ({n} nodes over {} transitions)",
                self.beta_levels()
            )));
        }
        Ok(())
    }

    /// `ln E[phi_T^k * likelihood]` with `n` nodes per innovation, under the
    /// normalized prior and transition densities.
    pub fn ln_integral(&self, k: f64, n: usize) -> Result<Option<f64>> {
        self.check_budget(n)?;
        let Some(prep) = self.prepare(k, n)? else {
            return Ok(None);
        };
        let mut lse = Lse::default();
        let b0 = self.b0;
        let s1 = prep.shape;
        walk(&prep.levels, 1.0, 0.0, 0.0, &mut |lw, s, _| lse.push(lw - s1 * (b0 + s).ln()));
        Ok(Some(prep.ln_const + lse.value()))
    }

    /// Posterior of the last state as a gamma mixture, with component rates
    /// merged on a fine logarithmic grid.
    pub fn mixture(&self, n: usize) -> Result<Mixture> {
        self.check_budget(n)?;
        let prep = self.prepare(0.0, n)?.expect("zeroth moment always exists");
        let b0 = self.b0;
        let s1 = prep.shape;
        let mut lse = Lse::default();
        walk(&prep.levels, 1.0, 0.0, 0.0, &mut |lw, s, _| lse.push(lw - s1 * (b0 + s).ln()));
        let total = lse.value();
        let mut bins: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
        walk(&prep.levels, 1.0, 0.0, 0.0, &mut |lw, s, m| {
            let w = (lw - s1 * (b0 + s).ln() - total).exp();
            let ln_rate = (b0 + s).ln() - m.ln();
            let e = bins.entry((ln_rate * 512.0).floor() as i64).or_insert((0.0, 0.0));
            e.0 += w;
            e.1 += w * ln_rate;
        });
        let components = bins
            .into_values()
            .filter(|(w, _)| *w > 0.0)
            .map(|(w, wl)| (w, (wl / w).exp()))
            .collect();
        Ok(Mixture { shape: s1, components })
    }

    /// [`Self::ln_integral`] refined until two node counts agree to `rel_tol`.
    pub fn ln_integral_converged(&self, k: f64, n: usize, max_n: usize, rel_tol: f64) -> Result<Option<f64>> {
        if self.beta_levels() == 0 {
            return self.ln_integral(k, 1);
        }
        let mut n = n.max(2);
        let Some(mut prev) = self.ln_integral(k, n)? else {
            return Ok(None);
        };
        loop {
            let next_n = n + n / 2;
            if next_n > max_n {
                return Err(Error::numeric(format!(
                    "quadrature not converged at {n} nodes (moment {k})"
                )));
            }
            let next = self.ln_integral(k, next_n)?.expect("existence does not depend on n");
            if (next - prev).abs() <= rel_tol {
                return Ok(Some(next));
            }
            prev = next;
            n = next_n;
        }
    }
}
