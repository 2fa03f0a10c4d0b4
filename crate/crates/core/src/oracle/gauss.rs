//! Gauss–Jacobi rules from the Golub–Welsch eigenvalue method.

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::function::beta::ln_beta;

use crate::error::{Error, Result};

/// Nodes with normalized weights (summing to one) and the log of the total
/// mass of the weight function.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub ln_mass: f64,
}

fn golub_welsch(diag: &[f64], off: &[f64]) -> Rule {
    let n = diag.len();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = diag[i];
        if i + 1 < n {
            m[(i, i + 1)] = off[i];
            m[(i + 1, i)] = off[i];
        }
    }
    let eig = SymmetricEigen::new(m);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|j| (eig.eigenvalues[j], eig.eigenvectors[(0, j)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1 / total).collect(),
        ln_mass: 0.0,
    }
}

/// Rule for the weight `x^u (1 - x)^v` on `[0, 1]`, `u, v > -1`.
pub fn jacobi01(n: usize, u: f64, v: f64) -> Result<Rule> {
    if n == 0 || !(u > -1.0 && v > -1.0) || !u.is_finite() || !v.is_finite() {
        return Err(Error::domain(format!("Jacobi rule needs n >= 1 and exponents > -1, got ({u}, {v})")));
    }
    // Monic recurrence on [-1, 1] for (1 - x)^a (1 + x)^b.
    let (a, b) = (v, u);
    let ab = a + b;
    let mut diag = Vec::with_capacity(n);
    let mut off = Vec::with_capacity(n.saturating_sub(1));
    for k in 0..n {
        let kf = k as f64;
        diag.push(if k == 0 {
            (b - a) / (ab + 2.0)
        } else {
            (b * b - a * a) / ((2.0 * kf + ab) * (2.0 * kf + ab + 2.0))
        });
        if k + 1 < n {
            let j = kf + 1.0;
            let s = 2.0 * j + ab;
            let b2 = if k == 0 {
                4.0 * (1.0 + a) * (1.0 + b) / ((2.0 + ab).powi(2) * (3.0 + ab))
            } else {
                4.0 * j * (j + a) * (j + b) * (j + ab) / (s * s * (s + 1.0) * (s - 1.0))
            };
            off.push(b2.sqrt());
        }
    }
    let mut rule = golub_welsch(&diag, &off);
    for x in rule.nodes.iter_mut() {
        *x = ((1.0 + *x) / 2.0).clamp(f64::MIN_POSITIVE, 1.0);
    }
    rule.ln_mass = ln_beta(u + 1.0, v + 1.0);
    Ok(rule)
}
