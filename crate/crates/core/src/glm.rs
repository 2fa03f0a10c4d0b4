//! Log-link GLMs for the a priori rates: Poisson counts and gamma average
//! severities, fitted by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::history::PolicyHistory;

/// Name of the claim-count column added to the severity design.
pub const COUNT_COLUMN: &str = "count";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Cluster index per row (for example the policy), used for robust standard errors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<Vec<usize>>,
}

impl DesignMatrix {
    pub fn new(names: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.len() != names.len() {
                return Err(Error::domain(format!("design row {i} has {} entries, expected {}", r.len(), names.len())));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::domain(format!("design row {i} has a non-finite entry")));
            }
        }
        Ok(DesignMatrix { names, rows, clusters: None })
    }

    pub fn with_clusters(mut self, clusters: Vec<usize>) -> Result<Self> {
        if clusters.len() != self.n() {
            return Err(Error::domain("cluster labels do not match the design"));
        }
        self.clusters = Some(clusters);
        Ok(self)
    }

    fn subset(&self, keep: &[usize]) -> DesignMatrix {
        DesignMatrix {
            names: self.names.clone(),
            rows: keep.iter().map(|&i| self.rows[i].clone()).collect(),
            clusters: self.clusters.as_ref().map(|c| keep.iter().map(|&i| c[i]).collect()),
        }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn p(&self) -> usize {
        self.names.len()
    }

    pub fn with_column(&self, name: &str, values: &[f64]) -> Result<DesignMatrix> {
        if values.len() != self.n() {
            return Err(Error::domain("new column length does not match the design"));
        }
        let mut names = self.names.clone();
        names.push(name.to_string());
        let rows = self
            .rows
            .iter()
            .zip(values)
            .map(|(r, v)| {
                let mut r = r.clone();
                r.push(*v);
                r
            })
            .collect();
        Ok(DesignMatrix { clusters: self.clusters.clone(), ..DesignMatrix::new(names, rows)? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrlsConfig {
    pub max_iter: usize,
    /// Convergence threshold on the largest coefficient change.
    pub tol: f64,
}

impl Default for IrlsConfig {
    fn default() -> Self {
        IrlsConfig { max_iter: 100, tol: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub p_values: Vec<f64>,
    /// Cluster-robust (sandwich) standard errors, when the design carries clusters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robust_std_errors: Option<Vec<f64>>,
    pub dispersion: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest absolute score component at the returned estimate.
    pub max_score: f64,
    pub n: usize,
}

impl GlmFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coefficients[i])
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.std_errors[i])
    }

    pub fn robust_std_error(&self, name: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == name)?;
        self.robust_std_errors.as_ref().map(|s| s[i])
    }

    /// Regression coefficients without the claim-count column.
    pub fn covariate_coefficients(&self) -> Vec<f64> {
        self.names
            .iter()
            .zip(&self.coefficients)
            .filter(|(n, _)| n.as_str() != COUNT_COLUMN)
            .map(|(_, c)| *c)
            .collect()
    }
}

#[derive(Clone, Copy)]
enum Family {
    Poisson,
    Gamma,
}

/// Rows in a canonical order so that the fit does not depend on input order.
fn canonical_order(x: &DesignMatrix, y: &[f64], w: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.n()).collect();
    idx.sort_by(|&a, &b| {
        x.rows[a]
            .iter()
            .zip(&x.rows[b])
            .map(|(u, v)| u.total_cmp(v))
            .chain([y[a].total_cmp(&y[b]), w[a].total_cmp(&w[b])])
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    idx
}

fn check_rank(xm: &DMatrix<f64>) -> Result<()> {
    let sv = xm.singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(max > 0.0) || min <= max * 1e-10 {
        return Err(Error::data(format!(
            "design matrix is rank deficient (singular values {min:.3e} .. {max:.3e})"
        )));
    }
    Ok(())
}

fn irls(x: &DesignMatrix, y: &[f64], prior_w: &[f64], family: Family, cfg: &IrlsConfig) -> Result<GlmFit> {
    let n = x.n();
    let p = x.p();
    if n < p || p == 0 {
        return Err(Error::data(format!("{n} observations cannot identify {p} coefficients")));
    }
    let order = canonical_order(x, y, prior_w);
    let xm = DMatrix::from_fn(n, p, |i, j| x.rows[order[i]][j]);
    let yv: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let wv: Vec<f64> = order.iter().map(|&i| prior_w[i]).collect();
    check_rank(&xm)?;

    // Start from the weighted mean response on a constant linear predictor,
    // solved as a least-squares problem so that designs without an intercept work.
    let ybar = yv.iter().zip(&wv).map(|(a, b)| a * b).sum::<f64>() / wv.iter().sum::<f64>();
    if !(ybar > 0.0) {
        return Err(Error::data("response has no positive values"));
    }
    let target = DVector::from_element(n, ybar.ln());
    let mut beta = xm
        .clone()
        .svd(true, true)
        .solve(&target, 1e-12)
        .map_err(|e| Error::numeric(e.to_string()))?;

    let mut converged = false;
    let mut iterations = 0;
    let mut info = DMatrix::zeros(p, p);
    for it in 1..=cfg.max_iter {
        iterations = it;
        let eta = &xm * &beta;
        let mut xtwx = DMatrix::zeros(p, p);
        let mut score = DVector::zeros(p);
        for i in 0..n {
            let mu = eta[i].exp();
            let (w, s) = match family {
                Family::Poisson => (wv[i] * mu, wv[i] * (yv[i] - mu)),
                Family::Gamma => (wv[i], wv[i] * (yv[i] - mu) / mu),
            };
            let row = xm.row(i);
            xtwx += w * row.transpose() * row;
            score += s * row.transpose();
        }
        let chol = xtwx
            .clone()
            .cholesky()
            .ok_or_else(|| Error::numeric("weighted normal equations are not positive definite"))?;
        let step = chol.solve(&score);
        beta += &step;
        info = xtwx;
        if step.amax() <= cfg.tol * (1.0 + beta.amax()) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::numeric(format!("IRLS did not converge in {} iterations", cfg.max_iter)));
    }

    let eta = &xm * &beta;
    let clusters: Option<Vec<usize>> = x.clusters.as_ref().map(|c| order.iter().map(|&i| c[i]).collect());
    let n_clusters = clusters.as_ref().map_or(0, |c| c.iter().max().map_or(0, |m| m + 1));
    let mut cluster_scores = vec![DVector::<f64>::zeros(p); n_clusters];
    let mut score = DVector::<f64>::zeros(p);
    let mut pearson = 0.0;
    for i in 0..n {
        let mu = eta[i].exp();
        let s = match family {
            Family::Poisson => wv[i] * (yv[i] - mu),
            Family::Gamma => wv[i] * (yv[i] - mu) / mu,
        };
        let contrib = s * xm.row(i).transpose();
        if let Some(c) = &clusters {
            cluster_scores[c[i]] += &contrib;
        }
        score += contrib;
        pearson += wv[i] * (yv[i] - mu).powi(2) / mu.powi(2);
    }
    let dispersion = match family {
        Family::Poisson => 1.0,
        Family::Gamma => {
            if n == p {
                return Err(Error::data("no residual degrees of freedom for the dispersion"));
            }
            pearson / (n - p) as f64
        }
    };
    let bread = info
        .cholesky()
        .ok_or_else(|| Error::numeric("information matrix is singular"))?
        .inverse();
    let cov = &bread * dispersion;
    let std_errors: Vec<f64> = (0..p).map(|j| cov[(j, j)].sqrt()).collect();
    // Sandwich with the usual G / (G - 1) small-sample factor; clusters summed in index order.
    let robust_std_errors = clusters.as_ref().and_then(|c| {
        let mut present = vec![false; n_clusters];
        c.iter().for_each(|&k| present[k] = true);
        let g = present.iter().filter(|&&b| b).count();
        if g < 2 {
            return None;
        }
        let mut meat = DMatrix::<f64>::zeros(p, p);
        for u in &cluster_scores {
            meat += u * u.transpose();
        }
        let v = &bread * meat * &bread * (g as f64 / (g - 1) as f64);
        Some((0..p).map(|j| v[(j, j)].sqrt()).collect())
    });
    let p_values = beta
        .iter()
        .zip(&std_errors)
        .map(|(b, s)| erfc((b / s).abs() / std::f64::consts::SQRT_2))
        .collect();
    Ok(GlmFit {
        names: x.names.clone(),
        coefficients: beta.iter().copied().collect(),
        std_errors,
        p_values,
        robust_std_errors,
        dispersion,
        iterations,
        converged,
        max_score: score.amax(),
        n,
    })
}

/// Poisson regression of claim counts with log link.
pub fn fit_poisson(x: &DesignMatrix, y: &[u64], cfg: &IrlsConfig) -> Result<GlmFit> {
    if y.len() != x.n() {
        return Err(Error::domain("response length does not match the design"));
    }
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    irls(x, &yf, &vec![1.0; y.len()], Family::Poisson, cfg)
}

/// Gamma regression of the average claim `total / count` with weight `count`,
/// on rows with at least one claim. With `with_count` the claim count enters
/// as an extra covariate named [`COUNT_COLUMN`]; the dispersion is the
/// Pearson estimate.
pub fn fit_gamma_severity(
    x: &DesignMatrix,
    counts: &[u64],
    totals: &[f64],
    with_count: bool,
    cfg: &IrlsConfig,
) -> Result<GlmFit> {
    if counts.len() != x.n() || totals.len() != x.n() {
        return Err(Error::domain("response length does not match the design"));
    }
    let keep: Vec<usize> = (0..x.n()).filter(|&i| counts[i] > 0).collect();
    if keep.is_empty() {
        return Err(Error::data("no rows with claims; severity regression is not identifiable"));
    }
    for &i in &keep {
        if !(totals[i] > 0.0 && totals[i].is_finite()) {
            return Err(Error::data(format!("row {i}: claims with non-positive total {}", totals[i])));
        }
    }
    let sub = x.subset(&keep);
    let w: Vec<f64> = keep.iter().map(|&i| counts[i] as f64).collect();
    let y: Vec<f64> = keep.iter().map(|&i| totals[i] / counts[i] as f64).collect();
    let design = if with_count { sub.with_column(COUNT_COLUMN, &w)? } else { sub };
    irls(&design, &y, &w, Family::Gamma, cfg)
}

/// First-step estimates used by every benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmEstimates {
    pub frequency: GlmFit,
    /// Severity fit with the claim count as a covariate.
    pub severity_dependent: GlmFit,
    /// Severity fit without the claim count (`eta = 0`).
    pub severity_independent: GlmFit,
}

impl GlmEstimates {
    pub fn eta(&self) -> f64 {
        self.severity_dependent.coefficient(COUNT_COLUMN).unwrap_or(0.0)
    }
}

/// Fit all first-step regressions on every period of the given policies.
/// Rows are clustered by policy for the robust standard errors.
pub fn fit_glms(names: &[String], policies: &[PolicyHistory], cfg: &IrlsConfig) -> Result<GlmEstimates> {
    let mut ids: Vec<&str> = policies.iter().map(|h| h.policy_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut rows = Vec::new();
    let (mut clusters, mut counts, mut totals) = (Vec::new(), Vec::new(), Vec::new());
    for h in policies {
        let k = ids.binary_search(&h.policy_id.as_str()).expect("id collected above");
        for p in &h.periods {
            rows.push(p.covariates.clone());
            clusters.push(k);
            counts.push(p.obs.count);
            totals.push(p.obs.total);
        }
    }
    let x = DesignMatrix::new(names.to_vec(), rows)?.with_clusters(clusters)?;
    Ok(GlmEstimates {
        frequency: fit_poisson(&x, &counts, cfg)?,
        severity_dependent: fit_gamma_severity(&x, &counts, &totals, true, cfg)?,
        severity_independent: fit_gamma_severity(&x, &counts, &totals, false, cfg)?,
    })
}
