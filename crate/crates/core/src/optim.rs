//! Unconstrained minimizers: Nelder–Mead simplex search and BFGS with
//! central-difference gradients.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplexConfig {
    pub max_iter: usize,
    /// Spread of objective values across the simplex, relative to `1 + |f|`.
    pub f_tol: f64,
    /// Largest vertex distance from the best vertex (max norm).
    pub x_tol: f64,
    pub initial_step: f64,
}

impl Default for SimplexConfig {
    fn default() -> Self {
        SimplexConfig { max_iter: 5000, f_tol: 1e-12, x_tol: 1e-8, initial_step: 0.5 }
    }
}

fn eval<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], count: &mut usize) -> f64 {
    *count += 1;
    let v = f(x);
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(a, b)| a + t * (b - a)).collect()
}

/// Nelder–Mead with standard coefficients. Non-finite objective values are
/// treated as `+inf`, so infeasible points are simply rejected.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], cfg: &SimplexConfig) -> Minimum {
    let n = x0.len();
    let mut evaluations = 0;
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(&mut f, x0, &mut evaluations);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += cfg.initial_step;
        let v = eval(&mut f, &x, &mut evaluations);
        simplex.push((x, v));
    }
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let size = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if worst.is_finite() && (worst - best) <= cfg.f_tol * (1.0 + best.abs()) && size <= cfg.x_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64).collect();
        let xr = lerp(&centroid, &simplex[n].0, -1.0);
        let fr = eval(&mut f, &xr, &mut evaluations);
        if fr < simplex[0].1 {
            let xe = lerp(&centroid, &simplex[n].0, -2.0);
            let fe = eval(&mut f, &xe, &mut evaluations);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let xc = if fr < simplex[n].1 {
            lerp(&centroid, &xr, 0.5)
        } else {
            lerp(&centroid, &simplex[n].0, 0.5)
        };
        let fc = eval(&mut f, &xc, &mut evaluations);
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        let x_best = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            v.0 = lerp(&x_best, &v.0, 0.5);
            v.1 = eval(&mut f, &v.0, &mut evaluations);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fv) = simplex.swap_remove(0);
    Minimum { x, f: fv, iterations, evaluations, converged }
}

/// Central-difference gradient with relative steps.
pub fn gradient<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], rel_step: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = rel_step * (1.0 + x[i].abs());
            xp[i] = x[i] + h;
            let up = f(&xp);
            xp[i] = x[i] - h;
            let down = f(&xp);
            xp[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BfgsConfig {
    pub max_iter: usize,
    /// Stop once the largest gradient component is below this.
    pub grad_tol: f64,
    pub diff_step: f64,
}

impl Default for BfgsConfig {
    fn default() -> Self {
        BfgsConfig { max_iter: 200, grad_tol: 1e-7, diff_step: 1e-5 }
    }
}

fn amax(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Quasi-Newton refinement with a backtracking Armijo line search.
pub fn bfgs<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], cfg: &BfgsConfig) -> Minimum {
    let n = x0.len();
    let mut evaluations = 0;
    let mut x = x0.to_vec();
    let mut fx = eval(&mut f, &x, &mut evaluations);
    let mut g = gradient(&mut f, &x, cfg.diff_step);
    evaluations += 2 * n;
    let mut h: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let mut iterations = 0;
    let mut converged = amax(&g) <= cfg.grad_tol;
    while !converged && iterations < cfg.max_iter {
        iterations += 1;
        let mut d: Vec<f64> = (0..n).map(|i| -(0..n).map(|j| h[i][j] * g[j]).sum::<f64>()).collect();
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            // not a descent direction: reset to steepest descent
            for (i, row) in h.iter_mut().enumerate() {
                row.iter_mut().enumerate().for_each(|(j, v)| *v = if i == j { 1.0 } else { 0.0 });
            }
            d = g.iter().map(|v| -v).collect();
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let fnew = eval(&mut f, &xn, &mut evaluations);
            if fnew <= fx + 1e-4 * t * slope {
                accepted = Some((xn, fnew));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            break;
        };
        let gn = gradient(&mut f, &xn, cfg.diff_step);
        evaluations += 2 * n;
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-14 {
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i][j] * y[j]).sum()).collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    h[i][j] += (sy + yhy) * s[i] * s[j] / (sy * sy) - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
        }
        x = xn;
        fx = fnew;
        g = gn;
        converged = amax(&g) <= cfg.grad_tol;
    }
    Minimum { x, f: fx, iterations, evaluations, converged }
}
