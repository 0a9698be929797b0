//! Damped least squares (Levenberg-Marquardt) and fit summaries.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Result, SipmError};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Stop when the relative cost decrease falls below this.
    pub ftol: f64,
    /// Stop when every step component is below `xtol * (|x| + xtol)`.
    pub xtol: f64,
    /// Box constraints enforced by projection.
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions { max_iter: 500, ftol: 1e-15, xtol: 1e-13, bounds: None }
    }
}

#[derive(Debug, Clone)]
pub struct LmSolution {
    pub x: Vec<f64>,
    /// Sum of squared residuals at `x`.
    pub cost: f64,
    pub jacobian: DMatrix<f64>,
    pub iterations: usize,
    pub n_residuals: usize,
}

fn project(x: &mut [f64], bounds: &Option<Vec<(f64, f64)>>) {
    if let Some(b) = bounds {
        for (v, &(lo, hi)) in x.iter_mut().zip(b) {
            *v = v.clamp(lo, hi);
        }
    }
}

/// Central-difference Jacobian of `f` at `x`.
pub fn jacobian<F>(f: &F, x: &[f64], m: usize) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    bounded_jacobian(f, x, m, &None)
}

/// As [`jacobian`], switching to one-sided differences at active bounds.
fn bounded_jacobian<F>(f: &F, x: &[f64], m: usize, bounds: &Option<Vec<(f64, f64)>>) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut jac = DMatrix::zeros(m, x.len());
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let h = 1e-6 * x[j].abs().max(1e-3);
        let (lo, hi) = bounds.as_ref().map_or((f64::NEG_INFINITY, f64::INFINITY), |b| b[j]);
        let up = if x[j] + h <= hi { x[j] + h } else { x[j] };
        let down = if x[j] - h >= lo { x[j] - h } else { x[j] };
        xp[j] = up;
        let fp = f(&xp);
        xp[j] = down;
        let fm = f(&xp);
        xp[j] = x[j];
        if fp.len() != m || fm.len() != m {
            return Err(SipmError::LengthMismatch("residual length changed between calls".into()));
        }
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (up - down);
        }
    }
    Ok(jac)
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Minimizes `sum f(x)_i^2` from `x0`. Residuals should already be divided
/// by their standard errors.
pub fn levenberg_marquardt<F>(f: F, x0: &[f64], opts: &LmOptions) -> Result<LmSolution>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut x = x0.to_vec();
    project(&mut x, &opts.bounds);
    let mut r = f(&x);
    let m = r.len();
    if m < x.len() {
        return Err(SipmError::InsufficientPoints(format!("{m} residuals for {} parameters", x.len())));
    }
    let mut cost = sum_sq(&r);
    if !cost.is_finite() {
        return Err(SipmError::NonConvergence("non-finite residuals at the starting point".into()));
    }
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut jac = bounded_jacobian(&f, &x, m, &opts.bounds)?;
    while iterations < opts.max_iter {
        iterations += 1;
        if cost == 0.0 {
            break;
        }
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * DVector::from_column_slice(&r);
        let mut improved = false;
        let mut converged = false;
        for _ in 0..60 {
            let mut a = jtj.clone();
            for d in 0..x.len() {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&g));
            let mut xn: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            project(&mut xn, &opts.bounds);
            let rn = f(&xn);
            let cn = sum_sq(&rn);
            if cn.is_finite() && cn <= cost {
                let small_step = xn.iter().zip(&x).all(|(a, b)| (a - b).abs() <= opts.xtol * (b.abs() + opts.xtol));
                let small_gain = cost - cn <= opts.ftol * cost;
                x = xn;
                r = rn;
                cost = cn;
                lambda = (lambda / 3.0).max(1e-15);
                improved = true;
                converged = small_step || small_gain;
                break;
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                break;
            }
        }
        if improved {
            jac = bounded_jacobian(&f, &x, m, &opts.bounds)?;
        }
        if !improved || converged {
            break;
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SipmError::NonConvergence("parameters diverged".into()));
    }
    if iterations >= opts.max_iter {
        log::debug!("least squares stopped at the iteration limit ({})", opts.max_iter);
    }
    Ok(LmSolution { x, cost, jacobian: jac, iterations, n_residuals: m })
}

/// How confidence intervals are derived from the linearized covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorModel {
    /// Residual weights are true standard errors; normal quantile.
    Known,
    /// Covariance rescaled so that the reduced chi-square is 1; Student-t
    /// quantile.
    ScaleToUnitChi2,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Parameter names in fit order.
    pub names: Vec<String>,
    pub params: BTreeMap<String, f64>,
    pub stderr: BTreeMap<String, f64>,
    pub ci95: BTreeMap<String, (f64, f64)>,
    pub chi2: f64,
    pub dof: usize,
    pub chi2_nu: f64,
    /// Row-major covariance in `names` order. Rows and columns of
    /// unconstrained parameters are NaN.
    pub covariance: Vec<Vec<f64>>,
    /// Parameters the data cannot determine.
    #[serde(default)]
    pub unconstrained: Vec<String>,
}

impl FitResult {
    pub fn value(&self, name: &str) -> f64 {
        self.params.get(name).copied().unwrap_or(f64::NAN)
    }

    pub fn error(&self, name: &str) -> f64 {
        self.stderr.get(name).copied().unwrap_or(f64::NAN)
    }

    pub fn ci(&self, name: &str) -> (f64, f64) {
        self.ci95.get(name).copied().unwrap_or((f64::NAN, f64::NAN))
    }

    pub fn covers(&self, name: &str, truth: f64) -> bool {
        let (lo, hi) = self.ci(name);
        lo <= truth && truth <= hi
    }

    pub fn is_constrained(&self, name: &str) -> bool {
        !self.unconstrained.iter().any(|n| n == name)
    }

    /// Adds a derived scalar (e.g. a mean of fitted parameters).
    pub fn insert_derived(&mut self, name: &str, value: f64, stderr: f64, q: f64) {
        self.names.push(name.to_string());
        self.params.insert(name.to_string(), value);
        self.stderr.insert(name.to_string(), stderr);
        self.ci95.insert(name.to_string(), (value - q * stderr, value + q * stderr));
        for row in self.covariance.iter_mut() {
            row.push(f64::NAN);
        }
        let n = self.names.len();
        let mut row = vec![f64::NAN; n];
        row[n - 1] = stderr * stderr;
        self.covariance.push(row);
    }

    /// Builds the summary from a converged solution.
    pub fn from_solution(names: &[&str], sol: &LmSolution, model: ErrorModel) -> Result<Self> {
        let p = sol.x.len();
        let dof = sol.n_residuals.saturating_sub(p);
        let chi2 = sol.cost;
        let chi2_nu = if dof > 0 { chi2 / dof as f64 } else { 0.0 };

        let norms: Vec<f64> = (0..p).map(|j| sol.jacobian.column(j).norm()).collect();
        let scale = norms.iter().cloned().fold(0.0, f64::max);
        let free: Vec<usize> = (0..p).filter(|&j| norms[j] > 1e-9 * scale.max(1e-300)).collect();

        let mut cov = vec![vec![f64::NAN; p]; p];
        if !free.is_empty() {
            let jf = sol.jacobian.select_columns(&free);
            let jtj = jf.transpose() * &jf;
            let inv = jtj.try_inverse().ok_or_else(|| SipmError::Degenerate("singular normal matrix".into()))?;
            let s = if model == ErrorModel::ScaleToUnitChi2 && dof > 0 { chi2_nu } else { 1.0 };
            for (a, &i) in free.iter().enumerate() {
                for (b, &j) in free.iter().enumerate() {
                    cov[i][j] = inv[(a, b)] * s;
                }
            }
        }
        let q = match model {
            ErrorModel::Known => Z95,
            ErrorModel::ScaleToUnitChi2 => t_quantile_975(dof),
        };

        let mut res = FitResult {
            names: names.iter().map(|s| s.to_string()).collect(),
            params: BTreeMap::new(),
            stderr: BTreeMap::new(),
            ci95: BTreeMap::new(),
            chi2,
            dof,
            chi2_nu,
            covariance: cov.clone(),
            unconstrained: Vec::new(),
        };
        for j in 0..p {
            let name = names[j].to_string();
            if free.contains(&j) {
                let se = cov[j][j].max(0.0).sqrt();
                res.params.insert(name.clone(), sol.x[j]);
                res.stderr.insert(name.clone(), se);
                res.ci95.insert(name, (sol.x[j] - q * se, sol.x[j] + q * se));
            } else {
                res.params.insert(name.clone(), f64::NAN);
                res.stderr.insert(name.clone(), f64::INFINITY);
                res.ci95.insert(name.clone(), (f64::NEG_INFINITY, f64::INFINITY));
                res.unconstrained.push(name);
            }
        }
        Ok(res)
    }
}

/// Two-sided 95% Student-t quantile, normal for large or zero dof.
pub fn t_quantile_975(dof: usize) -> f64 {
    if dof == 0 || dof > 100_000 {
        return Z95;
    }
    StudentsT::new(0.0, 1.0, dof as f64).map(|t| t.inverse_cdf(0.975)).unwrap_or(Z95)
}

/// Weighted straight line `y = slope x + intercept`.
pub fn fit_line(x: &[f64], y: &[f64], err: &[f64]) -> Result<FitResult> {
    if x.len() != y.len() || x.len() != err.len() {
        return Err(SipmError::LengthMismatch("x, y and err must have equal length".into()));
    }
    if x.len() < 2 {
        return Err(SipmError::InsufficientPoints("a line needs at least 2 points".into()));
    }
    if err.iter().any(|&e| !(e > 0.0)) {
        return Err(SipmError::Degenerate("errors must be positive".into()));
    }
    let sol = levenberg_marquardt(
        |p: &[f64]| x.iter().zip(y).zip(err).map(|((&xi, &yi), &e)| (p[0] * xi + p[1] - yi) / e).collect(),
        &[0.0, y.iter().sum::<f64>() / y.len() as f64],
        &LmOptions::default(),
    )?;
    FitResult::from_solution(&["slope", "intercept"], &sol, ErrorModel::Known)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exponential_exactly() {
        let t: Vec<f64> = (0..30).map(|i| i as f64 * 0.3).collect();
        let y: Vec<f64> = t.iter().map(|&t| 2.5 * (-t / 1.7).exp() + 0.3).collect();
        let sol = levenberg_marquardt(
            |p: &[f64]| t.iter().zip(&y).map(|(&t, &y)| p[0] * (-t / p[1]).exp() + p[2] - y).collect(),
            &[1.0, 1.0, 0.0],
            &LmOptions::default(),
        )
        .unwrap();
        assert!((sol.x[0] - 2.5).abs() < 1e-9);
        assert!((sol.x[1] - 1.7).abs() < 1e-9);
        assert!((sol.x[2] - 0.3).abs() < 1e-9);
    }

    #[test]
    fn line_fit_errors_match_closed_form() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.1, 4.9, 7.0];
        let e = [0.1; 4];
        let r = fit_line(&x, &y, &e).unwrap();
        // Closed-form weighted regression slope variance: 1 / sum((x - xbar)^2 / e^2).
        let sxx: f64 = x.iter().map(|v| (v - 1.5f64).powi(2) / 0.01).sum();
        assert!((r.error("slope") - (1.0 / sxx).sqrt()).abs() < 1e-6);
        assert!(r.covers("slope", r.value("slope")));
        assert_eq!(r.dof, 2);
    }

    #[test]
    fn flat_direction_reported_unconstrained() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let sol = levenberg_marquardt(
            |p: &[f64]| x.iter().map(|&xi| p[0] + 0.0 * p[1] * xi - 1.0).collect(),
            &[0.0, 3.0],
            &LmOptions::default(),
        )
        .unwrap();
        let r = FitResult::from_solution(&["c", "ghost"], &sol, ErrorModel::Known).unwrap();
        assert!(!r.is_constrained("ghost"));
        assert!(r.value("ghost").is_nan());
        assert!((r.value("c") - 1.0).abs() < 1e-12);
    }

    #[test]
    fn t_quantiles() {
        assert!((t_quantile_975(1) - 12.706).abs() < 1e-3);
        assert!((t_quantile_975(10) - 2.228).abs() < 1e-3);
        assert_eq!(t_quantile_975(0), Z95);
    }
}
