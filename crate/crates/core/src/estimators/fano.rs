use serde::{Deserialize, Serialize};

use super::bootstrap::{self, Grouped};
use crate::error::{check_finite, invalid, Result, SipmError};
use crate::fit::{fit_line, levenberg_marquardt, ErrorModel, FitResult, LmOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FanoPoint {
    pub mean_x: f64,
    pub fano: f64,
    /// Bootstrap standard error of `fano`.
    pub fano_err: f64,
    pub gate_t: f64,
}

/// Minimum shots per intensity group.
pub const MIN_GROUP: usize = 1000;

/// Mean, Fano factor and bootstrap error for each intensity group.
pub fn fano_curve(groups: &[Vec<f64>], gate_t: f64, seed: u64) -> Result<Vec<FanoPoint>> {
    if groups.len() < 2 {
        return Err(SipmError::InsufficientPoints(format!("{} intensity groups, need >= 2", groups.len())));
    }
    let mut out = Vec::with_capacity(groups.len());
    for (gi, g) in groups.iter().enumerate() {
        if g.len() < MIN_GROUP {
            return Err(SipmError::InsufficientPoints(format!(
                "group {gi} has {} shots, need >= {MIN_GROUP}",
                g.len()
            )));
        }
        let grouped = Grouped::new(g, |v| v.to_bits());
        let (mean, var) = bootstrap::weighted_moments(&grouped.values, &grouped.counts);
        if !(mean.abs() > 0.0) {
            return Err(SipmError::Degenerate(format!("group {gi} has zero mean")));
        }
        let reps = bootstrap::replicate(
            &grouped,
            bootstrap::RESAMPLES,
            crate::par::derive_seed(seed, gate_t.to_bits(), gi as u64),
            |v, w| {
                let (m, s2) = bootstrap::weighted_moments(v, w);
                s2 / m
            },
        );
        out.push(FanoPoint { mean_x: mean, fano: var / mean, fano_err: bootstrap::std_dev(&reps), gate_t });
    }
    Ok(out)
}

/// Fano factor of coherent light through the detector.
pub fn fano_coherent_model(gamma: f64, eps: f64) -> f64 {
    gamma * (1.0 + 3.0 * eps) / (1.0 + eps)
}

fn check_points(points: &[FanoPoint]) -> Result<()> {
    if points.is_empty() {
        return Err(SipmError::EmptyInput("Fano points"));
    }
    if points.iter().any(|p| !(p.fano_err > 0.0) || !p.fano.is_finite() || !p.mean_x.is_finite()) {
        return Err(SipmError::Degenerate("Fano points need finite values and positive errors".into()));
    }
    Ok(())
}

/// Horizontal-line fit of the coherent Fano factor with `eps` as the only
/// parameter; the gain is fixed.
pub fn fit_fano_coherent(points: &[FanoPoint], gamma: f64) -> Result<FitResult> {
    check_points(points)?;
    check_finite("gamma", gamma)?;
    if gamma <= 0.0 {
        return Err(invalid("gamma", "must be > 0"));
    }
    let sol = levenberg_marquardt(
        |p: &[f64]| {
            let f = fano_coherent_model(gamma, p[0]);
            points.iter().map(|q| (f - q.fano) / q.fano_err).collect()
        },
        &[0.05],
        &LmOptions::default(),
    )?;
    let mut fit = FitResult::from_solution(&["eps"], &sol, ErrorModel::Known)?;
    let eps = fit.value("eps");
    if eps > -1e-9 && eps < 0.0 {
        fit.params.insert("eps".into(), 0.0);
    } else if !(0.0..1.0).contains(&eps) {
        return Err(SipmError::OutOfDomain { name: "eps", value: eps, domain: "[0, 1)" });
    }
    Ok(fit)
}

/// Diagnostic straight-line fit of Fano factor versus mean; the slope of
/// coherent data should be compatible with zero.
pub fn fano_slope(points: &[FanoPoint]) -> Result<FitResult> {
    check_points(points)?;
    let x: Vec<f64> = points.iter().map(|p| p.mean_x).collect();
    let y: Vec<f64> = points.iter().map(|p| p.fano).collect();
    let e: Vec<f64> = points.iter().map(|p| p.fano_err).collect();
    fit_line(&x, &y, &e)
}

/// Multimode-thermal Fano factor `(1/mu)(1 - x_dc/x)^2 x + gamma(1+3eps)/(1+eps)`.
pub fn fano_mth_model(mean_x: f64, mu: f64, x_dc: f64, gamma: f64, eps: f64) -> f64 {
    let r = if mean_x != 0.0 { 1.0 - x_dc / mean_x } else { 0.0 };
    r * r * mean_x / mu + fano_coherent_model(gamma, eps)
}

/// Dark-count contribution to the mean output for gate `gate_t` (ns).
pub fn x_dark(dcr_hz: f64, gate_t: f64, gamma: f64, eps: f64) -> f64 {
    gamma * (1.0 + eps) * dcr_hz * gate_t * 1e-9
}

/// Joint fit over several gates of a shared mode number `mu` and a dark
/// rate, with the dark term linear in the gate width. `eps_of_gate` gives
/// the fixed cross-talk probability of each gate. Errors are rescaled so
/// that the reduced chi-square is 1.
pub fn fit_fano_mth<E: Fn(f64) -> f64>(points: &[FanoPoint], gamma: f64, eps_of_gate: E) -> Result<FitResult> {
    check_points(points)?;
    check_finite("gamma", gamma)?;
    if gamma <= 0.0 {
        return Err(invalid("gamma", "must be > 0"));
    }
    let eps: Vec<f64> = points.iter().map(|p| eps_of_gate(p.gate_t)).collect();
    if let Some(&e) = eps.iter().find(|e| !(0.0..1.0).contains(*e)) {
        return Err(invalid("eps", format!("must be in [0, 1), got {e}")));
    }
    // Start from the large-mean slope, ignoring dark counts.
    let slope = fano_slope(points).map(|f| f.value("slope")).unwrap_or(1.0);
    let mu0 = if slope > 0.05 { (1.0 / slope).clamp(1.0, 100.0) } else { 10.0 };
    // The dark rate is fitted in kHz for conditioning.
    let resid = |p: &[f64]| -> Vec<f64> {
        points
            .iter()
            .zip(&eps)
            .map(|(q, &e)| {
                let xdc = x_dark(p[1] * 1e3, q.gate_t, gamma, e);
                (fano_mth_model(q.mean_x, p[0], xdc, gamma, e) - q.fano) / q.fano_err
            })
            .collect()
    };
    let opts = LmOptions { bounds: Some(vec![(1e-6, 1e9), (0.0, 1e9)]), ..Default::default() };
    let mut best = None;
    for dcr0 in [10.0, 100.0, 1000.0] {
        if let Ok(sol) = levenberg_marquardt(resid, &[mu0, dcr0], &opts) {
            if best.as_ref().is_none_or(|b: &crate::fit::LmSolution| sol.cost < b.cost) {
                best = Some(sol);
            }
        }
    }
    let sol = best.ok_or_else(|| SipmError::NonConvergence("thermal Fano fit".into()))?;
    let mut fit = FitResult::from_solution(&["mu", "dcr_khz"], &sol, ErrorModel::ScaleToUnitChi2)?;
    let mu = fit.value("mu");
    if !(mu >= 1.0) {
        return Err(SipmError::OutOfDomain { name: "mu", value: mu, domain: ">= 1" });
    }
    let q = crate::fit::t_quantile_975(fit.dof);
    let dcr = fit.value("dcr_khz") * 1e3;
    let dcr_err = fit.error("dcr_khz") * 1e3;
    fit.insert_derived("dcr_hz", dcr, dcr_err, q);
    let mut gates: Vec<f64> = points.iter().map(|p| p.gate_t).collect();
    gates.sort_by(f64::total_cmp);
    gates.dedup();
    for t in gates {
        let e = eps_of_gate(t);
        let scale = x_dark(1.0, t, gamma, e);
        fit.insert_derived(&format!("x_dc@{t}"), dcr * scale, dcr_err * scale, q);
    }
    Ok(fit)
}

/// Cross-talk probability versus gate width: the short-gate form
/// `eps0 + (tau/T) a (1 - e^(-T/tau))` for `T <= 150` ns and a line
/// `m T + q` (with `m` in Hz) for longer gates.
pub fn eps_short_model(t: f64, eps0: f64, a: f64, tau: f64) -> f64 {
    let x = t / tau;
    eps0 + a * -(-x).exp_m1() / x
}

pub const EPS_BREAKPOINT: f64 = 150.0;

/// Fits both regimes of `(T, eps, err)` points. Parameters: `eps0`, `a`,
/// `tau_xc` (short regime) and `m_hz`, `q` (long regime). When the short
/// data carry no delayed component `tau_xc` is reported as unconstrained.
pub fn fit_eps_vs_gate(points: &[(f64, f64, f64)]) -> Result<FitResult> {
    if points.iter().any(|&(t, e, s)| !(t > 0.0) || !e.is_finite() || !(s > 0.0)) {
        return Err(invalid("points", "need T > 0, finite eps and positive errors"));
    }
    let short: Vec<_> = points.iter().copied().filter(|p| p.0 <= EPS_BREAKPOINT).collect();
    let long: Vec<_> = points.iter().copied().filter(|p| p.0 > EPS_BREAKPOINT).collect();
    if short.len() < 4 || long.len() < 3 {
        return Err(SipmError::InsufficientPoints(format!(
            "{} short-gate and {} long-gate points (need >= 4 and >= 3)",
            short.len(),
            long.len()
        )));
    }

    let resid = |p: &[f64]| -> Vec<f64> {
        short.iter().map(|&(t, e, s)| (eps_short_model(t, p[0], p[1], p[2]) - e) / s).collect()
    };
    let e_min = short.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let e_max = short.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let opts = LmOptions { bounds: Some(vec![(-1.0, 1.0), (-1.0, 1.0), (1e-3, 1e6)]), ..Default::default() };
    let mut best: Option<crate::fit::LmSolution> = None;
    for tau0 in [5.0, 20.0, 50.0, 150.0, 500.0] {
        for a0 in [e_max - e_min, e_min - e_max] {
            if let Ok(sol) = levenberg_marquardt(resid, &[e_min, a0, tau0], &opts) {
                if best.as_ref().is_none_or(|b| sol.cost < b.cost) {
                    best = Some(sol);
                }
            }
        }
    }
    let sol = best.ok_or_else(|| SipmError::NonConvergence("short-gate cross-talk fit".into()))?;
    let mut fit = FitResult::from_solution(&["eps0", "a", "tau_xc"], &sol, ErrorModel::Known)?;
    if fit.value("a").abs() < 1e-12 && fit.is_constrained("tau_xc") {
        fit.params.insert("tau_xc".into(), f64::NAN);
        fit.stderr.insert("tau_xc".into(), f64::INFINITY);
        fit.ci95.insert("tau_xc".into(), (f64::NEG_INFINITY, f64::INFINITY));
        fit.unconstrained.push("tau_xc".into());
    }

    let x: Vec<f64> = long.iter().map(|p| p.0).collect();
    let y: Vec<f64> = long.iter().map(|p| p.1).collect();
    let e: Vec<f64> = long.iter().map(|p| p.2).collect();
    let line = fit_line(&x, &y, &e)?;
    fit.insert_derived("m_hz", line.value("slope") * 1e9, line.error("slope") * 1e9, crate::fit::Z95);
    fit.insert_derived("q", line.value("intercept"), line.error("intercept"), crate::fit::Z95);
    fit.chi2 += line.chi2;
    fit.dof += line.dof;
    fit.chi2_nu = if fit.dof > 0 { fit.chi2 / fit.dof as f64 } else { 0.0 };
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(f: impl Fn(f64) -> f64, gate_t: f64) -> Vec<FanoPoint> {
        (1..=8)
            .map(|i| {
                let m = 0.5 * i as f64;
                FanoPoint { mean_x: m, fano: f(m), fano_err: 0.01, gate_t }
            })
            .collect()
    }

    #[test]
    fn constant_data_has_zero_fano() {
        let g = vec![vec![2.0; 2000], vec![3.0; 2000]];
        let c = fano_curve(&g, 100.0, 1).unwrap();
        assert!(c.iter().all(|p| p.fano == 0.0));
        assert!(fano_curve(&g[..1], 100.0, 1).is_err());
        assert!(fano_curve(&[vec![0.0; 2000], vec![1.0; 2000]], 100.0, 1).is_err());
    }

    #[test]
    fn coherent_inversion() {
        let f = fit_fano_coherent(&pts(|_| 1.0916, 350.0), 1.0).unwrap();
        let oracle = (1.0916 - 1.0) / (3.0 - 1.0916);
        assert!((f.value("eps") - oracle).abs() < 1e-10);
        assert!((f.value("eps") - 0.0480).abs() < 1e-4);
        let f0 = fit_fano_coherent(&pts(|_| 1.0, 350.0), 1.0).unwrap();
        assert!(f0.value("eps").abs() < 1e-10);
        assert!(fit_fano_coherent(&pts(|_| 0.5, 350.0), 1.0).is_err());
    }

    #[test]
    fn thermal_intercept_property() {
        for &(mu, xdc, g, e) in &[(1.2234, 0.0563, 1.0, 0.048), (3.0, 0.2, 2.0, 0.01)] {
            let v = fano_mth_model(xdc, mu, xdc, g, e);
            assert!((v - fano_coherent_model(g, e)).abs() < 1e-15);
        }
    }

    #[test]
    fn thermal_exact_recovery() {
        let (mu, gamma) = (1.2234, 1.0);
        let eps = |t: f64| if t > 200.0 { 0.048 } else { 0.037 };
        let dcr = 0.0563 / (gamma * (1.0 + 0.048) * 350e-9);
        let mut all = Vec::new();
        for t in [50.0, 70.0, 100.0, 350.0] {
            let xdc = x_dark(dcr, t, gamma, eps(t));
            all.extend(pts(|m| fano_mth_model(m, mu, xdc, gamma, eps(t)), t));
        }
        let f = fit_fano_mth(&all, gamma, eps).unwrap();
        assert!((f.value("mu") / mu - 1.0).abs() < 1e-6);
        assert!((f.value("x_dc@350") / 0.0563 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn thermal_without_dark_counts() {
        let all = pts(|m| fano_mth_model(m, 2.0, 0.0, 1.0, 0.0), 100.0);
        let f = fit_fano_mth(&all, 1.0, |_| 0.0).unwrap();
        assert!((f.value("mu") - 2.0).abs() < 1e-6);
        assert!(f.value("dcr_hz").abs() < 1e-3);
    }

    #[test]
    fn eps_gate_exact_recovery() {
        let short: Vec<f64> = vec![10.0, 20.0, 35.0, 50.0, 70.0, 100.0, 125.0, 150.0];
        let long: Vec<f64> = vec![200.0, 250.0, 300.0, 350.0];
        let mut p: Vec<(f64, f64, f64)> =
            short.iter().map(|&t| (t, eps_short_model(t, 0.0219, 0.0004, 53.0), 1e-5)).collect();
        p.extend(long.iter().map(|&t| (t, 2.2e4 * t * 1e-9 + 0.0372, 1e-4)));
        let f = fit_eps_vs_gate(&p).unwrap();
        for (n, v) in [("eps0", 0.0219), ("a", 0.0004), ("tau_xc", 53.0), ("m_hz", 2.2e4), ("q", 0.0372)] {
            assert!((f.value(n) / v - 1.0).abs() < 1e-6, "{n} = {}", f.value(n));
        }
        let pred = f.value("m_hz") * 350e-9 + f.value("q");
        assert!((pred - 0.0449).abs() < 1e-4);
    }

    #[test]
    fn eps_gate_flat_short_regime() {
        let mut p: Vec<(f64, f64, f64)> = [10.0, 30.0, 60.0, 100.0, 150.0].iter().map(|&t| (t, 0.0219, 1e-4)).collect();
        p.extend([200.0, 300.0, 400.0].iter().map(|&t| (t, 0.03, 1e-4)));
        let f = fit_eps_vs_gate(&p).unwrap();
        assert!(!f.is_constrained("tau_xc"));
        assert!((f.value("eps0") - 0.0219).abs() < 1e-9);
        assert!(fit_eps_vs_gate(&p[..6]).is_err());
    }
}
