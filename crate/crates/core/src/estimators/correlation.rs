use serde::{Deserialize, Serialize};

use super::bootstrap::{self, Grouped};
use crate::error::{check_finite, invalid, Result, SipmError};
use crate::fit::{levenberg_marquardt, ErrorModel, FitResult, LmOptions};
use crate::sources::ShotCounts;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrPoint {
    /// Average of the two arm means.
    pub mean_k: f64,
    pub corr: f64,
    pub corr_err: f64,
    pub gate_t: f64,
}

pub const MIN_PAIRS: usize = 1000;

fn weighted_pearson(v: &[(u64, u64)], w: &[u64]) -> f64 {
    let n: f64 = w.iter().map(|&c| c as f64).sum();
    let (mut sa, mut sb) = (0.0, 0.0);
    for (&(a, b), &c) in v.iter().zip(w) {
        sa += a as f64 * c as f64;
        sb += b as f64 * c as f64;
    }
    let (ma, mb) = (sa / n, sb / n);
    let (mut caa, mut cbb, mut cab) = (0.0, 0.0, 0.0);
    for (&(a, b), &c) in v.iter().zip(w) {
        let (da, db) = (a as f64 - ma, b as f64 - mb);
        caa += da * da * c as f64;
        cbb += db * db * c as f64;
        cab += da * db * c as f64;
    }
    cab / (caa * cbb).sqrt()
}

/// Pearson correlation of two arms and its bootstrap standard error.
pub fn corr_coefficient(k1: &ShotCounts, k2: &ShotCounts, seed: u64) -> Result<(f64, f64)> {
    if k1.len() != k2.len() {
        return Err(SipmError::LengthMismatch(format!("arms have {} and {} shots", k1.len(), k2.len())));
    }
    if k1.len() < MIN_PAIRS {
        return Err(SipmError::InsufficientPoints(format!("{} shots, need >= {MIN_PAIRS}", k1.len())));
    }
    let pairs: Vec<(u64, u64)> = k1.counts.iter().copied().zip(k2.counts.iter().copied()).collect();
    let g = Grouped::new(&pairs, |p| *p);
    let corr = weighted_pearson(&g.values, &g.counts);
    if !corr.is_finite() {
        return Err(SipmError::Degenerate("an arm has zero variance".into()));
    }
    let reps = bootstrap::replicate(&g, bootstrap::RESAMPLES, seed, weighted_pearson);
    Ok((corr, bootstrap::std_dev(&reps)))
}

/// Correlation point for one intensity and gate.
pub fn corr_point(k1: &ShotCounts, k2: &ShotCounts, gate_t: f64, seed: u64) -> Result<CorrPoint> {
    let (corr, corr_err) = corr_coefficient(k1, k2, seed)?;
    Ok(CorrPoint { mean_k: 0.5 * (k1.mean() + k2.mean()), corr, corr_err, gate_t })
}

/// Ideal correlation of the two outputs of split multimode-thermal light.
pub fn gamma_mth_theory(m1: f64, m2: f64, mu1: f64, mu2: f64) -> Result<f64> {
    for (n, v) in [("m1", m1), ("m2", m2)] {
        check_finite(n, v)?;
        if v < 0.0 {
            return Err(invalid(n, "must be >= 0"));
        }
    }
    for (n, v) in [("mu1", mu1), ("mu2", mu2)] {
        check_finite(n, v)?;
        if v < 1.0 {
            return Err(invalid(n, "must be >= 1"));
        }
    }
    let (a, b) = (m1 / mu1, m2 / mu2);
    Ok((a * b).sqrt() / ((1.0 + a) * (1.0 + b)).sqrt())
}

/// Detected-photon mean `k/(1+eps) - dc` recovered from an output mean.
pub fn detected_mean(k_mean: f64, eps: f64, dc: f64) -> Result<f64> {
    let m = k_mean / (1.0 + eps) - dc;
    if m < 0.0 {
        return Err(SipmError::OutOfDomain { name: "k/(1+eps) - dc", value: m, domain: ">= 0" });
    }
    Ok(m)
}

/// Correlation corrected for cross talk and dark counts: the ideal form
/// evaluated at the detected means `k_i/(1+eps_i) - dc_i`.
#[allow(clippy::too_many_arguments)]
pub fn gamma_corrected_theory(
    k1_mean: f64,
    k2_mean: f64,
    eps1: f64,
    eps2: f64,
    dc1: f64,
    dc2: f64,
    mu1: f64,
    mu2: f64,
) -> Result<f64> {
    for (n, v) in [("eps1", eps1), ("eps2", eps2)] {
        check_finite(n, v)?;
        if !(0.0..1.0).contains(&v) {
            return Err(invalid(n, "must be in [0, 1)"));
        }
    }
    let m1 = detected_mean(k1_mean, eps1, dc1)?;
    let m2 = detected_mean(k2_mean, eps2, dc2)?;
    gamma_mth_theory(m1, m2, mu1, mu2)
}

/// Correlation implied by the full detector model (cross talk and dark
/// counts in both arms, symmetric), for comparison with the corrected form.
pub fn gamma_model_theory(k_mean: f64, eps: f64, dc: f64, mu: f64) -> Result<f64> {
    let m = detected_mean(k_mean, eps, dc)?;
    let g = 1.0 + eps;
    let cov = g * g * m * m / mu;
    let var = g * g * (m + m * m / mu + dc) + eps * (1.0 - eps) * (m + dc);
    Ok(cov / var)
}

/// Single-parameter fit of the shared mode number `mu`, with `eps` and
/// `mean_dc` fixed.
pub fn fit_correlation(points: &[CorrPoint], eps: f64, mean_dc: f64) -> Result<FitResult> {
    if points.is_empty() {
        return Err(SipmError::EmptyInput("correlation points"));
    }
    if points.iter().any(|p| !(p.corr_err > 0.0) || !p.corr.is_finite()) {
        return Err(SipmError::Degenerate("correlation points need positive errors".into()));
    }
    for p in points {
        detected_mean(p.mean_k, eps, mean_dc)?;
    }
    let model = |mu: f64, p: &CorrPoint| {
        gamma_corrected_theory(p.mean_k, p.mean_k, eps, eps, mean_dc, mean_dc, mu, mu).unwrap_or(f64::NAN)
    };
    let resid = |q: &[f64]| -> Vec<f64> { points.iter().map(|p| (model(q[0], p) - p.corr) / p.corr_err).collect() };
    let opts = LmOptions { bounds: Some(vec![(1.0, 1e9)]), ..Default::default() };
    let mut best: Option<crate::fit::LmSolution> = None;
    for mu0 in [1.0, 2.0, 5.0, 20.0] {
        if let Ok(sol) = levenberg_marquardt(resid, &[mu0], &opts) {
            if best.as_ref().is_none_or(|b| sol.cost < b.cost) {
                best = Some(sol);
            }
        }
    }
    let sol = best.ok_or_else(|| SipmError::NonConvergence("correlation fit".into()))?;
    FitResult::from_solution(&["mu"], &sol, ErrorModel::Known)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theory_special_values() {
        assert!((gamma_mth_theory(1.3, 1.3, 1.3, 1.3).unwrap() - 0.5).abs() < 1e-15);
        let r = 2.0 / 1.3;
        assert!((gamma_mth_theory(2.0, 2.0, 1.3, 1.3).unwrap() - r / (1.0 + r)).abs() < 1e-15);
        assert!(gamma_mth_theory(1e6 * 1.3, 1e6 * 1.3, 1.3, 1.3).unwrap() > 0.999);
        assert!(gamma_mth_theory(1.0, 1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn corrected_domain_error() {
        let r = gamma_corrected_theory(0.01, 1.0, 0.05, 0.05, 0.06, 0.0, 1.2, 1.2);
        assert!(matches!(r, Err(SipmError::OutOfDomain { .. })));
    }

    #[test]
    fn identical_arms_correlate_fully() {
        let k = ShotCounts { counts: (0..2000).map(|i| (i * 37 % 9) as u64).collect(), seed: 0 };
        let (c, e) = corr_coefficient(&k, &k, 1).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
        assert!(e < 1e-9);
        let flat = ShotCounts { counts: vec![3; 2000], seed: 0 };
        assert!(corr_coefficient(&k, &flat, 1).is_err());
        let short = ShotCounts { counts: vec![1, 2], seed: 0 };
        assert!(corr_coefficient(&short, &short, 1).is_err());
    }

    #[test]
    fn exact_recovery_of_mu() {
        let (eps, dc, mu) = (0.0351, 0.0081, 1.2331);
        let pts: Vec<CorrPoint> = (1..=8)
            .map(|i| {
                let k = 0.4 * i as f64;
                let corr = gamma_corrected_theory(k, k, eps, eps, dc, dc, mu, mu).unwrap();
                CorrPoint { mean_k: k, corr, corr_err: 0.01, gate_t: 50.0 }
            })
            .collect();
        let f = fit_correlation(&pts, eps, dc).unwrap();
        assert!((f.value("mu") / mu - 1.0).abs() < 1e-6);
    }
}
