use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Result, SipmError};
use crate::pmf::PhotonDistribution;
use crate::sources::ShotCounts;

/// Expected counts below this are pooled with their neighbors.
pub const MIN_EXPECTED: f64 = 5.0;

/// One pooled bin covering counts `k_lo..=k_hi` (`k_hi = None`: open tail).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GofBin {
    pub k_lo: usize,
    pub k_hi: Option<usize>,
    pub observed: u64,
    pub expected: f64,
    /// Pearson residual `(O - E)/sqrt(E)`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofResult {
    pub chi2: f64,
    pub dof: usize,
    pub chi2_nu: f64,
    pub p_value: f64,
    pub bins: Vec<GofBin>,
}

/// Pearson chi-square of observed counts against a pmf, after pooling bins
/// with expected count below 5. `dof = bins - 1 - fitted_params`.
pub fn gof_pmf(observed: &ShotCounts, theory: &PhotonDistribution, fitted_params: usize) -> Result<GofResult> {
    if observed.is_empty() {
        return Err(SipmError::EmptyInput("observed counts"));
    }
    let n = observed.len() as f64;
    let hist = observed.histogram();
    let top = hist.len().max(theory.probs().len());
    // Pool left to right until each bin holds enough expectation; the last
    // bin is an open tail that also takes the theory mass beyond `top`.
    let mut edges: Vec<usize> = Vec::new();
    let mut acc = 0.0;
    let mut start = 0;
    for k in 0..top {
        acc += theory.p(k) * n;
        if acc >= MIN_EXPECTED {
            edges.push(start);
            start = k + 1;
            acc = 0.0;
        }
    }
    if edges.is_empty() {
        edges.push(0);
    }
    let mut bins = Vec::with_capacity(edges.len());
    for (i, &lo) in edges.iter().enumerate() {
        let hi = edges.get(i + 1).map(|&e| e - 1);
        let (obs, p) = match hi {
            Some(h) => (hist.iter().take(h + 1).skip(lo).sum::<u64>(), (lo..=h).map(|k| theory.p(k)).sum::<f64>()),
            None => (hist.iter().skip(lo).sum::<u64>(), (1.0 - (0..lo).map(|k| theory.p(k)).sum::<f64>()).max(0.0)),
        };
        let expected = p * n;
        let residual = if expected > 0.0 { (obs as f64 - expected) / expected.sqrt() } else { f64::INFINITY };
        bins.push(GofBin { k_lo: lo, k_hi: hi, observed: obs, expected, residual });
    }
    if bins.len() < 2 {
        return Err(SipmError::InsufficientPoints(format!("{} pooled bin(s), need >= 2", bins.len())));
    }
    let dof = bins.len() as i64 - 1 - fitted_params as i64;
    if dof < 1 {
        return Err(SipmError::InsufficientPoints(format!(
            "{} pooled bins leave no degrees of freedom for {fitted_params} fitted parameter(s)",
            bins.len()
        )));
    }
    let dof = dof as usize;
    let chi2: f64 = bins.iter().map(|b| b.residual * b.residual).sum();
    let p_value = ChiSquared::new(dof as f64).map(|d| d.sf(chi2)).unwrap_or(f64::NAN);
    Ok(GofResult { chi2, dof, chi2_nu: chi2 / dof as f64, p_value, bins })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sources::{coherent_pmf, sample_shots, SourceSpec};

    #[test]
    fn pooling_keeps_expectations_above_five() {
        let s = sample_shots(&SourceSpec::coherent(2.0), 5000, 1).unwrap();
        let r = gof_pmf(&s, &coherent_pmf(2.0, None).unwrap(), 0).unwrap();
        assert!(r.bins.iter().all(|b| b.expected >= MIN_EXPECTED));
        assert_eq!(r.bins.iter().map(|b| b.observed).sum::<u64>(), 5000);
        let e: f64 = r.bins.iter().map(|b| b.expected).sum();
        assert!((e - 5000.0).abs() < 1e-6);
    }

    #[test]
    fn too_few_bins() {
        let s = ShotCounts { counts: vec![0; 3], seed: 0 };
        assert!(gof_pmf(&s, &coherent_pmf(0.1, None).unwrap(), 0).is_err());
    }

    #[test]
    fn null_calibration() {
        let s = sample_shots(&SourceSpec::coherent(2.0), 100_000, 8).unwrap();
        let r = gof_pmf(&s, &coherent_pmf(2.0, None).unwrap(), 0).unwrap();
        assert!(r.chi2_nu > 0.2 && r.chi2_nu < 3.0, "{}", r.chi2_nu);
    }
}
