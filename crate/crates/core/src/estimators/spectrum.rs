use serde::{Deserialize, Serialize};

use crate::error::{check_finite, invalid, Result, SipmError};
use crate::fit::{levenberg_marquardt, ErrorModel, FitResult, LmOptions, Z95};

/// Histogram of per-shot amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseHeightSpectrum {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl PulseHeightSpectrum {
    pub fn bin_width(&self) -> f64 {
        self.bin_edges[1] - self.bin_edges[0]
    }

    pub fn centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Index of the bin containing `x`, if any.
    pub fn bin_of(&self, x: f64) -> Option<usize> {
        let i = ((x - self.bin_edges[0]) / self.bin_width()).floor();
        (i >= 0.0 && (i as usize) < self.counts.len()).then_some(i as usize)
    }
}

/// Histogram over `[min, max]` padded by one empty bin on each side.
pub fn build_spectrum(values: &[f64], bin_width: f64) -> Result<PulseHeightSpectrum> {
    check_finite("bin_width", bin_width)?;
    if bin_width <= 0.0 {
        return Err(invalid("bin_width", "must be > 0"));
    }
    if values.is_empty() {
        return Err(SipmError::EmptyInput("spectrum values"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("values", "must be finite"));
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let start = (min / bin_width).floor() * bin_width - bin_width;
    let n_bins = ((max - start) / bin_width).floor() as usize + 2;
    let bin_edges: Vec<f64> = (0..=n_bins).map(|i| start + i as f64 * bin_width).collect();
    let mut counts = vec![0u64; n_bins];
    for &v in values {
        let i = (((v - start) / bin_width).floor() as usize).min(n_bins - 1);
        counts[i] += 1;
    }
    Ok(PulseHeightSpectrum { bin_edges, counts, total: values.len() as u64 })
}

/// Count classification `k = round((v - offset) / gamma)`, clamped at zero,
/// with exact half-integers rounded down.
pub fn assign_k(values: &[f64], gamma: f64, offset: f64) -> Result<Vec<u64>> {
    check_finite("gamma", gamma)?;
    if gamma <= 0.0 {
        return Err(invalid("gamma", "must be > 0"));
    }
    Ok(values
        .iter()
        .map(|&v| {
            let k = ((v - offset) / gamma - 0.5).ceil();
            if k > 0.0 {
                k as u64
            } else {
                0
            }
        })
        .collect())
}

fn smooth(counts: &[u64]) -> Vec<f64> {
    let mut s: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    for _ in 0..2 {
        let prev = s.clone();
        for i in 0..s.len() {
            let a = if i > 0 { prev[i - 1] } else { prev[i] };
            let b = if i + 1 < prev.len() { prev[i + 1] } else { prev[i] };
            s[i] = 0.25 * a + 0.5 * prev[i] + 0.25 * b;
        }
    }
    s
}

/// Candidate peak positions (bin indices), tallest first.
fn find_peaks(spec: &PulseHeightSpectrum, max_peaks: usize) -> Vec<usize> {
    let s = smooth(&spec.counts);
    let mut sorted = s.clone();
    sorted.sort_by(f64::total_cmp);
    let floor = sorted[sorted.len() / 2].max(1.0);
    let mut cand: Vec<usize> = (1..s.len().saturating_sub(1))
        .filter(|&i| s[i] >= s[i - 1] && s[i] > s[i + 1] && s[i] > 3.0 * floor)
        .filter(|&i| spec.counts[i] >= 5)
        .collect();
    cand.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    if cand.len() < 2 {
        return cand;
    }
    // Noise can split one top into several maxima. Suppress candidates
    // within one FWHM of a taller one, with the FWHM taken from the steeper
    // side of the tallest peak.
    let top = cand[0];
    let half = 0.5 * s[top];
    let left = (0..top).rev().find(|&i| s[i] <= half).map_or(top, |i| top - i);
    let right = (top + 1..s.len()).find(|&i| s[i] <= half).map_or(s.len() - top, |i| i - top);
    let min_sep = 2 * left.min(right).max(1);
    let mut separated: Vec<usize> = Vec::with_capacity(cand.len());
    for c in cand {
        if separated.iter().all(|&k| k.abs_diff(c) >= min_sep) {
            separated.push(c);
        }
    }
    let cand = separated;
    if cand.len() < 2 {
        return cand;
    }
    let spacing = (cand[0] as f64 - cand[1] as f64).abs();
    let mut kept: Vec<usize> = Vec::new();
    for c in cand {
        // Stay on the ladder implied by the nearest accepted peak.
        let on_ladder = kept
            .iter()
            .map(|&k| (k as f64 - c as f64).abs())
            .min_by(f64::total_cmp)
            .is_none_or(|d| d >= 0.5 * spacing && (d / spacing - (d / spacing).round()).abs() <= 0.25);
        if on_ladder {
            kept.push(c);
            if kept.len() == max_peaks {
                break;
            }
        }
    }
    kept
}

/// One fitted Gaussian of a multi-peak fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakFit {
    pub center: f64,
    pub center_err: f64,
    pub sigma: f64,
    /// Events in the peak.
    pub area: f64,
}

fn gauss_sum(p: &[f64], x: f64) -> f64 {
    p.chunks_exact(3).map(|q| q[2] * (-0.5 * ((x - q[0]) / q[1]).powi(2)).exp()).sum()
}

fn fit_gaussians(spec: &PulseHeightSpectrum, lo: usize, hi: usize, init: &[f64]) -> Result<FitResult> {
    let centers = spec.centers();
    let xs = &centers[lo..hi];
    let ys: Vec<f64> = spec.counts[lo..hi].iter().map(|&c| c as f64).collect();
    let sol = levenberg_marquardt(
        |p: &[f64]| xs.iter().zip(&ys).map(|(&x, &y)| (gauss_sum(p, x) - y) / y.max(1.0).sqrt()).collect(),
        init,
        &LmOptions { max_iter: 300, ..Default::default() },
    )?;
    let names: Vec<String> = (0..init.len() / 3)
        .flat_map(|j| [format!("center_{j}"), format!("sigma_{j}"), format!("height_{j}")])
        .collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut res = FitResult::from_solution(&refs, &sol, ErrorModel::Known)?;
    for j in 0..init.len() / 3 {
        let s = format!("sigma_{j}");
        let sig = res.value(&s).abs();
        res.params.insert(s, sig);
    }
    Ok(res)
}

/// Peaks of a multi-Gaussian fit result, in position order.
pub fn peaks(fit: &FitResult, bin_width: f64) -> Vec<PeakFit> {
    let mut out = Vec::new();
    let mut j = 0;
    while fit.params.contains_key(&format!("center_{j}")) {
        let sigma = fit.value(&format!("sigma_{j}"));
        out.push(PeakFit {
            center: fit.value(&format!("center_{j}")),
            center_err: fit.error(&format!("center_{j}")),
            sigma,
            area: fit.value(&format!("height_{j}")) * sigma * (2.0 * std::f64::consts::PI).sqrt() / bin_width,
        });
        j += 1;
    }
    out
}

/// Global multi-Gaussian fit of up to `max_peaks` peaks. The gain `gamma` is
/// the inverse-variance weighted mean of adjacent center spacings.
pub fn fit_gamma(spec: &PulseHeightSpectrum, max_peaks: usize) -> Result<FitResult> {
    let found = find_peaks(spec, max_peaks.max(2));
    if found.len() < 2 {
        return Err(SipmError::TooFewPeaks { found: found.len() });
    }
    let mut idx = found;
    idx.sort_unstable();
    let centers = spec.centers();
    let bw = spec.bin_width();
    let spacing = idx.windows(2).map(|w| (w[1] - w[0]) as f64).fold(f64::INFINITY, f64::min) * bw;
    let sm = smooth(&spec.counts);
    let reach = ((0.5 * spacing / bw).floor() as usize).max(1);
    // Initial width from the half-maximum points of each peak, capped by the spacing.
    let width0 = |i: usize| {
        let half = 0.5 * sm[i];
        let l = (1..=reach.min(i)).find(|&d| sm[i - d] <= half).unwrap_or(reach);
        let r = (1..=reach).find(|&d| i + d >= sm.len() || sm[i + d] <= half).unwrap_or(reach);
        (l.min(r) as f64 * bw / 1.1774).clamp(bw, spacing / 3.0)
    };
    let mut fit = loop {
        let mut init = Vec::new();
        for &i in &idx {
            init.extend_from_slice(&[centers[i], width0(i), spec.counts[i] as f64]);
        }
        let half = (0.6 * spacing / bw).ceil() as usize;
        let lo = idx[0].saturating_sub(half);
        let hi = (idx[idx.len() - 1] + half + 1).min(spec.counts.len());
        let fit = fit_gaussians(spec, lo, hi, &init)?;
        // Broad components soak up the inter-peak background; drop the worst and refit.
        let widest = peaks(&fit, bw)
            .iter()
            .enumerate()
            .filter(|(_, p)| p.sigma > 0.35 * spacing)
            .max_by(|a, b| a.1.sigma.total_cmp(&b.1.sigma))
            .map(|(j, _)| j);
        match widest {
            Some(j) if idx.len() > 2 => {
                idx.remove(j);
            }
            _ => break fit,
        }
    };

    let pk = peaks(&fit, bw);
    let n = pk.len();
    let mut wsum = 0.0;
    let mut acc = 0.0;
    for j in 0..n - 1 {
        let a = 3 * j;
        let b = 3 * (j + 1);
        let var = fit.covariance[a][a] + fit.covariance[b][b] - 2.0 * fit.covariance[a][b];
        let d = pk[j + 1].center - pk[j].center;
        if !(var > 0.0) || !d.is_finite() {
            continue;
        }
        acc += d / var;
        wsum += 1.0 / var;
    }
    if wsum == 0.0 {
        return Err(SipmError::Degenerate("peak centers have no usable errors".into()));
    }
    let gamma = acc / wsum;
    fit.insert_derived("gamma", gamma, (1.0 / wsum).sqrt(), Z95);
    for (j, p) in pk.iter().enumerate() {
        fit.insert_derived(&format!("area_{j}"), p.area, p.area.sqrt(), Z95);
    }
    Ok(fit)
}

/// Gain calibration and count classification for several groups of
/// amplitudes sharing one detector.
#[derive(Debug, Clone)]
pub struct Classified {
    /// Gain fit on the pooled spectrum.
    pub fit: FitResult,
    pub gamma: f64,
    /// Center of the lowest fitted peak, used as the zero offset.
    pub offset: f64,
    /// Lowest fitted peak as a count index.
    pub first_k: u64,
    pub counts: Vec<Vec<u64>>,
}

/// Fits the gain on the pooled spectrum of all groups and classifies every
/// amplitude into a count.
pub fn classify_groups(groups: &[Vec<f64>], bin_width: f64, max_peaks: usize) -> Result<Classified> {
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let spec = build_spectrum(&pooled, bin_width)?;
    let fit = fit_gamma(&spec, max_peaks)?;
    let gamma = fit.value("gamma");
    let first = peaks(&fit, bin_width)[0].center;
    // The lowest peak may sit above zero when the pedestal is sparse.
    let first_k = (first / gamma).round().max(0.0);
    let offset = first - first_k * gamma;
    let counts = groups.iter().map(|g| assign_k(g, gamma, offset)).collect::<Result<Vec<_>>>()?;
    Ok(Classified { fit, gamma, offset, first_k: first_k as u64, counts })
}

/// Gaussian fit of the 1-photon peak expected near `gamma`, together with
/// its neighbors at `gamma -/+ gamma`.
pub fn one_photon_peak(spec: &PulseHeightSpectrum, gamma: f64) -> Result<PeakFit> {
    check_finite("gamma", gamma)?;
    if gamma <= 0.0 {
        return Err(invalid("gamma", "must be > 0"));
    }
    let missing = SipmError::MissingOnePhotonPeak { expected: gamma };
    let bw = spec.bin_width();
    let centers = spec.centers();
    let near = |x: f64| {
        let i = ((x - spec.bin_edges[0]) / bw).floor();
        i.clamp(0.0, (spec.counts.len() - 1) as f64) as usize
    };
    let lo = near(gamma - 0.5 * gamma);
    let hi = near(gamma + 0.5 * gamma) + 1;
    let top = (lo..hi).max_by_key(|&i| spec.counts[i]).ok_or_else(|| missing.clone())?;
    if spec.counts[top] < 10 || top == lo || top + 1 == hi {
        return Err(missing);
    }
    let c1 = centers[top];
    let mut init = Vec::new();
    for x in [c1 - gamma, c1, c1 + gamma] {
        let i = near(x);
        init.extend_from_slice(&[x, gamma / 6.0, spec.counts[i].max(1) as f64]);
    }
    let flo = near(c1 - 1.5 * gamma);
    let fhi = (near(c1 + 1.5 * gamma) + 1).min(spec.counts.len());
    let fit = fit_gaussians(spec, flo, fhi, &init)?;
    let p = peaks(&fit, bw)[1];
    if !(p.sigma > 0.0) || (p.center - gamma).abs() > 0.5 * gamma {
        return Err(missing);
    }
    Ok(p)
}

/// Mean of the 1-photon peak over its variance.
pub fn snr_integral(spec: &PulseHeightSpectrum, gamma: f64) -> Result<f64> {
    let p = one_photon_peak(spec, gamma)?;
    Ok(p.center / (p.sigma * p.sigma))
}

/// Mean of the 1-photon peak over its width.
pub fn snr_peak(spec: &PulseHeightSpectrum, gamma: f64) -> Result<f64> {
    let p = one_photon_peak(spec, gamma)?;
    Ok(p.center / p.sigma)
}

/// Minimum between two adjacent peaks over the mean of their heights.
pub fn valley_ratio(spec: &PulseHeightSpectrum, left: f64, right: f64) -> Option<f64> {
    let (a, b) = (spec.bin_of(left)?, spec.bin_of(right)?);
    if b <= a + 1 {
        return None;
    }
    let s = smooth(&spec.counts);
    let valley = s[a + 1..b].iter().cloned().fold(f64::INFINITY, f64::min);
    let ha = s[a.saturating_sub(2)..(a + 3).min(s.len())].iter().cloned().fold(0.0, f64::max);
    let hb = s[b.saturating_sub(2)..(b + 3).min(s.len())].iter().cloned().fold(0.0, f64::max);
    let top = 0.5 * (ha + hb);
    (top > 0.0).then_some(valley / top)
}
