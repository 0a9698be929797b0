//! Detector response: efficiency, dark counts and first-order cross talk,
//! as exact pmf algebra, closed-form moments and per-shot Monte Carlo.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, invalid, Result};
use crate::par::{self, domain};
use crate::pmf::{binomial_row, ln_factorials, PhotonDistribution};
use crate::sources::{binomial_draw, coherent_pmf, poisson_draw, ShotCounts};

pub const DEFAULT_CELLS: u32 = 667;

/// Cross-talk probabilities above this trigger a warning: the first-order
/// cascade becomes a poor approximation.
pub const EPS_WARN: f64 = 0.2;
pub const EPS_MAX: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorParams {
    pub eta: f64,
    /// Mean dark counts per gate.
    pub mean_dc: f64,
    /// Effective cross-talk probability.
    pub eps: f64,
    /// Output units per fired cell.
    pub gamma: f64,
    #[serde(default = "default_cells")]
    pub n_cells: u32,
    #[serde(default)]
    pub saturation_enabled: bool,
}

fn default_cells() -> u32 {
    DEFAULT_CELLS
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams::ideal()
    }
}

impl DetectorParams {
    pub fn new(eta: f64, mean_dc: f64, eps: f64, gamma: f64) -> Result<Self> {
        let p = DetectorParams { eta, mean_dc, eps, gamma, n_cells: DEFAULT_CELLS, saturation_enabled: false };
        p.validate()?;
        Ok(p)
    }

    /// Unit efficiency, no noise, unit gain.
    pub fn ideal() -> Self {
        DetectorParams {
            eta: 1.0,
            mean_dc: 0.0,
            eps: 0.0,
            gamma: 1.0,
            n_cells: DEFAULT_CELLS,
            saturation_enabled: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_eta(self.eta)?;
        check_dc(self.mean_dc)?;
        check_finite("eps", self.eps)?;
        if !(0.0..EPS_MAX).contains(&self.eps) {
            return Err(invalid("eps", format!("must be in [0, {EPS_MAX}), got {}", self.eps)));
        }
        if self.eps > EPS_WARN {
            log::warn!("eps = {} exceeds {EPS_WARN}; first-order cascade is approximate", self.eps);
        }
        check_finite("gamma", self.gamma)?;
        if self.gamma <= 0.0 {
            return Err(invalid("gamma", "must be > 0"));
        }
        if self.n_cells == 0 {
            return Err(invalid("n_cells", "must be > 0"));
        }
        Ok(())
    }
}

fn check_eta(eta: f64) -> Result<()> {
    check_finite("eta", eta)?;
    if !(0.0..=1.0).contains(&eta) {
        return Err(invalid("eta", format!("must be in [0, 1], got {eta}")));
    }
    Ok(())
}

fn check_dc(mean_dc: f64) -> Result<()> {
    check_finite("mean_dc", mean_dc)?;
    if mean_dc < 0.0 {
        return Err(invalid("mean_dc", format!("must be >= 0, got {mean_dc}")));
    }
    Ok(())
}

/// `P_el(m) = sum_n C(n, m) eta^m (1 - eta)^(n - m) P_ph(n)`.
pub fn bernoulli_detect(pph: &PhotonDistribution, eta: f64) -> Result<PhotonDistribution> {
    check_eta(eta)?;
    let probs = pph.probs();
    let lnf = ln_factorials(probs.len());
    let mut out = vec![0.0; probs.len()];
    for (n, &p) in probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (m, b) in binomial_row(n, eta, &lnf).into_iter().enumerate() {
            out[m] += b * p;
        }
    }
    Ok(PhotonDistribution::from_raw(out))
}

/// Convolution with Poisson dark counts of mean `mean_dc`.
pub fn add_dark_counts(pel: &PhotonDistribution, mean_dc: f64) -> Result<PhotonDistribution> {
    check_dc(mean_dc)?;
    if mean_dc == 0.0 {
        return Ok(pel.clone());
    }
    let dark = coherent_pmf(mean_dc, None)?;
    Ok(PhotonDistribution::from_raw(convolve(pel.probs(), dark.probs())))
}

pub(crate) fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// First-order cascade: each of `l` avalanches independently triggers one
/// secondary with probability `eps`.
pub fn crosstalk_cascade(pin: &PhotonDistribution, eps: f64) -> Result<PhotonDistribution> {
    check_finite("eps", eps)?;
    if !(0.0..1.0).contains(&eps) {
        return Err(invalid("eps", format!("must be in [0, 1), got {eps}")));
    }
    let probs = pin.probs();
    let lnf = ln_factorials(probs.len());
    let mut out = vec![0.0; 2 * probs.len() - 1];
    for (l, &p) in probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (j, b) in binomial_row(l, eps, &lnf).into_iter().enumerate() {
            out[l + j] += b * p;
        }
    }
    Ok(PhotonDistribution::from_raw(out))
}

/// Folds mass above `n_cells` onto `n_cells`.
pub fn saturate(p: &PhotonDistribution, n_cells: u32) -> PhotonDistribution {
    let n = n_cells as usize;
    if p.n_max() <= n {
        return p.clone();
    }
    let mut probs = p.probs()[..=n].to_vec();
    probs[n] += p.probs()[n + 1..].iter().sum::<f64>();
    PhotonDistribution::from_raw(probs)
}

/// One stage of the detector response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Efficiency,
    DarkCounts,
    CrossTalk,
}

/// The composition applied by [`output_distribution`]. Only the physical
/// order efficiency, dark counts, cross talk is accepted.
#[derive(Debug, Clone, Copy)]
pub struct Pipeline {
    _private: (),
}

impl Pipeline {
    pub const ORDER: [Stage; 3] = [Stage::Efficiency, Stage::DarkCounts, Stage::CrossTalk];

    pub fn new(stages: &[Stage]) -> Result<Self> {
        if stages != Self::ORDER {
            return Err(invalid("stages", format!("order must be {:?}, got {stages:?}", Self::ORDER)));
        }
        Ok(Pipeline { _private: () })
    }

    pub fn apply(&self, pph: &PhotonDistribution, params: &DetectorParams) -> Result<PhotonDistribution> {
        params.validate()?;
        let pel = bernoulli_detect(pph, params.eta)?;
        let pdc = add_dark_counts(&pel, params.mean_dc)?;
        let pk = crosstalk_cascade(&pdc, params.eps)?;
        Ok(if params.saturation_enabled { saturate(&pk, params.n_cells) } else { pk })
    }
}

/// Fired-cell pmf `P(k)`. The gain is an abscissa scale `x = gamma k` and
/// does not enter the probabilities.
pub fn output_distribution(pph: &PhotonDistribution, params: &DetectorParams) -> Result<PhotonDistribution> {
    Pipeline::new(&Pipeline::ORDER)?.apply(pph, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputMoments {
    pub mean_x: f64,
    pub var_x: f64,
    pub mean_k: f64,
    pub fano_x: f64,
    pub mandel_q: f64,
}

/// Closed-form output moments from photon-level mean and variance.
pub fn output_moments(pph_mean: f64, pph_var: f64, params: &DetectorParams) -> Result<OutputMoments> {
    params.validate()?;
    check_finite("pph_mean", pph_mean)?;
    check_finite("pph_var", pph_var)?;
    if pph_mean < 0.0 {
        return Err(invalid("pph_mean", "must be >= 0"));
    }
    if pph_var < 0.0 {
        return Err(invalid("pph_var", format!("must be >= 0, got {pph_var}")));
    }
    let DetectorParams { eta, mean_dc: dc, eps, gamma, .. } = *params;
    let m = eta * pph_mean;
    let var_m = eta * eta * pph_var + eta * (1.0 - eta) * pph_mean;
    let mean_k = (1.0 + eps) * (m + dc);
    let var_k = (1.0 + eps).powi(2) * (var_m + dc) + eps * (1.0 - eps) * (m + dc);
    let mean_x = gamma * mean_k;
    let var_x = gamma * gamma * var_k;
    let fano_x = if mean_x > 0.0 { var_x / mean_x } else { 0.0 };
    let mandel_q = if m + dc > 0.0 { (var_m + dc) / (m + dc) - 1.0 } else { 0.0 };
    Ok(OutputMoments { mean_x, var_x, mean_k, fano_x, mandel_q })
}

/// Fano factor of coherent light through the detector, independent of the mean.
pub fn coherent_fano(gamma: f64, eps: f64) -> f64 {
    gamma * (1.0 + 3.0 * eps) / (1.0 + eps)
}

/// Fired-cell count for one shot of `n` photons.
pub fn detect_shot<R: Rng + ?Sized>(n: u64, params: &DetectorParams, rng: &mut R) -> u64 {
    let m = binomial_draw(n, params.eta, rng) + poisson_draw(params.mean_dc, rng);
    let k = m + binomial_draw(m, params.eps, rng);
    if params.saturation_enabled {
        k.min(params.n_cells as u64)
    } else {
        k
    }
}

/// Per-shot Monte Carlo of the detector response.
pub fn mc_detect(shots: &ShotCounts, params: &DetectorParams, seed: u64) -> Result<ShotCounts> {
    params.validate()?;
    let counts = par::map_slice(&shots.counts, |i, &n| {
        let mut rng = par::substream(seed, domain::DETECT, i as u64);
        detect_shot(n, params, &mut rng)
    });
    Ok(ShotCounts { counts, seed })
}
