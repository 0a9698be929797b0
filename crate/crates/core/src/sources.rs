//! Photon-number statistics of coherent and multimode-thermal light.

use std::fmt;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, invalid, Result, SipmError};
use crate::par::{self, domain};
use crate::pmf::{PhotonDistribution, MAX_SUPPORT, TAIL_LIMIT, WORKING_TAIL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    Coherent,
    MultimodeThermal,
}

/// A classical light source. `modes` is ignored for coherent light and may
/// be non-integer for thermal light.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub kind: SourceKind,
    pub mean_photons: f64,
    #[serde(default = "default_modes")]
    pub modes: f64,
}

fn default_modes() -> f64 {
    1.0
}

impl SourceSpec {
    pub fn coherent(mean_photons: f64) -> Self {
        SourceSpec { kind: SourceKind::Coherent, mean_photons, modes: 1.0 }
    }

    pub fn thermal(mean_photons: f64, modes: f64) -> Self {
        SourceSpec { kind: SourceKind::MultimodeThermal, mean_photons, modes }
    }

    pub fn validate(&self) -> Result<()> {
        check_finite("mean_photons", self.mean_photons)?;
        if self.mean_photons < 0.0 {
            return Err(invalid("mean_photons", "must be >= 0"));
        }
        if self.kind == SourceKind::MultimodeThermal {
            check_modes(self.modes)?;
        }
        Ok(())
    }

    /// Same source with its mean scaled, e.g. by an attenuator.
    pub fn attenuated(&self, factor: f64) -> Self {
        SourceSpec { mean_photons: self.mean_photons * factor, ..*self }
    }

    pub fn pmf(&self) -> Result<PhotonDistribution> {
        match self.kind {
            SourceKind::Coherent => coherent_pmf(self.mean_photons, None),
            SourceKind::MultimodeThermal => mth_pmf(self.mean_photons, self.modes, None),
        }
    }

    pub fn variance(&self) -> f64 {
        match self.kind {
            SourceKind::Coherent => self.mean_photons,
            SourceKind::MultimodeThermal => self.mean_photons + self.mean_photons * self.mean_photons / self.modes,
        }
    }
}

impl fmt::Display for SourceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            SourceKind::Coherent => write!(f, "kind=coherent mean_photons={}", self.mean_photons),
            SourceKind::MultimodeThermal => {
                write!(f, "kind=multimode-thermal mean_photons={} modes={}", self.mean_photons, self.modes)
            }
        }
    }
}

fn check_modes(modes: f64) -> Result<()> {
    check_finite("modes", modes)?;
    if modes < 1.0 {
        return Err(invalid("modes", format!("must be >= 1, got {modes}")));
    }
    Ok(())
}

/// Builds a pmf from `ln P(0)` and the log-ratio `ln P(n)/P(n-1)`.
///
/// Both families used here have ratios that decrease monotonically past the
/// mode, so `P(n) r / (1 - r)` bounds the remaining tail.
fn pmf_from_ratio(
    ln_p0: f64,
    ln_ratio: impl Fn(usize) -> f64,
    mean: f64,
    n_max: Option<usize>,
) -> Result<PhotonDistribution> {
    let mut probs = vec![ln_p0.exp()];
    let mut ln_p = ln_p0;
    let mut n = 0usize;
    loop {
        let lr = ln_ratio(n + 1);
        let past_mode = (n as f64) > mean && lr < 0.0;
        if past_mode {
            let r = lr.exp();
            let bound = probs[n] * r / (1.0 - r);
            if bound < WORKING_TAIL * 1e-3 && n_max.is_none_or(|m| n >= m) {
                break;
            }
        }
        if n >= MAX_SUPPORT {
            return Err(invalid("mean", format!("support exceeds {MAX_SUPPORT} counts")));
        }
        ln_p += lr;
        n += 1;
        probs.push(ln_p.exp());
    }
    match n_max {
        None => Ok(PhotonDistribution::from_raw(probs)),
        Some(m) => {
            let tail: f64 = probs.iter().skip(m + 1).sum();
            if tail > TAIL_LIMIT {
                return Err(SipmError::TruncationTooShort { n_max: m, tail, limit: TAIL_LIMIT });
            }
            probs.truncate(m + 1);
            PhotonDistribution::new(probs)
        }
    }
}

/// Poisson pmf `mean^n e^-mean / n!`. With `n_max = None` the bound is chosen
/// automatically; an explicit bound must leave a tail below 1e-9.
pub fn coherent_pmf(mean: f64, n_max: Option<usize>) -> Result<PhotonDistribution> {
    check_finite("mean", mean)?;
    if mean < 0.0 {
        return Err(invalid("mean", format!("must be >= 0, got {mean}")));
    }
    if mean == 0.0 {
        let mut probs = vec![0.0; n_max.unwrap_or(0) + 1];
        probs[0] = 1.0;
        return PhotonDistribution::new(probs);
    }
    let ln_mean = mean.ln();
    pmf_from_ratio(-mean, |n| ln_mean - (n as f64).ln(), mean, n_max)
}

/// Multimode-thermal (negative binomial) pmf with `modes` equally populated
/// modes; factorials are generalized through the Gamma function.
pub fn mth_pmf(mean: f64, modes: f64, n_max: Option<usize>) -> Result<PhotonDistribution> {
    check_finite("mean", mean)?;
    if mean < 0.0 {
        return Err(invalid("mean", format!("must be >= 0, got {mean}")));
    }
    check_modes(modes)?;
    if mean == 0.0 {
        let mut probs = vec![0.0; n_max.unwrap_or(0) + 1];
        probs[0] = 1.0;
        return PhotonDistribution::new(probs);
    }
    let ln_p0 = -modes * (mean / modes).ln_1p();
    let ln_beta = -(modes / mean).ln_1p();
    pmf_from_ratio(ln_p0, |m| ((m as f64 - 1.0 + modes) / m as f64).ln() + ln_beta, mean, n_max)
}

/// Per-shot counts (photons, photoelectrons or fired cells).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotCounts {
    pub counts: Vec<u64>,
    pub seed: u64,
}

impl ShotCounts {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.counts.is_empty() {
            return 0.0;
        }
        self.counts.iter().map(|&c| c as f64).sum::<f64>() / self.counts.len() as f64
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        if self.counts.is_empty() {
            return 0.0;
        }
        self.counts.iter().map(|&c| (c as f64 - m).powi(2)).sum::<f64>() / self.counts.len() as f64
    }

    pub fn fano(&self) -> f64 {
        let m = self.mean();
        if m > 0.0 {
            self.variance() / m
        } else {
            0.0
        }
    }

    /// Occurrences of each count value, indexed by value.
    pub fn histogram(&self) -> Vec<u64> {
        let top = self.counts.iter().copied().max().unwrap_or(0) as usize;
        let mut h = vec![0u64; top + 1];
        for &c in &self.counts {
            h[c as usize] += 1;
        }
        h
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    /// Single-column CSV preceded by a `#` line naming the seed and source.
    pub fn write_csv<W: Write>(&self, mut w: W, description: &str) -> Result<()> {
        writeln!(w, "# seed={} {}", self.seed, description)?;
        writeln!(w, "count")?;
        for c in &self.counts {
            writeln!(w, "{c}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut text = String::new();
        let mut r = r;
        r.read_to_string(&mut text)?;
        let mut seed = 0;
        let mut counts = Vec::new();
        let mut saw_header = false;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(s) = rest.split_whitespace().find_map(|t| t.strip_prefix("seed=")) {
                    seed = s.parse().map_err(|_| SipmError::Format(format!("bad seed `{s}`")))?;
                }
                continue;
            }
            if !saw_header {
                saw_header = true;
                if line == "count" {
                    continue;
                }
            }
            counts.push(line.parse().map_err(|_| SipmError::Format(format!("bad count `{line}`")))?);
        }
        Ok(ShotCounts { counts, seed })
    }
}

pub(crate) fn poisson_draw<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

pub(crate) fn binomial_draw<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).map(|d| d.sample(rng)).unwrap_or(0)
}

/// Draws one photon number from `spec` (thermal light as a Poisson draw on
/// a Gamma-distributed intensity).
pub fn draw_photons<R: Rng + ?Sized>(spec: &SourceSpec, rng: &mut R) -> u64 {
    match spec.kind {
        SourceKind::Coherent => poisson_draw(spec.mean_photons, rng),
        SourceKind::MultimodeThermal => {
            if spec.mean_photons <= 0.0 {
                return 0;
            }
            let intensity =
                Gamma::new(spec.modes, spec.mean_photons / spec.modes).map(|g| g.sample(rng)).unwrap_or(0.0);
            poisson_draw(intensity, rng)
        }
    }
}

/// I.i.d. per-shot photon numbers; trial `i` uses its own substream.
pub fn sample_shots(spec: &SourceSpec, trials: usize, seed: u64) -> Result<ShotCounts> {
    spec.validate()?;
    if trials == 0 {
        return Err(invalid("trials", "must be >= 1"));
    }
    let counts = par::map_indexed(trials, |i| {
        let mut rng = par::substream(seed, domain::SOURCE, i as u64);
        draw_photons(spec, &mut rng)
    });
    Ok(ShotCounts { counts, seed })
}

/// Routes each photon independently to arm 1 with probability
/// `transmittance`, the rest to arm 2.
pub fn split_beam(shots: &ShotCounts, transmittance: f64, seed: u64) -> Result<(ShotCounts, ShotCounts)> {
    check_finite("transmittance", transmittance)?;
    if !(0.0..=1.0).contains(&transmittance) {
        return Err(invalid("transmittance", format!("must be in [0, 1], got {transmittance}")));
    }
    let pairs = par::map_slice(&shots.counts, |i, &n| {
        let mut rng = par::substream(seed, domain::SPLIT, i as u64);
        let a = binomial_draw(n, transmittance, &mut rng);
        (a, n - a)
    });
    let (a, b) = pairs.into_iter().unzip();
    Ok((ShotCounts { counts: a, seed }, ShotCounts { counts: b, seed }))
}

/// Keeps each photon independently with probability `factor`.
pub fn attenuate(shots: &ShotCounts, factor: f64, seed: u64) -> Result<ShotCounts> {
    check_finite("factor", factor)?;
    if !(0.0..=1.0).contains(&factor) {
        return Err(invalid("factor", format!("must be in [0, 1], got {factor}")));
    }
    let counts = par::map_slice(&shots.counts, |i, &n| {
        let mut rng = par::substream(seed, domain::SPLIT, i as u64);
        binomial_draw(n, factor, &mut rng)
    });
    Ok(ShotCounts { counts, seed })
}

/// `points` attenuation factors evenly spaced in optical density from 0 to
/// `max_od`, brightest first.
pub fn od_factors(points: usize, max_od: f64) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => (0..points).map(|i| 10f64.powf(-max_od * i as f64 / (points - 1) as f64)).collect(),
    }
}

/// Intensity scan: one photon stream at full intensity, thinned
/// independently for every attenuation factor.
pub fn attenuation_scan(spec: &SourceSpec, factors: &[f64], trials: usize, seed: u64) -> Result<Vec<ShotCounts>> {
    let full = sample_shots(spec, trials, seed)?;
    factors
        .iter()
        .enumerate()
        .map(|(i, &f)| attenuate(&full, f, par::derive_seed(seed, domain::SPLIT, i as u64)))
        .collect()
}
