//! Finite probability mass functions over non-negative counts.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SipmError};

/// Largest tail mass an explicitly chosen truncation bound may discard.
pub const TAIL_LIMIT: f64 = 1e-9;

/// Tail mass discarded by automatic truncation and by the re-truncation
/// after every pmf operation. Much tighter than [`TAIL_LIMIT`] so that
/// first and second moments of truncated pmfs stay exact to ~1e-12.
pub const WORKING_TAIL: f64 = 1e-15;

/// Hard cap on support length, guards against runaway means.
pub const MAX_SUPPORT: usize = 1 << 20;

/// A pmf over counts `0..=n_max`, with `n_max = probs.len() - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonDistribution {
    probs: Vec<f64>,
}

impl PhotonDistribution {
    /// Validates and wraps a probability vector.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(SipmError::InvalidDistribution("empty probability vector".into()));
        }
        let mut sum = 0.0;
        for (n, &p) in probs.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(SipmError::InvalidDistribution(format!("P({n}) = {p} is not in [0, 1]")));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > TAIL_LIMIT {
            return Err(SipmError::InvalidDistribution(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(PhotonDistribution { probs })
    }

    /// Wraps the output of an internal operation. Negative rounding residue
    /// is clamped and negligible trailing mass is dropped.
    pub(crate) fn from_raw(mut probs: Vec<f64>) -> Self {
        for p in probs.iter_mut() {
            if *p < 0.0 {
                *p = 0.0;
            }
        }
        let keep = truncation_len(&probs, WORKING_TAIL);
        probs.truncate(keep.max(1));
        PhotonDistribution { probs }
    }

    pub fn point_mass(n: usize) -> Self {
        let mut probs = vec![0.0; n + 1];
        probs[n] = 1.0;
        PhotonDistribution { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_max(&self) -> usize {
        self.probs.len() - 1
    }

    /// P(n), zero beyond the truncation bound.
    pub fn p(&self, n: usize) -> f64 {
        self.probs.get(n).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.probs.iter().enumerate().map(|(n, p)| (n as f64 - m).powi(2) * p).sum()
    }

    /// Variance over mean; zero for a point mass at 0.
    pub fn fano(&self) -> f64 {
        let m = self.mean();
        if m > 0.0 {
            self.variance() / m
        } else {
            0.0
        }
    }

    /// Half the L1 distance, treating missing entries as zero.
    pub fn total_variation(&self, other: &PhotonDistribution) -> f64 {
        let len = self.probs.len().max(other.probs.len());
        0.5 * (0..len).map(|n| (self.p(n) - other.p(n)).abs()).sum::<f64>()
    }

    pub fn max_abs_diff(&self, other: &PhotonDistribution) -> f64 {
        let len = self.probs.len().max(other.probs.len());
        (0..len).map(|n| (self.p(n) - other.p(n)).abs()).fold(0.0, f64::max)
    }

    /// Two-column CSV: `k,probability`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["k", "probability"])?;
        for (k, p) in self.probs.iter().enumerate() {
            wr.write_record([k.to_string(), format!("{p:e}")])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut probs = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let k: usize = parse_field(&rec, 0)?;
            let p: f64 = parse_field(&rec, 1)?;
            if k != probs.len() {
                return Err(SipmError::Format(format!("expected k={}, found k={k}", probs.len())));
            }
            probs.push(p);
        }
        PhotonDistribution::new(probs)
    }
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| SipmError::Format(format!("bad field {i} in record {rec:?}")))
}

/// Smallest length `L` such that the mass beyond index `L - 1` is below `tol`.
pub(crate) fn truncation_len(probs: &[f64], tol: f64) -> usize {
    let mut tail = 0.0;
    let mut len = probs.len();
    while len > 1 {
        let t = tail + probs[len - 1];
        if t >= tol {
            break;
        }
        tail = t;
        len -= 1;
    }
    len
}

/// Table of ln(n!) for n in 0..len.
pub(crate) fn ln_factorials(len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    let mut acc = 0.0;
    out.push(0.0);
    for n in 1..len {
        acc += (n as f64).ln();
        out.push(acc);
    }
    out
}

/// Row of the binomial pmf `C(n, j) q^j (1-q)^(n-j)` for j in 0..=n.
pub(crate) fn binomial_row(n: usize, q: f64, lnf: &[f64]) -> Vec<f64> {
    if q <= 0.0 {
        let mut row = vec![0.0; n + 1];
        row[0] = 1.0;
        return row;
    }
    if q >= 1.0 {
        let mut row = vec![0.0; n + 1];
        row[n] = 1.0;
        return row;
    }
    let (lq, lr) = (q.ln(), (-q).ln_1p());
    (0..=n).map(|j| (lnf[n] - lnf[j] - lnf[n - j] + j as f64 * lq + (n - j) as f64 * lr).exp()).collect()
}
