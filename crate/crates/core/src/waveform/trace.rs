use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, invalid, Result, SipmError};

/// Digitizer and analog front-end settings used to render traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionSpec {
    pub rate_hz: u64,
    pub bits: u8,
    pub window_ns: f64,
    /// White baseline noise, in units of the single-cell peak amplitude.
    pub noise_rel: f64,
    /// Positive full scale, in single-cell peak amplitudes.
    pub full_scale_cells: f64,
    /// Relative Gaussian spread of the gain of each cell.
    pub gain_spread: f64,
    /// Relative Gaussian spread of the fall time of each avalanche.
    #[serde(default)]
    pub fall_spread: f64,
}

impl Default for AcquisitionSpec {
    fn default() -> Self {
        AcquisitionSpec {
            rate_hz: 250_000_000,
            bits: 12,
            window_ns: 500.0,
            noise_rel: 0.05,
            full_scale_cells: 40.0,
            gain_spread: 0.02,
            fall_spread: 0.0,
        }
    }
}

impl AcquisitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rate_hz == 0 {
            return Err(invalid("rate_hz", "must be > 0"));
        }
        if !(2..=16).contains(&self.bits) {
            return Err(invalid("bits", format!("must be in [2, 16], got {}", self.bits)));
        }
        for (name, v) in [
            ("window_ns", self.window_ns),
            ("noise_rel", self.noise_rel),
            ("full_scale_cells", self.full_scale_cells),
            ("gain_spread", self.gain_spread),
            ("fall_spread", self.fall_spread),
        ] {
            check_finite(name, v)?;
            if v < 0.0 {
                return Err(invalid(name, "must be >= 0"));
            }
        }
        if self.n_samples() == 0 {
            return Err(invalid("window_ns", "shorter than one sample"));
        }
        if self.full_scale_cells <= 0.0 {
            return Err(invalid("full_scale_cells", "must be > 0"));
        }
        Ok(())
    }

    /// Sample period in ns.
    pub fn dt(&self) -> f64 {
        1e9 / self.rate_hz as f64
    }

    pub fn n_samples(&self) -> usize {
        (self.window_ns * 1e-9 * self.rate_hz as f64 + 1e-9).floor() as usize
    }

    /// Amplitude per code for a given single-cell peak amplitude.
    pub fn lsb(&self, cell_peak: f64) -> f64 {
        self.full_scale_cells * cell_peak / (1u32 << (self.bits - 1)) as f64
    }
}

/// Mid-tread quantizer clamped to the signed code range of `bits`.
pub fn quantize(v: f64, lsb: f64, bits: u8) -> i16 {
    let hi = ((1i32 << (bits - 1)) - 1) as f64;
    let lo = -((1i32 << (bits - 1)) as f64);
    (v / lsb).round().clamp(lo, hi) as i16
}

/// An integration or search window `[start, start + width)` in ns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateSpec {
    pub start: f64,
    pub width: f64,
}

impl GateSpec {
    pub fn new(start: f64, width: f64) -> Self {
        GateSpec { start, width }
    }

    pub fn end(&self) -> f64 {
        self.start + self.width
    }

    pub fn check(&self, window: f64) -> Result<()> {
        let ok = self.start.is_finite()
            && self.width.is_finite()
            && self.start >= 0.0
            && self.width > 0.0
            && self.end() <= window + 1e-9;
        if ok {
            Ok(())
        } else {
            Err(SipmError::GateOutsideWindow { start: self.start, end: self.end(), window })
        }
    }
}

/// One digitized single-shot waveform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub codes: Vec<i16>,
    pub rate_hz: u64,
    pub bits: u8,
    /// Amplitude per code.
    pub lsb: f64,
    /// Electronic noise sigma, in amplitude units (NaN if unknown).
    pub baseline_sigma: f64,
}

impl TraceRecord {
    pub fn dt(&self) -> f64 {
        1e9 / self.rate_hz as f64
    }

    pub fn window(&self) -> f64 {
        self.codes.len() as f64 * self.dt()
    }

    pub fn check_codes(&self) -> Result<()> {
        let hi = (1i32 << (self.bits - 1)) - 1;
        let lo = -(1i32 << (self.bits - 1));
        if let Some(c) = self.codes.iter().find(|&&c| (c as i32) < lo || (c as i32) > hi) {
            return Err(SipmError::Format(format!("code {c} outside the {}-bit range", self.bits)));
        }
        Ok(())
    }

    /// Mean of the pre-trigger region (first 10% of samples), in amplitude
    /// units. If that region holds a pulse (sample range above eight noise
    /// sigmas) the last 10% of the trace is used instead. Without a known
    /// noise level the pre-trigger mean is always used.
    pub fn baseline(&self) -> f64 {
        let n = (self.codes.len() / 10).max(1).min(self.codes.len());
        if n == 0 {
            return 0.0;
        }
        let mean = |c: &[i16]| c.iter().map(|&v| v as f64).sum::<f64>() / c.len() as f64 * self.lsb;
        let head = &self.codes[..n];
        if self.baseline_sigma > 0.0 {
            let lo = head.iter().copied().min().unwrap_or(0);
            let hi = head.iter().copied().max().unwrap_or(0);
            if (hi - lo) as f64 * self.lsb > 8.0 * self.baseline_sigma {
                return mean(&self.codes[self.codes.len() - n..]);
            }
        }
        mean(head)
    }

    /// Median code, in amplitude units; robust for long dark traces.
    pub fn median_baseline(&self) -> f64 {
        if self.codes.is_empty() {
            return 0.0;
        }
        let mut counts = std::collections::BTreeMap::new();
        for &c in &self.codes {
            *counts.entry(c).or_insert(0usize) += 1;
        }
        let half = self.codes.len().div_ceil(2);
        let mut seen = 0;
        for (c, n) in counts {
            seen += n;
            if seen >= half {
                return c as f64 * self.lsb;
            }
        }
        0.0
    }

    /// Sample index range covering `[gate.start, gate.end)`.
    pub(crate) fn sample_range(&self, gate: &GateSpec) -> std::ops::Range<usize> {
        let dt = self.dt();
        let a = (gate.start / dt).round() as usize;
        let b = ((gate.end() / dt).round() as usize).min(self.codes.len());
        a.min(b)..b
    }

    /// Little-endian: rate (u64), bits (u8), count (u32), then i16 codes.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.rate_hz.to_le_bytes())?;
        w.write_all(&[self.bits])?;
        w.write_all(&(self.codes.len() as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.codes.len() * 2);
        for c in &self.codes {
            buf.extend_from_slice(&c.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Reads one trace. The binary format carries no amplitude scale, so
    /// `lsb` is 1 (amplitudes in codes) and the noise sigma is unknown.
    /// Returns `Ok(None)` at a clean end of stream.
    pub fn read_binary<R: Read>(mut r: R) -> Result<Option<Self>> {
        let mut head = [0u8; 13];
        let mut got = 0;
        while got < head.len() {
            let n = r.read(&mut head[got..])?;
            if n == 0 {
                break;
            }
            got += n;
        }
        if got == 0 {
            return Ok(None);
        }
        if got < head.len() {
            return Err(SipmError::Format("truncated trace header".into()));
        }
        let rate_hz = u64::from_le_bytes(head[0..8].try_into().expect("8 bytes"));
        let bits = head[8];
        let count = u32::from_le_bytes(head[9..13].try_into().expect("4 bytes")) as usize;
        if rate_hz == 0 || !(2..=16).contains(&bits) {
            return Err(SipmError::Format(format!("bad header: rate {rate_hz} Hz, {bits} bits")));
        }
        let mut data = vec![0u8; count * 2];
        r.read_exact(&mut data).map_err(|_| SipmError::Format(format!("expected {count} samples")))?;
        let codes = data.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]])).collect();
        let t = TraceRecord { codes, rate_hz, bits, lsb: 1.0, baseline_sigma: f64::NAN };
        t.check_codes()?;
        Ok(Some(t))
    }

    /// Reads every trace in a concatenated binary dump.
    pub fn read_binary_all<R: Read>(mut r: R) -> Result<Vec<Self>> {
        let mut out = Vec::new();
        while let Some(t) = Self::read_binary(&mut r)? {
            out.push(t);
        }
        Ok(out)
    }

    /// CSV with a `#` metadata line and `time_ns,code` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# rate_hz={} bits={} lsb={:e} baseline_sigma={:e}",
            self.rate_hz, self.bits, self.lsb, self.baseline_sigma
        )?;
        writeln!(w, "time_ns,code")?;
        let dt = self.dt();
        for (i, c) in self.codes.iter().enumerate() {
            writeln!(w, "{},{c}", i as f64 * dt)?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(mut r: R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let mut t = TraceRecord { codes: Vec::new(), rate_hz: 0, bits: 0, lsb: 1.0, baseline_sigma: f64::NAN };
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(meta) = line.strip_prefix('#') {
                for kv in meta.split_whitespace() {
                    let bad = || SipmError::Format(format!("bad metadata `{kv}`"));
                    match kv.split_once('=') {
                        Some(("rate_hz", v)) => t.rate_hz = v.parse().map_err(|_| bad())?,
                        Some(("bits", v)) => t.bits = v.parse().map_err(|_| bad())?,
                        Some(("lsb", v)) => t.lsb = v.parse().map_err(|_| bad())?,
                        Some(("baseline_sigma", v)) => t.baseline_sigma = v.parse().map_err(|_| bad())?,
                        _ => {}
                    }
                }
                continue;
            }
            if line.starts_with("time_ns") {
                continue;
            }
            let code = line
                .rsplit(',')
                .next()
                .and_then(|c| c.trim().parse().ok())
                .ok_or_else(|| SipmError::Format(format!("bad row `{line}`")))?;
            t.codes.push(code);
        }
        if t.rate_hz == 0 || !(2..=16).contains(&t.bits) {
            return Err(SipmError::Format("missing rate_hz or bits metadata".into()));
        }
        t.check_codes()?;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TraceRecord {
        TraceRecord {
            codes: vec![0, -3, 2047, -2048, 17],
            rate_hz: 250_000_000,
            bits: 12,
            lsb: 0.5,
            baseline_sigma: 0.1,
        }
    }

    #[test]
    fn binary_round_trip() {
        let t = sample();
        let mut buf = Vec::new();
        t.write_binary(&mut buf).unwrap();
        t.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 2 * (13 + 10));
        assert_eq!(&buf[0..8], &250_000_000u64.to_le_bytes());
        let all = TraceRecord::read_binary_all(&buf[..]).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(all[0].codes, t.codes);
        assert_eq!(all[0].bits, 12);
        assert!(TraceRecord::read_binary(&buf[..20]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let t = sample();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(TraceRecord::read_csv(&buf[..]).unwrap(), t);
    }

    #[test]
    fn quantizer_is_mid_tread_and_clamped() {
        assert_eq!(quantize(0.49, 1.0, 12), 0);
        assert_eq!(quantize(-0.49, 1.0, 12), 0);
        assert_eq!(quantize(1.51, 1.0, 12), 2);
        assert_eq!(quantize(1e9, 1.0, 12), 2047);
        assert_eq!(quantize(-1e9, 1.0, 12), -2048);
    }

    #[test]
    fn sample_count_and_gates() {
        let a = AcquisitionSpec { window_ns: 500.0, ..Default::default() };
        assert_eq!(a.n_samples(), 125);
        assert!(GateSpec::new(100.0, 400.0).check(500.0).is_ok());
        assert!(GateSpec::new(100.0, 401.0).check(500.0).is_err());
        assert!(GateSpec::new(-1.0, 10.0).check(500.0).is_err());
    }

    #[test]
    fn out_of_range_codes_rejected() {
        let mut t = sample();
        t.bits = 8;
        assert!(t.check_codes().is_err());
    }
}
