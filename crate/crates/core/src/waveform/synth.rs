use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::events::Avalanche;
use super::shape::PulseShape;
use super::trace::{quantize, AcquisitionSpec, GateSpec, TraceRecord};
use crate::error::{check_finite, invalid, Result, SipmError};
use crate::par::{self, domain};

/// Renders and digitizes one trace; see [`synth_trace_with`].
pub fn synth_trace(
    events: &[Avalanche],
    shape: &PulseShape,
    acq: &AcquisitionSpec,
    gamma: f64,
    seed: u64,
) -> Result<TraceRecord> {
    let mut rng = par::substream(seed, domain::TRACE, 0);
    synth_trace_with(events, shape, acq, gamma, &mut rng)
}

/// Sum of single-cell pulses (with per-cell gain and per-avalanche fall-time
/// spread) plus white Gaussian noise, quantized at the acquisition rate.
/// Samples are averages of the analog signal over each sample period.
pub fn synth_trace_with<R: Rng + ?Sized>(
    events: &[Avalanche],
    shape: &PulseShape,
    acq: &AcquisitionSpec,
    gamma: f64,
    rng: &mut R,
) -> Result<TraceRecord> {
    check_finite("gamma", gamma)?;
    if gamma <= 0.0 {
        return Err(invalid("gamma", "must be > 0"));
    }
    let n = acq.n_samples();
    let dt = acq.dt();
    let window = n as f64 * dt;
    let mut analog = vec![0.0; n];
    for ev in events {
        if !(ev.time >= 0.0 && ev.time < window) {
            return Err(SipmError::EventOutsideWindow { time: ev.time, window });
        }
        if ev.cells == 0 {
            continue;
        }
        let cells = ev.cells as f64;
        let mut gain = gamma * cells;
        if acq.gain_spread > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            gain += gamma * acq.gain_spread * cells.sqrt() * z;
        }
        let s = if acq.fall_spread > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            shape.with_fall(shape.fall_tau * (1.0 + acq.fall_spread * z))
        } else {
            *shape
        };
        let first = (ev.time / dt).floor() as usize;
        let last = (((ev.time + s.extinction) / dt).ceil() as usize).min(n);
        let mut prev = s.cumulative((first as f64) * dt - ev.time);
        for (i, a) in analog.iter_mut().enumerate().take(last).skip(first) {
            let next = s.cumulative((i + 1) as f64 * dt - ev.time);
            *a += gain * (next - prev) / dt;
            prev = next;
        }
    }
    let cell_peak = gamma * shape.peak();
    let lsb = acq.lsb(cell_peak);
    let sigma = acq.noise_rel * cell_peak;
    let codes = analog
        .into_iter()
        .map(|v| {
            let noise = if sigma > 0.0 { sigma * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
            quantize(v + noise, lsb, acq.bits)
        })
        .collect();
    Ok(TraceRecord { codes, rate_hz: acq.rate_hz, bits: acq.bits, lsb, baseline_sigma: sigma })
}

/// Baseline-subtracted integral of the trace over the gate. Samples cut by
/// a gate edge are weighted by their overlap with the gate.
pub fn gate_integrate(trace: &TraceRecord, gate: &GateSpec) -> Result<f64> {
    gate.check(trace.window())?;
    let base = trace.baseline();
    let dt = trace.dt();
    let first = (gate.start / dt).floor() as usize;
    let last = ((gate.end() / dt).ceil() as usize).min(trace.codes.len());
    let mut sum = 0.0;
    for (i, &c) in trace.codes.iter().enumerate().take(last).skip(first) {
        let lo = (i as f64 * dt).max(gate.start);
        let hi = ((i + 1) as f64 * dt).min(gate.end());
        if hi > lo {
            sum += (c as f64 * trace.lsb - base) * (hi - lo);
        }
    }
    Ok(sum)
}

/// Largest baseline-subtracted sample in the search window.
pub fn peak_hold(trace: &TraceRecord, search: &GateSpec) -> Result<f64> {
    search.check(trace.window())?;
    let base = trace.baseline();
    let range = trace.sample_range(search);
    let max = trace.codes[range].iter().copied().max().ok_or(SipmError::EmptyInput("search window"))?;
    Ok(max as f64 * trace.lsb - base)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub threshold: f64,
    pub rate_hz: f64,
    pub count: u64,
    /// Total exposure in seconds.
    pub exposure_s: f64,
}

impl ScanPoint {
    pub fn rate_err(&self) -> f64 {
        (self.count.max(1) as f64).sqrt() / self.exposure_s
    }
}

/// Rate of upward threshold crossings (the dark-count staircase). After a
/// crossing, further crossings within `dead_time_ns` are ignored. The
/// baseline of each trace is its median.
pub fn threshold_scan(traces: &[TraceRecord], thresholds: &[f64], dead_time_ns: f64) -> Vec<ScanPoint> {
    let per_trace = par::map_slice(traces, |_, t| crossing_counts(t, thresholds, dead_time_ns));
    let exposure_s: f64 = traces.iter().map(|t| t.window() * 1e-9).sum();
    summarize_scan(thresholds, &per_trace, exposure_s)
}

/// Upward crossings of each threshold in one trace.
pub fn crossing_counts(t: &TraceRecord, thresholds: &[f64], dead_time_ns: f64) -> Vec<u64> {
    let base = t.median_baseline();
    let dead = (dead_time_ns / t.dt()).ceil() as usize;
    thresholds
        .iter()
        .map(|&thr| {
            let mut count = 0u64;
            let mut next_allowed = 0usize;
            let mut above = true;
            for (i, &c) in t.codes.iter().enumerate() {
                let now = c as f64 * t.lsb - base >= thr;
                if now && !above && i >= next_allowed {
                    count += 1;
                    next_allowed = i + dead;
                }
                above = now;
            }
            count
        })
        .collect()
}

pub(crate) fn summarize_scan(thresholds: &[f64], per_trace: &[Vec<u64>], exposure_s: f64) -> Vec<ScanPoint> {
    thresholds
        .iter()
        .enumerate()
        .map(|(j, &threshold)| {
            let count: u64 = per_trace.iter().map(|c| c[j]).sum();
            let rate_hz = if exposure_s > 0.0 { count as f64 / exposure_s } else { 0.0 };
            ScanPoint { threshold, rate_hz, count, exposure_s }
        })
        .collect()
}
