use serde::{Deserialize, Serialize};

use super::events::{place_events, TemporalXTParams, TimingModel};
use super::shape::PulseShape;
use super::synth::{crossing_counts, summarize_scan, synth_trace_with, ScanPoint};
use super::trace::{AcquisitionSpec, GateSpec, TraceRecord};
use crate::detector::DetectorParams;
use crate::error::{check_finite, invalid, Result, SipmError};
use crate::par::{self, domain};

/// Everything needed to turn per-shot photon numbers into traces. Only
/// `eta`, `gamma` of `detector` are used here: dark counts and cross talk
/// come from `timing`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub detector: DetectorParams,
    pub timing: TimingModel,
    pub shape: PulseShape,
    pub acq: AcquisitionSpec,
    /// Arrival time of the light pulse within the window (ns).
    pub laser_time: f64,
}

impl ChainConfig {
    /// Gate-integration setup: 250 MS/s, 12 bit, 500 ns window.
    pub fn digitizer() -> Self {
        ChainConfig {
            detector: DetectorParams { eta: 0.4, ..DetectorParams::ideal() },
            timing: TimingModel { dcr_hz: 160e3, xt: TemporalXTParams::default() },
            shape: PulseShape::default(),
            acq: AcquisitionSpec { fall_spread: 0.15, noise_rel: 0.03, ..AcquisitionSpec::default() },
            laser_time: 60.0,
        }
    }

    /// Shaped pulse read out by its height at 500 MS/s; the noise level is
    /// calibrated to a single-cell S/N near 13.
    pub fn peak_and_hold() -> Self {
        ChainConfig {
            detector: DetectorParams { eta: 0.4, ..DetectorParams::ideal() },
            timing: TimingModel { dcr_hz: 160e3, xt: TemporalXTParams::default() },
            shape: PulseShape { rise_tau: 5.0, fall_tau: 25.0, extinction: 150.0 },
            acq: AcquisitionSpec {
                rate_hz: 500_000_000,
                window_ns: 200.0,
                noise_rel: 0.12,
                ..AcquisitionSpec::default()
            },
            laser_time: 40.0,
        }
    }

    /// Fast discriminator-style pulse for dark threshold scans, 1 ms traces.
    pub fn discriminator() -> Self {
        ChainConfig {
            detector: DetectorParams { eta: 0.4, ..DetectorParams::ideal() },
            timing: TimingModel { dcr_hz: 140e3, xt: TemporalXTParams::default() },
            shape: PulseShape { rise_tau: 1.0, fall_tau: 4.0, extinction: 50.0 },
            acq: AcquisitionSpec { rate_hz: 500_000_000, window_ns: 1e6, ..AcquisitionSpec::default() },
            laser_time: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.timing.validate()?;
        self.shape.validate()?;
        self.acq.validate()?;
        check_finite("laser_time", self.laser_time)?;
        if !(self.laser_time >= 0.0 && self.laser_time < self.window()) {
            return Err(invalid("laser_time", "must lie inside the trace window"));
        }
        Ok(())
    }

    pub fn window(&self) -> f64 {
        self.acq.n_samples() as f64 * self.acq.dt()
    }

    /// Single-cell peak amplitude.
    pub fn cell_peak(&self) -> f64 {
        self.detector.gamma * self.shape.peak()
    }

    /// Gate of width `width` opening at the laser time.
    pub fn gate(&self, width: f64) -> Result<GateSpec> {
        let g = GateSpec::new(self.laser_time, width);
        g.check(self.window())?;
        Ok(g)
    }

    /// Trace for shot `index` with `photons` incident photons.
    pub fn shot_trace(&self, photons: u64, seed: u64, index: u64) -> Result<TraceRecord> {
        let mut rng = par::substream(seed, domain::TRACE, index);
        let events = place_events(photons, &self.detector, &self.timing, self.window(), self.laser_time, &mut rng)?;
        synth_trace_with(&events, &self.shape, &self.acq, self.detector.gamma, &mut rng)
    }

    /// Simulates one trace per entry of `photons` and reduces each with `f`,
    /// without keeping the traces.
    pub fn run<T, F>(&self, photons: &[u64], seed: u64, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&TraceRecord) -> Result<T> + Sync + Send,
    {
        self.validate()?;
        par::map_slice(photons, |i, &n| self.shot_trace(n, seed, i as u64).and_then(|t| f(&t))).into_iter().collect()
    }

    /// Gate integrals (in gain units) for every shot and every gate width.
    /// Returns one vector per gate.
    pub fn integrate_gates(&self, photons: &[u64], widths: &[f64], seed: u64) -> Result<Vec<Vec<f64>>> {
        let gates = widths.iter().map(|&w| self.gate(w)).collect::<Result<Vec<_>>>()?;
        let per_shot = self.run(photons, seed, |t| {
            gates.iter().map(|g| super::synth::gate_integrate(t, g)).collect::<Result<Vec<f64>>>()
        })?;
        Ok((0..gates.len()).map(|j| per_shot.iter().map(|v| v[j]).collect()).collect())
    }

    /// Peak-and-hold heights in a search window of `width` at the laser time.
    pub fn peak_heights(&self, photons: &[u64], width: f64, seed: u64) -> Result<Vec<f64>> {
        let g = self.gate(width)?;
        self.run(photons, seed, |t| super::synth::peak_hold(t, &g))
    }

    /// Threshold scan over `n_traces` dark traces, generated and scanned one
    /// at a time. Dead time is one pulse extinction.
    pub fn dark_scan(&self, n_traces: usize, thresholds: &[f64], seed: u64) -> Result<Vec<ScanPoint>> {
        if n_traces == 0 {
            return Err(SipmError::EmptyInput("dark traces"));
        }
        let zeros = vec![0u64; n_traces];
        let dead = self.shape.extinction;
        let per_trace = self.run(&zeros, seed ^ domain::DARK_SCAN, |t| Ok(crossing_counts(t, thresholds, dead)))?;
        let exposure = n_traces as f64 * self.window() * 1e-9;
        Ok(summarize_scan(thresholds, &per_trace, exposure))
    }
}
