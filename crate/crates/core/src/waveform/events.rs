use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detector::DetectorParams;
use crate::error::{check_finite, invalid, Result, SipmError};
use crate::sources::{binomial_draw, poisson_draw};

/// Prompt and delayed cross talk. The delayed density is `a e^(-t/tau_xc)`
/// with `a` dimensionless.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemporalXTParams {
    pub eps0: f64,
    pub a: f64,
    pub tau_xc: f64,
}

impl Default for TemporalXTParams {
    fn default() -> Self {
        TemporalXTParams { eps0: 0.0219, a: 0.0004, tau_xc: 53.0 }
    }
}

impl TemporalXTParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eps0", self.eps0), ("a", self.a), ("tau_xc", self.tau_xc)] {
            check_finite(name, v)?;
            if v < 0.0 {
                return Err(invalid(name, "must be >= 0"));
            }
        }
        if self.tau_xc == 0.0 {
            return Err(invalid("tau_xc", "must be > 0"));
        }
        if self.eps0 + self.a >= 1.0 {
            return Err(invalid("eps0", "eps0 + a must be < 1"));
        }
        Ok(())
    }

    /// Probability of a delayed secondary anywhere in the following `span` ns.
    pub fn delayed_probability(&self, span: f64) -> f64 {
        if span <= 0.0 || self.a == 0.0 {
            return 0.0;
        }
        let x = span / self.tau_xc;
        self.a * -(-x).exp_m1() / x
    }
}

/// Effective cross-talk probability for gate width `gate_t` (ns):
/// `eps0 + (tau/T) a (1 - e^(-T/tau))`.
pub fn eps_effective(xt: &TemporalXTParams, gate_t: f64) -> Result<f64> {
    check_finite("gate_t", gate_t)?;
    if gate_t <= 0.0 {
        return Err(invalid("gate_t", format!("must be > 0, got {gate_t}")));
    }
    xt.validate()?;
    Ok(xt.eps0 + xt.delayed_probability(gate_t))
}

/// Dark-count rate and cross-talk timing used when placing avalanches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingModel {
    pub dcr_hz: f64,
    pub xt: TemporalXTParams,
}

impl TimingModel {
    pub fn validate(&self) -> Result<()> {
        check_finite("dcr_hz", self.dcr_hz)?;
        if self.dcr_hz < 0.0 {
            return Err(invalid("dcr_hz", "must be >= 0"));
        }
        self.xt.validate()
    }

    /// Mean dark avalanches in a gate of `width_ns`.
    pub fn mean_dark(&self, width_ns: f64) -> f64 {
        self.dcr_hz * width_ns * 1e-9
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    Photon,
    Dark,
    PromptXt,
    DelayedXt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Avalanche {
    pub time: f64,
    pub cells: u32,
    pub origin: Origin,
}

impl Avalanche {
    pub fn new(time: f64, cells: u32) -> Self {
        Avalanche { time, cells, origin: Origin::Photon }
    }
}

/// Places the avalanches of one shot of `photons` photons in `[0, window)`.
///
/// Detected photons fire at `laser_time`; dark avalanches form a homogeneous
/// Poisson process. Each primary avalanche spawns at most one secondary:
/// prompt with probability `eps0`, otherwise delayed with the probability
/// of the exponential density integrated over the rest of the window.
pub fn place_events<R: Rng + ?Sized>(
    photons: u64,
    params: &DetectorParams,
    timing: &TimingModel,
    window: f64,
    laser_time: f64,
    rng: &mut R,
) -> Result<Vec<Avalanche>> {
    if !(laser_time >= 0.0 && laser_time < window) {
        return Err(SipmError::EventOutsideWindow { time: laser_time, window });
    }
    let detected = binomial_draw(photons, params.eta, rng);
    let n_dark = poisson_draw(timing.mean_dark(window), rng);
    let mut primaries = Vec::with_capacity((detected + n_dark) as usize);
    for _ in 0..detected {
        primaries.push(Avalanche { time: laser_time, cells: 1, origin: Origin::Photon });
    }
    for _ in 0..n_dark {
        let t = rng.random::<f64>() * window;
        primaries.push(Avalanche { time: t, cells: 1, origin: Origin::Dark });
    }
    let xt = &timing.xt;
    let mut out = primaries.clone();
    for p in &primaries {
        let u: f64 = rng.random();
        if u < xt.eps0 {
            out.push(Avalanche { time: p.time, cells: 1, origin: Origin::PromptXt });
            continue;
        }
        let span = window - p.time;
        if u < xt.eps0 + xt.delayed_probability(span) {
            let v: f64 = rng.random();
            let tail = -(-span / xt.tau_xc).exp_m1();
            let offset = (-xt.tau_xc * (-v * tail).ln_1p()).min(span * (1.0 - 1e-12));
            out.push(Avalanche { time: p.time + offset, cells: 1, origin: Origin::DelayedXt });
        }
    }
    Ok(out)
}

/// Cells fired in `[start, end)`.
pub fn cells_in(events: &[Avalanche], start: f64, end: f64) -> u64 {
    events.iter().filter(|e| e.time >= start && e.time < end).map(|e| e.cells as u64).sum()
}
