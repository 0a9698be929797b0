use serde::{Deserialize, Serialize};

use crate::error::{check_finite, invalid, Result};

/// Single-cell pulse `e^(-t/fall) - e^(-t/rise)`, cut at `extinction` and
/// scaled so that it integrates to the gain over `[0, extinction]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseShape {
    pub rise_tau: f64,
    pub fall_tau: f64,
    #[serde(default = "default_extinction")]
    pub extinction: f64,
}

fn default_extinction() -> f64 {
    150.0
}

impl Default for PulseShape {
    fn default() -> Self {
        PulseShape { rise_tau: 2.0, fall_tau: 40.0, extinction: 150.0 }
    }
}

impl PulseShape {
    pub fn new(rise_tau: f64, fall_tau: f64, extinction: f64) -> Result<Self> {
        let s = PulseShape { rise_tau, fall_tau, extinction };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        check_finite("rise_tau", self.rise_tau)?;
        check_finite("fall_tau", self.fall_tau)?;
        check_finite("extinction", self.extinction)?;
        if self.rise_tau <= 0.0 {
            return Err(invalid("rise_tau", "must be > 0"));
        }
        if self.rise_tau >= self.fall_tau {
            return Err(invalid("fall_tau", "must exceed rise_tau"));
        }
        if self.extinction <= 0.0 {
            return Err(invalid("extinction", "must be > 0"));
        }
        Ok(())
    }

    /// Same shape with a different fall time, e.g. for per-avalanche spread.
    pub fn with_fall(&self, fall_tau: f64) -> Self {
        PulseShape { fall_tau: fall_tau.max(self.rise_tau * 1.001), ..*self }
    }

    /// Unnormalized integral of the pulse over `[0, t]`.
    fn raw_cumulative(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.extinction);
        self.fall_tau * -(-t / self.fall_tau).exp_m1() - self.rise_tau * -(-t / self.rise_tau).exp_m1()
    }

    fn norm(&self) -> f64 {
        self.raw_cumulative(self.extinction)
    }

    /// Fraction of the full charge collected over `[0, t]`.
    pub fn cumulative(&self, t: f64) -> f64 {
        self.raw_cumulative(t) / self.norm()
    }

    /// Amplitude at time `t` after onset for unit gain (units: gain per ns).
    pub fn value(&self, t: f64) -> f64 {
        if !(0.0..=self.extinction).contains(&t) {
            return 0.0;
        }
        ((-t / self.fall_tau).exp() - (-t / self.rise_tau).exp()) / self.norm()
    }

    pub fn peak_time(&self) -> f64 {
        let (r, f) = (self.rise_tau, self.fall_tau);
        (r * f / (f - r) * (f / r).ln()).min(self.extinction)
    }

    /// Peak amplitude for unit gain.
    pub fn peak(&self) -> f64 {
        self.value(self.peak_time())
    }

    /// Mean amplitude over `[a, b]` (relative to onset) for unit gain.
    pub fn bin_average(&self, a: f64, b: f64) -> f64 {
        (self.cumulative(b) - self.cumulative(a)) / (b - a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_over_extinction() {
        let s = PulseShape::default();
        assert!((s.cumulative(150.0) - 1.0).abs() < 1e-15);
        assert!((s.cumulative(1e9) - 1.0).abs() < 1e-15);
        assert_eq!(s.cumulative(-1.0), 0.0);
        // Trapezoid check of the normalization.
        let n = 200_000;
        let dt = 150.0 / n as f64;
        let sum: f64 = (0..n).map(|i| 0.5 * (s.value(i as f64 * dt) + s.value((i + 1) as f64 * dt)) * dt).sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn partial_gate_collects_less() {
        let s = PulseShape::default();
        let c50 = s.cumulative(50.0);
        assert!(c50 < 1.0);
        let expect = (40.0 * (1.0 - (-1.25f64).exp()) - 2.0 * (1.0 - (-25.0f64).exp()))
            / (40.0 * (1.0 - (-3.75f64).exp()) - 2.0 * (1.0 - (-75.0f64).exp()));
        assert!((c50 - expect).abs() < 1e-12);
    }

    #[test]
    fn peak_is_maximum() {
        let s = PulseShape::default();
        let tp = s.peak_time();
        assert!(s.value(tp) >= s.value(tp - 0.01) && s.value(tp) >= s.value(tp + 0.01));
    }

    #[test]
    fn rejects_inverted_times() {
        assert!(PulseShape::new(40.0, 2.0, 150.0).is_err());
        assert!(PulseShape::new(0.0, 2.0, 150.0).is_err());
    }
}
