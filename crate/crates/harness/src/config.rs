//! Experiment configuration: TOML file, `--set` overrides, validation and
//! normalization.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sipm_core::detector::{DEFAULT_CELLS, EPS_MAX};
use sipm_core::sources::od_factors;
use sipm_core::waveform::{AcquisitionSpec, ChainConfig, PulseShape, TemporalXTParams, TimingModel};
use sipm_core::{DetectorParams, SourceKind, SourceSpec};

use crate::scenarios::BUILTIN;

/// Smallest allowed attenuation factor (two optical densities).
pub const MIN_FACTOR: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Shots per intensity point and gate.
    pub trials: usize,
    /// Attenuation factors, applied by independent thinning of one stream.
    pub intensity_scan: Vec<f64>,
    /// Scenarios run by `reproduce all`. Empty means every builtin.
    pub scenarios: Vec<String>,
    pub source: SourceSection,
    pub detector: DetectorSection,
    pub temporal_xt: TemporalXTParams,
    pub acquisition: AcquisitionSection,
    pub pulse: PulseSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSection {
    pub kind: SourceKind,
    pub mean_photons: f64,
    /// Mode number, used by thermal light only.
    pub modes: f64,
}

/// Detector parameters. `mean_dc` and `eps` apply to `simulate`; the
/// scenarios derive both per gate from `dcr_hz` and `[temporal_xt]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub eta: f64,
    pub mean_dc: f64,
    pub eps: f64,
    pub gamma: f64,
    pub n_cells: u32,
    pub saturation_enabled: bool,
    pub dcr_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AcquisitionMode {
    Gates,
    PeakAndHold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionSection {
    pub mode: AcquisitionMode,
    pub gates_ns: Vec<f64>,
    pub hold_ns: f64,
    pub rate_hz: u64,
    pub bits: u8,
    pub window_ns: f64,
    pub laser_ns: f64,
    pub noise_rel: f64,
    pub full_scale_cells: f64,
    pub gain_spread: f64,
    pub fall_spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulseSection {
    pub rise_ns: f64,
    pub fall_ns: f64,
    pub extinction_ns: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            trials: 120_000,
            intensity_scan: od_factors(8, 2.0),
            scenarios: Vec::new(),
            source: SourceSection::default(),
            detector: DetectorSection::default(),
            temporal_xt: TemporalXTParams::default(),
            acquisition: AcquisitionSection::default(),
            pulse: PulseSection::default(),
        }
    }
}

impl Default for SourceSection {
    fn default() -> Self {
        SourceSection { kind: SourceKind::Coherent, mean_photons: 10.0, modes: 1.2234 }
    }
}

impl Default for DetectorSection {
    fn default() -> Self {
        DetectorSection {
            eta: 0.4,
            mean_dc: 0.016,
            eps: 0.0219,
            gamma: 1.0,
            n_cells: DEFAULT_CELLS,
            saturation_enabled: false,
            dcr_hz: 160e3,
        }
    }
}

impl Default for AcquisitionSection {
    fn default() -> Self {
        let d = ChainConfig::digitizer();
        AcquisitionSection {
            mode: AcquisitionMode::Gates,
            gates_ns: vec![50.0, 70.0, 100.0, 350.0],
            hold_ns: 40.0,
            rate_hz: d.acq.rate_hz,
            bits: d.acq.bits,
            window_ns: d.acq.window_ns,
            laser_ns: d.laser_time,
            noise_rel: d.acq.noise_rel,
            full_scale_cells: d.acq.full_scale_cells,
            gain_spread: d.acq.gain_spread,
            fall_spread: d.acq.fall_spread,
        }
    }
}

impl Default for PulseSection {
    fn default() -> Self {
        let s = PulseShape::default();
        PulseSection { rise_ns: s.rise_tau, fall_ns: s.fall_tau, extinction_ns: s.extinction }
    }
}

/// One validation problem, tied to the dotted path of the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct Issue {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ConfigError {
    pub issues: Vec<Issue>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration ({} issue(s)):", self.issues.len())?;
        for i in &self.issues {
            writeln!(f, "  {i}")?;
        }
        Ok(())
    }
}

impl ConfigError {
    fn single(field: &str, message: impl Into<String>) -> Self {
        ConfigError { issues: vec![Issue { field: field.into(), message: message.into() }] }
    }

    /// True if some issue names `field`.
    pub fn mentions(&self, field: &str) -> bool {
        self.issues.iter().any(|i| i.field.split(", ").any(|f| f == field))
    }
}

#[derive(Default)]
struct Issues(Vec<Issue>);

impl Issues {
    fn push(&mut self, field: &str, message: impl Into<String>) {
        self.0.push(Issue { field: field.into(), message: message.into() });
    }

    fn range(&mut self, field: &str, v: f64, lo: f64, hi: f64, hi_open: bool) {
        let ok = v.is_finite() && v >= lo && if hi_open { v < hi } else { v <= hi };
        if !ok {
            let close = if hi_open { ")" } else { "]" };
            self.push(field, format!("must be in [{lo}, {hi}{close}, got {v}"));
        }
    }

    fn non_negative(&mut self, field: &str, v: f64) {
        if !(v.is_finite() && v >= 0.0) {
            self.push(field, format!("must be finite and >= 0, got {v}"));
        }
    }

    fn positive(&mut self, field: &str, v: f64) {
        if !(v.is_finite() && v > 0.0) {
            self.push(field, format!("must be finite and > 0, got {v}"));
        }
    }
}

/// Parses a TOML document and applies `KEY=VALUE` overrides (values are TOML
/// literals; anything that does not parse is taken as a string).
pub fn load(text: &str, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let mut table: toml::Table =
        text.parse().map_err(|e: toml::de::Error| ConfigError::single("<file>", e.message()))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    // Round trip through text so errors point at the offending line.
    let text = toml::to_string(&table).map_err(|e| ConfigError::single("<config>", e.to_string()))?;
    toml::from_str(&text).map_err(|e: toml::de::Error| ConfigError::single("<config>", e.to_string().trim_end()))
}

/// Reads `path` (or starts from defaults when `None`) and applies overrides.
pub fn load_path(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| ConfigError::single("--config", format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    load(&text, overrides)
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::single("--set", format!("expected KEY=VALUE, got `{spec}`")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::single("--set", format!("malformed key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| ConfigError::single(key, format!("`{p}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Checks every field and cross-field constraint, collecting all
    /// problems. Returns the normalized config on success.
    pub fn validate(&self) -> Result<ExperimentConfig, ConfigError> {
        let mut is = Issues::default();
        if self.trials == 0 {
            is.push("trials", "must be >= 1");
        }
        if self.intensity_scan.len() < 2 {
            is.push(
                "intensity_scan",
                format!("need at least 2 attenuation factors, got {}", self.intensity_scan.len()),
            );
        }
        for (i, &f) in self.intensity_scan.iter().enumerate() {
            is.range(&format!("intensity_scan[{i}]"), f, MIN_FACTOR, 1.0, false);
        }
        for s in &self.scenarios {
            if s != "all" && !BUILTIN.iter().any(|b| b.name == s) {
                is.push("scenarios", format!("unknown scenario `{s}`; known: {}", known_list()));
            }
        }

        let src = &self.source;
        is.non_negative("source.mean_photons", src.mean_photons);
        if !(src.modes.is_finite() && src.modes >= 1.0) {
            is.push("source.modes", format!("must be >= 1, got {}", src.modes));
        }

        let d = &self.detector;
        is.range("detector.eta", d.eta, 0.0, 1.0, false);
        is.non_negative("detector.mean_dc", d.mean_dc);
        if !(d.eps.is_finite() && (0.0..1.0).contains(&d.eps)) {
            is.push("detector.eps", format!("must be in [0, 1), got {}", d.eps));
        } else if d.eps >= EPS_MAX {
            is.push("detector.eps", format!("must be < {EPS_MAX} for the first-order cascade, got {}", d.eps));
        }
        is.positive("detector.gamma", d.gamma);
        if d.n_cells == 0 {
            is.push("detector.n_cells", "must be >= 1");
        }
        is.non_negative("detector.dcr_hz", d.dcr_hz);

        let xt = &self.temporal_xt;
        is.range("temporal_xt.eps0", xt.eps0, 0.0, 1.0, true);
        is.non_negative("temporal_xt.a", xt.a);
        is.positive("temporal_xt.tau_xc", xt.tau_xc);
        if xt.eps0 + xt.a >= EPS_MAX {
            is.push("temporal_xt.eps0, temporal_xt.a", format!("eps0 + a must be < {EPS_MAX}"));
        }

        let p = &self.pulse;
        is.positive("pulse.rise_ns", p.rise_ns);
        is.positive("pulse.extinction_ns", p.extinction_ns);
        if !(p.fall_ns > p.rise_ns) {
            is.push("pulse.fall_ns, pulse.rise_ns", "fall time must exceed rise time");
        }

        let a = &self.acquisition;
        if a.rate_hz == 0 {
            is.push("acquisition.rate_hz", "must be > 0");
        }
        if !(2..=16).contains(&a.bits) {
            is.push("acquisition.bits", format!("must be in [2, 16], got {}", a.bits));
        }
        is.positive("acquisition.window_ns", a.window_ns);
        is.non_negative("acquisition.laser_ns", a.laser_ns);
        is.non_negative("acquisition.noise_rel", a.noise_rel);
        is.positive("acquisition.full_scale_cells", a.full_scale_cells);
        is.non_negative("acquisition.gain_spread", a.gain_spread);
        is.non_negative("acquisition.fall_spread", a.fall_spread);
        is.positive("acquisition.hold_ns", a.hold_ns);
        if a.gates_ns.is_empty() {
            is.push("acquisition.gates_ns", "need at least one gate width");
        }
        for (i, &g) in a.gates_ns.iter().enumerate() {
            is.positive(&format!("acquisition.gates_ns[{i}]"), g);
        }
        if a.laser_ns >= 0.0 && a.window_ns > 0.0 && a.laser_ns >= a.window_ns {
            is.push("acquisition.laser_ns, acquisition.window_ns", "laser time must lie inside the window");
        }
        let room = a.window_ns - a.laser_ns;
        for (i, &g) in a.gates_ns.iter().enumerate() {
            if g > room {
                is.push(
                    &format!("acquisition.gates_ns[{i}], acquisition.window_ns"),
                    format!("gate of {g} ns opened at {} ns exceeds the {} ns window", a.laser_ns, a.window_ns),
                );
            }
        }
        if a.hold_ns > room {
            is.push(
                "acquisition.hold_ns, acquisition.window_ns",
                format!("hold of {} ns opened at {} ns exceeds the {} ns window", a.hold_ns, a.laser_ns, a.window_ns),
            );
        }

        if !is.0.is_empty() {
            return Err(ConfigError { issues: is.0 });
        }
        // Catch anything the core types reject that the checks above missed.
        let chain = self.chain();
        if let Err(e) = chain.validate().and(self.simulate_detector().validate()).and(self.source_spec().validate()) {
            return Err(ConfigError::single("<config>", e.to_string()));
        }
        Ok(self.normalized())
    }

    fn normalized(&self) -> ExperimentConfig {
        let mut c = self.clone();
        let mut seen = std::collections::BTreeSet::new();
        c.scenarios.retain(|s| seen.insert(s.clone()));
        c
    }

    /// Canonical TOML text of the config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn source_spec(&self) -> SourceSpec {
        match self.source.kind {
            SourceKind::Coherent => SourceSpec::coherent(self.source.mean_photons),
            SourceKind::MultimodeThermal => SourceSpec::thermal(self.source.mean_photons, self.source.modes),
        }
    }

    /// Detector used by `simulate`.
    pub fn simulate_detector(&self) -> DetectorParams {
        let d = &self.detector;
        DetectorParams {
            eta: d.eta,
            mean_dc: d.mean_dc,
            eps: d.eps,
            gamma: d.gamma,
            n_cells: d.n_cells,
            saturation_enabled: d.saturation_enabled,
        }
    }

    pub fn timing(&self) -> TimingModel {
        TimingModel { dcr_hz: self.detector.dcr_hz, xt: self.temporal_xt }
    }

    /// Waveform chain described by `[acquisition]` and `[pulse]`.
    pub fn chain(&self) -> ChainConfig {
        let a = &self.acquisition;
        ChainConfig {
            detector: DetectorParams { eta: self.detector.eta, gamma: self.detector.gamma, ..DetectorParams::ideal() },
            timing: self.timing(),
            shape: PulseShape {
                rise_tau: self.pulse.rise_ns,
                fall_tau: self.pulse.fall_ns,
                extinction: self.pulse.extinction_ns,
            },
            acq: AcquisitionSpec {
                rate_hz: a.rate_hz,
                bits: a.bits,
                window_ns: a.window_ns,
                noise_rel: a.noise_rel,
                full_scale_cells: a.full_scale_cells,
                gain_spread: a.gain_spread,
                fall_spread: a.fall_spread,
            },
            laser_time: a.laser_ns,
        }
    }
}

pub fn known_list() -> String {
    BUILTIN.iter().map(|b| b.name).collect::<Vec<_>>().join(", ")
}
