//! Acquisition chain: avalanche timing, pulse synthesis, digitization and
//! the per-shot readouts (gate integral, peak height, threshold crossings).

mod chain;
mod events;
mod shape;
mod synth;
mod trace;

pub use chain::ChainConfig;
pub use events::{cells_in, eps_effective, place_events, Avalanche, Origin, TemporalXTParams, TimingModel};
pub use shape::PulseShape;
pub use synth::{crossing_counts, gate_integrate, peak_hold, synth_trace, synth_trace_with, threshold_scan, ScanPoint};
pub use trace::{quantize, AcquisitionSpec, GateSpec, TraceRecord};
