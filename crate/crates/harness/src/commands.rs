//! `simulate` and `analyze`, the two non-scenario subcommands.

use std::io::Write;

use sipm_core::detector::{mc_detect, output_distribution, output_moments};
use sipm_core::estimators::{assign_k, build_spectrum, fit_gamma, gof_pmf, peaks, snr_integral};
use sipm_core::fit::FitResult;
use sipm_core::par::{derive_seed, domain, map_indexed};
use sipm_core::sources::sample_shots;
use sipm_core::waveform::{gate_integrate, peak_hold, GateSpec, TraceRecord};
use sipm_core::{ShotCounts, SipmError};

use crate::bundle::{scalars, Curve, ScenarioOutput};
use crate::config::{AcquisitionMode, ExperimentConfig};
use crate::scenarios::ScenarioError;

fn fail(scenario: &'static str, stage: &'static str) -> impl Fn(SipmError) -> ScenarioError {
    move |source| ScenarioError { scenario: scenario.to_string(), stage, source }
}

/// Detector-level Monte Carlo of the configured source and detector,
/// compared with the analytic output distribution.
pub fn simulate(cfg: &ExperimentConfig) -> Result<ScenarioOutput, ScenarioError> {
    let f = |s| fail("simulate", s);
    let spec = cfg.source_spec();
    let params = cfg.simulate_detector();
    let shots = sample_shots(&spec, cfg.trials, derive_seed(cfg.seed, domain::SOURCE, 0)).map_err(f("source"))?;
    let k = mc_detect(&shots, &params, derive_seed(cfg.seed, domain::DETECT, 0)).map_err(f("detector"))?;
    let src = spec.pmf().map_err(f("source"))?;
    let theory = output_distribution(&src, &params).map_err(f("detector"))?;
    let m = output_moments(src.mean(), src.variance(), &params).map_err(f("detector"))?;
    let gof = gof_pmf(&k, &theory, 0).map_err(f("goodness of fit"))?;

    let mut out = ScenarioOutput::default();
    let hist = k.histogram();
    let n = k.len() as f64;
    let mut c = Curve::new(&["k", "freq", "freq_err", "model"]);
    for j in 0..hist.len().max(theory.n_max() + 1) {
        let h = hist.get(j).copied().unwrap_or(0) as f64;
        c.push(vec![j as f64, h / n, h.sqrt() / n, theory.p(j)]);
    }
    out.curve("counts", c);
    out.row(
        "summary",
        "simulated vs analytic",
        scalars(&[
            ("mean_k", k.mean()),
            ("mean_k_theory", m.mean_k),
            ("var_k", k.variance()),
            ("var_k_theory", m.var_x / (params.gamma * params.gamma)),
            ("mandel_q_theory", m.mandel_q),
            ("chi2", gof.chi2),
            ("dof", gof.dof as f64),
            ("p_value", gof.p_value),
        ]),
    );
    Ok(out)
}

/// Renders `n` traces of the configured chain with photons drawn from the
/// configured source and writes them in the binary dump format.
pub fn dump_traces<W: Write>(cfg: &ExperimentConfig, n: usize, mut w: W) -> Result<(), ScenarioError> {
    let f = |s| fail("simulate", s);
    let chain = cfg.chain();
    chain.validate().map_err(f("acquisition"))?;
    let shots = sample_shots(&cfg.source_spec(), n, derive_seed(cfg.seed, domain::SOURCE, 1)).map_err(f("source"))?;
    let seed = derive_seed(cfg.seed, domain::TRACE, 1);
    for (i, &p) in shots.counts.iter().enumerate() {
        let t = chain.shot_trace(p, seed, i as u64).map_err(f("acquisition"))?;
        t.write_binary(&mut w).map_err(f("output"))?;
    }
    Ok(())
}

/// One eighth of the Freedman-Diaconis width, floored at 1/4000 of the data
/// range. The plain rule targets smooth densities and merges photon peaks.
pub fn auto_bin_width(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.len() < 2 {
        return 1.0;
    }
    v.sort_by(f64::total_cmp);
    let q = |p: f64| v[((v.len() - 1) as f64 * p).round() as usize];
    let iqr = q(0.75) - q(0.25);
    let range = v[v.len() - 1] - v[0];
    let fd = 0.25 * iqr / (v.len() as f64).cbrt();
    let floor = range / 4000.0;
    let w = fd.max(floor);
    if w > 0.0 {
        w
    } else {
        1.0
    }
}

/// Reduces imported traces to amplitudes (gate integral or peak height at
/// the configured laser time), calibrates the gain and classifies counts.
pub fn analyze(
    cfg: &ExperimentConfig,
    traces: &[TraceRecord],
    bin_width: Option<f64>,
) -> Result<ScenarioOutput, ScenarioError> {
    let f = |s| fail("analyze", s);
    if traces.is_empty() {
        return Err(f("input")(SipmError::EmptyInput("trace dump")));
    }
    let a = &cfg.acquisition;
    let (width, what) = match a.mode {
        AcquisitionMode::Gates => (a.gates_ns[0], "gate integral"),
        AcquisitionMode::PeakAndHold => (a.hold_ns, "peak height"),
    };
    let gate = GateSpec::new(a.laser_ns, width);
    let values = map_indexed(traces.len(), |i| {
        let t = &traces[i];
        gate.check(t.window())?;
        match a.mode {
            AcquisitionMode::Gates => gate_integrate(t, &gate),
            AcquisitionMode::PeakAndHold => peak_hold(t, &gate),
        }
    })
    .into_iter()
    .collect::<sipm_core::Result<Vec<f64>>>()
    .map_err(f("readout"))?;

    let bw = bin_width.unwrap_or_else(|| auto_bin_width(&values));
    let spec = build_spectrum(&values, bw).map_err(f("spectrum"))?;
    let fit = fit_gamma(&spec, 8).map_err(f("gain fit"))?;
    let gamma = fit.value("gamma");
    let pk = peaks(&fit, bw);
    let first = pk[0].center;
    let first_k = (first / gamma).round().max(0.0);
    let k = assign_k(&values, gamma, first - first_k * gamma).map_err(f("classification"))?;
    let k = ShotCounts { counts: k, seed: 0 };

    let mut out = ScenarioOutput::default();
    let mut c = Curve::new(&["x", "counts"]);
    for (x, &n) in spec.centers().into_iter().zip(&spec.counts) {
        c.push(vec![x, n as f64]);
    }
    out.curve("spectrum", c);
    let mut h = Curve::new(&["k", "shots"]);
    for (j, &n) in k.histogram().iter().enumerate() {
        h.push(vec![j as f64, n as f64]);
    }
    out.curve("counts", h);
    let mut summary = FitResult::default();
    summary.insert_derived("gamma", gamma, fit.error("gamma"), 1.96);
    for (name, v) in [
        ("traces", traces.len() as f64),
        ("window_ns", width),
        ("bin_width", bw),
        ("n_peaks", pk.len() as f64),
        ("snr_integral", snr_integral(&spec, gamma).unwrap_or(f64::NAN)),
        ("mean_k", k.mean()),
        ("fano_k", k.fano()),
    ] {
        summary.insert_derived(name, v, 0.0, 0.0);
    }
    out.row("summary", what, summary);
    out.row("peak_fits", "spectrum", fit);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auto_bin_width_is_positive() {
        assert_eq!(auto_bin_width(&[]), 1.0);
        assert_eq!(auto_bin_width(&[2.0, 2.0, 2.0]), 1.0);
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let w = auto_bin_width(&v);
        assert!((w - 0.25 * 499.5 / 10.0).abs() < 0.5, "{w}");
    }

    #[test]
    fn simulate_reports_agreement() {
        let cfg = ExperimentConfig { trials: 20_000, ..Default::default() };
        let out = simulate(&cfg).unwrap();
        let row = &out.table("summary")[0].fit;
        assert!((row.value("mean_k") / row.value("mean_k_theory") - 1.0).abs() < 0.02);
        assert!(row.value("p_value") > 1e-4);
    }
}
