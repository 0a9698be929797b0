use sipm_core::detector::output_distribution;
use sipm_core::estimators::*;
use sipm_core::sources::sample_shots;
use sipm_core::waveform::{eps_effective, ChainConfig};
use sipm_core::{DetectorParams, ShotCounts, SourceSpec};

#[test]
fn full_gate_counts_match_detector_model() {
    let chain = ChainConfig::digitizer();
    let gate = 350.0;
    let n = 100_000;
    let eps = eps_effective(&chain.timing.xt, gate).unwrap();

    let dark = chain.integrate_gates(&vec![0; n], &[gate], 1).unwrap();
    let dark_k = ShotCounts { counts: assign_k(&dark[0], 1.0, 0.0).unwrap(), seed: 1 };
    let dc = dark_k.mean() / (1.0 + eps);

    let spec = SourceSpec::coherent(5.0);
    let photons = sample_shots(&spec, n, 2).unwrap();
    let lit = chain.integrate_gates(&photons.counts, &[gate], 3).unwrap();
    let k = ShotCounts { counts: assign_k(&lit[0], 1.0, 0.0).unwrap(), seed: 3 };

    let params = DetectorParams::new(chain.detector.eta, dc, eps, 1.0).unwrap();
    let theory = output_distribution(&spec.pmf().unwrap(), &params).unwrap();
    let g = gof_pmf(&k, &theory, 1).unwrap();
    assert!(g.p_value > 0.001, "chi2 {} / {} (p = {}), dc {dc}", g.chi2, g.dof, g.p_value);
}

#[test]
fn dark_contribution_grows_with_gate() {
    let chain = ChainConfig::digitizer();
    let gates = [50.0, 100.0, 200.0, 350.0];
    let n = 100_000;
    let ints = chain.integrate_gates(&vec![0; n], &gates, 4).unwrap();
    let means: Vec<f64> =
        ints.iter().map(|v| assign_k(v, 1.0, 0.0).unwrap().iter().sum::<u64>() as f64 / n as f64).collect();
    assert!(means.windows(2).all(|w| w[1] > w[0]), "{means:?}");
    let rate = chain.timing.dcr_hz * (1.0 + chain.timing.xt.eps0);
    for (i, &t) in gates.iter().enumerate().skip(1) {
        let slope = (means[i] - means[0]) / ((t - gates[0]) * 1e-9);
        let err = (means[i] / n as f64).sqrt() / ((t - gates[0]) * 1e-9);
        assert!((slope - rate).abs() < 4.0 * err + 0.05 * rate, "T={t}: {slope} vs {rate}");
    }
}

#[test]
fn snr_peaks_near_pulse_extinction() {
    let chain = ChainConfig::digitizer();
    let gates: Vec<f64> = (1..=14).map(|i| 25.0 * i as f64).collect();
    let photons = sample_shots(&SourceSpec::coherent(2.5), 40_000, 5).unwrap();
    let ints = chain.integrate_gates(&photons.counts, &gates, 6).unwrap();
    let snr: Vec<f64> = ints
        .iter()
        .map(|v| {
            let spec = build_spectrum(v, 0.005).unwrap();
            let gamma = fit_gamma(&spec, 6).unwrap().value("gamma");
            snr_integral(&spec, gamma).unwrap()
        })
        .collect();
    let best = snr.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert!((100.0..=250.0).contains(&gates[best]), "argmax {} ns, {snr:?}", gates[best]);
}

#[test]
fn peak_hold_zero_peak_is_shifted_and_skewed() {
    let chain = ChainConfig::peak_and_hold();
    let h = chain.peak_heights(&vec![0; 30_000], 40.0, 7).unwrap();
    let cell = chain.cell_peak();
    let mut z: Vec<f64> = h.iter().map(|v| v / cell).filter(|v| v.abs() < 0.5).collect();
    z.sort_by(f64::total_cmp);
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let m2 = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = z.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    assert!(z[z.len() / 2] > 0.0);
    assert!(m3 / m2.powf(1.5) > 0.0);
}

#[test]
fn trace_dump_round_trip() {
    let chain = ChainConfig::digitizer();
    let t = chain.shot_trace(3, 8, 0).unwrap();
    let mut buf = Vec::new();
    t.write_binary(&mut buf).unwrap();
    let back = sipm_core::waveform::TraceRecord::read_binary(&mut buf.as_slice()).unwrap().unwrap();
    assert_eq!(back.codes, t.codes);
    assert_eq!(back.rate_hz, t.rate_hz);
}
