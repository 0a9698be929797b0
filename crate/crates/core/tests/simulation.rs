use sipm_core::detector::{mc_detect, output_distribution};
use sipm_core::estimators::*;
use sipm_core::sources::{attenuation_scan, od_factors, sample_shots, split_beam};
use sipm_core::{DetectorParams, SourceSpec};

#[test]
fn thermal_mc_matches_analytic() {
    let spec = SourceSpec::thermal(6.0, 1.5);
    let params = DetectorParams::new(0.4, 0.05, 0.04, 1.0).unwrap();
    let k = mc_detect(&sample_shots(&spec, 200_000, 1).unwrap(), &params, 2).unwrap();
    let theory = output_distribution(&spec.pmf().unwrap(), &params).unwrap();
    let g = gof_pmf(&k, &theory, 0).unwrap();
    assert!(g.p_value > 0.001, "p = {}", g.p_value);
}

#[test]
fn split_thermal_photon_correlation() {
    let (mean, mu) = (4.0, 1.3);
    let shots = sample_shots(&SourceSpec::thermal(mean, mu), 200_000, 3).unwrap();
    let (a, b) = split_beam(&shots, 0.5, 4).unwrap();
    let (corr, err) = corr_coefficient(&a, &b, 5).unwrap();
    let expect = gamma_mth_theory(mean / 2.0, mean / 2.0, mu, mu).unwrap();
    assert!((corr - expect).abs() < 4.0 * err, "{corr} +- {err} vs {expect}");
}

#[test]
fn coherent_fano_is_flat() {
    let params = DetectorParams::new(0.4, 0.02, 0.03, 1.0).unwrap();
    let scan = attenuation_scan(&SourceSpec::coherent(10.0), &od_factors(8, 2.0), 50_000, 6).unwrap();
    let groups: Vec<Vec<f64>> =
        scan.iter().enumerate().map(|(i, s)| mc_detect(s, &params, 10 + i as u64).unwrap().as_f64()).collect();
    let pts = fano_curve(&groups, 100.0, 7).unwrap();
    let line = fano_slope(&pts).unwrap();
    let (lo, hi) = line.ci("slope");
    assert!(lo <= 0.0 && 0.0 <= hi, "slope CI [{lo}, {hi}]");
    let fit = fit_fano_coherent(&pts, 1.0).unwrap();
    assert!(fit.covers("eps", 0.03));
}

#[test]
fn attenuation_scan_means_follow_factors() {
    let factors = od_factors(5, 2.0);
    assert!((factors[4] - 0.01).abs() < 1e-15 && factors[0] == 1.0);
    let scan = attenuation_scan(&SourceSpec::coherent(20.0), &factors, 100_000, 8).unwrap();
    for (s, f) in scan.iter().zip(&factors) {
        let expect = 20.0 * f;
        assert!((s.mean() - expect).abs() < 5.0 * (expect / 1e5).sqrt(), "{} vs {expect}", s.mean());
    }
}

#[test]
fn results_identical_across_execution_modes() {
    use sipm_core::par::{set_execution, Execution};
    let params = DetectorParams::new(0.4, 0.05, 0.04, 1.0).unwrap();
    let run = || {
        let shots = sample_shots(&SourceSpec::thermal(3.0, 2.0), 20_000, 9).unwrap();
        let k = mc_detect(&shots, &params, 10).unwrap();
        let pts = fano_curve(&[k.as_f64(), shots.as_f64()], 50.0, 11).unwrap();
        (k, pts)
    };
    set_execution(Execution::Sequential);
    let a = run();
    set_execution(Execution::Parallel);
    let b = run();
    assert_eq!(a, b);
}
