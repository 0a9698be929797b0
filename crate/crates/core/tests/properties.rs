use proptest::prelude::*;

use sipm_core::detector::{crosstalk_cascade, output_distribution, output_moments, Pipeline, Stage};
use sipm_core::estimators::*;
use sipm_core::sources::{attenuate, coherent_pmf, mth_pmf, sample_shots, split_beam};
use sipm_core::{DetectorParams, PhotonDistribution, ShotCounts, SourceSpec};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn source_pmfs_are_normalized(mean in 0.0f64..60.0, modes in 1.0f64..20.0) {
        prop_assert!((coherent_pmf(mean, None).unwrap().total() - 1.0).abs() < 1e-9);
        prop_assert!((mth_pmf(mean, modes, None).unwrap().total() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn thermal_closed_moments(mean in 0.0f64..40.0, modes in 1.0f64..10.0) {
        let p = mth_pmf(mean, modes, None).unwrap();
        prop_assert!(rel(p.mean(), mean) < 1e-9);
        prop_assert!(rel(p.variance(), mean + mean * mean / modes) < 1e-9);
    }

    #[test]
    fn splitting_conserves_photons(counts in prop::collection::vec(0u64..200, 1..200), t in 0.0f64..=1.0, seed: u64) {
        let shots = ShotCounts { counts, seed: 0 };
        let (a, b) = split_beam(&shots, t, seed).unwrap();
        for i in 0..shots.len() {
            prop_assert_eq!(a.counts[i] + b.counts[i], shots.counts[i]);
        }
    }

    #[test]
    fn attenuation_never_adds_photons(counts in prop::collection::vec(0u64..50, 1..100), f in 0.0f64..=1.0, seed: u64) {
        let shots = ShotCounts { counts, seed: 0 };
        let out = attenuate(&shots, f, seed).unwrap();
        prop_assert!(out.counts.iter().zip(&shots.counts).all(|(a, b)| a <= b));
    }

    #[test]
    fn sampling_is_reproducible(mean in 0.0f64..20.0, modes in 1.0f64..5.0, seed: u64) {
        let spec = SourceSpec::thermal(mean, modes);
        prop_assert_eq!(sample_shots(&spec, 300, seed).unwrap(), sample_shots(&spec, 300, seed).unwrap());
    }

    #[test]
    fn cascade_support_bounds(lo in 0usize..15, width in 0usize..15, eps in 0.0f64..0.5) {
        let mut probs = vec![0.0; lo + width + 1];
        for p in &mut probs[lo..] {
            *p = 1.0 / (width + 1) as f64;
        }
        let out = crosstalk_cascade(&PhotonDistribution::new(probs).unwrap(), eps).unwrap();
        let hi = lo + width;
        let outside: f64 = out.probs().iter().enumerate().filter(|(k, _)| *k < lo || *k > 2 * hi).map(|(_, p)| p).sum();
        prop_assert!(outside == 0.0);
        prop_assert!(out.n_max() <= 2 * hi);
    }

    #[test]
    fn detector_moments_match_pmf(
        mean in 0.0f64..12.0,
        modes in 1.0f64..4.0,
        eta in 0.0f64..=1.0,
        dc in 0.0f64..2.0,
        eps in 0.0f64..0.49,
    ) {
        let params = DetectorParams::new(eta, dc, eps, 1.0).unwrap();
        let src = mth_pmf(mean, modes, None).unwrap();
        let out = output_distribution(&src, &params).unwrap();
        let m = output_moments(src.mean(), src.variance(), &params).unwrap();
        prop_assert!(rel(out.mean(), m.mean_k) < 1e-9);
        prop_assert!(rel(out.variance(), m.var_x) < 1e-9);
    }

    #[test]
    fn thermal_fano_intercept(mu in 1.0f64..20.0, xdc in 0.001f64..5.0, gamma in 0.1f64..3.0, eps in 0.0f64..0.3) {
        let f = fano_mth_model(xdc, mu, xdc, gamma, eps);
        prop_assert_eq!(f, gamma * (1.0 + 3.0 * eps) / (1.0 + eps));
    }

    #[test]
    fn correlation_drops_with_noise(
        k in 0.5f64..10.0,
        mu in 1.0f64..5.0,
        eps in 0.0f64..0.2,
        dc in 0.0f64..0.2,
        d_eps in 0.001f64..0.1,
        d_dc in 0.001f64..0.1,
    ) {
        // At a fixed output mean, corrected form.
        let base = gamma_corrected_theory(k, k, eps, eps, dc, dc, mu, mu).unwrap();
        let more_eps = gamma_corrected_theory(k, k, eps + d_eps, eps + d_eps, dc, dc, mu, mu).unwrap();
        prop_assert!(more_eps < base);
        if let Ok(more_dc) = gamma_corrected_theory(k, k, eps, eps, dc + d_dc, dc + d_dc, mu, mu) {
            prop_assert!(more_dc < base);
        }
        // At fixed detected means, full model.
        let kk = |e: f64, d: f64| (1.0 + e) * (k + d);
        let g0 = gamma_model_theory(kk(eps, dc), eps, dc, mu).unwrap();
        prop_assert!(gamma_model_theory(kk(eps + d_eps, dc), eps + d_eps, dc, mu).unwrap() < g0);
        prop_assert!(gamma_model_theory(kk(eps, dc + d_dc), eps, dc + d_dc, mu).unwrap() < g0);
    }

    #[test]
    fn ideal_correlation_reduction(k1 in 0.0f64..30.0, k2 in 0.0f64..30.0, mu1 in 1.0f64..10.0, mu2 in 1.0f64..10.0) {
        let a = gamma_corrected_theory(k1, k2, 0.0, 0.0, 0.0, 0.0, mu1, mu2).unwrap();
        prop_assert!((a - gamma_mth_theory(k1, k2, mu1, mu2).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn thermal_fano_fit_recovers(mu in 1.0f64..5.0, dcr_khz in 20.0f64..500.0, eps in 0.0f64..0.1) {
        let gates = [50.0, 100.0, 200.0, 350.0];
        let mut pts = Vec::new();
        for &t in &gates {
            let xdc = x_dark(dcr_khz * 1e3, t, 1.0, eps);
            for i in 1..=6 {
                let x = xdc + 0.5 * i as f64;
                pts.push(FanoPoint { mean_x: x, fano: fano_mth_model(x, mu, xdc, 1.0, eps), fano_err: 0.01, gate_t: t });
            }
        }
        let f = fit_fano_mth(&pts, 1.0, |_| eps).unwrap();
        prop_assert!(rel(f.value("mu"), mu) < 1e-6);
        prop_assert!((f.value("dcr_hz") / (dcr_khz * 1e3) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn correlation_fit_recovers(mu in 1.0f64..8.0, eps in 0.0f64..0.1, dc in 0.0f64..0.1) {
        let pts: Vec<CorrPoint> = (1..=6)
            .map(|i| {
                let k = 0.7 * i as f64;
                let corr = gamma_corrected_theory(k, k, eps, eps, dc, dc, mu, mu).unwrap();
                CorrPoint { mean_k: k, corr, corr_err: 0.003, gate_t: 50.0 }
            })
            .collect();
        let f = fit_correlation(&pts, eps, dc).unwrap();
        prop_assert!(rel(f.value("mu"), mu) < 1e-6);
    }

    #[test]
    fn assign_k_is_monotone(mut v in prop::collection::vec(-2.0f64..20.0, 1..50), gamma in 0.2f64..3.0) {
        v.sort_by(f64::total_cmp);
        let k = assign_k(&v, gamma, 0.0).unwrap();
        prop_assert!(k.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn moment_identities_on_grid() {
    for eps in [0.0, 0.01, 0.05, 0.2] {
        for m in [0.0, 0.5, 2.0, 10.0] {
            for dc in [0.0, 0.5, 2.0, 10.0] {
                let params = DetectorParams::new(1.0, dc, eps, 1.0).unwrap();
                for src in [coherent_pmf(m, None).unwrap(), mth_pmf(m, 1.0, None).unwrap()] {
                    let out = output_distribution(&src, &params).unwrap();
                    let mean_k = (1.0 + eps) * (m + dc);
                    let var_k = (1.0 + eps).powi(2) * (src.variance() + dc) + eps * (1.0 - eps) * (m + dc);
                    assert!(rel(out.mean(), mean_k) < 1e-9, "mean eps={eps} m={m} dc={dc}");
                    assert!(rel(out.variance(), var_k) < 1e-9, "var eps={eps} m={m} dc={dc}");
                }
            }
        }
    }
}

#[test]
fn stage_order_is_fixed() {
    use Stage::*;
    assert!(Pipeline::new(&[Efficiency, DarkCounts, CrossTalk]).is_ok());
    for order in [
        [Efficiency, CrossTalk, DarkCounts],
        [DarkCounts, Efficiency, CrossTalk],
        [DarkCounts, CrossTalk, Efficiency],
        [CrossTalk, Efficiency, DarkCounts],
        [CrossTalk, DarkCounts, Efficiency],
    ] {
        assert!(Pipeline::new(&order).is_err());
    }
}
