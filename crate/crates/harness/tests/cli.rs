use std::process::Command;

use sipm_core::estimators::gamma_mth_theory;
use sipm_core::par::{set_execution, Execution};
use sipm_harness::config::{load, ExperimentConfig};
use sipm_harness::{reproduce, run_scenario};

fn sipm() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sipm"));
    c.env_remove("SIPM_OUT_DIR");
    c
}

fn small(trials: usize) -> ExperimentConfig {
    ExperimentConfig { trials, ..Default::default() }
}

#[test]
fn empty_config_has_device_defaults() {
    let c = load("", &[]).unwrap().validate().unwrap();
    assert_eq!(c.detector.n_cells, 667);
    assert_eq!(c.acquisition.bits, 12);
    assert_eq!(c.acquisition.rate_hz, 250_000_000);
    assert_eq!(c.detector.eta, 0.4);
    assert_eq!(c.trials, 120_000);
    assert_eq!(c.intensity_scan.first(), Some(&1.0));
    assert!((c.intensity_scan.last().unwrap() - 0.01).abs() < 1e-15);
}

#[test]
fn eps_out_of_range_names_field_and_bound() {
    let e = load("", &["detector.eps=1.5".into()]).unwrap().validate().unwrap_err();
    assert!(e.mentions("detector.eps"));
    assert!(e.to_string().contains("[0, 1)"), "{e}");
}

#[test]
fn gate_beyond_window_names_both_fields() {
    let e = load("[acquisition]\ngates_ns = [50.0, 480.0]\n", &[]).unwrap().validate().unwrap_err();
    assert!(e.mentions("acquisition.gates_ns[1]") && e.mentions("acquisition.window_ns"), "{e}");
}

#[test]
fn attenuation_factors_are_bounded() {
    let e = load("intensity_scan = [1.0, 0.005]\n", &[]).unwrap().validate().unwrap_err();
    assert!(e.mentions("intensity_scan[1]"), "{e}");
}

#[test]
fn unknown_scenario_in_config_is_rejected() {
    let e = load("scenarios = [\"fano-coherent\", \"bogus\"]\n", &[]).unwrap().validate().unwrap_err();
    assert!(e.mentions("scenarios") && e.to_string().contains("staircase"), "{e}");
}

#[test]
fn normalization_is_idempotent() {
    let text = "seed = 7\nscenarios = [\"snr-scan\", \"snr-scan\"]\n[temporal_xt]\na = 0.2\n";
    let once = load(text, &[]).unwrap().validate().unwrap();
    let twice = load(&once.to_toml(), &[]).unwrap().validate().unwrap();
    assert_eq!(once, twice);
    assert_eq!(once.to_toml(), twice.to_toml());
    assert_eq!(once.hash(), twice.hash());
    assert_eq!(once.scenarios, vec!["snr-scan".to_string()]);
    assert_eq!(once.temporal_xt.eps0, 0.0219);
}

#[test]
fn fano_coherent_round_trip_per_gate() {
    let cfg = small(20_000);
    let out = run_scenario("fano-coherent", &cfg).unwrap();
    let rows = out.table("eps_by_gate");
    assert_eq!(rows.len(), 4);
    for r in rows {
        let (eps, err, inj) = (r.fit.value("eps"), r.fit.error("eps"), r.fit.value("eps_injected"));
        let (lo, hi) = r.fit.ci("eps");
        assert!(lo < eps && eps < hi && r.fit.chi2_nu.is_finite(), "{}", r.label);
        assert!((eps - inj).abs() < 4.0 * err, "{}: {eps} +- {err} vs {inj}", r.label);
    }
    assert_eq!(out.curves.len(), 4);
}

#[test]
fn correlations_without_noise_match_ideal_form() {
    let mut cfg = small(5_000);
    cfg.temporal_xt.eps0 = 0.0;
    cfg.temporal_xt.a = 0.0;
    cfg.detector.dcr_hz = 0.0;
    cfg.intensity_scan = vec![1.0, 0.6, 0.3];
    let cfg = cfg.validate().unwrap();
    let out = run_scenario("correlations", &cfg).unwrap();
    for r in out.table("mu_by_gate") {
        let mu = r.fit.value("mu");
        let curve = &out.curves[&format!("corr_{}ns", gate_of(&r.label))];
        let (k, model) = (curve.column("mean_k").unwrap(), curve.column("model").unwrap());
        for (k, m) in k.iter().zip(&model) {
            assert!((m - gamma_mth_theory(*k, *k, mu, mu).unwrap()).abs() <= 1e-12);
        }
    }
}

fn gate_of(label: &str) -> f64 {
    label.trim_start_matches("T=").trim_end_matches("ns").parse().unwrap()
}

#[test]
fn bundles_are_deterministic_across_runs_and_modes() {
    let cfg = small(3_000);
    let names = vec!["fano-coherent".to_string(), "stats-thermal".to_string()];
    set_execution(Execution::Sequential);
    let a = reproduce(&names, &cfg).unwrap().to_json();
    set_execution(Execution::Parallel);
    let b = reproduce(&names, &cfg).unwrap().to_json();
    let c = reproduce(&names, &cfg).unwrap().to_json();
    assert_eq!(a, b);
    assert_eq!(b, c);
    assert!(a.contains(&cfg.hash()));
}

#[test]
fn scenario_results_do_not_depend_on_companions() {
    let cfg = small(3_000);
    let alone = reproduce(&["stats-coherent".into()], &cfg).unwrap();
    let both = reproduce(&["fano-coherent".into(), "stats-coherent".into()], &cfg).unwrap();
    let json = |b: &sipm_harness::ResultsBundle| serde_json::to_string(&b.scenarios["stats-coherent"]).unwrap();
    assert_eq!(json(&alone), json(&both));
}

#[test]
fn cli_trials_zero_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = sipm().args(["reproduce", "fano-coherent", "--trials", "0", "--out"]).arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("trials"));
    assert!(!out.exists());
}

#[test]
fn cli_unknown_scenario_lists_known_ones() {
    let o = sipm().args(["reproduce", "fig99"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("fano-coherent") && err.contains("peak-and-hold"), "{err}");
}

#[test]
fn cli_runtime_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = sipm().args(["reproduce", "fano-coherent", "--trials", "10", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bootstrap"));
}

#[test]
fn cli_validate_and_list() {
    let o = sipm().args(["validate", "--set", "detector.eps=0.05"]).output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("eps = 0.05") && text.contains("# config hash"));
    let o = sipm().arg("list-scenarios").output().unwrap();
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 10);
}

#[test]
fn cli_output_is_identical_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let run = |jobs: &str, sub: &str| {
        let out = dir.path().join(sub);
        let o = sipm()
            .args(["reproduce", "stats-coherent", "--trials", "2000", "--jobs", jobs, "--out"])
            .arg(&out)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out.join("bundle.json")).unwrap()
    };
    assert_eq!(run("1", "a"), run("2", "b"));
    assert!(dir.path().join("a/stats-coherent/counts_0.csv").exists());
    assert!(dir.path().join("a/config.toml").exists());
}

#[test]
fn cli_out_dir_defaults_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = sipm().env("SIPM_OUT_DIR", dir.path()).args(["simulate", "--trials", "5000"]).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("simulate/counts.csv").exists());
}

#[test]
fn cli_simulated_traces_round_trip_through_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let gate = "acquisition.gates_ns=[300]";
    let o = sipm()
        .args(["simulate", "--trials", "2000", "--dump-traces", "4000", "--set", "source.mean_photons=5", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("analysis");
    let o =
        sipm().args(["analyze", "--set", gate, "--out"]).arg(&out).arg(dir.path().join("traces.bin")).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("bundle.json")).unwrap()).unwrap();
    let summary = &json["scenarios"]["analyze"]["tables"]["summary"][0]["fit"]["params"];
    // Imported traces are in ADC units, so check the classified counts:
    // 5 photons at eta 0.4 plus dark counts and cross talk.
    let mean_k = summary["mean_k"].as_f64().unwrap();
    let expect = (1.0 + 0.0219) * (5.0 * 0.4 + 160e3 * 300e-9);
    assert!((mean_k - expect).abs() < 0.1, "mean_k {mean_k} vs {expect}");
    assert!(summary["n_peaks"].as_f64().unwrap() >= 4.0);
    assert_eq!(summary["traces"].as_f64(), Some(4000.0));
}
