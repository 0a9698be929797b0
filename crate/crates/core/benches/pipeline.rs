use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use sipm_core::detector::mc_detect;
use sipm_core::estimators::fano_curve;
use sipm_core::par::{set_execution, Execution};
use sipm_core::sources::sample_shots;
use sipm_core::waveform::ChainConfig;
use sipm_core::{DetectorParams, SourceSpec};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn detector_mc(c: &mut Criterion) {
    let shots = sample_shots(&SourceSpec::thermal(10.0, 1.2), 200_000, 1).unwrap();
    let params = DetectorParams::new(0.4, 0.05, 0.03, 1.0).unwrap();
    let mut g = c.benchmark_group("mc_detect_200k");
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            set_execution(mode);
            b.iter(|| mc_detect(&shots, &params, 2).unwrap())
        });
    }
    g.finish();
}

fn gate_integration(c: &mut Criterion) {
    let chain = ChainConfig::digitizer();
    let photons = sample_shots(&SourceSpec::coherent(5.0), 2_000, 3).unwrap();
    let mut g = c.benchmark_group("integrate_gates_2k");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            set_execution(mode);
            b.iter(|| chain.integrate_gates(&photons.counts, &[50.0, 100.0, 350.0], 4).unwrap())
        });
    }
    g.finish();
}

fn bootstrap(c: &mut Criterion) {
    let params = DetectorParams::new(0.4, 0.02, 0.03, 1.0).unwrap();
    let groups: Vec<Vec<f64>> = (0..4)
        .map(|i| {
            let s = sample_shots(&SourceSpec::coherent(2.0 + i as f64), 50_000, 10 + i).unwrap();
            mc_detect(&s, &params, 20 + i).unwrap().as_f64()
        })
        .collect();
    let mut g = c.benchmark_group("fano_curve_bootstrap");
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            set_execution(mode);
            b.iter(|| fano_curve(&groups, 100.0, 5).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, detector_mc, gate_integration, bootstrap);
criterion_main!(benches);
