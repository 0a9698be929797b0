//! Builtin scenarios. Each wires sources, detector, acquisition and
//! estimators for one measurement and returns its tables and curves.
//!
//! Detector-level scenarios derive per-gate parameters from the config:
//! `eps = eps_effective(temporal_xt, T)` and `mean_dc = dcr_hz * T`.

use sipm_core::detector::{mc_detect, output_distribution};
use sipm_core::estimators::*;
use sipm_core::fit::FitResult;
use sipm_core::par::{derive_seed, domain};
use sipm_core::sources::{attenuation_scan, coherent_pmf, mth_pmf, sample_shots, split_beam};
use sipm_core::waveform::{eps_effective, ChainConfig};
use sipm_core::{DetectorParams, PhotonDistribution, ShotCounts, SipmError, SourceSpec};

use crate::bundle::{scalars, Curve, ScenarioOutput};
use crate::config::{known_list, ExperimentConfig};

#[derive(Debug, thiserror::Error)]
#[error("scenario `{scenario}` failed at stage `{stage}`: {source}")]
pub struct ScenarioError {
    pub scenario: String,
    pub stage: &'static str,
    #[source]
    pub source: SipmError,
}

/// A stage failure before the scenario name is attached.
#[derive(Debug)]
pub struct StageError {
    stage: &'static str,
    source: SipmError,
}

trait Stage<T> {
    fn stage(self, name: &'static str) -> Result<T, StageError>;
}

impl<T> Stage<T> for sipm_core::Result<T> {
    fn stage(self, name: &'static str) -> Result<T, StageError> {
        self.map_err(|source| StageError { stage: name, source })
    }
}

type StageResult = Result<ScenarioOutput, StageError>;

pub struct Builtin {
    pub name: &'static str,
    pub summary: &'static str,
    run: fn(&Ctx) -> StageResult,
}

pub const BUILTIN: &[Builtin] = &[
    Builtin { name: "staircase", summary: "dark-count rate versus discriminator threshold", run: staircase },
    Builtin { name: "phs-gates", summary: "pulse-height spectra and gain fits per gate width", run: phs_gates },
    Builtin { name: "snr-scan", summary: "single-cell S/N versus gate width", run: snr_scan },
    Builtin {
        name: "fano-coherent",
        summary: "coherent Fano fits, one cross-talk estimate per gate",
        run: fano_coherent,
    },
    Builtin {
        name: "eps-vs-gate",
        summary: "full-chain cross talk versus gate width, two-regime fit",
        run: eps_vs_gate,
    },
    Builtin { name: "fano-thermal", summary: "joint thermal Fano fit of mode number and dark rate", run: fano_thermal },
    Builtin {
        name: "stats-coherent",
        summary: "coherent count distributions against the detector model",
        run: stats_coherent,
    },
    Builtin {
        name: "stats-thermal",
        summary: "thermal count distributions against the detector model",
        run: stats_thermal,
    },
    Builtin {
        name: "correlations",
        summary: "split-beam thermal correlations and mode-number fits",
        run: correlations,
    },
    Builtin { name: "peak-and-hold", summary: "peak-and-hold spectra, zero-peak shape and S/N", run: peak_and_hold },
];

/// Resolves `names` (or `all`) to builtin indices, in builtin order for
/// `all` and in the given order otherwise.
pub fn resolve(names: &[String]) -> Result<Vec<usize>, String> {
    if names.iter().any(|n| n == "all") {
        return Ok((0..BUILTIN.len()).collect());
    }
    let mut out = Vec::new();
    for n in names {
        let i = BUILTIN
            .iter()
            .position(|b| b.name == n)
            .ok_or_else(|| format!("unknown scenario `{n}`; known: {}", known_list()))?;
        if !out.contains(&i) {
            out.push(i);
        }
    }
    Ok(out)
}

/// Runs one builtin scenario. Its seed depends only on the config seed and
/// the scenario, so results do not depend on which others run alongside.
pub fn run_scenario(name: &str, cfg: &ExperimentConfig) -> Result<ScenarioOutput, ScenarioError> {
    let index = BUILTIN.iter().position(|b| b.name == name).ok_or_else(|| ScenarioError {
        scenario: name.to_string(),
        stage: "lookup",
        source: SipmError::Format(format!("unknown scenario; known: {}", known_list())),
    })?;
    let ctx = Ctx { cfg, seed: derive_seed(cfg.seed, domain::SCENARIO, index as u64) };
    (BUILTIN[index].run)(&ctx).map_err(|e| ScenarioError {
        scenario: name.to_string(),
        stage: e.stage,
        source: e.source,
    })
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
}

impl Ctx<'_> {
    fn seed(&self, i: u64) -> u64 {
        derive_seed(self.seed, domain::SCENARIO, i)
    }

    fn gamma(&self) -> f64 {
        self.cfg.detector.gamma
    }

    fn gates(&self) -> &[f64] {
        &self.cfg.acquisition.gates_ns
    }

    fn eps_at(&self, t: f64) -> sipm_core::Result<f64> {
        eps_effective(&self.cfg.temporal_xt, t)
    }

    fn gate_params(&self, t: f64) -> Result<DetectorParams, StageError> {
        let d = &self.cfg.detector;
        let p = DetectorParams {
            eta: d.eta,
            mean_dc: d.dcr_hz * t * 1e-9,
            eps: self.eps_at(t).stage("detector")?,
            gamma: d.gamma,
            n_cells: d.n_cells,
            saturation_enabled: d.saturation_enabled,
        };
        p.validate().stage("detector")?;
        Ok(p)
    }

    fn coherent(&self) -> SourceSpec {
        SourceSpec::coherent(self.cfg.source.mean_photons)
    }

    fn thermal(&self) -> SourceSpec {
        SourceSpec::thermal(self.cfg.source.mean_photons, self.cfg.source.modes)
    }

    /// Detected outputs `x = gamma k` for every intensity of `scan`.
    fn detect_scan(&self, scan: &[ShotCounts], p: &DetectorParams, seed: u64) -> Result<Vec<Vec<f64>>, StageError> {
        scan.iter()
            .enumerate()
            .map(|(i, s)| {
                let k = mc_detect(s, p, derive_seed(seed, domain::DETECT, i as u64)).stage("detector")?;
                Ok(k.counts.iter().map(|&c| p.gamma * c as f64).collect())
            })
            .collect()
    }
}

fn gate_label(t: f64) -> String {
    format!("T={t}ns")
}

fn fano_curve_table(points: &[FanoPoint], model: impl Fn(f64) -> f64) -> Curve {
    let mut c = Curve::new(&["mean_x", "fano", "fano_err", "model"]);
    for p in points {
        c.push(vec![p.mean_x, p.fano, p.fano_err, model(p.mean_x)]);
    }
    c
}

fn gauss_model(fit: &FitResult, x: f64) -> f64 {
    let mut y = 0.0;
    let mut j = 0;
    while let Some(&c) = fit.params.get(&format!("center_{j}")) {
        let s = fit.value(&format!("sigma_{j}"));
        let h = fit.value(&format!("height_{j}"));
        y += h * (-0.5 * ((x - c) / s).powi(2)).exp();
        j += 1;
    }
    y
}

fn spectrum_curve(spec: &PulseHeightSpectrum, fit: Option<&FitResult>) -> Curve {
    let mut c = Curve::new(&["x", "counts", "counts_err", "model"]);
    for (x, &n) in spec.centers().into_iter().zip(&spec.counts) {
        let m = fit.map_or(f64::NAN, |f| gauss_model(f, x));
        c.push(vec![x, n as f64, (n as f64).sqrt(), m]);
    }
    c
}

fn staircase(ctx: &Ctx) -> StageResult {
    let mut chain = ChainConfig::discriminator();
    chain.timing = ctx.cfg.timing();
    chain.detector.eta = ctx.cfg.detector.eta;
    chain.detector.gamma = ctx.gamma();
    let cell = chain.cell_peak();
    let thresholds: Vec<f64> = (1..=70).map(|i| 0.05 * i as f64).collect();
    let abs: Vec<f64> = thresholds.iter().map(|t| t * cell).collect();
    let n_traces = (ctx.cfg.trials / 300).max(1);
    let pts = chain.dark_scan(n_traces, &abs, ctx.seed(0)).stage("threshold scan")?;

    let mut out = ScenarioOutput::default();
    let mut c = Curve::new(&["threshold_cells", "rate_hz", "rate_err"]);
    for (t, p) in thresholds.iter().zip(&pts) {
        c.push(vec![*t, p.rate_hz, p.rate_err()]);
    }
    out.curve("staircase", c);

    let at = |x: f64| pts[thresholds.iter().position(|&t| (t - x).abs() < 1e-9).unwrap()];
    let (one, two) = (at(0.5), at(1.5));
    let ratio = if one.count > 0 { two.rate_hz / one.rate_hz } else { f64::NAN };
    let ratio_err = ratio * (1.0 / two.count.max(1) as f64 + 1.0 / one.count.max(1) as f64).sqrt();
    let mut f = FitResult::default();
    f.insert_derived("dcr_hz", one.rate_hz, one.rate_err(), 1.96);
    f.insert_derived("eps_ratio", ratio, ratio_err, 1.96);
    f.insert_derived("dcr_injected_hz", chain.timing.dcr_hz, 0.0, 0.0);
    f.insert_derived("eps0_injected", chain.timing.xt.eps0, 0.0, 0.0);
    f.insert_derived("exposure_s", one.exposure_s, 0.0, 0.0);
    out.row("plateaus", "0.5 and 1.5 cells", f);
    Ok(out)
}

fn phs_gates(ctx: &Ctx) -> StageResult {
    let chain = ctx.cfg.chain();
    let shots = sample_shots(&ctx.cfg.source_spec(), ctx.cfg.trials, ctx.seed(0)).stage("source")?;
    let ints = chain.integrate_gates(&shots.counts, ctx.gates(), ctx.seed(1)).stage("acquisition")?;
    let bw = 0.01 * ctx.gamma();
    let mut out = ScenarioOutput::default();
    for (&t, v) in ctx.gates().iter().zip(&ints) {
        let spec = build_spectrum(v, bw).stage("spectrum")?;
        let mut fit = fit_gamma(&spec, 8).stage("gain fit")?;
        let n_peaks = peaks(&fit, bw).len();
        let snr = snr_integral(&spec, fit.value("gamma")).stage("snr")?;
        fit.insert_derived("n_peaks", n_peaks as f64, 0.0, 0.0);
        fit.insert_derived("snr", snr, 0.0, 0.0);
        out.curve(format!("spectrum_{t}ns"), spectrum_curve(&spec, Some(&fit)));
        let mut row = scalars(&[("gate_ns", t)]);
        for n in ["gamma", "n_peaks", "snr"] {
            row.insert_derived(n, fit.value(n), fit.error(n).max(0.0), 1.96);
        }
        out.row("gain", gate_label(t), row);
        out.row("peak_fits", gate_label(t), fit);
    }
    Ok(out)
}

fn snr_scan(ctx: &Ctx) -> StageResult {
    let chain = ctx.cfg.chain();
    let room = (ctx.cfg.acquisition.window_ns - ctx.cfg.acquisition.laser_ns).min(400.0);
    let gates: Vec<f64> = (1..).map(|i| 25.0 * i as f64).take_while(|&t| t <= room).collect();
    if gates.is_empty() {
        return Err(SipmError::InsufficientPoints("window too short for a 25 ns gate".into())).stage("gates");
    }
    let spec = ctx.cfg.source_spec();
    let spec = spec.attenuated((2.5 / spec.mean_photons).min(1.0));
    let shots = sample_shots(&spec, ctx.cfg.trials, ctx.seed(0)).stage("source")?;
    let ints = chain.integrate_gates(&shots.counts, &gates, ctx.seed(1)).stage("acquisition")?;
    let bw = 0.005 * ctx.gamma();
    let mut c = Curve::new(&["gate_ns", "snr_integral", "snr_peak"]);
    for (&t, v) in gates.iter().zip(&ints) {
        let s = build_spectrum(v, bw).stage("spectrum")?;
        let g = fit_gamma(&s, 6).stage("gain fit")?.value("gamma");
        c.push(vec![t, snr_integral(&s, g).stage("snr")?, snr_peak(&s, g).stage("snr")?]);
    }
    let best = c.rows.iter().max_by(|a, b| a[1].total_cmp(&b[1])).unwrap().clone();
    let mut out = ScenarioOutput::default();
    out.curve("snr", c);
    out.row(
        "optimum",
        "max snr_integral",
        scalars(&[("gate_ns", best[0]), ("snr_integral", best[1]), ("snr_peak", best[2])]),
    );
    Ok(out)
}

fn fano_coherent(ctx: &Ctx) -> StageResult {
    let mut out = ScenarioOutput::default();
    for (g, &t) in ctx.gates().iter().enumerate() {
        let p = ctx.gate_params(t)?;
        let seed = ctx.seed(g as u64);
        let scan = attenuation_scan(&ctx.coherent(), &ctx.cfg.intensity_scan, ctx.cfg.trials, seed).stage("source")?;
        let groups = ctx.detect_scan(&scan, &p, seed)?;
        let points = fano_curve(&groups, t, seed).stage("bootstrap")?;
        let mut fit = fit_fano_coherent(&points, p.gamma).stage("fano fit")?;
        let eps = fit.value("eps");
        fit.insert_derived("eps_injected", p.eps, 0.0, 0.0);
        fit.insert_derived("gate_ns", t, 0.0, 0.0);
        out.curve(format!("fano_{t}ns"), fano_curve_table(&points, |_| fano_coherent_model(p.gamma, eps)));
        out.row("eps_by_gate", gate_label(t), fit);
    }
    Ok(out)
}

const EPS_GATES: [f64; 12] = [20.0, 30.0, 40.0, 50.0, 70.0, 100.0, 125.0, 150.0, 200.0, 250.0, 300.0, 350.0];

fn eps_vs_gate(ctx: &Ctx) -> StageResult {
    let chain = ctx.cfg.chain();
    let room = ctx.cfg.acquisition.window_ns - ctx.cfg.acquisition.laser_ns;
    let gates: Vec<f64> = EPS_GATES.iter().copied().filter(|&t| t <= room).collect();
    let scan =
        attenuation_scan(&ctx.coherent(), &ctx.cfg.intensity_scan, ctx.cfg.trials, ctx.seed(0)).stage("source")?;
    let mut per_gate: Vec<Vec<Vec<f64>>> = vec![Vec::new(); gates.len()];
    for (i, s) in scan.iter().enumerate() {
        let ints = chain
            .integrate_gates(&s.counts, &gates, derive_seed(ctx.seed(1), domain::TRACE, i as u64))
            .stage("acquisition")?;
        for (g, v) in ints.into_iter().enumerate() {
            per_gate[g].push(v);
        }
    }
    let mut out = ScenarioOutput::default();
    let mut pts = Vec::new();
    let mut c = Curve::new(&["gate_ns", "eps", "eps_err", "eps_effective"]);
    for (g, &t) in gates.iter().enumerate() {
        let cl = classify_groups(&per_gate[g], 0.01 * ctx.gamma(), 8).stage("classification")?;
        let groups: Vec<Vec<f64>> = cl.counts.iter().map(|k| k.iter().map(|&x| x as f64).collect()).collect();
        let points = fano_curve(&groups, t, ctx.seed(2)).stage("bootstrap")?;
        let mut fit = fit_fano_coherent(&points, 1.0).stage("fano fit")?;
        let injected = ctx.eps_at(t).stage("detector")?;
        pts.push((t, fit.value("eps"), fit.error("eps")));
        c.push(vec![t, fit.value("eps"), fit.error("eps"), injected]);
        fit.insert_derived("gamma_fitted", cl.gamma, 0.0, 0.0);
        fit.insert_derived("eps_effective", injected, 0.0, 0.0);
        out.row("eps_by_gate", gate_label(t), fit);
    }
    out.curve("eps", c);
    let two = fit_eps_vs_gate(&pts).stage("two-regime fit")?;
    out.row("two_regime", "all gates", two);
    Ok(out)
}

fn fano_thermal(ctx: &Ctx) -> StageResult {
    let mut points = Vec::new();
    let gamma = ctx.gamma();
    for (g, &t) in ctx.gates().iter().enumerate() {
        let p = ctx.gate_params(t)?;
        let seed = ctx.seed(g as u64);
        let scan = attenuation_scan(&ctx.thermal(), &ctx.cfg.intensity_scan, ctx.cfg.trials, seed).stage("source")?;
        let groups = ctx.detect_scan(&scan, &p, seed)?;
        points.extend(fano_curve(&groups, t, seed).stage("bootstrap")?);
    }
    let xt = ctx.cfg.temporal_xt;
    let eps_of = |t: f64| eps_effective(&xt, t).unwrap_or(xt.eps0);
    let mut fit = fit_fano_mth(&points, gamma, eps_of).stage("joint fit")?;
    let mut out = ScenarioOutput::default();
    for &t in ctx.gates() {
        let xdc = fit.value(&format!("x_dc@{t}"));
        let (mu, eps) = (fit.value("mu"), eps_of(t));
        let pts: Vec<FanoPoint> = points.iter().copied().filter(|p| p.gate_t == t).collect();
        out.curve(format!("fano_{t}ns"), fano_curve_table(&pts, |x| fano_mth_model(x, mu, xdc, gamma, eps)));
    }
    fit.insert_derived("mu_injected", ctx.cfg.source.modes, 0.0, 0.0);
    fit.insert_derived("dcr_injected_hz", ctx.cfg.detector.dcr_hz, 0.0, 0.0);
    out.row("joint", "all gates", fit);
    Ok(out)
}

/// Count distributions at the longest configured gate, one per intensity,
/// against the full detector model and an ideal reference of equal mean.
fn count_stats(
    ctx: &Ctx,
    spec: SourceSpec,
    ideal: impl Fn(f64) -> sipm_core::Result<PhotonDistribution>,
) -> StageResult {
    let t = ctx.gates().iter().copied().fold(f64::MIN, f64::max);
    let mut p = ctx.gate_params(t)?;
    p.gamma = 1.0;
    let scan = attenuation_scan(&spec, &ctx.cfg.intensity_scan, ctx.cfg.trials, ctx.seed(0)).stage("source")?;
    let mut out = ScenarioOutput::default();
    for (i, (s, &f)) in scan.iter().zip(&ctx.cfg.intensity_scan).enumerate() {
        let k = mc_detect(s, &p, derive_seed(ctx.seed(1), domain::DETECT, i as u64)).stage("detector")?;
        let model = output_distribution(&spec.attenuated(f).pmf().stage("source")?, &p).stage("detector")?;
        let reference = ideal(k.mean()).stage("reference")?;
        let gm = gof_pmf(&k, &model, 0).stage("goodness of fit")?;
        let gi = gof_pmf(&k, &reference, 1).stage("goodness of fit")?;
        let hist = k.histogram();
        let n = k.len() as f64;
        let mut c = Curve::new(&["k", "freq", "freq_err", "model", "ideal"]);
        for (j, &h) in hist.iter().enumerate() {
            c.push(vec![j as f64, h as f64 / n, (h as f64).sqrt() / n, model.p(j), reference.p(j)]);
        }
        out.curve(format!("counts_{i}"), c);
        out.row(
            "gof",
            format!("factor={f:.4}"),
            scalars(&[
                ("gate_ns", t),
                ("mean_k", k.mean()),
                ("fano_k", k.fano()),
                ("chi2_nu_model", gm.chi2_nu),
                ("p_model", gm.p_value),
                ("chi2_nu_ideal", gi.chi2_nu),
                ("p_ideal", gi.p_value),
            ]),
        );
    }
    Ok(out)
}

fn stats_coherent(ctx: &Ctx) -> StageResult {
    count_stats(ctx, ctx.coherent(), |m| coherent_pmf(m, None))
}

fn stats_thermal(ctx: &Ctx) -> StageResult {
    let modes = ctx.cfg.source.modes;
    count_stats(ctx, ctx.thermal(), move |m| mth_pmf(m, modes, None))
}

fn correlations(ctx: &Ctx) -> StageResult {
    let scan =
        attenuation_scan(&ctx.thermal(), &ctx.cfg.intensity_scan, ctx.cfg.trials, ctx.seed(0)).stage("source")?;
    let arms = scan
        .iter()
        .enumerate()
        .map(|(i, s)| split_beam(s, 0.5, derive_seed(ctx.seed(1), domain::SPLIT, i as u64)))
        .collect::<sipm_core::Result<Vec<_>>>()
        .stage("beam splitter")?;
    let mut out = ScenarioOutput::default();
    for (g, &t) in ctx.gates().iter().enumerate() {
        let p = ctx.gate_params(t)?;
        let seed = ctx.seed(2 + g as u64);
        let points = arms
            .iter()
            .enumerate()
            .map(|(i, (a, b))| {
                let s = derive_seed(seed, domain::DETECT, i as u64);
                let k1 = mc_detect(a, &p, s)?;
                let k2 = mc_detect(b, &p, s ^ 1)?;
                corr_point(&k1, &k2, t, s)
            })
            .collect::<sipm_core::Result<Vec<_>>>()
            .stage("correlation")?;
        let mut fit = fit_correlation(&points, p.eps, p.mean_dc).stage("correlation fit")?;
        let mu = fit.value("mu");
        let mut c = Curve::new(&["mean_k", "corr", "corr_err", "model", "ideal"]);
        for q in &points {
            let model = gamma_corrected_theory(q.mean_k, q.mean_k, p.eps, p.eps, p.mean_dc, p.mean_dc, mu, mu)
                .stage("correlation model")?;
            let ideal = gamma_mth_theory(q.mean_k, q.mean_k, mu, mu).stage("correlation model")?;
            c.push(vec![q.mean_k, q.corr, q.corr_err, model, ideal]);
        }
        out.curve(format!("corr_{t}ns"), c);
        fit.insert_derived("mu_injected", ctx.cfg.source.modes, 0.0, 0.0);
        fit.insert_derived("eps", p.eps, 0.0, 0.0);
        fit.insert_derived("mean_dc", p.mean_dc, 0.0, 0.0);
        out.row("mu_by_gate", gate_label(t), fit);
    }
    Ok(out)
}

/// Detected means of the three peak-and-hold illuminations.
const PH_MEANS: [f64; 3] = [0.76, 2.56, 4.0];

fn peak_and_hold(ctx: &Ctx) -> StageResult {
    let mut chain = ChainConfig::peak_and_hold();
    chain.timing = ctx.cfg.timing();
    chain.detector.eta = ctx.cfg.detector.eta;
    let hold = ctx.cfg.acquisition.hold_ns;
    let cell = chain.cell_peak();
    let eta = chain.detector.eta.max(1e-12);
    let groups = PH_MEANS
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let shots = sample_shots(&SourceSpec::coherent(m / eta), ctx.cfg.trials, ctx.seed(i as u64))?;
            let h = chain.peak_heights(&shots.counts, hold, ctx.seed(10 + i as u64))?;
            Ok(h.iter().map(|v| v / cell).collect::<Vec<f64>>())
        })
        .collect::<sipm_core::Result<Vec<_>>>()
        .stage("acquisition")?;
    let bw = 0.01;
    let cl = classify_groups(&groups, bw, 8).stage("gain fit")?;
    let pk = peaks(&cl.fit, bw);
    let zero = pk[0];
    let mut z: Vec<f64> = groups[0].iter().copied().filter(|v| (v - zero.center).abs() < 5.0 * zero.sigma).collect();
    z.sort_by(f64::total_cmp);
    let n = z.len().max(1) as f64;
    let median = z.get(z.len() / 2).copied().unwrap_or(f64::NAN);
    let mean = z.iter().sum::<f64>() / n;
    let m2 = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = z.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let spacing: Vec<f64> = pk.windows(2).skip(1).map(|w| w[1].center - w[0].center).collect();
    let spread = if spacing.is_empty() {
        f64::NAN
    } else {
        let avg = spacing.iter().sum::<f64>() / spacing.len() as f64;
        spacing.iter().map(|s| (s / avg - 1.0).abs()).fold(0.0, f64::max)
    };
    let mid = build_spectrum(&groups[1], bw).stage("spectrum")?;
    let snr = snr_peak(&mid, cl.gamma).stage("snr")?;

    let mut out = ScenarioOutput::default();
    for (i, g) in groups.iter().enumerate() {
        let s = build_spectrum(g, bw).stage("spectrum")?;
        out.curve(format!("spectrum_{i}"), spectrum_curve(&s, None));
        let k = ShotCounts { counts: cl.counts[i].clone(), seed: 0 };
        let gof = gof_pmf(&k, &coherent_pmf(k.mean(), None).stage("reference")?, 1).stage("goodness of fit")?;
        out.row(
            "groups",
            format!("mean={}", PH_MEANS[i]),
            scalars(&[("mean_k", k.mean()), ("chi2_nu_poisson", gof.chi2_nu), ("p_poisson", gof.p_value)]),
        );
    }
    let mut summary = FitResult::default();
    summary.insert_derived("gamma", cl.gamma, cl.fit.error("gamma"), 1.96);
    for (name, v) in [
        ("zero_center", zero.center),
        ("zero_median", median),
        ("zero_skew", m3 / m2.powf(1.5)),
        ("spacing_spread", spread),
        ("snr_peak", snr),
        ("n_peaks", pk.len() as f64),
    ] {
        summary.insert_derived(name, v, 0.0, 0.0);
    }
    out.row("summary", format!("hold={hold}ns"), summary);
    out.row("peak_fits", "pooled", cl.fit);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolve_all_and_unknown() {
        assert_eq!(resolve(&["all".into()]).unwrap().len(), BUILTIN.len());
        assert_eq!(resolve(&["snr-scan".into(), "staircase".into(), "snr-scan".into()]).unwrap(), vec![2, 0]);
        let e = resolve(&["nope".into()]).unwrap_err();
        assert!(e.contains("fano-coherent") && e.contains("peak-and-hold"), "{e}");
    }

    #[test]
    fn builtin_names_are_unique() {
        let mut names: Vec<&str> = BUILTIN.iter().map(|b| b.name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), BUILTIN.len());
    }

    #[test]
    fn stage_is_named_on_failure() {
        let cfg = ExperimentConfig { trials: 10, ..Default::default() };
        let e = run_scenario("fano-coherent", &cfg).unwrap_err();
        assert_eq!(e.stage, "bootstrap");
        assert!(e.to_string().contains("fano-coherent"));
    }
}
