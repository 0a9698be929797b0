//! Inference: spectra and gain, Fano analysis, cross-talk versus gate width,
//! correlations and goodness of fit.

pub mod bootstrap;
mod correlation;
mod fano;
mod gof;
mod spectrum;

pub use correlation::{
    corr_coefficient, corr_point, detected_mean, fit_correlation, gamma_corrected_theory, gamma_model_theory,
    gamma_mth_theory, CorrPoint,
};
pub use fano::{
    eps_short_model, fano_coherent_model, fano_curve, fano_mth_model, fano_slope, fit_eps_vs_gate, fit_fano_coherent,
    fit_fano_mth, x_dark, FanoPoint, EPS_BREAKPOINT,
};
pub use gof::{gof_pmf, GofBin, GofResult, MIN_EXPECTED};
pub use spectrum::{
    assign_k, build_spectrum, classify_groups, fit_gamma, one_photon_peak, peaks, snr_integral, snr_peak, valley_ratio,
    Classified, PeakFit, PulseHeightSpectrum,
};
