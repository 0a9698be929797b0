//! Configuration-driven experiment runner on top of `sipm-core`.
//!
//! A run is described by an [`config::ExperimentConfig`] (TOML plus
//! `--set` overrides). Builtin scenarios in [`scenarios`] turn it into a
//! [`bundle::ResultsBundle`] of fit tables and CSV curves.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bundle;
pub mod commands;
pub mod config;
pub mod scenarios;

pub use bundle::{Curve, ResultsBundle, ScenarioOutput, TableRow};
pub use config::{ConfigError, ExperimentConfig};
pub use scenarios::{run_scenario, ScenarioError, BUILTIN};

/// Runs the named scenarios (or `all`) into one bundle.
pub fn reproduce(names: &[String], cfg: &ExperimentConfig) -> Result<ResultsBundle, ScenarioError> {
    let idx = scenarios::resolve(names).map_err(|m| ScenarioError {
        scenario: names.join(","),
        stage: "lookup",
        source: sipm_core::SipmError::Format(m),
    })?;
    let mut bundle = ResultsBundle::new(cfg);
    for i in idx {
        let name = BUILTIN[i].name;
        log::info!("running {name}");
        bundle.insert(name, run_scenario(name, cfg)?);
    }
    Ok(bundle)
}
