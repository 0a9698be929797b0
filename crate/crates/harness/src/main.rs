use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sipm_core::par::{set_execution, Execution};
use sipm_core::waveform::TraceRecord;
use sipm_harness::config::{self, ConfigError, ExperimentConfig};
use sipm_harness::{commands, reproduce, ResultsBundle, BUILTIN};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "sipm", version, about = "Simulate and analyze photon-number-resolving SiPM measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML config file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the shots per intensity point.
    #[arg(long, global = true)]
    trials: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, env = "SIPM_OUT_DIR", default_value = "results")]
    out: PathBuf,

    /// Config override as KEY=VALUE with a dotted key, e.g. detector.eps=0.05.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Worker threads; 1 runs sequentially. Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Detector-level Monte Carlo of the configured source and detector.
    Simulate {
        /// Also write this many rendered traces to <out>/traces.bin.
        #[arg(long, value_name = "N")]
        dump_traces: Option<usize>,
    },
    /// Calibrate and classify traces from binary dumps.
    Analyze {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Spectrum bin width; chosen from the data when omitted.
        #[arg(long)]
        bin_width: Option<f64>,
    },
    /// Run builtin scenarios by name, or `all`.
    Reproduce {
        #[arg(required = true)]
        scenarios: Vec<String>,
    },
    /// List the builtin scenarios.
    ListScenarios,
    /// Validate the config and print it with all defaults filled in.
    Validate,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, ConfigError> {
    let mut overrides = cli.set.clone();
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(t) = cli.trials {
        overrides.push(format!("trials={t}"));
    }
    config::load_path(cli.config.as_deref(), &overrides)?.validate()
}

fn setup_jobs(jobs: Option<usize>) -> Result<(), String> {
    match jobs {
        Some(0) => Err("--jobs must be >= 1".into()),
        Some(1) => {
            set_execution(Execution::Sequential);
            Ok(())
        }
        #[cfg(feature = "parallel")]
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string()),
        #[cfg(not(feature = "parallel"))]
        Some(_) => Ok(()),
        None => Ok(()),
    }
}

fn write_bundle(bundle: &ResultsBundle, out: &std::path::Path) -> Result<(), String> {
    bundle.write(out).map_err(|e| format!("cannot write {}: {e}", out.display()))?;
    print!("{}", bundle.render_tables());
    println!("results written to {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), (u8, String)> {
    let config_err = |e: String| (EXIT_CONFIG, e);
    let runtime = |e: String| (EXIT_RUNTIME, e);
    setup_jobs(cli.jobs).map_err(config_err)?;
    if let Command::ListScenarios = cli.command {
        for b in BUILTIN {
            println!("{:<16} {}", b.name, b.summary);
        }
        return Ok(());
    }
    let cfg = load(&cli).map_err(|e| config_err(e.to_string()))?;
    match &cli.command {
        Command::ListScenarios => unreachable!(),
        Command::Validate => {
            println!("# config hash {}", cfg.hash());
            print!("{}", cfg.to_toml());
        }
        Command::Simulate { dump_traces } => {
            let mut bundle = ResultsBundle::new(&cfg);
            bundle.insert("simulate", commands::simulate(&cfg).map_err(|e| runtime(e.to_string()))?);
            write_bundle(&bundle, &cli.out).map_err(runtime)?;
            if let Some(n) = dump_traces {
                let path = cli.out.join("traces.bin");
                let file = std::fs::File::create(&path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
                let mut w = std::io::BufWriter::new(file);
                commands::dump_traces(&cfg, *n, &mut w).map_err(|e| runtime(e.to_string()))?;
                std::io::Write::flush(&mut w).map_err(|e| runtime(e.to_string()))?;
                println!("{n} traces written to {}", path.display());
            }
        }
        Command::Analyze { files, bin_width } => {
            let mut traces = Vec::new();
            for p in files {
                let f = std::fs::File::open(p).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
                let mut r = std::io::BufReader::new(f);
                traces.extend(
                    TraceRecord::read_binary_all(&mut r).map_err(|e| runtime(format!("{}: {e}", p.display())))?,
                );
            }
            let mut bundle = ResultsBundle::new(&cfg);
            bundle.insert("analyze", commands::analyze(&cfg, &traces, *bin_width).map_err(|e| runtime(e.to_string()))?);
            write_bundle(&bundle, &cli.out).map_err(runtime)?;
        }
        Command::Reproduce { scenarios } => {
            sipm_harness::scenarios::resolve(scenarios).map_err(config_err)?;
            let bundle = reproduce(scenarios, &cfg).map_err(|e| runtime(e.to_string()))?;
            write_bundle(&bundle, &cli.out).map_err(runtime)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {}", msg.trim_end());
            ExitCode::from(code)
        }
    }
}
