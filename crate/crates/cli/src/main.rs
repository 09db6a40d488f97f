//! `multichemo`: simulations, duality and gradient checks, bubble scans and
//! critical masses from a TOML run configuration.

mod commands;
mod config;
mod validate;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use config::{ChecksConfig, Num, RunConfig, SCHEMA_VERSION};
use validate::{parse_atoms, ConfigError, Source};

/// Output directories are resolved against this variable when set.
const OUTPUT_ROOT_VAR: &str = "MULTICHEMO_OUTPUT_ROOT";

const EXIT_ERROR: u8 = 1;
const EXIT_VALIDATION: u8 = 2;

#[derive(Parser)]
#[command(name = "multichemo", version, about = "Multi-species chemotaxis laboratory")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Mass constraint; accepts π-multiples such as `8pi`.
    #[arg(long, value_parser = parse_num_arg, allow_hyphen_values = true)]
    lambda: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one of the four evolution regimes.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_num_arg, allow_hyphen_values = true)]
        horizon: Option<f64>,
    },
    /// Check `L(ρ_v, v) = J(v)` and `L(ρ, v_ρ) = F(ρ)` on random fields.
    DualityCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Fit the free energy along a bubble ladder and classify each mass.
    BubbleScan {
        #[command(flatten)]
        common: Common,
    },
    /// Critical masses under the average and individual constraints.
    CriticalMass {
        #[command(flatten)]
        common: Common,
        /// Inline measure `alpha:weight,...`, used instead of the config.
        #[arg(long, conflicts_with = "config")]
        measure: Option<String>,
    },
    /// Finite-difference check of the mean-field gradient structure.
    GradientCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
    },
}

fn parse_num_arg(s: &str) -> Result<f64, String> {
    config::parse_num(s)
}

struct Overrides {
    horizon: Option<f64>,
    trials: Option<usize>,
}

fn apply_overrides(source: &mut Source, common: &Common, extra: &Overrides) {
    let c = &mut source.config;
    if let Some(seed) = common.seed {
        c.seed = Some(seed);
        source.overrides.insert("seed".into(), "--seed".into());
    }
    if let Some(l) = common.lambda {
        c.lambda = Some(Num(l));
        source.overrides.insert("lambda".into(), "--lambda".into());
    }
    if let Some(h) = extra.horizon {
        if let Some(sim) = c.simulation.as_mut() {
            sim.horizon = Some(Num(h));
        }
        source.overrides.insert("simulation.horizon".into(), "--horizon".into());
    }
    if let Some(t) = extra.trials {
        c.checks.get_or_insert_with(ChecksConfig::default).trials = Some(t);
        source.overrides.insert("checks.trials".into(), "--trials".into());
    }
}

/// `--out`, else the config's `output`, else the command name; relative
/// paths land under the output root.
fn output_dir(common: &Common, config: &RunConfig, command: &str) -> PathBuf {
    let chosen = common.out.clone().or_else(|| config.output.clone()).unwrap_or_else(|| PathBuf::from(command));
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if chosen.is_relative() => Path::new(&root).join(chosen),
        _ => chosen,
    }
}

fn load(common: &Common, text: &mut String) -> anyhow::Result<(PathBuf, String)> {
    match &common.config {
        Some(path) => {
            *text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            Ok((base, path.display().to_string()))
        }
        None => {
            *text = format!("schema_version = {SCHEMA_VERSION}\n");
            Ok((PathBuf::from("."), "<defaults>".into()))
        }
    }
}

fn execute(cli: Cli) -> anyhow::Result<u8> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(ConfigError {
                origin: "--threads".into(),
                key: String::new(),
                message: "must be at least 1".into(),
            }
            .into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    let (name, common, extra) = match &cli.command {
        Command::Simulate { common, horizon } => ("simulate", common, Overrides { horizon: *horizon, trials: None }),
        Command::DualityCheck { common, trials } => {
            ("duality-check", common, Overrides { horizon: None, trials: *trials })
        }
        Command::BubbleScan { common } => ("bubble-scan", common, Overrides { horizon: None, trials: None }),
        Command::CriticalMass { common, measure: Some(atoms) } => {
            let measure = parse_atoms(atoms).map_err(|m| ConfigError {
                origin: "--measure".into(),
                key: String::new(),
                message: m,
            })?;
            return commands::critical_mass(&measure, common.out.as_ref());
        }
        Command::CriticalMass { common, .. } => ("critical-mass", common, Overrides { horizon: None, trials: None }),
        Command::GradientCheck { common, trials } => {
            ("gradient-check", common, Overrides { horizon: None, trials: *trials })
        }
    };

    let mut text = String::new();
    let (base, label) = load(common, &mut text)?;
    let mut source = Source::parse(&text, &label)?;
    apply_overrides(&mut source, common, &extra);
    let out = output_dir(common, &source.config, name);
    match cli.command {
        Command::Simulate { .. } => commands::simulate(&source, &base, &out),
        Command::DualityCheck { .. } => commands::duality(&source, &out),
        Command::BubbleScan { .. } => commands::bubble_scan(&source, &out),
        Command::CriticalMass { .. } => commands::critical_mass(&source.measure()?, common.out.as_ref()),
        Command::GradientCheck { .. } => commands::gradient(&source, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            if let Some(c) = e.downcast_ref::<ConfigError>() {
                eprintln!("invalid configuration: {c}");
                ExitCode::from(EXIT_VALIDATION)
            } else {
                eprintln!("error: {e:#}");
                ExitCode::from(EXIT_ERROR)
            }
        }
    }
}
