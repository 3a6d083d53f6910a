use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;

use commands::Output;
use error::{config_err, CliError};

/// Finite-volume solvers with Scharfetter-Gummel type fluxes.
#[derive(Debug, Parser)]
#[command(name = "sgflux", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides output.dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Flux: upwind, nonlinear_upwind, sg, sg_jp or sg_ext.
    #[arg(long, global = true)]
    flux: Option<String>,

    /// Number of convergence levels (converge only).
    #[arg(long, global = true)]
    levels: Option<usize>,

    /// Time step of the selected run.
    #[arg(long, global = true)]
    dt: Option<f64>,

    /// Dotted key=value assignments applied after the configuration file.
    #[arg(long = "override", global = true, num_args = 1.., value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
enum Command {
    /// Moving-front case at one level.
    Run,
    /// Convergence table of the moving-front case.
    Converge,
    /// Drift-diffusion decay towards thermal equilibrium.
    Dd,
    /// Porous-media decay towards the Barenblatt profile.
    Pm,
    /// Thermal equilibrium of the drift-diffusion geometry.
    Equilibrium,
}

impl Command {
    fn section(self) -> &'static str {
        match self {
            Command::Run => "run",
            Command::Converge => "converge",
            Command::Dd | Command::Equilibrium => "dd",
            Command::Pm => "pm",
        }
    }
}

/// Turns the shorthand flags into overrides of the selected section.
fn flag_overrides(cli: &Cli) -> Result<Vec<String>, CliError> {
    let section = cli.command.section();
    let mut extra = Vec::new();
    if let Some(dir) = &cli.out {
        let dir = toml::Value::String(dir.display().to_string());
        extra.push(format!("output.dir={dir}"));
    }
    if let Some(flux) = &cli.flux {
        match cli.command {
            Command::Equilibrium => return config_err("--flux does not apply to equilibrium"),
            Command::Converge => extra.push(format!("converge.fluxes=[{}]", toml::Value::String(flux.clone()))),
            _ => extra.push(format!("{section}.flux={}", toml::Value::String(flux.clone()))),
        }
    }
    if let Some(levels) = cli.levels {
        if cli.command != Command::Converge {
            return config_err("--levels only applies to converge");
        }
        extra.push(format!("converge.levels={levels}"));
    }
    if let Some(dt) = cli.dt {
        if cli.command == Command::Equilibrium {
            return config_err("--dt does not apply to equilibrium");
        }
        extra.push(format!("{section}.dt={}", toml::Value::Float(dt)));
    }
    Ok(extra)
}

fn validate(cfg: &config::RunConfig, command: Command) -> Result<(), CliError> {
    match command {
        Command::Run => cfg.front.validate().and(cfg.run.validate().map(drop)),
        Command::Converge => cfg.front.validate().and(cfg.converge.validate().map(drop)),
        Command::Dd => cfg.dd.validate().map(drop),
        Command::Pm => cfg.pm.validate().map(drop),
        Command::Equilibrium => cfg.dd.validate_geometry(),
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let mut overrides = cli.overrides.clone();
    overrides.extend(flag_overrides(cli)?);
    let cfg = config::load(cli.config.as_deref(), &overrides)?;
    validate(&cfg, cli.command)?;
    let out = Output::create(&cfg.output.dir)?;
    out.write_text("resolved_config.toml", &cfg.to_toml())?;
    match cli.command {
        Command::Run => commands::run(&cfg, &out),
        Command::Converge => commands::converge(&cfg, &out),
        Command::Dd => commands::dd(&cfg, &out),
        Command::Pm => commands::pm(&cfg, &out),
        Command::Equilibrium => commands::equilibrium(&cfg, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
