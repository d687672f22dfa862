use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand as ClapSub};
use mtfsim_core::experiment::{run_text, Subcommand};
use mtfsim_core::Error;

/// Multi-term fractional stochastic impulsive systems: checks, simulation, control.
#[derive(Parser)]
#[command(name = "mtfsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML; see docs/config.md).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: `outputs.directory` from the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `mc.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(ClapSub)]
enum Command {
    /// Evaluate every hypothesis constant and the a priori bound.
    CheckHypotheses(Common),
    /// Tabulate the resolvent families.
    Resolvent(Common),
    /// Monte Carlo ensemble and first-path trajectory.
    Simulate(Common),
    /// Coordinate-descent control search.
    Optimize(Common),
    /// Example 6.1 end to end (shipped config unless --config is given).
    ReproduceExample61(Common),
    /// Example 6.2 end to end (shipped config unless --config is given).
    ReproduceExample62(Common),
}

fn error_record(e: &Error) -> String {
    let details = match e {
        Error::Config(v) => v.clone(),
        _ => Vec::new(),
    };
    serde_json::json!({ "error": e.kind(), "message": e.to_string(), "details": details }).to_string()
}

fn run(sub: Subcommand, c: Common) -> Result<(), Error> {
    let text = match (&c.config, sub.canned_config()) {
        (Some(p), _) => std::fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?,
        (None, Some(t)) => t.to_string(),
        (None, None) => {
            return Err(Error::InvalidArgument {
                name: "config",
                reason: format!("{} requires --config <path>", sub.name()),
            })
        }
    };
    let out = match c.out {
        Some(o) => o,
        None => PathBuf::from(mtfsim_core::config::parse_config(&text)?.outputs.directory),
    };
    let outcome = run_text(&text, sub, &out, c.seed)?;
    print!("{}", outcome.summary);
    println!("wrote {} files to {}", outcome.files.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (sub, common) = match cli.command {
        Command::CheckHypotheses(c) => (Subcommand::CheckHypotheses, c),
        Command::Resolvent(c) => (Subcommand::Resolvent, c),
        Command::Simulate(c) => (Subcommand::Simulate, c),
        Command::Optimize(c) => (Subcommand::Optimize, c),
        Command::ReproduceExample61(c) => (Subcommand::ReproduceExample61, c),
        Command::ReproduceExample62(c) => (Subcommand::ReproduceExample62, c),
    };
    match run(sub, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::from(match e {
                Error::Config(_) | Error::InvalidArgument { .. } | Error::UnknownKey { .. } => 2,
                _ => 1,
            })
        }
    }
}
