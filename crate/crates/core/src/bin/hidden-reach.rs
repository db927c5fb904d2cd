use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hidden_reach::report::{cmd_bound, cmd_calibrate, cmd_simulate, cmd_synthesize, ScenarioConfig};
use hidden_reach::sdp::Backend;

#[derive(Parser)]
#[command(name = "hidden-reach", version, about = "Reachable-set bounds for hidden sensor attacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario JSON (schema hidden-reach/1)
    config: PathBuf,
    /// Output directory, overrides output.directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Simulation seed, overrides sim.seed
    #[arg(long)]
    seed: Option<u64>,
    /// Determinant-maximization backend
    #[arg(long, value_parser = ["a", "b"])]
    backend: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Detector thresholds and noise caps
    Calibrate(Common),
    /// Minimum-volume ellipsoidal bounds
    Bound(Common),
    /// Observer redesign under an H∞ constraint
    Synthesize(Common),
    /// Monte Carlo attack simulation and containment checks
    Simulate(Common),
}

fn run(cli: Cli) -> hidden_reach::Result<()> {
    let (common, cmd): (&Common, fn(&ScenarioConfig) -> hidden_reach::Result<_>) = match &cli.command {
        Command::Calibrate(c) => (c, cmd_calibrate),
        Command::Bound(c) => (c, cmd_bound),
        Command::Synthesize(c) => (c, cmd_synthesize),
        Command::Simulate(c) => (c, cmd_simulate),
    };
    let mut cfg = ScenarioConfig::load(&common.config)?;
    if let Some(out) = &common.out {
        cfg.output.directory = out.display().to_string();
    }
    if let Some(seed) = common.seed {
        cfg.sim.seed = Some(seed);
    }
    if let Some(b) = &common.backend {
        cfg.solver.settings.backend = b.parse::<Backend>()?;
    }
    let bundle = cmd(&cfg)?;
    for f in &bundle.files {
        println!("{}", PathBuf::from(&cfg.output.directory).join(f).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HIDDEN_REACH_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
