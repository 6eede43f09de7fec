use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use switchstab::scenario::Overrides;
use switchstab_cli::{cmd_check, cmd_simulate, cmd_synthesize, SynthesizeOptions};

/// Stability checks, Monte Carlo ensembles and feedback synthesis for
/// randomly switched systems.
#[derive(Parser)]
#[command(name = "switchstab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify the certificate and evaluate the stability condition.
    Check(Common),
    /// Run a trajectory ensemble and report its statistics.
    Simulate(Common),
    /// Build and verify a feedback controller, then simulate the closed loop.
    Synthesize {
        #[command(flatten)]
        common: Common,
        /// Write the controller JSON and stop.
        #[arg(long)]
        emit_controller: bool,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    scenario: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    tail_start: Option<f64>,
    /// Exceedance thresholds, comma separated.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Directory for output files.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            trials: self.trials,
            seed: self.seed,
            horizon: self.horizon,
            step: self.step,
            tail_start: self.tail_start,
            epsilons: self.eps.clone(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Check(c) => cmd_check(&c.scenario, &c.overrides()),
        Command::Simulate(c) => cmd_simulate(&c.scenario, &c.overrides(), c.out_dir.as_deref()),
        Command::Synthesize { common, emit_controller } => cmd_synthesize(
            &common.scenario,
            &common.overrides(),
            &SynthesizeOptions { emit_controller: *emit_controller, out_dir: common.out_dir.clone() },
        ),
    };
    print!("{}", outcome.stdout);
    eprint!("{}", outcome.stderr);
    ExitCode::from(outcome.code as u8)
}
