use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use rock_core::config::ControllerKind;
use rock_harness::commands::{self, Context};

#[derive(Parser)]
#[command(name = "rock", version, about = "Simulation, training and evaluation for a one-motor rolling robot")]
struct Cli {
    /// Scenario config (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Controller {
    Projection,
    Policy,
}

impl From<Controller> for ControllerKind {
    fn from(c: Controller) -> Self {
        match c {
            Controller::Projection => ControllerKind::Projection,
            Controller::Policy => ControllerKind::Policy,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one episode toward a sampled command and write its log.
    Sim {
        #[arg(long, value_enum, default_value = "projection")]
        controller: Controller,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train a policy with PPO.
    Train,
    /// Convert a float checkpoint to int8.
    Quantize {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Calibration episodes (the same number is held out for evaluation).
        #[arg(long, default_value_t = 8)]
        episodes: usize,
    },
    /// Follow the configured waypoint course.
    EvalCourse {
        /// Defaults to `course.controller` from the config.
        #[arg(long, value_enum)]
        controller: Option<Controller>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the configured swing-up jump profile.
    EvalJump,
    /// Compare the projection controller and a policy on scenario files.
    Compare {
        scenarios: Vec<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Seeds per scenario, starting at --seed.
        #[arg(long, default_value_t = 4)]
        runs: usize,
    },
    /// Start the teleoperation service.
    Serve {
        /// Defaults to `teleop.port` from the config.
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Overrides `teleop.flight_log`.
        #[arg(long)]
        flight_log: Option<PathBuf>,
        /// Stop after this many seconds instead of running until killed.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Recompute metrics from a teleoperation flight log.
    Replay { flight_log: PathBuf },
}

fn run(cli: Cli) -> rock_core::Result<String> {
    let ctx = Context::load(cli.config.as_deref(), cli.seed, cli.out_dir)?;
    match cli.command {
        Cmd::Sim { controller, checkpoint } => commands::sim(&ctx, controller.into(), checkpoint.as_deref()),
        Cmd::Train => commands::train(&ctx),
        Cmd::Quantize { checkpoint, episodes } => commands::quantize(&ctx, checkpoint.as_deref(), episodes),
        Cmd::EvalCourse { controller, checkpoint } => {
            let controller = controller.map_or(ctx.cfg.course.controller, Into::into);
            commands::eval_course(&ctx, controller, checkpoint.as_deref())
        }
        Cmd::EvalJump => commands::eval_jump(&ctx),
        Cmd::Compare { scenarios, checkpoint, runs } => commands::compare(&ctx, &scenarios, checkpoint.as_deref(), runs),
        Cmd::Serve { port, checkpoint, flight_log, duration } => {
            let duration = match duration {
                Some(d) if !(d.is_finite() && d >= 0.0) => {
                    return Err(rock_core::Error::Usage(format!("--duration must be non-negative, got {d}")))
                }
                d => d.map(Duration::from_secs_f64),
            };
            commands::serve(&ctx, port, checkpoint.as_deref(), flight_log, duration)
        }
        Cmd::Replay { flight_log } => commands::replay(&ctx, &flight_log),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
