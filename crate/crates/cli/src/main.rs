mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rlfollow::Error;

/// Train and validate the modular DDPG car-following agent.
#[derive(Debug, Parser)]
#[command(name = "rlfollow", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the free-driving policy.
    TrainFree(TrainArgs),
    /// Train the car-following policy.
    TrainFollow(TrainArgs),
    /// Run one scenario and write its trace and metrics.
    Simulate(SimulateArgs),
    /// OU-leader platoons: acceleration variance along the platoon.
    Platoon(PlatoonArgs),
    /// Fit IDM parameters to a recorded leader/follower pair.
    CalibrateIdm(CalibrateArgs),
    /// Time-to-collision protocol over OU-leader episodes.
    Ttc(TtcArgs),
    /// Compare the RL agent and a calibrated IDM on recorded data.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML config file; built-in defaults when omitted.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `agent.T=2.0` or `T=2.0` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Master seed (same as `--set seed=N`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out", value_name = "DIR")]
    pub out: PathBuf,
    /// Worker threads for independent episodes.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct Policies {
    /// Directory holding `free.json` and `follow.json`.
    #[arg(long, value_name = "DIR")]
    pub rl: Option<PathBuf>,
    /// Free-driving checkpoint (overrides the one in --rl).
    #[arg(long, value_name = "FILE")]
    pub free: Option<PathBuf>,
    /// Car-following checkpoint (overrides the one in --rl).
    #[arg(long, value_name = "FILE")]
    pub follow: Option<PathBuf>,
    /// IDM parameters: a `calibrate-idm` result or a bare parameter set.
    #[arg(long, value_name = "FILE")]
    pub idm: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of episodes (same as `--set ddpg.episodes=N`).
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Print a progress line every N episodes (0 = silent).
    #[arg(long, default_value_t = 100)]
    pub log_every: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LeaderKind {
    /// Reconstructed external profile; follower starts at rest 200 m behind.
    External,
    /// Synthetic OU leader.
    Ou,
    /// `t,v` speed profile from --data.
    Profile,
    /// Recorded platoon from --data.
    Trajectory,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InitKind {
    Equilibrium,
    Fixed,
    FromData,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub policies: Policies,
    #[arg(long, value_enum, default_value = "external")]
    pub leader: LeaderKind,
    /// Leader profile or trajectory file.
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// Steps of an OU leader.
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1)]
    pub followers: usize,
    /// Initial state; defaults to from-data for trajectories, else equilibrium.
    #[arg(long, value_enum)]
    pub init: Option<InitKind>,
    /// Initial follower speed for `--init fixed`, m/s.
    #[arg(long, default_value_t = 0.0)]
    pub speed: f64,
    /// Initial gap for `--init fixed`, m.
    #[arg(long, default_value_t = 200.0)]
    pub gap: f64,
}

#[derive(Debug, Args)]
pub struct PlatoonArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub policies: Policies,
    /// Overrides harness.platoon_followers.
    #[arg(long)]
    pub followers: Option<usize>,
    /// Overrides harness.platoon_episodes.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Overrides harness.platoon_steps.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Trajectory file with the reference pair.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Which follower of the trajectory to fit (1-based).
    #[arg(long, default_value_t = 1)]
    pub follower: usize,
}

#[derive(Debug, Args)]
pub struct TtcArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub policies: Policies,
    /// Overrides harness.ttc_episodes.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Overrides harness.ttc_steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Fail (exit 5) when the floor outside emergencies is below this, s.
    #[arg(long)]
    pub min_ttc: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub policies: Policies,
    /// Trajectory file with the reference pair.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Which follower of the trajectory to compare against (1-based).
    #[arg(long, default_value_t = 1)]
    pub follower: usize,
}

/// Exit status and category of an error.
fn classify(e: &Error) -> (u8, &'static str) {
    match e {
        Error::Config(_) | Error::InvalidInput(_) => (2, "config"),
        Error::Data { .. }
        | Error::Io(_)
        | Error::Json(_)
        | Error::Csv(_)
        | Error::Domain(_)
        | Error::DimensionMismatch { .. }
        | Error::Solver(_) => (3, "data"),
        Error::Diverged { .. } => (4, "diverged"),
        Error::Scenario(_) => (5, "scenario"),
    }
}

fn report(category: &str, code: u8, message: &str) {
    let body = serde_json::json!({ "error": category, "code": code, "message": message });
    eprintln!("{body}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report("usage", 2, e.to_string().trim());
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::TrainFree(a) => commands::train(rlfollow::agent::PolicyKind::Free, a),
        Command::TrainFollow(a) => commands::train(rlfollow::agent::PolicyKind::Follow, a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Platoon(a) => commands::platoon(a),
        Command::CalibrateIdm(a) => commands::calibrate_idm(a),
        Command::Ttc(a) => commands::ttc(a),
        Command::Compare(a) => commands::compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, category) = classify(&e);
            report(category, code, &e.to_string());
            ExitCode::from(code)
        }
    }
}
