mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{error::ErrorKind, Args, Parser, Subcommand, ValueEnum};
use decmdp::model::DEFAULT_MAX_JOINT_STATES;

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_BUDGET: u8 = 2;
pub const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser)]
#[command(name = "decmdp", version, about = "Classify, solve and verify two-agent decentralized MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Model file (JSON).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Report path (the model path for `gen`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for enumeration (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Maximum number of enumerated candidates.
    #[arg(long)]
    pub budget: Option<u128>,
    /// Tolerance for value comparisons in reports.
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_JOINT_STATES)]
    pub max_joint_states: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    Meeting,
    Obstacle,
    Flashlight,
    Random,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = Variant::Meeting)]
    pub variant: Variant,
    #[arg(long, default_value_t = 2)]
    pub width: usize,
    #[arg(long, default_value_t = 2)]
    pub height: usize,
    /// Move success probability.
    #[arg(long, default_value_t = 0.8)]
    pub p: f64,
    /// Meeting cells, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub sites: Vec<usize>,
    #[arg(long)]
    pub start1: Option<usize>,
    #[arg(long)]
    pub start2: Option<usize>,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub step_cost: f64,
    /// Joint reward per site (a single value applies to all sites).
    #[arg(long, value_delimiter = ',', default_value = "10", allow_hyphen_values = true)]
    pub jr: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    pub horizon: usize,
    #[arg(long, value_delimiter = ',')]
    pub obstacles: Vec<usize>,
    #[arg(long, default_value_t = 0.7)]
    pub p_obstacle: f64,
    #[arg(long, default_value_t = 0.2)]
    pub noise: f64,
    #[arg(long)]
    pub lights_always_on: bool,
    /// Local states of a random instance.
    #[arg(long, default_value_t = 3)]
    pub states: usize,
    /// Move actions of a random instance.
    #[arg(long, default_value_t = 2)]
    pub moves: usize,
    /// Goals of a random instance.
    #[arg(long, default_value_t = 2)]
    pub goals: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct SolveOneArgs {
    #[command(flatten)]
    pub common: Common,
    /// Goal as `g1,g2` (default: the first listed goal).
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub goal: Option<Vec<usize>>,
    #[arg(long, default_value_t = decmdp::goals::DEFAULT_GR)]
    pub gr: f64,
    /// Write the policy pair file here.
    #[arg(long)]
    pub policy_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SolveManyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = decmdp::goals::DEFAULT_GR)]
    pub gr: f64,
    #[arg(long)]
    pub policy_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct NbclgArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub gr: Option<f64>,
    /// Instead of checking a model, search this many random instances for
    /// one where NBCLG fails and goal commitment is strictly suboptimal.
    #[arg(long)]
    pub search: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub states: usize,
    #[arg(long, default_value_t = 2)]
    pub moves: usize,
    #[arg(long, default_value_t = 2)]
    pub goals: usize,
    #[arg(long, default_value_t = 3)]
    pub horizon: usize,
    /// Where to write a found counterexample model.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub no_reachable_restriction: bool,
    #[arg(long)]
    pub no_collapse: bool,
    /// Also verify the optimum against a history-dependent best response.
    #[arg(long)]
    pub history_check: bool,
    #[arg(long)]
    pub policy_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CommArgs {
    #[command(flatten)]
    pub common: Common,
    /// Message cost (<= 0).
    #[arg(long, allow_hyphen_values = true)]
    pub cost: Option<f64>,
    /// Cost sweep `lo:hi:n`.
    #[arg(long, allow_hyphen_values = true)]
    pub sweep: Option<String>,
    /// Message menus for the language experiment, comma separated
    /// (`null`, `last`, `stale:K`, `extended:K`).
    #[arg(long, value_delimiter = ',')]
    pub menu: Vec<String>,
    /// Emit the direct-to-indirect reduction of the model.
    #[arg(long)]
    pub transform: bool,
    /// Where to write the transformed model.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    /// Where to write the sweep CSV (default: stdout).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub policy_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Policy pair file.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Communication policy file.
    #[arg(long)]
    pub comm_policy: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub cost: f64,
    /// Monte Carlo episodes for a sampled cross-check of a policy pair.
    #[arg(long)]
    pub episodes: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a meeting model or one of its variants.
    Gen(GenArgs),
    /// Run the property checks and report the complexity class.
    Classify(ClassifyArgs),
    /// Solve for a single goal.
    #[command(name = "solve-1goal")]
    SolveOneGoal(SolveOneArgs),
    /// Solve every goal and keep the best.
    #[command(name = "solve-ngoals")]
    SolveNGoals(SolveManyArgs),
    /// Check the no-benefit-to-change-local-goals condition.
    #[command(name = "check-nbclg")]
    CheckNbclg(NbclgArgs),
    /// Exhaustive optimal decentralized policy.
    Oracle(OracleArgs),
    /// Communication experiments.
    Comm(CommArgs),
    /// Evaluate policy files.
    Eval(EvalArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::Classify(a) => commands::classify(&a),
        Command::SolveOneGoal(a) => commands::solve_one(&a),
        Command::SolveNGoals(a) => commands::solve_many(&a),
        Command::CheckNbclg(a) => commands::check_nbclg(&a),
        Command::Oracle(a) => commands::oracle(&a),
        Command::Comm(a) => commands::comm(&a),
        Command::Eval(a) => commands::eval(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
