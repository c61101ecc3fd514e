use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

/// Bayesian Q-learning with assumed density filtering.
#[derive(Debug, Parser)]
#[command(name = "adfq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one belief update and print the per-branch diagnostics.
    UpdateDemo(UpdateDemoArgs),
    /// Feed a fixed uniform-random trajectory to an agent and record RMSE to Q*.
    Convergence(ConvergenceArgs),
    /// Learn online with a behaviour policy and record greedy returns.
    Learn(LearnArgs),
    /// Compare the analytic and exact two-action updates against quadrature.
    OracleCheck(OracleCheckArgs),
    /// Print Q* for a domain.
    Solve(SolveArgs),
}

#[derive(Debug, Args)]
pub struct DomainArgs {
    /// Benchmark domain [default: loop]
    #[arg(long, value_parser = ["loop", "maze", "arms"])]
    pub domain: Option<String>,
    /// Probability of executing a different move (loop, maze) [default: 0]
    #[arg(long)]
    pub slip: Option<f64>,
    /// Number of arms for the arms domain [default: 2]
    #[arg(long)]
    pub arms: Option<usize>,
    /// Maze layout file [default: the bundled maze]
    #[arg(long)]
    pub maze: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AgentArgs {
    /// Learner [default: adfq]
    #[arg(long, value_parser = ["adfq", "adfq-numeric", "qlearning"])]
    pub agent: Option<String>,
    /// Observation noise std sigma_w [default: 0 on deterministic domains, 0.01 on stochastic ones]
    #[arg(long)]
    pub sigma_w: Option<f64>,
    /// Initial belief variance [default: 100.0]
    #[arg(long)]
    pub initial_variance: Option<f64>,
    /// Lower bound on belief variances [default: 1e-10]
    #[arg(long)]
    pub variance_floor: Option<f64>,
    /// Lower end of the initial mean interval [default: 0]
    #[arg(long)]
    pub init_mean_low: Option<f64>,
    /// Upper end of the initial mean interval [default: 1]
    #[arg(long)]
    pub init_mean_high: Option<f64>,
    /// Q-learning rate alpha0 in alpha0 (n0 + 1) / (n0 + t) [default: 0.5]
    #[arg(long)]
    pub alpha0: Option<f64>,
    /// Q-learning schedule offset n0 [default: 100]
    #[arg(long)]
    pub n0: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Seed for every random stream (required)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Learning steps per trial [default: 10000 for loop and arms, 30000 for maze]
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Steps between evaluations [default: horizon / 100]
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Independent trials [default: 5 for convergence, 10 for learn]
    #[arg(long)]
    pub trials: Option<usize>,
    /// Worker threads; 0 uses every core [default: 1]
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory [default: $ADFQ_OUTPUT_DIR, else ./results]
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Write measured wall time instead of 0 (output is then not reproducible)
    #[arg(long)]
    pub record_wall_time: bool,
    /// Flat `key = value` file; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    #[command(flatten)]
    pub domain: DomainArgs,
    #[command(flatten)]
    pub agent: AgentArgs,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    #[command(flatten)]
    pub domain: DomainArgs,
    #[command(flatten)]
    pub agent: AgentArgs,
    /// Behaviour policy [default: egreedy]
    #[arg(long, value_parser = ["egreedy", "boltzmann", "ts", "uniform"])]
    pub policy: Option<String>,
    /// Exploration rate of egreedy [default: 0.1]
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Temperature of boltzmann [default: 1.0]
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Score greedy policies by this many sampled rollouts instead of the exact expectation
    #[arg(long)]
    pub eval_rollouts: Option<usize>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct UpdateDemoArgs {
    /// Prior belief of Q(s,a) as mean:variance [default: 0:1]
    #[arg(long)]
    pub prior: Option<String>,
    /// Next-state beliefs as comma-separated mean:variance pairs [default: -2:2,-2:0.5,4.5:0.5]
    #[arg(long, allow_hyphen_values = true)]
    pub next: Option<String>,
    /// Observed reward [default: 0]
    #[arg(long, allow_hyphen_values = true)]
    pub reward: Option<f64>,
    /// Discount factor [default: 0.9]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Observation noise std sigma_w [default: 0]
    #[arg(long)]
    pub sigma_w: Option<f64>,
    /// Lower bound on belief variances [default: 1e-10]
    #[arg(long)]
    pub variance_floor: Option<f64>,
    /// Treat the next state as terminal
    #[arg(long)]
    pub terminal: bool,
    /// Flat `key = value` file; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleCheckArgs {
    /// Random configurations per check [default: 1000]
    #[arg(long)]
    pub trials: Option<usize>,
    /// Seed (required)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Largest action count in the analytic check [default: 10]
    #[arg(long)]
    pub max_actions: Option<usize>,
    /// Flat `key = value` file; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub domain: DomainArgs,
    /// Sup-norm Bellman residual to stop at [default: 1e-10]
    #[arg(long)]
    pub tol: Option<f64>,
    /// Flat `key = value` file; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or config values; exit code 2.
    Config(String),
    /// Failure while running; exit code 1.
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Runtime(msg) => write!(f, "error: {msg}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::UpdateDemo(args) => commands::update_demo(args),
        Command::Convergence(args) => commands::convergence(args),
        Command::Learn(args) => commands::learn(args),
        Command::OracleCheck(args) => commands::oracle_check(args),
        Command::Solve(args) => commands::solve(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            match e {
                CliError::Config(_) => ExitCode::from(2),
                CliError::Runtime(_) => ExitCode::from(1),
            }
        }
    }
}
