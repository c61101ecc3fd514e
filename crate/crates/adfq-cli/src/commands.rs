use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;

use adfq::agent::{AgentKind, PolicySpec, DEFAULT_ALPHA0, DEFAULT_N0};
use adfq::belief::{
    BeliefParams, BeliefTable, GaussianBelief, Transition, DEFAULT_INITIAL_VARIANCE, DEFAULT_VARIANCE_FLOOR,
};
use adfq::env::{optimal_q, MazeAction, DEFAULT_MAZE};
use adfq::harness::{
    average_records, run_convergence, run_learning, write_outputs, AgentConfig, DomainSpec, EvalMode, EvalRecord,
    ExperimentConfig, QSTAR_TOLERANCE,
};
use adfq::oracle::{exact_two_action_moments, quadrature_moments, GridSpec};
use adfq::rng::{stream, Component};
use adfq::update::adfq_update;
use rand::Rng;

use crate::config::ConfigFile;
use crate::{AgentArgs, CliError, ConvergenceArgs, DomainArgs, LearnArgs, OracleCheckArgs, RunArgs, SolveArgs, UpdateDemoArgs};

/// `writeln!` into a `String`, which cannot fail.
macro_rules! outln {
    ($out:expr, $($arg:tt)*) => {{
        let _ = writeln!($out, $($arg)*);
    }};
}

/// Writes `text` to stdout. A closed pipe (`adfq solve | head`) is not an error.
fn emit(text: &str) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    match stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(runtime_err(e)),
        _ => Ok(()),
    }
}

const DOMAIN_KEYS: [&str; 4] = ["domain", "slip", "arms", "maze"];
const AGENT_KEYS: [&str; 8] =
    ["agent", "sigma-w", "initial-variance", "variance-floor", "init-mean-low", "init-mean-high", "alpha0", "n0"];
const RUN_KEYS: [&str; 7] = ["seed", "horizon", "eval-every", "trials", "jobs", "output-dir", "record-wall-time"];
const POLICY_KEYS: [&str; 4] = ["policy", "epsilon", "temperature", "eval-rollouts"];

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn load(path: &Option<PathBuf>, allowed: &[&str]) -> Result<ConfigFile, CliError> {
    let file = match path {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    file.check_keys(allowed)?;
    Ok(file)
}

fn domain_spec(args: DomainArgs, file: &ConfigFile) -> Result<DomainSpec, CliError> {
    let name = file.pick("domain", args.domain)?.unwrap_or_else(|| "loop".to_string());
    let slip = file.pick("slip", args.slip)?;
    let arms = file.pick("arms", args.arms)?;
    let maze = file.pick("maze", args.maze)?;
    let unused = |flag: &str, set: bool| if set { Err(config_err(format!("--{flag} does not apply to {name}"))) } else { Ok(()) };
    let spec = match name.as_str() {
        "loop" => {
            unused("arms", arms.is_some())?;
            unused("maze", maze.is_some())?;
            DomainSpec::Loop { slip: slip.unwrap_or(0.0) }
        }
        "maze" => {
            unused("arms", arms.is_some())?;
            let layout = match maze {
                Some(p) => std::fs::read_to_string(&p)
                    .map_err(|e| config_err(format!("cannot read maze {}: {e}", p.display())))?,
                None => DEFAULT_MAZE.to_string(),
            };
            DomainSpec::Maze { layout, slip: slip.unwrap_or(0.0) }
        }
        "arms" => {
            unused("slip", slip.is_some())?;
            unused("maze", maze.is_some())?;
            DomainSpec::arms_default(arms.unwrap_or(2))
        }
        other => return Err(config_err(format!("unknown domain `{other}` (loop, maze, arms)"))),
    };
    spec.build().map_err(config_err)?;
    Ok(spec)
}

fn agent_config(args: AgentArgs, file: &ConfigFile) -> Result<AgentConfig, CliError> {
    let kind = match file.pick("agent", args.agent)?.as_deref().unwrap_or("adfq") {
        "adfq" => AgentKind::Adfq,
        "adfq-numeric" => AgentKind::AdfqNumeric,
        "qlearning" => AgentKind::QLearning,
        other => return Err(config_err(format!("unknown agent `{other}` (adfq, adfq-numeric, qlearning)"))),
    };
    let mut agent = AgentConfig::new(kind);
    agent.sigma_w = file.pick("sigma-w", args.sigma_w)?;
    agent.initial_variance = file.pick("initial-variance", args.initial_variance)?.unwrap_or(DEFAULT_INITIAL_VARIANCE);
    agent.variance_floor = file.pick("variance-floor", args.variance_floor)?.unwrap_or(DEFAULT_VARIANCE_FLOOR);
    let low = file.pick("init-mean-low", args.init_mean_low)?.unwrap_or(agent.init_mean_range.0);
    let high = file.pick("init-mean-high", args.init_mean_high)?.unwrap_or(agent.init_mean_range.1);
    agent.init_mean_range = (low, high);
    agent.alpha0 = file.pick("alpha0", args.alpha0)?.unwrap_or(DEFAULT_ALPHA0);
    agent.n0 = file.pick("n0", args.n0)?.unwrap_or(DEFAULT_N0);
    Ok(agent)
}

struct Run {
    config: ExperimentConfig,
    output_dir: PathBuf,
}

fn run_config(
    run: RunArgs,
    domain: DomainSpec,
    agent: AgentConfig,
    policy: PolicySpec,
    default_trials: usize,
    file: &ConfigFile,
) -> Result<Run, CliError> {
    let seed = file
        .pick("seed", run.seed)?
        .ok_or_else(|| config_err("--seed is required so every run can be reproduced"))?;
    let default_horizon = match domain {
        DomainSpec::Maze { .. } => 30_000,
        _ => 10_000,
    };
    let horizon = file.pick("horizon", run.horizon)?.unwrap_or(default_horizon);
    let trials = file.pick("trials", run.trials)?.unwrap_or(default_trials);
    let mut config = ExperimentConfig::new(domain, agent, policy, horizon, trials, seed);
    config.eval_every = file.pick("eval-every", run.eval_every)?;
    config.jobs = file.pick("jobs", run.jobs)?.unwrap_or(1);
    config.record_wall_time = file.switch("record-wall-time", run.record_wall_time)?;
    let output_dir = match file.pick("output-dir", run.output_dir)? {
        Some(dir) => dir,
        None => std::env::var_os("ADFQ_OUTPUT_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("results")),
    };
    Ok(Run { config, output_dir })
}

fn finish(run: &Run, policy: &PolicySpec, records: &[EvalRecord]) -> Result<(), CliError> {
    let mut out = String::new();
    let stem = run.config.output_stem(policy);
    let (raw, mean) = write_outputs(&run.output_dir, &stem, records, run.config.record_wall_time).map_err(runtime_err)?;
    if let Some(&(step, rmse, greedy_return, _)) = average_records(records).last() {
        outln!(out, "step {step}: mean rmse {rmse:.6}, mean greedy return {greedy_return:.6}");
    }
    outln!(out, "wrote {}", raw.display());
    outln!(out, "wrote {}", mean.display());
    emit(&out)
}

pub fn convergence(args: ConvergenceArgs) -> Result<(), CliError> {
    let file = load(&args.run.config, &[&DOMAIN_KEYS[..], &AGENT_KEYS, &RUN_KEYS].concat())?;
    let domain = domain_spec(args.domain, &file)?;
    let agent = agent_config(args.agent, &file)?;
    let run = run_config(args.run, domain, agent, PolicySpec::Uniform, 5, &file)?;
    run.config.validate().map_err(config_err)?;
    let records = run_convergence(&run.config).map_err(runtime_err)?;
    finish(&run, &PolicySpec::Uniform, &records)
}

pub fn learn(args: LearnArgs) -> Result<(), CliError> {
    let file = load(&args.run.config, &[&DOMAIN_KEYS[..], &AGENT_KEYS, &RUN_KEYS, &POLICY_KEYS].concat())?;
    let domain = domain_spec(args.domain, &file)?;
    let agent = agent_config(args.agent, &file)?;
    let epsilon = file.pick("epsilon", args.epsilon)?;
    let temperature = file.pick("temperature", args.temperature)?;
    let policy = match file.pick("policy", args.policy)?.as_deref().unwrap_or("egreedy") {
        "egreedy" => PolicySpec::EpsilonGreedy { epsilon: epsilon.unwrap_or(0.1) },
        "boltzmann" => PolicySpec::Boltzmann { temperature: temperature.unwrap_or(1.0) },
        "ts" => PolicySpec::Thompson,
        "uniform" => PolicySpec::Uniform,
        other => return Err(config_err(format!("unknown policy `{other}` (egreedy, boltzmann, ts, uniform)"))),
    };
    if epsilon.is_some() && !matches!(policy, PolicySpec::EpsilonGreedy { .. }) {
        return Err(config_err("--epsilon only applies to egreedy"));
    }
    if temperature.is_some() && !matches!(policy, PolicySpec::Boltzmann { .. }) {
        return Err(config_err("--temperature only applies to boltzmann"));
    }
    let rollouts = file.pick("eval-rollouts", args.eval_rollouts)?;
    let mut run = run_config(args.run, domain, agent, policy, 10, &file)?;
    if let Some(rollouts) = rollouts {
        run.config.eval_mode = EvalMode::Sampled { rollouts };
    }
    run.config.validate().map_err(config_err)?;
    let records = run_learning(&run.config).map_err(runtime_err)?;
    finish(&run, &policy, &records)
}

fn parse_belief(text: &str) -> Result<GaussianBelief, CliError> {
    let bad = || config_err(format!("expected mean:variance, got {text:?}"));
    let (m, v) = text.trim().split_once(':').ok_or_else(bad)?;
    let mean: f64 = m.trim().parse().map_err(|_| bad())?;
    let variance: f64 = v.trim().parse().map_err(|_| bad())?;
    if !(variance > 0.0) || !variance.is_finite() || !mean.is_finite() {
        return Err(config_err(format!("belief {text:?} needs a finite mean and a positive variance")));
    }
    Ok(GaussianBelief::new(mean, variance))
}

pub fn update_demo(args: UpdateDemoArgs) -> Result<(), CliError> {
    let mut out = String::new();
    let file = load(&args.config, &["prior", "next", "reward", "gamma", "sigma-w", "variance-floor", "terminal"])?;
    let prior = parse_belief(&file.pick("prior", args.prior)?.unwrap_or_else(|| "0:1".to_string()))?;
    let next_text = file.pick("next", args.next)?.unwrap_or_else(|| "-2:2,-2:0.5,4.5:0.5".to_string());
    let next = next_text.split(',').map(parse_belief).collect::<Result<Vec<_>, _>>()?;
    let r = file.pick("reward", args.reward)?.unwrap_or(0.0);
    let gamma = file.pick("gamma", args.gamma)?.unwrap_or(0.9);
    let terminal = file.switch("terminal", args.terminal)?;
    let mut params = BeliefParams::new(gamma).with_sigma_w(file.pick("sigma-w", args.sigma_w)?.unwrap_or(0.0));
    params.variance_floor = file.pick("variance-floor", args.variance_floor)?.unwrap_or(DEFAULT_VARIANCE_FLOOR);

    let n = next.len();
    let mut beliefs = vec![prior; n];
    beliefs.extend_from_slice(&next);
    let table = BeliefTable::from_beliefs(2, n, beliefs, params).map_err(config_err)?;
    let tau = Transition { s: 0, a: 0, r, s_next: 1, terminal };
    let update = adfq_update(&table, &tau).map_err(config_err)?;

    outln!(out, "prior mean {} variance {}, reward {r}, gamma {gamma}, sigma_w {}", prior.mean, prior.variance, table.sigma_w());
    outln!(out, "{:>3} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}", "b", "target", "v", "log c", "mu_bar", "var_bar", "mu*", "var*", "weight");
    for b in &update.branches {
        let c = &b.components;
        outln!(out, 
            "{:>3} {:>10.5} {:>10.5} {:>10.5} {:>10.5} {:>10.5} {:>10.5} {:>10.5} {:>10.5}",
            b.action, c.m, c.v, c.log_c, c.mu_bar, c.var_bar, b.mu_star, b.var_star, b.weight
        );
    }
    outln!(out, "adfq update: mean {:.6} variance {:.6}", update.new_mean, update.new_variance);
    let exact = quadrature_moments(&table, &tau, GridSpec::Auto).map_err(runtime_err)?;
    outln!(out, "exact posterior (quadrature): mean {:.6} variance {:.6}", exact.mean, exact.variance);
    emit(&out)
}

fn random_belief<R: Rng>(rng: &mut R) -> GaussianBelief {
    let sd: f64 = rng.random_range(0.1..10.0);
    GaussianBelief::new(rng.random_range(-10.0..10.0), sd * sd)
}

fn random_instance<R: Rng>(rng: &mut R, n_actions: usize) -> Result<(BeliefTable, Transition), CliError> {
    let prior = random_belief(rng);
    let mut beliefs = vec![prior; n_actions];
    beliefs.extend((0..n_actions).map(|_| random_belief(rng)));
    let gamma = [0.5, 0.9, 0.95][rng.random_range(0..3)];
    let r = rng.random_range(-10.0..10.0);
    let mut params = BeliefParams::new(gamma);
    params.variance_floor = f64::MIN_POSITIVE;
    let table = BeliefTable::from_beliefs(2, n_actions, beliefs, params).map_err(runtime_err)?;
    Ok((table, Transition { s: 0, a: 0, r, s_next: 1, terminal: false }))
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let idx = ((sorted.len() as f64 - 1.0) * p).round() as usize;
    sorted[idx]
}

pub fn oracle_check(args: OracleCheckArgs) -> Result<(), CliError> {
    let mut out = String::new();
    let file = load(&args.config, &["trials", "seed", "max-actions"])?;
    let trials = file.pick("trials", args.trials)?.unwrap_or(1000);
    let seed = file
        .pick("seed", args.seed)?
        .ok_or_else(|| config_err("--seed is required so every run can be reproduced"))?;
    let max_actions = file.pick("max-actions", args.max_actions)?.unwrap_or(10);
    if trials == 0 {
        return Err(config_err("--trials must be >= 1"));
    }
    if max_actions < 2 {
        return Err(config_err("--max-actions must be >= 2"));
    }
    let rel = |a: f64, b: f64| (a - b).abs() / (b.abs() + 1.0);

    let mut rng = stream(seed, 0, Component::Eval);
    let (mut worst_mean, mut worst_var) = (0.0f64, 0.0f64);
    for _ in 0..trials {
        let (table, tau) = random_instance(&mut rng, 2)?;
        let q = quadrature_moments(&table, &tau, GridSpec::Auto).map_err(runtime_err)?;
        let (mean, var) = exact_two_action_moments(&table, &tau).map_err(runtime_err)?;
        worst_mean = worst_mean.max(rel(mean, q.mean));
        worst_var = worst_var.max((var - q.variance).abs() / q.variance);
    }
    outln!(out, "exact two-action vs quadrature, {trials} configs: max rel err mean {worst_mean:.3e}, variance {worst_var:.3e}");

    let mut rng = stream(seed, 1, Component::Eval);
    let mut errors = Vec::with_capacity(trials);
    for _ in 0..trials {
        let n_actions = rng.random_range(2..=max_actions);
        let (table, tau) = random_instance(&mut rng, n_actions)?;
        let q = quadrature_moments(&table, &tau, GridSpec::Auto).map_err(runtime_err)?;
        let update = adfq_update(&table, &tau).map_err(runtime_err)?;
        errors.push(rel(update.new_mean, q.mean));
    }
    errors.sort_by(f64::total_cmp);
    let below = errors.iter().filter(|&&e| e < 0.05).count();
    outln!(out, 
        "analytic update vs quadrature, {trials} configs with 2..={max_actions} actions: mean rel err median {:.3e}, p90 {:.3e}, max {:.3e}; below 5% in {below}/{trials}",
        percentile(&errors, 0.5),
        percentile(&errors, 0.9),
        errors[errors.len() - 1]
    );
    emit(&out)
}

pub fn solve(args: SolveArgs) -> Result<(), CliError> {
    let mut out = String::new();
    let file = load(&args.config, &[&DOMAIN_KEYS[..], &["tol"]].concat())?;
    let spec = domain_spec(args.domain, &file)?;
    let tol = file.pick("tol", args.tol)?.unwrap_or(QSTAR_TOLERANCE);
    if !(tol > 0.0) {
        return Err(config_err("--tol must be > 0"));
    }
    let mdp = spec.build().map_err(config_err)?;
    let q = optimal_q(&mdp, tol).map_err(runtime_err)?;
    let is_maze = matches!(spec, DomainSpec::Maze { .. });
    outln!(out, "state,action,q_star");
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let action = if is_maze { format!("{:?}", MazeAction::ALL[a]).to_lowercase() } else { a.to_string() };
            outln!(out, "{s},{action},{}", q.get(s, a));
        }
    }
    emit(&out)
}
