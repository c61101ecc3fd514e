//! Experiment protocols: fixed-trajectory convergence runs and online
//! learning runs with periodic greedy evaluation.
//!
//! Every trial draws from its own streams (see [`crate::rng`]), so trials can
//! run on a thread pool of any size and the merged records are identical to
//! a serial run.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::agent::{select_action, Agent, AgentKind, PolicySpec, QTable, DEFAULT_ALPHA0, DEFAULT_N0};
use crate::belief::{BeliefParams, BeliefTable, Transition, DEFAULT_INITIAL_VARIANCE, DEFAULT_VARIANCE_FLOOR};
use crate::env::{
    build_arms_mdp, build_loop, build_maze, default_arm_rewards, evaluation_cap, expected_return, optimal_q,
    sampled_return, ActionValues, ArmReward, TabularMdp, DEFAULT_MAZE,
};
use crate::error::{domain, Error, Result};
use crate::rng::{stream, Component};

/// Residual tolerance for the Q* solve.
pub const QSTAR_TOLERANCE: f64 = 1e-10;
/// `σ_w` used on stochastic domains when none is given.
pub const DEFAULT_STOCHASTIC_SIGMA_W: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub enum DomainSpec {
    Loop { slip: f64 },
    Maze { layout: String, slip: f64 },
    Arms { n_arms: usize, rewards: Vec<ArmReward> },
}

impl DomainSpec {
    pub fn maze_default(slip: f64) -> Self {
        DomainSpec::Maze { layout: DEFAULT_MAZE.to_string(), slip }
    }

    pub fn arms_default(n_arms: usize) -> Self {
        DomainSpec::Arms { n_arms, rewards: default_arm_rewards(n_arms) }
    }

    pub fn build(&self) -> Result<TabularMdp> {
        match self {
            DomainSpec::Loop { slip } => build_loop(*slip),
            DomainSpec::Maze { layout, slip } => Ok(build_maze(layout, *slip)?.mdp),
            DomainSpec::Arms { n_arms, rewards } => build_arms_mdp(*n_arms, rewards),
        }
    }

    /// Short name used in output file names, e.g. `loop-slip0.1` or `arms10`.
    pub fn name(&self) -> String {
        match self {
            DomainSpec::Loop { slip } if *slip == 0.0 => "loop".to_string(),
            DomainSpec::Loop { slip } => format!("loop-slip{slip}"),
            DomainSpec::Maze { slip, .. } if *slip == 0.0 => "maze".to_string(),
            DomainSpec::Maze { slip, .. } => format!("maze-slip{slip}"),
            DomainSpec::Arms { n_arms, .. } => format!("arms{n_arms}"),
        }
    }

    /// Whether transitions or rewards are random.
    pub fn is_stochastic(&self) -> bool {
        match self {
            DomainSpec::Loop { slip } | DomainSpec::Maze { slip, .. } => *slip > 0.0,
            DomainSpec::Arms { rewards, .. } => rewards.iter().any(|r| r.iter().filter(|(_, p)| *p > 0.0).count() > 1),
        }
    }

    /// 0 on deterministic domains, [`DEFAULT_STOCHASTIC_SIGMA_W`] otherwise.
    pub fn default_sigma_w(&self) -> f64 {
        if self.is_stochastic() {
            DEFAULT_STOCHASTIC_SIGMA_W
        } else {
            0.0
        }
    }
}

/// Agent kind and its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentConfig {
    pub kind: AgentKind,
    /// `None` picks [`DomainSpec::default_sigma_w`].
    pub sigma_w: Option<f64>,
    pub initial_variance: f64,
    pub variance_floor: f64,
    pub init_mean_range: (f64, f64),
    pub alpha0: f64,
    pub n0: f64,
}

impl AgentConfig {
    pub fn new(kind: AgentKind) -> Self {
        Self {
            kind,
            sigma_w: None,
            initial_variance: DEFAULT_INITIAL_VARIANCE,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
            init_mean_range: (0.0, 1.0),
            alpha0: DEFAULT_ALPHA0,
            n0: DEFAULT_N0,
        }
    }

    fn belief_params(&self, gamma: f64, domain: &DomainSpec) -> BeliefParams {
        BeliefParams {
            gamma,
            sigma_w: self.sigma_w.unwrap_or_else(|| domain.default_sigma_w()),
            variance_floor: self.variance_floor,
            initial_variance: self.initial_variance,
            init_mean_range: self.init_mean_range,
        }
    }

    /// Fresh agent for one trial. Belief means come from the trial's init stream.
    pub fn build(&self, mdp: &TabularMdp, spec: &DomainSpec, seed: u64, trial: u64) -> Result<Agent> {
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        match self.kind {
            AgentKind::QLearning => {
                if !(self.alpha0 > 0.0 && self.alpha0 <= 1.0) || !(self.n0 >= 0.0) {
                    return domain(format!("bad schedule alpha0={} n0={}", self.alpha0, self.n0));
                }
                Ok(Agent::QLearning { q: QTable::zeros(ns, na), alpha0: self.alpha0, n0: self.n0, gamma: mdp.gamma() })
            }
            kind => {
                let params = self.belief_params(mdp.gamma(), spec);
                let table = BeliefTable::random(ns, na, params, &mut stream(seed, trial, Component::Init))?;
                Ok(if kind == AgentKind::Adfq { Agent::Adfq(table) } else { Agent::AdfqNumeric(table) })
            }
        }
    }
}

/// How greedy evaluation scores a frozen policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalMode {
    /// Exact expected return under the capped horizon.
    Expected,
    /// Mean of this many sampled rollouts from the trial's eval stream.
    Sampled { rollouts: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub domain: DomainSpec,
    pub agent: AgentConfig,
    /// Behaviour policy of learning runs; convergence runs always act uniformly.
    pub policy: PolicySpec,
    pub horizon: usize,
    /// `None` means `max(1, horizon / 100)`.
    pub eval_every: Option<usize>,
    pub n_trials: usize,
    pub seed: u64,
    /// Worker threads; 0 uses rayon's default.
    pub jobs: usize,
    pub eval_mode: EvalMode,
    /// Fill `wall_ms` in CSV output. Off by default so reruns are byte-identical.
    pub record_wall_time: bool,
}

impl ExperimentConfig {
    pub fn new(domain: DomainSpec, agent: AgentConfig, policy: PolicySpec, horizon: usize, n_trials: usize, seed: u64) -> Self {
        Self {
            domain,
            agent,
            policy,
            horizon,
            eval_every: None,
            n_trials,
            seed,
            jobs: 1,
            eval_mode: EvalMode::Expected,
            record_wall_time: false,
        }
    }

    pub fn cadence(&self) -> usize {
        self.eval_every.unwrap_or((self.horizon / 100).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return domain("n_trials must be >= 1");
        }
        if self.eval_every == Some(0) {
            return domain("eval_every must be >= 1");
        }
        if let EvalMode::Sampled { rollouts: 0 } = self.eval_mode {
            return domain("sampled evaluation needs at least one rollout");
        }
        if self.policy == PolicySpec::Thompson && self.agent.kind == AgentKind::QLearning {
            return domain("Thompson sampling needs a belief-based agent");
        }
        if let Some(sw) = self.agent.sigma_w {
            if !(sw >= 0.0) || !sw.is_finite() {
                return domain(format!("sigma_w must be >= 0, got {sw}"));
            }
        }
        self.policy.validate()
    }

    /// `<domain>_<agent>_<policy>`.
    pub fn output_stem(&self, policy: &PolicySpec) -> String {
        format!("{}_{}_{}", self.domain.name(), self.agent.kind.name(), policy.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub trial: usize,
    pub step: usize,
    pub rmse: f64,
    pub greedy_return: f64,
    pub wall_ms: u64,
}

/// Records of one trial plus the agent as it ended.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub records: Vec<EvalRecord>,
    pub agent: Agent,
}

/// `sqrt(mean((a - b)²))` over every entry.
pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::KeyMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return domain("rmse of empty tables");
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum / a.len() as f64).sqrt())
}

/// [`rmse`] restricted to non-terminal states, whose values are never updated.
pub fn rmse_nonterminal(estimates: &[f64], qstar: &ActionValues, mdp: &TabularMdp) -> Result<f64> {
    if estimates.len() != qstar.values().len() {
        return Err(Error::KeyMismatch { left: estimates.len(), right: qstar.values().len() });
    }
    let na = mdp.n_actions();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for s in (0..mdp.n_states()).filter(|&s| !mdp.is_terminal(s)) {
        a.extend_from_slice(&estimates[s * na..(s + 1) * na]);
        b.extend_from_slice(qstar.row(s));
    }
    rmse(&a, &b)
}

/// Shared per-experiment context.
struct Setup {
    mdp: TabularMdp,
    qstar: ActionValues,
    cap: usize,
}

impl Setup {
    fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let mdp = config.domain.build()?;
        let qstar = optimal_q(&mdp, QSTAR_TOLERANCE)?;
        let cap = evaluation_cap(&mdp, &qstar)?;
        Ok(Self { mdp, qstar, cap })
    }

    fn evaluate(
        &self,
        config: &ExperimentConfig,
        agent: &Agent,
        trial: usize,
        step: usize,
        started: Instant,
        eval_rng: &mut crate::rng::StreamRng,
    ) -> Result<EvalRecord> {
        let rmse = rmse_nonterminal(&agent.estimates(), &self.qstar, &self.mdp)?;
        let policy = agent.greedy_policy();
        let greedy_return = match config.eval_mode {
            EvalMode::Expected => expected_return(&self.mdp, &policy, self.cap),
            EvalMode::Sampled { rollouts } => {
                let mut total = 0.0;
                for _ in 0..rollouts {
                    total += sampled_return(&self.mdp, &policy, self.cap, eval_rng)?;
                }
                total / rollouts as f64
            }
        };
        Ok(EvalRecord { trial, step, rmse, greedy_return, wall_ms: started.elapsed().as_millis() as u64 })
    }
}

fn run_trials<F>(config: &ExperimentConfig, run: F) -> Result<Vec<TrialResult>>
where
    F: Fn(usize) -> Result<TrialResult> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::Domain(format!("thread pool: {e}")))?;
    pool.install(|| (0..config.n_trials).into_par_iter().map(&run).collect())
}

/// Feeds one uniform-random trajectory per trial to the configured agent and
/// records RMSE to Q* at the cadence. The trajectory depends only on the seed
/// and trial, so different agents see the same transitions.
pub fn run_convergence(config: &ExperimentConfig) -> Result<Vec<EvalRecord>> {
    Ok(flatten(run_convergence_trials(config)?))
}

pub fn run_convergence_trials(config: &ExperimentConfig) -> Result<Vec<TrialResult>> {
    let setup = Setup::new(config)?;
    run_trials(config, |trial| {
        let started = Instant::now();
        let mdp = &setup.mdp;
        let mut agent = config.agent.build(mdp, &config.domain, config.seed, trial as u64)?;
        let mut env_rng = stream(config.seed, trial as u64, Component::Env);
        let mut eval_rng = stream(config.seed, trial as u64, Component::Eval);
        let cadence = config.cadence();
        let mut records = vec![setup.evaluate(config, &agent, trial, 0, started, &mut eval_rng)?];
        let mut s = mdp.start();
        for t in 1..=config.horizon {
            let a = select_action(&PolicySpec::Uniform, s, agent.values(), &mut env_rng)?;
            let step = mdp.step(s, a, &mut env_rng)?;
            agent.update(&Transition { s, a, r: step.reward, s_next: step.next, terminal: step.terminal })?;
            s = if step.terminal { mdp.start() } else { step.next };
            if t % cadence == 0 {
                records.push(setup.evaluate(config, &agent, trial, t, started, &mut eval_rng)?);
            }
        }
        Ok(TrialResult { records, agent })
    })
}

/// Online learning with the configured policy, scoring the frozen greedy
/// policy at the cadence. Episodes restart from the start state on reaching a
/// terminal.
pub fn run_learning(config: &ExperimentConfig) -> Result<Vec<EvalRecord>> {
    Ok(flatten(run_learning_trials(config)?))
}

pub fn run_learning_trials(config: &ExperimentConfig) -> Result<Vec<TrialResult>> {
    let setup = Setup::new(config)?;
    run_trials(config, |trial| {
        let started = Instant::now();
        let mdp = &setup.mdp;
        let mut agent = config.agent.build(mdp, &config.domain, config.seed, trial as u64)?;
        let mut env_rng = stream(config.seed, trial as u64, Component::Env);
        let mut policy_rng = stream(config.seed, trial as u64, Component::Policy);
        let mut eval_rng = stream(config.seed, trial as u64, Component::Eval);
        let cadence = config.cadence();
        let mut records = vec![setup.evaluate(config, &agent, trial, 0, started, &mut eval_rng)?];
        let mut s = mdp.start();
        for t in 1..=config.horizon {
            let tau = crate::agent::agent_step(&mut agent, mdp, s, &config.policy, &mut policy_rng, &mut env_rng)?;
            s = if tau.terminal { mdp.start() } else { tau.s_next };
            if t % cadence == 0 {
                records.push(setup.evaluate(config, &agent, trial, t, started, &mut eval_rng)?);
            }
        }
        Ok(TrialResult { records, agent })
    })
}

fn flatten(trials: Vec<TrialResult>) -> Vec<EvalRecord> {
    trials.into_iter().flat_map(|t| t.records).collect()
}

/// Per-step averages over trials, in step order.
pub fn average_records(records: &[EvalRecord]) -> Vec<(usize, f64, f64, f64)> {
    let mut steps: Vec<usize> = records.iter().map(|r| r.step).collect();
    steps.sort_unstable();
    steps.dedup();
    steps
        .into_iter()
        .map(|step| {
            let rows: Vec<&EvalRecord> = records.iter().filter(|r| r.step == step).collect();
            let n = rows.len() as f64;
            let rmse = rows.iter().map(|r| r.rmse).sum::<f64>() / n;
            let ret = rows.iter().map(|r| r.greedy_return).sum::<f64>() / n;
            let wall = rows.iter().map(|r| r.wall_ms as f64).sum::<f64>() / n;
            (step, rmse, ret, wall)
        })
        .collect()
}

#[derive(Serialize)]
struct Row<'a> {
    trial: &'a str,
    step: usize,
    rmse: f64,
    greedy_return: f64,
    wall_ms: u64,
}

/// Header `trial,step,rmse,greedy_return,wall_ms`, LF line endings. `wall_ms`
/// is written as 0 unless `include_wall` is set.
pub fn write_records_csv<W: Write>(writer: W, records: &[EvalRecord], include_wall: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    for r in records {
        let trial = r.trial.to_string();
        let wall_ms = if include_wall { r.wall_ms } else { 0 };
        w.serialize(Row { trial: &trial, step: r.step, rmse: r.rmse, greedy_return: r.greedy_return, wall_ms })?;
    }
    w.flush()?;
    Ok(())
}

/// Same layout as [`write_records_csv`] with `trial` set to `mean`; the mean
/// wall time is rounded to whole milliseconds.
pub fn write_mean_csv<W: Write>(writer: W, records: &[EvalRecord], include_wall: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    for (step, rmse, greedy_return, wall) in average_records(records) {
        let wall_ms = if include_wall { wall.round() as u64 } else { 0 };
        w.serialize(Row { trial: "mean", step, rmse, greedy_return, wall_ms })?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `<stem>.csv` (per trial) and `<stem>_mean.csv` into `dir`.
pub fn write_outputs(dir: &Path, stem: &str, records: &[EvalRecord], include_wall: bool) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let raw = dir.join(format!("{stem}.csv"));
    let mean = dir.join(format!("{stem}_mean.csv"));
    write_records_csv(std::fs::File::create(&raw)?, records, include_wall)?;
    write_mean_csv(std::fs::File::create(&mean)?, records, include_wall)?;
    Ok((raw, mean))
}
