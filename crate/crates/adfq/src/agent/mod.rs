//! Learning agents: ADFQ, ADFQ-Numeric and tabular Q-learning.

mod policy;

pub use policy::{select_action, PolicySpec, ValueSource};

use rand::Rng;

use crate::belief::{ActionId, BeliefTable, GaussianBelief, StateId, Transition};
use crate::env::{argmax, ActionValues, TabularMdp};
use crate::error::Result;
use crate::oracle::{quadrature_moments, GridSpec, DEFAULT_GRID_POINTS};
use crate::update::adfq_step;

/// Default initial step size of the Q-learning schedule.
pub const DEFAULT_ALPHA0: f64 = 0.5;
/// Default offset `n0` of the Q-learning schedule.
pub const DEFAULT_N0: f64 = 100.0;

/// Q-values plus per-pair visit counts.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    values: ActionValues,
    visits: Vec<u64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self::from_values(ActionValues::zeros(n_states, n_actions))
    }

    pub fn from_values(values: ActionValues) -> Self {
        let n = values.values().len();
        Self { values, visits: vec![0; n] }
    }

    pub fn n_actions(&self) -> usize {
        self.values.n_actions()
    }

    pub fn values(&self) -> &ActionValues {
        &self.values
    }

    pub fn get(&self, s: StateId, a: ActionId) -> f64 {
        self.values.get(s, a)
    }

    pub fn visits(&self, s: StateId, a: ActionId) -> u64 {
        self.visits[s * self.n_actions() + a]
    }
}

/// `α_t = α0 (n0 + 1) / (n0 + t)` for the `t`-th visit, `t >= 1`.
pub fn learning_rate(alpha0: f64, n0: f64, t: u64) -> f64 {
    alpha0 * (n0 + 1.0) / (n0 + t as f64)
}

/// One Q-learning step on `(s, a)`; returns the new value.
pub fn qlearning_update(q: &mut QTable, tau: &Transition, alpha0: f64, n0: f64, gamma: f64) -> f64 {
    let idx = tau.s * q.n_actions() + tau.a;
    q.visits[idx] += 1;
    let alpha = learning_rate(alpha0, n0, q.visits[idx]);
    let target = if tau.terminal { tau.r } else { tau.r + gamma * q.values.max(tau.s_next) };
    let old = q.values.get(tau.s, tau.a);
    let new = (1.0 - alpha) * old + alpha * target;
    q.values.set(tau.s, tau.a, new);
    new
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentKind {
    Adfq,
    AdfqNumeric,
    QLearning,
}

impl AgentKind {
    pub fn name(&self) -> &'static str {
        match self {
            AgentKind::Adfq => "adfq",
            AgentKind::AdfqNumeric => "adfq-numeric",
            AgentKind::QLearning => "qlearning",
        }
    }
}

/// A learner together with its value table.
#[derive(Debug, Clone, PartialEq)]
pub enum Agent {
    Adfq(BeliefTable),
    /// Same beliefs, updated by quadrature of the exact posterior.
    AdfqNumeric(BeliefTable),
    QLearning { q: QTable, alpha0: f64, n0: f64, gamma: f64 },
}

impl Agent {
    pub fn kind(&self) -> AgentKind {
        match self {
            Agent::Adfq(_) => AgentKind::Adfq,
            Agent::AdfqNumeric(_) => AgentKind::AdfqNumeric,
            Agent::QLearning { .. } => AgentKind::QLearning,
        }
    }

    pub fn update(&mut self, tau: &Transition) -> Result<()> {
        match self {
            Agent::Adfq(table) => {
                adfq_step(table, tau)?;
            }
            Agent::AdfqNumeric(table) => {
                let m = quadrature_moments(table, tau, GridSpec::AutoSupport { n: DEFAULT_GRID_POINTS })?;
                table.set(tau.s, tau.a, GaussianBelief::new(m.mean, m.variance));
            }
            Agent::QLearning { q, alpha0, n0, gamma } => {
                qlearning_update(q, tau, *alpha0, *n0, *gamma);
            }
        }
        Ok(())
    }

    pub fn values(&self) -> ValueSource<'_> {
        match self {
            Agent::Adfq(t) | Agent::AdfqNumeric(t) => ValueSource::Beliefs(t),
            Agent::QLearning { q, .. } => ValueSource::Q(q),
        }
    }

    /// Point estimates: belief means or Q-values, row-major.
    pub fn estimates(&self) -> Vec<f64> {
        match self {
            Agent::Adfq(t) | Agent::AdfqNumeric(t) => t.means(),
            Agent::QLearning { q, .. } => q.values().values().to_vec(),
        }
    }

    /// Lowest-index argmax of the estimates in every state.
    pub fn greedy_policy(&self) -> Vec<ActionId> {
        match self {
            Agent::Adfq(t) | Agent::AdfqNumeric(t) => {
                (0..t.n_states()).map(|s| argmax(&t.row(s).iter().map(|b| b.mean).collect::<Vec<_>>())).collect()
            }
            Agent::QLearning { q, .. } => q.values().greedy_policy(),
        }
    }
}

/// Selects an action in `state`, steps the MDP and updates the agent.
pub fn agent_step<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    agent: &mut Agent,
    mdp: &TabularMdp,
    state: StateId,
    policy: &PolicySpec,
    policy_rng: &mut R1,
    env_rng: &mut R2,
) -> Result<Transition> {
    let a = select_action(policy, state, agent.values(), policy_rng)?;
    let step = mdp.step(state, a, env_rng)?;
    let tau = Transition { s: state, a, r: step.reward, s_next: step.next, terminal: step.terminal };
    agent.update(&tau)?;
    Ok(tau)
}
