//! Finite MDPs, the benchmark domains and a Q* solver.
//!
//! Transitions and rewards are stored jointly: each `(s, a)` has a short list
//! of [`Outcome`]s `(s', r, p)`. The maze needs this because its reward depends
//! on where a slip lands; the dense views [`TabularMdp::transition_row`] and
//! [`TabularMdp::reward_distribution`] are derived from it.

mod arms;
mod maze;
mod loop_mdp;

pub use arms::{build_arms_mdp, default_arm_rewards, ArmReward, ARMS_GAMMA, DEFAULT_BEST_ARM};
pub use loop_mdp::{build_loop, LOOP_GAMMA};
pub use maze::{build_maze, Maze, MazeAction, DEFAULT_MAZE, MAZE_GAMMA};

use rand::Rng;

use crate::belief::{ActionId, StateId};
use crate::error::{domain, Error, Result};

/// Row sums and reward probabilities must match 1 within this.
pub const PROB_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub next: StateId,
    pub reward: f64,
    pub prob: f64,
}

/// Result of [`TabularMdp::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub reward: f64,
    pub next: StateId,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    outcomes: Vec<Vec<Outcome>>,
    terminal: Vec<bool>,
    gamma: f64,
    start: StateId,
}

impl TabularMdp {
    /// `outcomes[s * n_actions + a]` lists the joint outcomes of `(s, a)`.
    /// Rows of terminal states are replaced by a zero-reward self loop.
    /// Outcomes with the same `(next, reward)` are merged and zero-probability
    /// ones dropped.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        outcomes: Vec<Vec<Outcome>>,
        terminals: &[StateId],
        gamma: f64,
        start: StateId,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return domain("an MDP needs at least one state and one action");
        }
        if outcomes.len() != n_states * n_actions {
            return domain(format!("expected {} outcome rows, got {}", n_states * n_actions, outcomes.len()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return domain(format!("gamma must lie in [0, 1), got {gamma}"));
        }
        if start >= n_states {
            return domain(format!("start state {start} out of range"));
        }
        let mut terminal = vec![false; n_states];
        for &t in terminals {
            if t >= n_states {
                return domain(format!("terminal state {t} out of range"));
            }
            terminal[t] = true;
        }
        if terminal[start] {
            return domain("the start state is terminal");
        }
        let mut rows = Vec::with_capacity(outcomes.len());
        for (i, row) in outcomes.into_iter().enumerate() {
            let (s, a) = (i / n_actions, i % n_actions);
            if terminal[s] {
                rows.push(vec![Outcome { next: s, reward: 0.0, prob: 1.0 }]);
                continue;
            }
            let mut merged: Vec<Outcome> = Vec::with_capacity(row.len());
            let mut total = 0.0;
            for o in row {
                if o.next >= n_states || !(o.prob >= 0.0) || !o.reward.is_finite() {
                    return domain(format!("invalid outcome {o:?} for ({s}, {a})"));
                }
                total += o.prob;
                if o.prob == 0.0 {
                    continue;
                }
                match merged.iter_mut().find(|m| m.next == o.next && m.reward == o.reward) {
                    Some(m) => m.prob += o.prob,
                    None => merged.push(o),
                }
            }
            if (total - 1.0).abs() > PROB_TOLERANCE {
                return domain(format!("outcome probabilities of ({s}, {a}) sum to {total}"));
            }
            rows.push(merged);
        }
        Ok(Self { n_states, n_actions, outcomes: rows, terminal, gamma, start })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn start(&self) -> StateId {
        self.start
    }

    pub fn is_terminal(&self, s: StateId) -> bool {
        self.terminal[s]
    }

    pub fn terminals(&self) -> Vec<StateId> {
        (0..self.n_states).filter(|&s| self.terminal[s]).collect()
    }

    pub fn outcomes(&self, s: StateId, a: ActionId) -> &[Outcome] {
        &self.outcomes[s * self.n_actions + a]
    }

    /// Dense `P(· | s, a)`.
    pub fn transition_row(&self, s: StateId, a: ActionId) -> Vec<f64> {
        let mut row = vec![0.0; self.n_states];
        for o in self.outcomes(s, a) {
            row[o.next] += o.prob;
        }
        row
    }

    /// Marginal reward distribution of `(s, a)` as `(value, prob)` pairs.
    pub fn reward_distribution(&self, s: StateId, a: ActionId) -> Vec<(f64, f64)> {
        let mut dist: Vec<(f64, f64)> = Vec::new();
        for o in self.outcomes(s, a) {
            match dist.iter_mut().find(|(r, _)| *r == o.reward) {
                Some((_, p)) => *p += o.prob,
                None => dist.push((o.reward, o.prob)),
            }
        }
        dist
    }

    pub fn expected_reward(&self, s: StateId, a: ActionId) -> f64 {
        self.outcomes(s, a).iter().map(|o| o.prob * o.reward).sum()
    }

    /// Samples `(r, s')` for `(s, a)` with a single uniform draw.
    pub fn step<R: Rng + ?Sized>(&self, s: StateId, a: ActionId, rng: &mut R) -> Result<Step> {
        if s >= self.n_states || a >= self.n_actions {
            return domain(format!("({s}, {a}) out of range"));
        }
        if self.terminal[s] {
            return domain(format!("cannot step from terminal state {s}"));
        }
        let outcomes = self.outcomes(s, a);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = outcomes[outcomes.len() - 1];
        for o in outcomes {
            acc += o.prob;
            if u < acc {
                chosen = *o;
                break;
            }
        }
        Ok(Step { reward: chosen.reward, next: chosen.next, terminal: self.terminal[chosen.next] })
    }

    /// `Σ p (r + γ max_b Q(s', b))`, with nothing beyond a terminal `s'`.
    pub fn bellman_backup(&self, q: &ActionValues, s: StateId, a: ActionId) -> f64 {
        self.outcomes(s, a)
            .iter()
            .map(|o| {
                let future = if self.terminal[o.next] { 0.0 } else { q.max(o.next) };
                o.prob * (o.reward + self.gamma * future)
            })
            .sum()
    }
}

/// A dense `(state, action) -> value` table.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionValues {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl ActionValues {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, values: vec![0.0; n_states * n_actions] }
    }

    pub fn from_values(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::KeyMismatch { left: values.len(), right: n_states * n_actions });
        }
        Ok(Self { n_states, n_actions, values })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: StateId, a: ActionId) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn set(&mut self, s: StateId, a: ActionId, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    pub fn row(&self, s: StateId) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max(&self, s: StateId) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Lowest-index argmax of row `s`.
    pub fn greedy(&self, s: StateId) -> ActionId {
        argmax(self.row(s))
    }

    pub fn greedy_policy(&self) -> Vec<ActionId> {
        (0..self.n_states).map(|s| self.greedy(s)).collect()
    }
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Q-value iteration until `max |Q - T Q| < tol`. Terminal states keep `Q = 0`.
pub fn optimal_q(mdp: &TabularMdp, tol: f64) -> Result<ActionValues> {
    if !(tol > 0.0) {
        return domain(format!("tolerance must be > 0, got {tol}"));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut q = ActionValues::zeros(ns, na);
    loop {
        let mut next = ActionValues::zeros(ns, na);
        let mut residual: f64 = 0.0;
        for s in (0..ns).filter(|&s| !mdp.is_terminal(s)) {
            for a in 0..na {
                let v = mdp.bellman_backup(&q, s, a);
                residual = residual.max((v - q.get(s, a)).abs());
                next.set(s, a, v);
            }
        }
        q = next;
        if residual < tol {
            return Ok(q);
        }
    }
}

/// Largest Bellman residual of `q`.
pub fn bellman_residual(mdp: &TabularMdp, q: &ActionValues) -> f64 {
    let mut residual: f64 = 0.0;
    for s in (0..mdp.n_states()).filter(|&s| !mdp.is_terminal(s)) {
        for a in 0..mdp.n_actions() {
            residual = residual.max((mdp.bellman_backup(q, s, a) - q.get(s, a)).abs());
        }
    }
    residual
}

/// Length of the greedy path under `policy` from the start, following the most
/// likely outcome (first listed on ties) until it reaches a terminal or comes
/// back to the start. Returns `None` if it cycles elsewhere.
pub fn greedy_path_length(mdp: &TabularMdp, policy: &[ActionId]) -> Option<usize> {
    let mut s = mdp.start();
    let mut seen = vec![false; mdp.n_states()];
    for len in 1..=mdp.n_states() {
        seen[s] = true;
        let outcomes = mdp.outcomes(s, policy[s]);
        let mut best = outcomes[0];
        for o in &outcomes[1..] {
            if o.prob > best.prob {
                best = *o;
            }
        }
        s = best.next;
        if mdp.is_terminal(s) || s == mdp.start() {
            return Some(len);
        }
        if seen[s] {
            return None;
        }
    }
    None
}

/// Step cap for greedy evaluation: `floor(1.5 L)` with `L` the path length of
/// the Q* greedy policy.
pub fn evaluation_cap(mdp: &TabularMdp, qstar: &ActionValues) -> Result<usize> {
    match greedy_path_length(mdp, &qstar.greedy_policy()) {
        Some(len) => Ok((3 * len) / 2),
        None => domain("the optimal greedy path neither terminates nor returns to the start"),
    }
}

/// Expected undiscounted return of `policy` from the start over at most `cap`
/// steps, stopping at terminals.
pub fn expected_return(mdp: &TabularMdp, policy: &[ActionId], cap: usize) -> f64 {
    let ns = mdp.n_states();
    let mut v = vec![0.0; ns];
    for _ in 0..cap {
        let mut next = vec![0.0; ns];
        for (s, slot) in next.iter_mut().enumerate() {
            if mdp.is_terminal(s) {
                continue;
            }
            *slot = mdp
                .outcomes(s, policy[s])
                .iter()
                .map(|o| o.prob * (o.reward + if mdp.is_terminal(o.next) { 0.0 } else { v[o.next] }))
                .sum();
        }
        v = next;
    }
    v[mdp.start()]
}

/// One sampled rollout of `policy`, same stopping rule as [`expected_return`].
pub fn sampled_return<R: Rng + ?Sized>(mdp: &TabularMdp, policy: &[ActionId], cap: usize, rng: &mut R) -> Result<f64> {
    let mut s = mdp.start();
    let mut total = 0.0;
    for _ in 0..cap {
        let step = mdp.step(s, policy[s], rng)?;
        total += step.reward;
        if step.terminal {
            break;
        }
        s = step.next;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn det(next: StateId, reward: f64) -> Vec<Outcome> {
        vec![Outcome { next, reward, prob: 1.0 }]
    }

    #[test]
    fn single_absorbing_state() {
        let mdp = TabularMdp::new(1, 1, vec![det(0, 0.0)], &[], 0.9, 0).unwrap();
        let q = optimal_q(&mdp, 1e-12).unwrap();
        assert_eq!(q.get(0, 0), 0.0);
    }

    #[test]
    fn two_state_chain_geometric() {
        let rows = vec![det(1, 1.0), det(1, 1.0), det(0, 1.0), det(0, 1.0)];
        let mdp = TabularMdp::new(2, 2, rows, &[], 0.5, 0).unwrap();
        let q = optimal_q(&mdp, 1e-12).unwrap();
        for &v in q.values() {
            assert!((v - 2.0).abs() < 1e-11);
        }
        assert!(bellman_residual(&mdp, &q) < 1e-12);
    }

    #[test]
    fn constructor_rejects_bad_rows() {
        let half = vec![Outcome { next: 0, reward: 0.0, prob: 0.5 }];
        assert!(TabularMdp::new(1, 1, vec![half], &[], 0.9, 0).is_err());
        assert!(TabularMdp::new(1, 1, vec![det(3, 0.0)], &[], 0.9, 0).is_err());
        assert!(TabularMdp::new(1, 1, vec![det(0, 0.0)], &[], 1.0, 0).is_err());
        assert!(TabularMdp::new(2, 1, vec![det(1, 0.0), det(1, 0.0)], &[0], 0.9, 0).is_err());
    }

    #[test]
    fn stepping_from_terminal_fails() {
        let mdp = TabularMdp::new(2, 1, vec![det(1, 1.0), det(1, 0.0)], &[1], 0.9, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let step = mdp.step(0, 0, &mut rng).unwrap();
        assert_eq!(step, Step { reward: 1.0, next: 1, terminal: true });
        assert!(mdp.step(1, 0, &mut rng).is_err());
    }

    #[test]
    fn reward_sampling_mean() {
        let row = vec![Outcome { next: 1, reward: 5.0, prob: 0.8 }, Outcome { next: 1, reward: -5.0, prob: 0.2 }];
        let mdp = TabularMdp::new(2, 1, vec![row, det(1, 0.0)], &[1], 0.9, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| mdp.step(0, 0, &mut rng).unwrap().reward).sum::<f64>() / n as f64;
        // sd of one draw is 4
        assert!((mean - 3.0).abs() < 3.0 * 4.0 / (n as f64).sqrt());
        assert_eq!(mdp.reward_distribution(0, 0), vec![(5.0, 0.8), (-5.0, 0.2)]);
    }

    #[test]
    fn merges_duplicate_outcomes() {
        let row = vec![
            Outcome { next: 0, reward: 0.0, prob: 0.25 },
            Outcome { next: 0, reward: 0.0, prob: 0.75 },
            Outcome { next: 0, reward: 1.0, prob: 0.0 },
        ];
        let mdp = TabularMdp::new(1, 1, vec![row], &[], 0.9, 0).unwrap();
        assert_eq!(mdp.outcomes(0, 0).len(), 1);
    }

    #[test]
    fn expected_and_sampled_return_agree_on_deterministic_mdp() {
        let mdp = build_loop(0.0).unwrap();
        let q = optimal_q(&mdp, 1e-10).unwrap();
        let policy = q.greedy_policy();
        let cap = evaluation_cap(&mdp, &q).unwrap();
        assert_eq!(cap, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(expected_return(&mdp, &policy, cap), 2.0);
        assert_eq!(sampled_return(&mdp, &policy, cap, &mut rng).unwrap(), 2.0);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    proptest! {
        #[test]
        fn builders_produce_stochastic_rows(slip in 0.0f64..=0.5, arms in 2usize..12) {
            let mdps = [
                build_loop(slip).unwrap(),
                build_arms_mdp(arms, &default_arm_rewards(arms)).unwrap(),
                build_maze(DEFAULT_MAZE, slip).unwrap().mdp,
            ];
            for mdp in &mdps {
                for s in 0..mdp.n_states() {
                    for a in 0..mdp.n_actions() {
                        let total: f64 = mdp.transition_row(s, a).iter().sum();
                        prop_assert!((total - 1.0).abs() <= PROB_TOLERANCE);
                        let rtotal: f64 = mdp.reward_distribution(s, a).iter().map(|(_, p)| p).sum();
                        prop_assert!((rtotal - 1.0).abs() <= PROB_TOLERANCE);
                        if mdp.is_terminal(s) {
                            prop_assert_eq!(mdp.transition_row(s, a)[s], 1.0);
                        }
                    }
                }
            }
        }
    }
}
