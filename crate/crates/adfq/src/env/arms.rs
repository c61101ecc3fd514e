//! Two-step MDP with stochastic-reward arms.
//!
//! State 0 leads to the hub (state 1) under every action with reward 0. From
//! the hub, action `i` ends the episode in terminal state `2 + i` with a
//! reward drawn from the arm's distribution.

use super::{Outcome, TabularMdp};
use crate::error::{domain, Result};

pub const ARMS_GAMMA: f64 = 0.9;
/// Arm that pays the stochastic reward in the default spec.
pub const DEFAULT_BEST_ARM: usize = 1;

/// Finite reward distribution of one arm, as `(value, prob)` pairs.
pub type ArmReward = Vec<(f64, f64)>;

/// Arm [`DEFAULT_BEST_ARM`] pays +5 with probability 0.8 and -5 with
/// probability 0.2; every other arm pays 0.
pub fn default_arm_rewards(n_arms: usize) -> Vec<ArmReward> {
    (0..n_arms)
        .map(|i| if i == DEFAULT_BEST_ARM { vec![(5.0, 0.8), (-5.0, 0.2)] } else { vec![(0.0, 1.0)] })
        .collect()
}

pub fn build_arms_mdp(n_arms: usize, rewards: &[ArmReward]) -> Result<TabularMdp> {
    if n_arms < 2 {
        return domain(format!("need at least 2 arms, got {n_arms}"));
    }
    if rewards.len() != n_arms {
        return domain(format!("{} reward specs for {n_arms} arms", rewards.len()));
    }
    let n_states = 2 + n_arms;
    let mut rows = Vec::with_capacity(n_states * n_arms);
    for _ in 0..n_arms {
        rows.push(vec![Outcome { next: 1, reward: 0.0, prob: 1.0 }]);
    }
    for (i, dist) in rewards.iter().enumerate() {
        rows.push(dist.iter().map(|&(reward, prob)| Outcome { next: 2 + i, reward, prob }).collect());
    }
    for _ in 0..n_arms * n_arms {
        rows.push(Vec::new());
    }
    let terminals: Vec<usize> = (2..n_states).collect();
    TabularMdp::new(n_states, n_arms, rows, &terminals, ARMS_GAMMA, 0)
}
