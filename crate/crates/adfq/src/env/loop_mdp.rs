//! The 9-state, 2-action Loop.
//!
//! | state | action `a` (0)  | action `b` (1)  |
//! |-------|-----------------|-----------------|
//! | 0     | 1               | 5               |
//! | 1..=3 | s + 1           | 0               |
//! | 4     | 0, reward +1    | 0               |
//! | 5..=7 | 0               | s + 1           |
//! | 8     | 0               | 0, reward +2    |
//!
//! With slip `p`, the other action is executed with probability `p`; the
//! reward follows the executed action.

use super::{Outcome, TabularMdp};
use crate::error::{domain, Result};

pub const LOOP_GAMMA: f64 = 0.95;
const N_STATES: usize = 9;

/// Deterministic effect of executing `action` in `s`.
fn execute(s: usize, action: usize) -> (usize, f64) {
    match (s, action) {
        (0, 0) => (1, 0.0),
        (0, _) => (5, 0.0),
        (1..=3, 0) => (s + 1, 0.0),
        (4, 0) => (0, 1.0),
        (5..=7, 1) => (s + 1, 0.0),
        (8, 1) => (0, 2.0),
        _ => (0, 0.0),
    }
}

pub fn build_loop(slip: f64) -> Result<TabularMdp> {
    if !(0.0..=0.5).contains(&slip) {
        return domain(format!("slip must lie in [0, 0.5], got {slip}"));
    }
    let mut rows = Vec::with_capacity(N_STATES * 2);
    for s in 0..N_STATES {
        for a in 0..2 {
            let (next, reward) = execute(s, a);
            let (slip_next, slip_reward) = execute(s, 1 - a);
            rows.push(vec![
                Outcome { next, reward, prob: 1.0 - slip },
                Outcome { next: slip_next, reward: slip_reward, prob: slip },
            ]);
        }
    }
    TabularMdp::new(N_STATES, 2, rows, &[], LOOP_GAMMA, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::optimal_q;
    use rand::SeedableRng;

    #[test]
    fn deterministic_rows_are_one_hot() {
        let mdp = build_loop(0.0).unwrap();
        for s in 0..9 {
            for a in 0..2 {
                let row = mdp.transition_row(s, a);
                assert_eq!(row.iter().filter(|&&p| p == 1.0).count(), 1);
            }
        }
    }

    #[test]
    fn exactly_two_rewarding_pairs() {
        let mdp = build_loop(0.0).unwrap();
        let mut rewarding = Vec::new();
        for s in 0..9 {
            for a in 0..2 {
                if mdp.expected_reward(s, a) != 0.0 {
                    rewarding.push((s, a));
                }
            }
        }
        assert_eq!(rewarding, vec![(4, 0), (8, 1)]);
    }

    #[test]
    fn slip_keeps_intended_mass() {
        let mdp = build_loop(0.1).unwrap();
        for s in 0..9 {
            for a in 0..2 {
                let (intended, _) = execute(s, a);
                let (other, _) = execute(s, 1 - a);
                let p = mdp.transition_row(s, a)[intended];
                let expected = if intended == other { 1.0 } else { 0.9 };
                assert!((p - expected).abs() < 1e-15, "({s},{a}) {p}");
            }
        }
    }

    #[test]
    fn empirical_slip_frequency() {
        let mdp = build_loop(0.1).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let slips = (0..n).filter(|_| mdp.step(0, 0, &mut rng).unwrap().next == 5).count();
        let sd = (n as f64 * 0.1 * 0.9).sqrt();
        assert!((slips as f64 - 0.1 * n as f64).abs() < 3.0 * sd);
    }

    #[test]
    fn optimal_policy_takes_the_big_loop() {
        let q = optimal_q(&build_loop(0.0).unwrap(), 1e-10).unwrap();
        assert_eq!(q.greedy(0), 1);
        // from state 1 resetting and taking the +2 loop beats finishing the +1 loop
        assert_eq!(q.greedy(1), 1);
        for s in 2..=3 {
            assert_eq!(q.greedy(s), 0);
        }
        for s in 5..=8 {
            assert_eq!(q.greedy(s), 1);
        }
        // Q*(0, b) = 2 γ^4 / (1 - γ^5)
        let g: f64 = LOOP_GAMMA;
        assert!((q.get(0, 1) - 2.0 * g.powi(4) / (1.0 - g.powi(5))).abs() < 1e-9);
    }

    #[test]
    fn rejects_large_slip() {
        assert!(build_loop(0.6).is_err());
        assert!(build_loop(-0.1).is_err());
    }
}
