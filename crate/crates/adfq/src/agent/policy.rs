//! Action selection.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Normal;

use super::QTable;
use crate::belief::{ActionId, BeliefTable, StateId};
use crate::env::argmax;
use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicySpec {
    /// Uniform action with probability `epsilon`, greedy otherwise.
    EpsilonGreedy { epsilon: f64 },
    /// Samples `a` with probability proportional to `exp(value / temperature)`.
    Boltzmann { temperature: f64 },
    /// Samples one value per action from its belief and takes the argmax.
    Thompson,
    Uniform,
}

impl PolicySpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PolicySpec::EpsilonGreedy { epsilon } if !(0.0..=1.0).contains(&epsilon) => {
                domain(format!("epsilon must lie in [0, 1], got {epsilon}"))
            }
            PolicySpec::Boltzmann { temperature } if !(temperature > 0.0) || !temperature.is_finite() => {
                domain(format!("temperature must be > 0, got {temperature}"))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::EpsilonGreedy { .. } => "egreedy",
            PolicySpec::Boltzmann { .. } => "boltzmann",
            PolicySpec::Thompson => "ts",
            PolicySpec::Uniform => "uniform",
        }
    }
}

/// What a policy reads action values from.
#[derive(Debug, Clone, Copy)]
pub enum ValueSource<'a> {
    /// Greedy and Boltzmann use the means; Thompson samples the beliefs.
    Beliefs(&'a BeliefTable),
    Q(&'a QTable),
}

impl ValueSource<'_> {
    fn n_actions(&self) -> usize {
        match self {
            ValueSource::Beliefs(t) => t.n_actions(),
            ValueSource::Q(q) => q.n_actions(),
        }
    }

    fn values(&self, s: StateId) -> Vec<f64> {
        match self {
            ValueSource::Beliefs(t) => t.row(s).iter().map(|b| b.mean).collect(),
            ValueSource::Q(q) => q.values().row(s).to_vec(),
        }
    }
}

/// Picks an action for `state`. Greedy choices break ties toward the lowest
/// index. Thompson sampling needs beliefs and fails on a plain Q-table.
pub fn select_action<R: Rng + ?Sized>(
    policy: &PolicySpec,
    state: StateId,
    source: ValueSource<'_>,
    rng: &mut R,
) -> Result<ActionId> {
    let n = source.n_actions();
    match *policy {
        PolicySpec::Uniform => Ok(rng.random_range(0..n)),
        PolicySpec::EpsilonGreedy { epsilon } => {
            if rng.random::<f64>() < epsilon {
                Ok(rng.random_range(0..n))
            } else {
                Ok(argmax(&source.values(state)))
            }
        }
        PolicySpec::Boltzmann { temperature } => {
            let values = source.values(state);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights = values.iter().map(|v| ((v - max) / temperature).exp());
            let dist = WeightedIndex::new(weights).map_err(|e| crate::error::Error::Domain(e.to_string()))?;
            Ok(dist.sample(rng))
        }
        PolicySpec::Thompson => {
            let ValueSource::Beliefs(table) = source else {
                return domain("Thompson sampling needs a belief table");
            };
            let mut samples = Vec::with_capacity(n);
            for b in table.row(state) {
                let normal = Normal::new(b.mean, b.stddev()).map_err(|e| crate::error::Error::Domain(e.to_string()))?;
                samples.push(normal.sample(rng));
            }
            Ok(argmax(&samples))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::{BeliefParams, GaussianBelief};
    use crate::env::ActionValues;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn qtable(row: &[f64]) -> QTable {
        QTable::from_values(ActionValues::from_values(1, row.len(), row.to_vec()).unwrap())
    }

    #[test]
    fn greedy_picks_argmax() {
        let q = qtable(&[1.0, 3.0, 2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = PolicySpec::EpsilonGreedy { epsilon: 0.0 };
        for _ in 0..100 {
            assert_eq!(select_action(&p, 0, ValueSource::Q(&q), &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn epsilon_one_is_uniform() {
        let q = qtable(&[1.0, 3.0, 2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = PolicySpec::EpsilonGreedy { epsilon: 1.0 };
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[select_action(&p, 0, ValueSource::Q(&q), &mut rng).unwrap()] += 1;
        }
        let sd = (n as f64 / 3.0 * (2.0 / 3.0)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 / 3.0).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn thompson_with_tiny_variance_is_greedy() {
        let params = BeliefParams::new(0.9);
        let beliefs = vec![GaussianBelief::new(10.0, 1e-12), GaussianBelief::new(0.0, 1e-12)];
        let table = BeliefTable::from_beliefs(1, 2, beliefs, params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10_000 {
            assert_eq!(select_action(&PolicySpec::Thompson, 0, ValueSource::Beliefs(&table), &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn thompson_on_q_table_is_an_error() {
        let q = qtable(&[0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(select_action(&PolicySpec::Thompson, 0, ValueSource::Q(&q), &mut rng).is_err());
    }

    #[test]
    fn boltzmann_frequencies_follow_softmax() {
        let q = qtable(&[0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = PolicySpec::Boltzmann { temperature: 0.5 };
        let n = 100_000;
        let ones = (0..n).filter(|_| select_action(&p, 0, ValueSource::Q(&q), &mut rng).unwrap() == 1).count();
        let expected = 1.0 / (1.0 + (-2.0f64).exp());
        let sd = (n as f64 * expected * (1.0 - expected)).sqrt();
        assert!((ones as f64 - expected * n as f64).abs() < 3.0 * sd);
    }

    #[test]
    fn validation() {
        assert!(PolicySpec::EpsilonGreedy { epsilon: 1.5 }.validate().is_err());
        assert!(PolicySpec::Boltzmann { temperature: 0.0 }.validate().is_err());
        assert!(PolicySpec::Thompson.validate().is_ok());
    }

    #[test]
    fn same_seed_same_actions() {
        let params = BeliefParams::new(0.9);
        let beliefs = vec![GaussianBelief::new(0.0, 1.0), GaussianBelief::new(0.1, 1.0)];
        let table = BeliefTable::from_beliefs(1, 2, beliefs, params).unwrap();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| select_action(&PolicySpec::Thompson, 0, ValueSource::Beliefs(&table), &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
    }
}
