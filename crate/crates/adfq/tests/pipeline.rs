use adfq::agent::{AgentKind, PolicySpec};
use adfq::belief::{BeliefParams, BeliefTable, GaussianBelief, Transition};
use adfq::env::{build_maze, optimal_q, DEFAULT_MAZE};
use adfq::harness::{run_convergence, run_learning, write_outputs, AgentConfig, DomainSpec, ExperimentConfig};
use adfq::oracle::{quadrature_moments, GridSpec};
use adfq::update::{adfq_step, adfq_update};
use proptest::prelude::*;

fn fig1_table() -> BeliefTable {
    let next = [GaussianBelief::new(-2.0, 2.0), GaussianBelief::new(-2.0, 0.5), GaussianBelief::new(4.5, 0.5)];
    let mut beliefs = vec![GaussianBelief::new(0.0, 1.0); 3];
    beliefs.extend_from_slice(&next);
    BeliefTable::from_beliefs(2, 3, beliefs, BeliefParams::new(0.9)).unwrap()
}

const TAU: Transition = Transition { s: 0, a: 0, r: 0.0, s_next: 1, terminal: false };

#[test]
fn three_action_update_tracks_quadrature() {
    let table = fig1_table();
    let update = adfq_update(&table, &TAU).unwrap();
    let exact = quadrature_moments(&table, &TAU, GridSpec::Auto).unwrap();
    assert!(update.new_mean > 0.0);
    assert!((update.new_mean - exact.mean).abs() < 5e-3);
    assert!((update.new_variance - exact.variance).abs() < 5e-3);
    let weights: f64 = update.branches.iter().map(|b| b.weight).sum();
    assert!((weights - 1.0).abs() < 1e-12);
}

#[test]
fn belief_table_survives_csv() {
    let mut table = fig1_table();
    adfq_step(&mut table, &TAU).unwrap();
    let mut buf = Vec::new();
    table.write_csv(&mut buf).unwrap();
    assert!(String::from_utf8_lossy(&buf).starts_with("state,action,mean,variance\n"));
    let back = BeliefTable::read_csv(buf.as_slice(), BeliefParams::new(0.9)).unwrap();
    assert_eq!(back.beliefs(), table.beliefs());
}

#[test]
fn csv_files_repeat_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(
        DomainSpec::arms_default(10),
        AgentConfig::new(AgentKind::Adfq),
        PolicySpec::Uniform,
        500,
        3,
        42,
    );
    let first = run_convergence(&cfg).unwrap();
    cfg.jobs = 3;
    let second = run_convergence(&cfg).unwrap();
    let (a, _) = write_outputs(&dir.path().join("a"), "run", &first, false).unwrap();
    let (b, _) = write_outputs(&dir.path().join("b"), "run", &second, false).unwrap();
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn maze_learning_records_cadence() {
    let cfg = ExperimentConfig::new(
        DomainSpec::maze_default(0.0),
        AgentConfig::new(AgentKind::QLearning),
        PolicySpec::EpsilonGreedy { epsilon: 0.2 },
        3000,
        2,
        9,
    );
    let records = run_learning(&cfg).unwrap();
    assert_eq!(records.len(), 2 * 101);
    assert!(records.iter().all(|r| r.step % 30 == 0));
    let maze = build_maze(DEFAULT_MAZE, 0.0).unwrap();
    let q = optimal_q(&maze.mdp, 1e-10).unwrap();
    assert_eq!(q.values().len(), maze.mdp.n_states() * 4);
}

fn belief() -> impl Strategy<Value = GaussianBelief> {
    (-10.0..10.0f64, 0.01..10.0f64).prop_map(|(m, sd)| GaussianBelief::new(m, sd * sd))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// The updated mean is a convex combination of the prior mean, the
    /// branch peaks and the targets, so it stays inside their hull.
    #[test]
    fn update_mean_stays_in_hull(
        prior in belief(),
        next in prop::collection::vec(belief(), 2..6),
        r in -5.0..5.0f64,
        gamma in 0.5..0.99f64,
    ) {
        let n = next.len();
        let mut beliefs = vec![prior; n];
        beliefs.extend_from_slice(&next);
        let table = BeliefTable::from_beliefs(2, n, beliefs, BeliefParams::new(gamma)).unwrap();
        let tau = Transition { s: 0, a: 0, r, s_next: 1, terminal: false };
        let update = adfq_update(&table, &tau).unwrap();
        let targets = next.iter().map(|b| r + gamma * b.mean);
        let lo = targets.clone().fold(prior.mean, f64::min);
        let hi = targets.fold(prior.mean, f64::max);
        prop_assert!(update.new_mean >= lo - 1e-9 && update.new_mean <= hi + 1e-9);
        prop_assert!(update.new_variance >= table.variance_floor());
    }
}
