//! Gaussian beliefs over Q-values and the per-branch posterior components.
//!
//! Each `(s, a)` pair carries an independent belief `Q(s,a) ~ N(μ, σ²)`. A
//! transition `(s, a, r, s')` combines the prior on `Q(s,a)` with one TD target
//! `r + γ Q(s',b)` per next action `b`; [`td_components`] computes the
//! conjugate pieces of that combination.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::math::std_normal_log_pdf;

pub type StateId = usize;
pub type ActionId = usize;

/// Lower bound on belief variances.
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-10;
/// Variance given to every belief at initialization.
pub const DEFAULT_INITIAL_VARIANCE: f64 = 100.0;
/// Effective target variance used when a terminal transition has `σ_w = 0`.
pub const MIN_TARGET_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBelief {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianBelief {
    pub fn new(mean: f64, variance: f64) -> Self {
        Self { mean, variance }
    }

    pub fn stddev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// One observed transition `τ = (s, a, r, s')`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: StateId,
    pub a: ActionId,
    pub r: f64,
    pub s_next: StateId,
    /// `s_next` is terminal; the TD target collapses to `r`.
    pub terminal: bool,
}

/// Hyperparameters shared by every belief in a table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeliefParams {
    pub gamma: f64,
    /// Std of the white noise added to the TD target, in Q-value units.
    pub sigma_w: f64,
    pub variance_floor: f64,
    pub initial_variance: f64,
    /// Initial means are drawn uniformly from `[lo, hi)`.
    pub init_mean_range: (f64, f64),
}

impl BeliefParams {
    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            sigma_w: 0.0,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
            initial_variance: DEFAULT_INITIAL_VARIANCE,
            init_mean_range: (0.0, 1.0),
        }
    }

    pub fn with_sigma_w(mut self, sigma_w: f64) -> Self {
        self.sigma_w = sigma_w;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return domain(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(self.sigma_w >= 0.0) || !self.sigma_w.is_finite() {
            return domain(format!("sigma_w must be >= 0, got {}", self.sigma_w));
        }
        if !(self.variance_floor > 0.0) {
            return domain(format!("variance floor must be > 0, got {}", self.variance_floor));
        }
        if !(self.initial_variance >= self.variance_floor) {
            return domain(format!(
                "initial variance {} is below the floor {}",
                self.initial_variance, self.variance_floor
            ));
        }
        let (lo, hi) = self.init_mean_range;
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return domain(format!("bad initial mean range [{lo}, {hi})"));
        }
        Ok(())
    }
}

/// Beliefs for every `(s, a)` of a finite MDP, stored densely row-major by state.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefTable {
    n_states: usize,
    n_actions: usize,
    beliefs: Vec<GaussianBelief>,
    params: BeliefParams,
}

impl BeliefTable {
    /// Every entry set to `(mean, params.initial_variance)`.
    pub fn constant(n_states: usize, n_actions: usize, mean: f64, params: BeliefParams) -> Result<Self> {
        params.validate()?;
        if n_states == 0 || n_actions == 0 {
            return domain("belief table needs at least one state and one action");
        }
        let b = GaussianBelief::new(mean, params.initial_variance);
        Ok(Self { n_states, n_actions, beliefs: vec![b; n_states * n_actions], params })
    }

    /// Means drawn uniformly from `params.init_mean_range`, variances fixed.
    pub fn random<R: Rng + ?Sized>(
        n_states: usize,
        n_actions: usize,
        params: BeliefParams,
        rng: &mut R,
    ) -> Result<Self> {
        let mut table = Self::constant(n_states, n_actions, 0.0, params)?;
        let (lo, hi) = params.init_mean_range;
        for b in &mut table.beliefs {
            b.mean = if hi > lo { rng.random_range(lo..hi) } else { lo };
        }
        Ok(table)
    }

    /// Builds a table from explicit beliefs (row-major by state).
    pub fn from_beliefs(
        n_states: usize,
        n_actions: usize,
        beliefs: Vec<GaussianBelief>,
        params: BeliefParams,
    ) -> Result<Self> {
        params.validate()?;
        if n_states == 0 || n_actions == 0 || beliefs.len() != n_states * n_actions {
            return domain(format!(
                "expected {} beliefs for {n_states}x{n_actions}, got {}",
                n_states * n_actions,
                beliefs.len()
            ));
        }
        let mut table = Self { n_states, n_actions, beliefs, params };
        for i in 0..table.beliefs.len() {
            let b = table.beliefs[i];
            if !b.mean.is_finite() || !(b.variance > 0.0) {
                return domain(format!("invalid belief ({}, {}) at index {i}", b.mean, b.variance));
            }
            table.beliefs[i].variance = b.variance.max(params.variance_floor);
        }
        Ok(table)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn params(&self) -> &BeliefParams {
        &self.params
    }

    pub fn gamma(&self) -> f64 {
        self.params.gamma
    }

    pub fn sigma_w(&self) -> f64 {
        self.params.sigma_w
    }

    pub fn variance_floor(&self) -> f64 {
        self.params.variance_floor
    }

    pub fn get(&self, s: StateId, a: ActionId) -> GaussianBelief {
        self.beliefs[self.index(s, a)]
    }

    /// Beliefs of every action at `s`.
    pub fn row(&self, s: StateId) -> &[GaussianBelief] {
        &self.beliefs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Overwrites `(s, a)`, clamping the variance to the floor.
    pub fn set(&mut self, s: StateId, a: ActionId, belief: GaussianBelief) {
        let i = self.index(s, a);
        self.beliefs[i] = GaussianBelief {
            mean: belief.mean,
            variance: belief.variance.max(self.params.variance_floor),
        };
    }

    pub fn beliefs(&self) -> &[GaussianBelief] {
        &self.beliefs
    }

    /// Means in `(s, a)` row-major order.
    pub fn means(&self) -> Vec<f64> {
        self.beliefs.iter().map(|b| b.mean).collect()
    }

    pub fn check_transition(&self, tau: &Transition) -> Result<()> {
        if tau.s >= self.n_states || tau.s_next >= self.n_states || tau.a >= self.n_actions {
            return domain(format!(
                "transition ({}, {}, {}) out of range for a {}x{} table",
                tau.s, tau.a, tau.s_next, self.n_states, self.n_actions
            ));
        }
        if !tau.r.is_finite() {
            return domain(format!("non-finite reward {}", tau.r));
        }
        Ok(())
    }

    /// Writes `state,action,mean,variance` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let b = self.get(s, a);
                w.serialize(BeliefRow { state: s, action: a, mean: b.mean, variance: b.variance })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads rows written by [`write_csv`](Self::write_csv); every `(s, a)` must appear once.
    pub fn read_csv<R: Read>(reader: R, params: BeliefParams) -> Result<Self> {
        let mut rows = Vec::new();
        for row in csv::Reader::from_reader(reader).deserialize() {
            let row: BeliefRow = row?;
            rows.push(row);
        }
        let n_states = rows.iter().map(|r| r.state + 1).max().unwrap_or(0);
        let n_actions = rows.iter().map(|r| r.action + 1).max().unwrap_or(0);
        let mut seen = vec![None; n_states * n_actions];
        for r in rows {
            let slot = &mut seen[r.state * n_actions + r.action];
            if slot.is_some() {
                return Err(Error::Domain(format!("duplicate row for ({}, {})", r.state, r.action)));
            }
            *slot = Some(GaussianBelief::new(r.mean, r.variance));
        }
        let beliefs = seen
            .into_iter()
            .enumerate()
            .map(|(i, b)| b.ok_or_else(|| Error::Domain(format!("missing row for ({}, {})", i / n_actions, i % n_actions))))
            .collect::<Result<Vec<_>>>()?;
        Self::from_beliefs(n_states, n_actions, beliefs, params)
    }

    fn index(&self, s: StateId, a: ActionId) -> usize {
        debug_assert!(s < self.n_states && a < self.n_actions);
        s * self.n_actions + a
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BeliefRow {
    state: usize,
    action: usize,
    mean: f64,
    variance: f64,
}

/// Conjugate pieces of one branch `b` of the posterior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchComponents {
    /// TD target mean `r + γ μ_{s',b}`.
    pub m: f64,
    /// Effective target variance `γ² σ²_{s',b} + σ_w²`.
    pub v: f64,
    /// Branch weight density `N(m; μ_prior, σ²_prior + v)`.
    pub c: f64,
    /// `ln c`, finite even when `c` underflows.
    pub log_c: f64,
    pub mu_bar: f64,
    pub var_bar: f64,
}

/// Combines the prior on `Q(s,a)` with the TD target through next action `b`.
pub fn td_components(
    prior: GaussianBelief,
    target: GaussianBelief,
    r: f64,
    gamma: f64,
    sigma_w: f64,
) -> Result<BranchComponents> {
    if !(target.variance >= 0.0) {
        return domain(format!("target variance must be >= 0, got {}", target.variance));
    }
    let m = r + gamma * target.mean;
    let v = gamma * gamma * target.variance + sigma_w * sigma_w;
    components_from_target(prior, m, v)
}

/// Single-branch components for a transition into a terminal state: the target
/// is `r` with variance `σ_w²` (or [`MIN_TARGET_VARIANCE`] when `σ_w = 0`).
pub fn terminal_components(prior: GaussianBelief, r: f64, sigma_w: f64) -> Result<BranchComponents> {
    let v = (sigma_w * sigma_w).max(MIN_TARGET_VARIANCE);
    components_from_target(prior, r, v)
}

/// Components for a generic Gaussian target `N(m, v)`.
pub fn components_from_target(prior: GaussianBelief, m: f64, v: f64) -> Result<BranchComponents> {
    if !(prior.variance > 0.0) {
        return domain(format!("prior variance must be > 0, got {}", prior.variance));
    }
    if !(v > 0.0) {
        return domain(format!("degenerate TD target variance {v}"));
    }
    let total = prior.variance + v;
    let var_bar = prior.variance * v / total;
    let mu_bar = (prior.mean * v + m * prior.variance) / total;
    let delta = m - prior.mean;
    let log_c = std_normal_log_pdf(delta / total.sqrt()) - 0.5 * total.ln();
    Ok(BranchComponents { m, v, c: log_c.exp(), log_c, mu_bar, var_bar })
}
