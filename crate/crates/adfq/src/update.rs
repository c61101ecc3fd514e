//! The analytic ADFQ belief update.
//!
//! For a transition `τ = (s, a, r, s')` the exact posterior on `Q(s,a)` is a
//! sum over next actions `b` of a Gaussian `N(μ̄_b, σ̄_b²)` multiplied by the
//! CDFs of every other TD target. Replacing each CDF by its ReLU-shaped
//! approximation turns branch `b` into
//!
//! ```text
//! c_b / σ̄_b · exp{ -(q - μ̄_b)² / 2σ̄_b² - Σ_{j≠b} [m_j - q]₊² / 2v_j }
//! ```
//!
//! whose exponent is concave and piecewise quadratic. Each branch is replaced
//! by a Gaussian with the same peak location `μ*_b`, curvature `1/σ*_b²` and
//! mass `k*_b`, and the resulting mixture is collapsed to its first two
//! moments.
//!
//! The penalty variances `v_j` of the other targets are `γ² σ²_{s',j}`: the
//! CDF factors of the posterior do not carry the white-noise term, only the
//! Gaussian factor of each branch does (see [`crate::belief::td_components`]).

use crate::belief::{
    td_components, terminal_components, ActionId, BeliefTable, BranchComponents, GaussianBelief,
    Transition, MIN_TARGET_VARIANCE,
};
use crate::error::Result;
use crate::math::softmax;

/// A competing TD target `N(mean, variance)` seen from another branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub mean: f64,
    pub variance: f64,
}

/// Per-branch diagnostics of one update.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionBranch {
    pub action: ActionId,
    pub components: BranchComponents,
    pub mu_star: f64,
    pub var_star: f64,
    pub log_k_star: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateResult {
    pub new_mean: f64,
    /// Already clamped to the table's variance floor.
    pub new_variance: f64,
    pub branches: Vec<ActionBranch>,
}

impl UpdateResult {
    pub fn belief(&self) -> GaussianBelief {
        GaussianBelief::new(self.new_mean, self.new_variance)
    }
}

/// Peak location `μ*` of one branch.
///
/// `μ*` is the precision-weighted mean of `(μ̄, σ̄²)` and of every other target
/// whose mean lies strictly above `μ*`. Targets are scanned in descending
/// order of mean; the first prefix `A_k` whose solution satisfies
/// `μ*_k >= m_{k+1}` is the consistent one (`m_k > μ*_k` holds automatically,
/// since adding `m_k` to an average below it keeps the average below `m_k`).
pub fn solve_peak_mean(branch: &BranchComponents, others: &[Target]) -> f64 {
    peak(branch, others).0
}

/// Peak variance `σ*²`: `1/σ*² = 1/σ̄² + Σ_{j: m_j > μ*} 1/v_j`.
///
/// Targets exactly at `μ*` are excluded (`H(0) = 0`).
pub fn peak_variance(branch: &BranchComponents, others: &[Target], mu_star: f64) -> f64 {
    let active: f64 = others.iter().filter(|t| t.mean > mu_star).map(|t| 1.0 / t.variance).sum();
    if active == 0.0 {
        return branch.var_bar;
    }
    1.0 / (1.0 / branch.var_bar + active)
}

/// `ln k*`, the log mass of the branch's Laplace approximation.
pub fn log_peak_height(branch: &BranchComponents, others: &[Target], mu_star: f64, var_star: f64) -> f64 {
    let shift = mu_star - branch.mu_bar;
    let penalty: f64 = others
        .iter()
        .map(|t| {
            let gap = (t.mean - mu_star).max(0.0);
            gap * gap / (2.0 * t.variance)
        })
        .sum();
    branch.log_c + 0.5 * (var_star / branch.var_bar).ln() - shift * shift / (2.0 * branch.var_bar) - penalty
}

/// `(μ*, σ*²)` by prefix scan over the targets sorted by descending mean.
fn peak(branch: &BranchComponents, others: &[Target]) -> (f64, f64) {
    let mut sorted: Vec<Target> = others.to_vec();
    sorted.sort_by(|x, y| y.mean.total_cmp(&x.mean));

    let mut precision = 1.0 / branch.var_bar;
    let mut weighted = branch.mu_bar / branch.var_bar;
    let mut mu = branch.mu_bar;
    let mut var = branch.var_bar;
    for t in &sorted {
        if mu >= t.mean {
            return (mu, var);
        }
        precision += 1.0 / t.variance;
        weighted += t.mean / t.variance;
        mu = weighted / precision;
        var = 1.0 / precision;
    }
    (mu, var)
}

/// Competing targets `r + γ μ_{s',j}` with penalty variance `γ² σ²_{s',j}`.
fn next_targets(row: &[GaussianBelief], r: f64, gamma: f64) -> Vec<Target> {
    row.iter()
        .map(|b| Target {
            mean: r + gamma * b.mean,
            variance: (gamma * gamma * b.variance).max(MIN_TARGET_VARIANCE),
        })
        .collect()
}

/// Computes the moment-matched posterior for `Q(s,a)` without touching the table.
pub fn adfq_update(table: &BeliefTable, tau: &Transition) -> Result<UpdateResult> {
    table.check_transition(tau)?;
    let prior = table.get(tau.s, tau.a);
    let (gamma, sigma_w) = (table.gamma(), table.sigma_w());

    if tau.terminal {
        let comps = terminal_components(prior, tau.r, sigma_w)?;
        let branch = ActionBranch {
            action: 0,
            components: comps,
            mu_star: comps.mu_bar,
            var_star: comps.var_bar,
            log_k_star: comps.log_c,
            weight: 1.0,
        };
        return Ok(UpdateResult {
            new_mean: comps.mu_bar,
            new_variance: comps.var_bar.max(table.variance_floor()),
            branches: vec![branch],
        });
    }

    let row = table.row(tau.s_next);
    let targets = next_targets(row, tau.r, gamma);
    let mut branches = Vec::with_capacity(row.len());
    let mut others = Vec::with_capacity(row.len().saturating_sub(1));
    for (b, next) in row.iter().enumerate() {
        let comps = td_components(prior, *next, tau.r, gamma, sigma_w)?;
        others.clear();
        others.extend(targets.iter().enumerate().filter(|&(j, _)| j != b).map(|(_, t)| *t));
        let (mu_star, var_star) = peak(&comps, &others);
        let log_k_star = log_peak_height(&comps, &others, mu_star, var_star);
        branches.push(ActionBranch { action: b, components: comps, mu_star, var_star, log_k_star, weight: 0.0 });
    }

    let log_k: Vec<f64> = branches.iter().map(|b| b.log_k_star).collect();
    let weights = softmax(&log_k)?;
    for (branch, w) in branches.iter_mut().zip(&weights) {
        branch.weight = *w;
    }
    let new_mean: f64 = branches.iter().map(|b| b.weight * b.mu_star).sum();
    let new_variance: f64 = branches
        .iter()
        .map(|b| {
            let d = b.mu_star - new_mean;
            b.weight * (b.var_star + d * d)
        })
        .sum();

    Ok(UpdateResult { new_mean, new_variance: new_variance.max(table.variance_floor()), branches })
}

/// Writes an update result into `(s, a)`.
pub fn apply_update(table: &mut BeliefTable, tau: &Transition, result: &UpdateResult) {
    table.set(tau.s, tau.a, result.belief());
}

/// Runs [`adfq_update`] and applies it.
pub fn adfq_step(table: &mut BeliefTable, tau: &Transition) -> Result<UpdateResult> {
    let result = adfq_update(table, tau)?;
    apply_update(table, tau, &result);
    Ok(result)
}

/// Q-learning-shaped target that the update approaches as variances vanish.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QLearningLimit {
    /// `(1 - α) μ_{s,a} + α (r + γ max_b μ_{s',b})`.
    pub mean: f64,
    /// `σ²_{s,a} / (σ²_{s,a} + γ² σ²_{s',b+} + σ_w²)`.
    pub alpha: f64,
    /// `r + γ μ_{s',b+}`.
    pub target: f64,
}

/// Small-variance reference for the update. `b+` is the lowest-index argmax
/// of the next-state means.
pub fn qlearning_limit_target(table: &BeliefTable, tau: &Transition) -> Result<QLearningLimit> {
    table.check_transition(tau)?;
    let prior = table.get(tau.s, tau.a);
    let (gamma, sigma_w) = (table.gamma(), table.sigma_w());
    let (target, target_var) = if tau.terminal {
        (tau.r, (sigma_w * sigma_w).max(MIN_TARGET_VARIANCE))
    } else {
        let row = table.row(tau.s_next);
        let best = row
            .iter()
            .enumerate()
            .fold(0, |best, (b, x)| if x.mean > row[best].mean { b } else { best });
        (tau.r + gamma * row[best].mean, gamma * gamma * row[best].variance + sigma_w * sigma_w)
    };
    let alpha = prior.variance / (prior.variance + target_var);
    Ok(QLearningLimit { mean: (1.0 - alpha) * prior.mean + alpha * target, alpha, target })
}
