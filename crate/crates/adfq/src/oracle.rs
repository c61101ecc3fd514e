//! Reference computations for the belief update.
//!
//! * [`posterior_unnorm_pdf`]: the exact (unnormalized) posterior density on
//!   `Q(s,a)` for one transition.
//! * [`quadrature_moments`]: trapezoid-rule moments of that density, used both
//!   as a test oracle and by the numeric agent.
//! * [`exact_two_action_moments`]: closed-form moments when `|A(s')| = 2`.
//!
//! With `σ_w > 0` the posterior uses the approximate likelihood in which only
//! the Gaussian factor of each branch carries `γ²σ² + σ_w²`; the CDF factors
//! keep `γσ`.

use crate::belief::{td_components, terminal_components, BeliefTable, BranchComponents, Transition};
use crate::error::{domain, Error, Result};
use crate::math::{inverse_mills_ratio, log_normal_cdf, log_sum_exp, std_normal_log_pdf, trapezoid};

/// Minimum number of grid points accepted for quadrature.
pub const MIN_GRID_POINTS: usize = 1001;
/// Grid size used by [`GridSpec::Auto`] as a floor and by the numeric agent.
pub const DEFAULT_GRID_POINTS: usize = 2001;
/// Half-width of the auto-sized support, in combined standard deviations.
const SUPPORT_STDDEVS: f64 = 12.0;
/// Auto grids resolve the narrowest feature with this many points per stddev.
const POINTS_PER_STDDEV: f64 = 8.0;
const MAX_AUTO_POINTS: usize = 400_001;

/// Quadrature grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridSpec {
    /// Support and resolution sized from the branch parameters.
    Auto,
    /// Auto-sized support with a fixed number of points.
    AutoSupport { n: usize },
    /// Explicit uniform grid.
    Fixed { lo: f64, hi: f64, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    /// `ln Z`, the log of the posterior's normalizer.
    pub log_z: f64,
    pub mean: f64,
    pub variance: f64,
}

impl Moments {
    pub fn z(&self) -> f64 {
        self.log_z.exp()
    }
}

/// Branch pieces of the exact posterior for one transition.
#[derive(Debug, Clone)]
struct Posterior {
    branches: Vec<BranchComponents>,
    /// CDF location `r + γ μ_{s',b}` and scale `γ σ_{s',b}` per next action.
    cdf: Vec<(f64, f64)>,
}

impl Posterior {
    fn new(table: &BeliefTable, tau: &Transition) -> Result<Self> {
        table.check_transition(tau)?;
        let prior = table.get(tau.s, tau.a);
        if tau.terminal {
            let comps = terminal_components(prior, tau.r, table.sigma_w())?;
            return Ok(Self { branches: vec![comps], cdf: Vec::new() });
        }
        let gamma = table.gamma();
        let row = table.row(tau.s_next);
        let branches = row
            .iter()
            .map(|next| td_components(prior, *next, tau.r, gamma, table.sigma_w()))
            .collect::<Result<Vec<_>>>()?;
        let cdf: Vec<(f64, f64)> = row.iter().map(|b| (tau.r + gamma * b.mean, gamma * b.stddev())).collect();
        if cdf.len() > 1 {
            if let Some(b) = cdf.iter().position(|&(_, scale)| !(scale > 0.0)) {
                return domain(format!("CDF scale γσ_(s',{b}) is zero"));
            }
        }
        Ok(Self { branches, cdf })
    }

    fn log_density(&self, q: f64) -> f64 {
        let n = self.branches.len();
        if n == 1 {
            return self.branch_log_gauss(0, q);
        }
        let log_cdf: Vec<f64> = self.cdf.iter().map(|&(m, s)| log_normal_cdf((q - m) / s)).collect();
        let mut suffix = vec![0.0; n + 1];
        for i in (0..n).rev() {
            suffix[i] = suffix[i + 1] + log_cdf[i];
        }
        let mut prefix = 0.0;
        let mut terms = [0.0; 16];
        let mut heap = Vec::new();
        let terms: &mut [f64] = if n <= terms.len() {
            &mut terms[..n]
        } else {
            heap.resize(n, 0.0);
            &mut heap
        };
        for b in 0..n {
            terms[b] = self.branch_log_gauss(b, q) + prefix + suffix[b + 1];
            prefix += log_cdf[b];
        }
        log_sum_exp(terms).unwrap_or(f64::NEG_INFINITY)
    }

    /// `ln( c_b/σ̄_b φ((q - μ̄_b)/σ̄_b) )`.
    fn branch_log_gauss(&self, b: usize, q: f64) -> f64 {
        let br = &self.branches[b];
        let sd = br.var_bar.sqrt();
        br.log_c - sd.ln() + std_normal_log_pdf((q - br.mu_bar) / sd)
    }

    fn auto_support(&self) -> (f64, f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut finest = f64::INFINITY;
        for br in &self.branches {
            let sd = br.var_bar.sqrt();
            lo = lo.min(br.mu_bar - SUPPORT_STDDEVS * sd);
            hi = hi.max(br.mu_bar + SUPPORT_STDDEVS * sd);
            finest = finest.min(sd);
        }
        for &(_, scale) in &self.cdf {
            finest = finest.min(scale);
        }
        (lo, hi, finest)
    }
}

/// Unnormalized posterior density of `Q(s,a)` at `q` given `τ`.
pub fn posterior_unnorm_pdf(q: f64, table: &BeliefTable, tau: &Transition) -> Result<f64> {
    Ok(posterior_log_unnorm_pdf(q, table, tau)?.exp())
}

/// `ln` of [`posterior_unnorm_pdf`], finite where the linear value underflows.
pub fn posterior_log_unnorm_pdf(q: f64, table: &BeliefTable, tau: &Transition) -> Result<f64> {
    Ok(Posterior::new(table, tau)?.log_density(q))
}

/// Resolves a [`GridSpec`] into `(lo, hi, n)` for the posterior of `τ`.
pub fn resolve_grid(table: &BeliefTable, tau: &Transition, grid: GridSpec) -> Result<(f64, f64, usize)> {
    let post = Posterior::new(table, tau)?;
    resolve(&post, grid)
}

fn resolve(post: &Posterior, grid: GridSpec) -> Result<(f64, f64, usize)> {
    let (lo, hi, n) = match grid {
        GridSpec::Fixed { lo, hi, n } => (lo, hi, n),
        GridSpec::AutoSupport { n } => {
            let (lo, hi, _) = post.auto_support();
            (lo, hi, n)
        }
        GridSpec::Auto => {
            let (lo, hi, finest) = post.auto_support();
            let wanted = ((hi - lo) / finest * POINTS_PER_STDDEV).ceil();
            let n = if wanted.is_finite() { (wanted as usize).clamp(DEFAULT_GRID_POINTS, MAX_AUTO_POINTS) } else { MAX_AUTO_POINTS };
            (lo, hi, n)
        }
    };
    if n < MIN_GRID_POINTS {
        return domain(format!("quadrature needs at least {MIN_GRID_POINTS} points, got {n}"));
    }
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return domain(format!("bad quadrature interval [{lo}, {hi}]"));
    }
    Ok((lo, hi, n))
}

/// Zeroth, first and second moments of the posterior by the trapezoid rule.
///
/// The integrand is evaluated in log space and rescaled by its maximum on the
/// grid before exponentiating, so the normalizer is only reported as `ln Z`.
pub fn quadrature_moments(table: &BeliefTable, tau: &Transition, grid: GridSpec) -> Result<Moments> {
    let post = Posterior::new(table, tau)?;
    let (lo, hi, n) = resolve(&post, grid)?;
    let h = (hi - lo) / (n - 1) as f64;
    let qs: Vec<f64> = (0..n).map(|i| lo + i as f64 * h).collect();
    let logs: Vec<f64> = qs.iter().map(|&q| post.log_density(q)).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::QuadratureUnderflow { lo, hi });
    }
    let w: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let z = trapezoid(&w, h);
    let first: Vec<f64> = w.iter().zip(&qs).map(|(w, q)| w * q).collect();
    let mean = trapezoid(&first, h) / z;
    let second: Vec<f64> = w.iter().zip(&qs).map(|(w, q)| w * (q - mean) * (q - mean)).collect();
    let variance = trapezoid(&second, h) / z;
    Ok(Moments { log_z: max + z.ln(), mean, variance })
}

/// Closed-form posterior mean and variance for two next actions.
///
/// With `Φ_b`, `φ_b` evaluated at `(μ̄_b - m_o) / s_b`, `s_b² = σ̄_b² + γ²σ²_{s',o}`
/// (`o` the other action):
///
/// ```text
/// Z     = c_1 Φ_1 + c_2 Φ_2
/// E[q]  = Σ_b c_b/Z (μ̄_b Φ_b + σ̄_b² φ_b)
/// E[q²] = Σ_b c_b/Z ((μ̄_b² + σ̄_b²) Φ_b + 2 μ̄_b σ̄_b² φ_b - σ̄_b⁴/s_b² (μ̄_b - m_o) φ_b)
/// ```
///
/// where `φ_b` already includes the `1/s_b` factor. The branch weights
/// `c_b Φ_b / Z` are formed in log space, and all locations are shifted by a
/// common origin before squaring so that the final `E[q²] - E[q]²` does not
/// cancel catastrophically.
pub fn exact_two_action_moments(table: &BeliefTable, tau: &Transition) -> Result<(f64, f64)> {
    let post = Posterior::new(table, tau)?;
    if post.branches.len() != 2 || tau.terminal {
        return domain(format!(
            "closed-form moments need exactly two next actions, got {}",
            if tau.terminal { 1 } else { post.branches.len() }
        ));
    }
    let origin = 0.5 * (post.branches[0].mu_bar + post.branches[1].mu_bar);

    let mut log_w = [0.0; 2];
    let mut first = [0.0; 2];
    let mut second = [0.0; 2];
    for b in 0..2 {
        let br = &post.branches[b];
        let (m_other, scale_other) = post.cdf[1 - b];
        let mu = br.mu_bar - origin;
        let m_o = m_other - origin;
        let var = br.var_bar;
        let s2 = var + scale_other * scale_other;
        let s = s2.sqrt();
        let z = (mu - m_o) / s;
        // φ_b / Φ_b with φ_b = φ(z)/s
        let mills = inverse_mills_ratio(z) / s;
        log_w[b] = br.log_c + log_normal_cdf(z);
        first[b] = mu + var * mills;
        second[b] = (mu * mu + var) + 2.0 * mu * var * mills - var * var / s2 * (mu - m_o) * mills;
    }
    let lse = log_sum_exp(&log_w)?;
    let w = [(log_w[0] - lse).exp(), (log_w[1] - lse).exp()];
    let mean = w[0] * first[0] + w[1] * first[1];
    let raw_second = w[0] * second[0] + w[1] * second[1];
    Ok((mean + origin, raw_second - mean * mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::{BeliefParams, GaussianBelief};
    use crate::update::adfq_update;
    use rand::{Rng, SeedableRng};

    fn g(m: f64, v: f64) -> GaussianBelief {
        GaussianBelief::new(m, v)
    }

    fn table(prior: GaussianBelief, next: &[GaussianBelief], gamma: f64, sigma_w: f64) -> BeliefTable {
        let n = next.len();
        let mut beliefs = vec![prior; n];
        beliefs.extend_from_slice(next);
        let mut params = BeliefParams::new(gamma).with_sigma_w(sigma_w);
        params.variance_floor = 1e-300;
        BeliefTable::from_beliefs(2, n, beliefs, params).unwrap()
    }

    fn tau(r: f64) -> Transition {
        Transition { s: 0, a: 0, r, s_next: 1, terminal: false }
    }

    #[test]
    fn single_action_is_conjugate() {
        let t = table(g(0.5, 2.0), &[g(1.0, 0.7)], 0.9, 0.0);
        let m = quadrature_moments(&t, &tau(0.3), GridSpec::Auto).unwrap();
        let c = td_components(g(0.5, 2.0), g(1.0, 0.7), 0.3, 0.9, 0.0).unwrap();
        assert!((m.mean - c.mu_bar).abs() < 1e-8);
        assert!((m.variance - c.var_bar).abs() < 1e-8);
        // Z of a single branch is c itself
        assert!((m.log_z - c.log_c).abs() < 1e-8);
    }

    #[test]
    fn density_nonnegative_on_dense_grid() {
        let t = table(g(0.0, 1.0), &[g(-2.0, 2.0), g(-2.0, 0.5), g(4.5, 0.5)], 0.9, 0.0);
        let (lo, hi, _) = resolve_grid(&t, &tau(0.0), GridSpec::Auto).unwrap();
        for i in 0..=5000 {
            let q = lo + (hi - lo) * i as f64 / 5000.0;
            let p = posterior_unnorm_pdf(q, &t, &tau(0.0)).unwrap();
            assert!(p >= 0.0 && p.is_finite());
        }
    }

    #[test]
    fn figure_one_posterior_moves_up() {
        let t = table(g(0.0, 1.0), &[g(-2.0, 2.0), g(-2.0, 0.5), g(4.5, 0.5)], 0.9, 0.0);
        let m = quadrature_moments(&t, &tau(0.0), GridSpec::Auto).unwrap();
        assert!(m.mean > 0.0);
        assert!(m.mean < 4.05);
    }

    #[test]
    fn zero_cdf_scale_is_an_error() {
        let t = table(g(0.0, 1.0), &[g(1.0, 1.0), g(2.0, 1.0)], 0.0, 0.5);
        assert!(posterior_unnorm_pdf(0.0, &t, &tau(0.0)).is_err());
    }

    #[test]
    fn too_few_points_rejected() {
        let t = table(g(0.0, 1.0), &[g(1.0, 1.0), g(2.0, 1.0)], 0.9, 0.0);
        assert!(quadrature_moments(&t, &tau(0.0), GridSpec::AutoSupport { n: 500 }).is_err());
    }

    #[test]
    fn exact_matches_quadrature_on_random_instances() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let mut b = || g(rng.random_range(-5.0..5.0), rng.random_range(0.3f64..3.0).powi(2));
            let (p, n0, n1) = (b(), b(), b());
            let t = table(p, &[n0, n1], 0.9, 0.0);
            let q = quadrature_moments(&t, &tau(0.5), GridSpec::Auto).unwrap();
            let (mean, var) = exact_two_action_moments(&t, &tau(0.5)).unwrap();
            assert!((mean - q.mean).abs() / (q.mean.abs() + 1.0) < 1e-6);
            assert!((var - q.variance).abs() / q.variance < 1e-6);
        }
    }

    #[test]
    fn exact_with_noise_matches_quadrature() {
        let t = table(g(0.2, 1.5), &[g(1.0, 0.8), g(1.6, 0.4)], 0.9, 0.3);
        let q = quadrature_moments(&t, &tau(0.1), GridSpec::Auto).unwrap();
        let (mean, var) = exact_two_action_moments(&t, &tau(0.1)).unwrap();
        assert!((mean - q.mean).abs() < 1e-8);
        assert!((var - q.variance).abs() < 1e-8);
    }

    #[test]
    fn exact_symmetric_branches_hit_midpoint() {
        // identical targets: equal c and Φ, so the mean is the midpoint of the μ̄'s
        let t = table(g(0.0, 1.0), &[g(2.0, 1.0), g(2.0, 1.0)], 0.9, 0.0);
        let (mean, _) = exact_two_action_moments(&t, &tau(0.0)).unwrap();
        let c = td_components(g(0.0, 1.0), g(2.0, 1.0), 0.0, 0.9, 0.0).unwrap();
        // both branches equal, and the midpoint of two equal μ̄ is μ̄ shifted by
        // the CDF correction; compare with quadrature instead of μ̄ alone
        let q = quadrature_moments(&t, &tau(0.0), GridSpec::Auto).unwrap();
        assert!((mean - q.mean).abs() < 1e-8);
        assert!(mean > c.mu_bar);
    }

    #[test]
    fn exact_dominant_branch() {
        let sigma: f64 = 0.5;
        let gap = 20.0 * sigma;
        let t = table(g(0.0, 1.0), &[g(0.0, sigma * sigma), g(gap, sigma * sigma)], 0.9, 0.0);
        let (mean, _) = exact_two_action_moments(&t, &tau(0.0)).unwrap();
        let c2 = td_components(g(0.0, 1.0), g(gap, sigma * sigma), 0.0, 0.9, 0.0).unwrap();
        assert!((mean - c2.mu_bar).abs() < 1e-6);
    }

    #[test]
    fn exact_requires_two_actions() {
        let t = table(g(0.0, 1.0), &[g(1.0, 1.0), g(2.0, 1.0), g(0.0, 1.0)], 0.9, 0.0);
        assert!(exact_two_action_moments(&t, &tau(0.0)).is_err());
        let t = table(g(0.0, 1.0), &[g(1.0, 1.0), g(2.0, 1.0)], 0.9, 0.0);
        assert!(exact_two_action_moments(&t, &Transition { terminal: true, ..tau(0.0) }).is_err());
    }

    #[test]
    fn variance_fixed_point_at_zero() {
        let mut prev = f64::INFINITY;
        for k in 1..8 {
            let eps = 10f64.powi(-k);
            let t = table(g(1.0, eps), &[g(1.0 / 0.9, eps), g(1.0 / 0.9, eps)], 0.9, 0.0);
            let (_, var) = exact_two_action_moments(&t, &tau(0.0)).unwrap();
            assert!(var < prev && var < eps);
            prev = var;
        }
        assert!(prev < 1e-7);
    }

    #[test]
    fn grid_converges_and_widening_is_harmless() {
        let t = table(g(0.0, 1.0), &[g(-1.0, 1.5), g(1.0, 0.8), g(0.5, 2.0)], 0.9, 0.0);
        let (lo, hi, _) = resolve_grid(&t, &tau(0.2), GridSpec::Auto).unwrap();
        let a = quadrature_moments(&t, &tau(0.2), GridSpec::Fixed { lo, hi, n: 2001 }).unwrap();
        let b = quadrature_moments(&t, &tau(0.2), GridSpec::Fixed { lo, hi, n: 4001 }).unwrap();
        assert!((a.mean - b.mean).abs() < 1e-9);
        let w = hi - lo;
        let c = quadrature_moments(&t, &tau(0.2), GridSpec::Fixed { lo: lo - w, hi: hi + w, n: 12001 }).unwrap();
        assert!((a.mean - c.mean).abs() < 1e-9);
        assert!((a.variance - c.variance).abs() < 1e-9);
    }

    #[test]
    fn analytic_error_shrinks_with_variance() {
        let next = [g(-2.0, 2.0), g(-2.0, 0.5), g(4.5, 0.5)];
        let mut last = f64::INFINITY;
        for scale in [1.0, 0.1, 0.01] {
            let scaled: Vec<_> = next.iter().map(|b| g(b.mean, b.variance * scale)).collect();
            let t = table(g(0.0, scale), &scaled, 0.9, 0.0);
            let q = quadrature_moments(&t, &tau(0.0), GridSpec::Auto).unwrap();
            let a = adfq_update(&t, &tau(0.0)).unwrap();
            let err = (a.new_mean - q.mean).abs() / (q.mean.abs() + 1.0);
            assert!(err < last, "scale {scale}: {err} vs {last}");
            last = err;
        }
        assert!(last < 1e-3);
    }
}
