//! Objective and gradient diagnostics, and runtime checks of the convergence bounds
//! as inequalities over recorded trajectories.
//!
//! Every checker reports `lhs`, `rhs` and the slack it was allowed; `pass` is
//! exactly `lhs ≤ rhs + slack`.

use alloc::vec::Vec;

use nalgebra::DVector;
// Float supplies libm-backed methods under no_std; with std linked (tests) the inherent ones win.
#[allow(unused_imports)]
use num_traits::Float;

use crate::bw::{entropy, kl_gaussian, w2_squared, AffineMap, GaussianMeasure};
use crate::error::{check_dim, invalid, Result};
use crate::gvi::IterState;
use crate::potentials::{compute_moments, expected_potential, MomentEstimate, MomentMode, Potential};
use crate::psd::{SpdMatrix, SymMatrix};
use crate::rng::StreamRng;

/// Sample mean with its standard error; `std_err` is zero for exact quantities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { mean: value, std_err: 0.0, n: 0 }
    }

    /// Mean and standard error of i.i.d. samples; needs at least two.
    pub fn from_samples(xs: &[f64]) -> Result<Self> {
        let n = xs.len();
        if n < 2 {
            return Err(invalid("Estimate: need at least two samples"));
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        Ok(Self { mean, std_err: (var / n as f64).sqrt(), n })
    }
}

/// One row of a trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    pub kl: Option<f64>,
    /// `F(p_k) − F(π̂)` when `F(π̂)` is known, otherwise `F(p_k)` (possibly estimated).
    pub f: f64,
    pub w2_sq: Option<f64>,
    pub grad_norm_sq: f64,
    pub sigma_sq: Option<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub wall_ns: Option<u64>,
}

/// Identifies what a [`BoundCheck`] was run against.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CheckContext {
    pub eta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub replicas: usize,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundCheck {
    pub name: &'static str,
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
    /// Slack allowed on top of `rhs`.
    pub slack: f64,
    pub pass: bool,
    pub context: CheckContext,
}

impl BoundCheck {
    pub fn new(name: &'static str, k: usize, lhs: f64, rhs: f64, slack: f64, context: CheckContext) -> Self {
        Self { name, k, lhs, rhs, slack, pass: lhs <= rhs + slack, context }
    }

    /// Portion of the allowed slack actually consumed.
    pub fn slack_used(&self) -> f64 {
        (self.lhs - self.rhs).max(0.0)
    }
}

/// `F(μ) = E_μV + H(μ)`; the potential term follows `mode` and carries the standard error.
pub fn objective<P: Potential + ?Sized>(
    pot: &P,
    mu: &GaussianMeasure,
    mode: MomentMode,
    n: usize,
    rng: &mut StreamRng,
) -> Result<Estimate> {
    let (v, se) = expected_potential(pot, mu, mode, n, rng)?;
    let n_used = if mode == MomentMode::MonteCarlo { n } else { 0 };
    Ok(Estimate { mean: v + entropy(mu), std_err: se, n: n_used })
}

/// `∇_BW F(μ) : x ↦ b̂ + (Ŝ − Σ_μ⁻¹)(x − m_μ)`.
pub fn bw_grad_objective(mu: &GaussianMeasure, moments: &MomentEstimate) -> Result<AffineMap> {
    check_dim(mu.dim(), moments.b_hat.len())?;
    let linear = moments.s_hat.sub(mu.cov().inverse().as_sym());
    AffineMap::new(moments.b_hat.clone(), linear, mu.mean().clone())
}

/// `‖∇_BW F(μ)‖²_μ = ‖b̂‖² + tr(S Σ_μ S)` with `S = Ŝ − Σ_μ⁻¹`.
pub fn grad_norm_sq(mu: &GaussianMeasure, moments: &MomentEstimate) -> Result<f64> {
    let g = bw_grad_objective(mu, moments)?;
    Ok(g.intercept().norm_squared() + affine_linear_norm_sq(g.linear(), mu.cov()))
}

fn affine_linear_norm_sq(s: &SymMatrix, cov: &SpdMatrix) -> f64 {
    // tr(SΣS) = Σ_ij (SΣ)_ij S_ji
    (s.as_matrix() * cov.matrix()).component_mul(s.as_matrix()).sum()
}

/// `E_μ |g(X)|²` by sampling, the direct estimator of `‖g‖²_μ`.
pub fn norm_sq_monte_carlo(g: &AffineMap, mu: &GaussianMeasure, n: usize, rng: &mut StreamRng) -> Result<Estimate> {
    check_dim(mu.dim(), g.dim())?;
    let draws: Vec<f64> = (0..n).map(|_| g.apply(&mu.sample(rng)).norm_squared()).collect();
    Estimate::from_samples(&draws)
}

/// Average of `‖e‖²_μ = ‖Δb‖² + tr(ΔS Σ ΔS)` over `n_redraws` single-point oracles,
/// where `Δ` is the deviation from `reference`.
pub fn sigma_sq_estimate<P: Potential + ?Sized>(
    pot: &P,
    mu: &GaussianMeasure,
    reference: &MomentEstimate,
    n_redraws: usize,
    rng: &mut StreamRng,
) -> Result<Estimate> {
    if n_redraws < 2 {
        return Err(invalid("sigma_sq_estimate: need at least two redraws"));
    }
    check_dim(mu.dim(), reference.b_hat.len())?;
    let draws: Vec<f64> = (0..n_redraws)
        .map(|_| {
            let (g, h) = pot.grad_hess(&mu.sample(rng));
            let db = g - &reference.b_hat;
            let ds = h.sub(&reference.s_hat);
            db.norm_squared() + affine_linear_norm_sq(&ds, mu.cov())
        })
        .collect();
    Estimate::from_samples(&draws)
}

/// Builds trace rows for the iterates of one run.
///
/// Moments at `p_k` are exact when the potential allows it; otherwise they use
/// `mode`/`n` on the diagnostics' own generator, so recording never perturbs the stepper.
pub struct Recorder<'a, P: Potential + ?Sized> {
    pot: &'a P,
    target: Option<GaussianMeasure>,
    f_target: Option<f64>,
    mode: MomentMode,
    n: usize,
    sigma_redraws: Option<usize>,
    rng: StreamRng,
}

impl<'a, P: Potential + ?Sized> Recorder<'a, P> {
    pub fn new(pot: &'a P, mode: MomentMode, n: usize, rng: StreamRng) -> Self {
        let mode = if pot.has_exact_moments() { MomentMode::Exact } else { mode };
        Self { pot, target: None, f_target: None, mode, n, sigma_redraws: None, rng }
    }

    /// Gaussian target: enables `kl`/`w2_sq` and makes `f` the gap `F(p_k) − F(π̂)`.
    pub fn with_target(mut self, target: GaussianMeasure) -> Result<Self> {
        check_dim(self.pot.dim(), target.dim())?;
        let f = objective(self.pot, &target, self.mode, self.n, &mut self.rng)?;
        self.f_target = Some(f.mean);
        self.target = Some(target);
        Ok(self)
    }

    pub fn with_sigma_redraws(mut self, n_redraws: usize) -> Self {
        self.sigma_redraws = Some(n_redraws);
        self
    }

    pub fn target(&self) -> Option<&GaussianMeasure> {
        self.target.as_ref()
    }

    pub fn record(&mut self, state: &IterState) -> Result<TraceRecord> {
        let p = &state.p;
        let moments = compute_moments(self.pot, p, self.mode, self.n, &mut self.rng)?;
        let grad = grad_norm_sq(p, &moments)?;
        let f = objective(self.pot, p, self.mode, self.n, &mut self.rng)?.mean - self.f_target.unwrap_or(0.0);
        let (kl, w2_sq) = match &self.target {
            Some(t) => (Some(kl_gaussian(p, t)?), Some(w2_squared(p, t)?)),
            None => (None, None),
        };
        let sigma_sq = match self.sigma_redraws {
            Some(r) => Some(sigma_sq_estimate(self.pot, p, &moments, r, &mut self.rng)?.mean),
            None => None,
        };
        Ok(TraceRecord {
            k: state.k,
            kl,
            f,
            w2_sq,
            grad_norm_sq: grad,
            sigma_sq,
            lambda_min: p.cov().lambda_min(),
            lambda_max: p.cov().lambda_max(),
            wall_ns: None,
        })
    }
}

/// `W2²(p_{k+1}, π̂) ≤ (1 − αη) W2²(p_k, π̂) − 2η (F(p_{k+1}) − F(π̂))` per step, for
/// deterministic runs. `w2[k]` and `gap[k]` are indexed by iterate.
pub fn check_one_step_inequality(w2: &[f64], gap: &[f64], ctx: CheckContext, slack: f64) -> Result<Vec<BoundCheck>> {
    if w2.len() != gap.len() {
        return Err(invalid("check_one_step_inequality: series lengths differ"));
    }
    if ctx.eta > 1.0 / ctx.beta {
        return Err(invalid("check_one_step_inequality: requires eta <= 1/beta"));
    }
    let (a, eta) = (ctx.alpha, ctx.eta);
    Ok((0..w2.len().saturating_sub(1))
        .map(|k| {
            let rhs = (1.0 - a * eta) * w2[k] - 2.0 * eta * gap[k + 1];
            BoundCheck::new("one_step", k + 1, w2[k + 1], rhs, slack, ctx)
        })
        .collect())
}

/// Ensemble form with the variance term: per replica `r`,
/// `dᵣ = W2²ᵣ(k+1) − (1 − αη) W2²ᵣ(k) + 2η gapᵣ(k+1) − 2η² σ²ᵣ(k)`, and the check is
/// `mean(d) ≤ 0` up to `z` standard errors.
pub fn check_one_step_ensemble(
    k: usize,
    w2_k: &[f64],
    w2_next: &[f64],
    gap_next: &[f64],
    sigma_sq_k: &[f64],
    ctx: CheckContext,
    z: f64,
) -> Result<BoundCheck> {
    let r = w2_k.len();
    if [w2_next.len(), gap_next.len(), sigma_sq_k.len()].iter().any(|&l| l != r) {
        return Err(invalid("check_one_step_ensemble: series lengths differ"));
    }
    if ctx.eta > 0.5 / ctx.beta {
        return Err(invalid("check_one_step_ensemble: requires eta <= 1/(2 beta)"));
    }
    let (a, eta) = (ctx.alpha, ctx.eta);
    let diffs: Vec<f64> = (0..r)
        .map(|i| w2_next[i] - (1.0 - a * eta) * w2_k[i] + 2.0 * eta * gap_next[i] - 2.0 * eta * eta * sigma_sq_k[i])
        .collect();
    let e = Estimate::from_samples(&diffs)?;
    Ok(BoundCheck::new("one_step_ensemble", k + 1, e.mean, 0.0, z * e.std_err, ctx))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RateTheorem {
    /// Convex, deterministic: objective gap `≤ W2²₀ / (2kη)`.
    ConvexDeterministic,
    /// Strongly convex, deterministic: `W2²_k ≤ e^{−αkη} W2²₀`.
    StronglyConvexDeterministic,
    /// Smooth only, deterministic: `min_{j<k} ‖∇_BW F(p_j)‖² ≤ 150Δ/(ηk)`.
    NonConvexDeterministic,
    /// Convex, stochastic: `E min_{1..N} gap ≤ 2W2²₀/(Nη) + 2cηW2²₀ + 12βηd`.
    ConvexStochastic,
    /// Strongly convex, stochastic: `E W2²_N ≤ e^{−αNη/2} W2²₀ + 24βηd/α`.
    StronglyConvexStochastic,
}

impl RateTheorem {
    pub fn name(self) -> &'static str {
        match self {
            RateTheorem::ConvexDeterministic => "rate_convex",
            RateTheorem::StronglyConvexDeterministic => "rate_strongly_convex",
            RateTheorem::NonConvexDeterministic => "rate_nonconvex_stationarity",
            RateTheorem::ConvexStochastic => "rate_convex_stochastic",
            RateTheorem::StronglyConvexStochastic => "rate_strongly_convex_stochastic",
        }
    }

    /// Rejects `(α, β, η)` outside the hypotheses, which is a configuration error.
    pub fn check_assumptions(self, ctx: &CheckContext) -> Result<()> {
        let CheckContext { eta, alpha, beta, .. } = *ctx;
        let ok = eta > 0.0
            && beta > 0.0
            && match self {
                RateTheorem::ConvexDeterministic => alpha >= 0.0 && eta <= 1.0 / beta,
                RateTheorem::StronglyConvexDeterministic => alpha > 0.0 && eta <= 1.0 / beta,
                RateTheorem::NonConvexDeterministic => eta <= 1.0 / beta,
                RateTheorem::ConvexStochastic => alpha >= 0.0 && eta <= 0.5 / beta,
                RateTheorem::StronglyConvexStochastic => {
                    alpha > 0.0 && eta <= alpha * alpha / (48.0 * beta * beta * beta)
                }
            };
        if ok {
            Ok(())
        } else {
            Err(invalid(alloc::format!(
                "{}: hypotheses not met by eta={eta}, alpha={alpha}, beta={beta}",
                self.name()
            )))
        }
    }
}

/// Deterministic rate checks at every prefix of the run.
///
/// For [`RateTheorem::ConvexDeterministic`] `series[k]` is the objective gap, for
/// [`RateTheorem::StronglyConvexDeterministic`] it is `W2²(p_k, π̂)`, and for
/// [`RateTheorem::NonConvexDeterministic`] it is `‖∇_BW F(p_k)‖²` with `scale = Δ`.
/// Otherwise `scale = W2²(p₀, π̂)`.
pub fn check_rate_theorem(
    which: RateTheorem,
    series: &[f64],
    scale: f64,
    ctx: CheckContext,
    slack: f64,
) -> Result<Vec<BoundCheck>> {
    which.check_assumptions(&ctx)?;
    let (eta, name) = (ctx.eta, which.name());
    let checks = match which {
        RateTheorem::ConvexDeterministic => (1..series.len())
            .map(|k| BoundCheck::new(name, k, series[k], scale / (2.0 * k as f64 * eta), slack, ctx))
            .collect(),
        RateTheorem::StronglyConvexDeterministic => (0..series.len())
            .map(|k| BoundCheck::new(name, k, series[k], (-ctx.alpha * k as f64 * eta).exp() * scale, slack, ctx))
            .collect(),
        RateTheorem::NonConvexDeterministic => {
            let mut running = f64::INFINITY;
            (1..=series.len())
                .map(|n| {
                    running = running.min(series[n - 1]);
                    BoundCheck::new(name, n, running, 150.0 * scale / (eta * n as f64), slack, ctx)
                })
                .collect()
        }
        _ => return Err(invalid("check_rate_theorem: stochastic theorems need an ensemble")),
    };
    Ok(checks)
}

/// Replica summaries for the stochastic rate checks.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSummary {
    pub n_steps: usize,
    pub dim: usize,
    pub w2_initial: f64,
    /// `λ_max(Σ̂)`, needed by the convex bound.
    pub lambda_max_target: f64,
    /// Per replica `min_{1..N} (F(p_k) − F(π̂))`.
    pub min_gap: Vec<f64>,
    /// Per replica `W2²(p_N, π̂)`.
    pub final_w2: Vec<f64>,
}

/// Stochastic rate check on the ensemble mean with `z` standard errors of slack.
pub fn check_stochastic_rate(which: RateTheorem, ens: &EnsembleSummary, ctx: CheckContext, z: f64) -> Result<BoundCheck> {
    which.check_assumptions(&ctx)?;
    let CheckContext { eta, alpha, beta, .. } = ctx;
    let (n, d, w0) = (ens.n_steps as f64, ens.dim as f64, ens.w2_initial);
    let (e, rhs) = match which {
        RateTheorem::ConvexStochastic => {
            let c = 24.0 * beta.powi(3) * ens.lambda_max_target;
            (Estimate::from_samples(&ens.min_gap)?, 2.0 * w0 / (n * eta) + 2.0 * c * eta * w0 + 12.0 * beta * eta * d)
        }
        RateTheorem::StronglyConvexStochastic => (
            Estimate::from_samples(&ens.final_w2)?,
            (-alpha * n * eta / 2.0).exp() * w0 + 24.0 * beta * eta * d / alpha,
        ),
        _ => return Err(invalid("check_stochastic_rate: deterministic theorem")),
    };
    let ctx = CheckContext { replicas: e.n, ..ctx };
    Ok(BoundCheck::new(which.name(), ens.n_steps, e.mean, rhs, z * e.std_err, ctx))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarianceForm {
    /// `6βd + 12β³ λ_max(Σ̂) W2²`
    Convex,
    /// `6βd + (12β³/α) W2²`
    StronglyConvex,
}

/// Compares a Monte Carlo `σ²` at `μ` with its bound, allowing `z` standard errors.
/// Reference moments are exact, so the potential must support them.
pub fn check_variance_bound<P: Potential + ?Sized>(
    pot: &P,
    mu: &GaussianMeasure,
    target: &GaussianMeasure,
    form: VarianceForm,
    n_redraws: usize,
    z: f64,
    rng: &mut StreamRng,
) -> Result<BoundCheck> {
    if n_redraws < 100 {
        return Err(invalid("check_variance_bound: insufficient samples (need at least 100 redraws)"));
    }
    let (alpha, beta) = (pot.alpha(), pot.beta());
    if alpha < 0.0 || (form == VarianceForm::StronglyConvex && alpha <= 0.0) {
        return Err(invalid("check_variance_bound: potential does not satisfy the convexity hypothesis"));
    }
    let reference = compute_moments(pot, mu, MomentMode::Exact, 0, rng)?;
    let sigma = sigma_sq_estimate(pot, mu, &reference, n_redraws, rng)?;
    let w2 = w2_squared(mu, target)?;
    let d = mu.dim() as f64;
    let growth = match form {
        VarianceForm::Convex => 12.0 * beta.powi(3) * target.cov().lambda_max(),
        VarianceForm::StronglyConvex => 12.0 * beta.powi(3) / alpha,
    };
    let ctx = CheckContext { eta: 0.0, alpha, beta, replicas: n_redraws, seed: None };
    Ok(BoundCheck::new("variance_bound", 0, sigma.mean, 6.0 * beta * d + growth * w2, z * sigma.std_err, ctx))
}

/// `λ_min(Σ_k) ≥ 1/β` for every iterate, given `Σ₀ ⪰ β⁻¹I` and `η ≤ 1/β`.
pub fn check_eigenvalue_floor(lambda_min: &[f64], ctx: CheckContext, slack: f64) -> Result<Vec<BoundCheck>> {
    let floor = 1.0 / ctx.beta;
    if ctx.eta > floor {
        return Err(invalid("check_eigenvalue_floor: requires eta <= 1/beta"));
    }
    if lambda_min.first().is_some_and(|&l0| l0 < floor * (1.0 - 1e-12)) {
        return Err(invalid("check_eigenvalue_floor: requires Sigma_0 >= I/beta"));
    }
    Ok(lambda_min
        .iter()
        .enumerate()
        .map(|(k, &l)| BoundCheck::new("eigenvalue_floor", k, floor, l, slack, ctx))
        .collect())
}

/// Two-sided control for one step: with `γ₀ = min(λ_min(Σ⁻¹), λ_min(S))` and
/// `γ₁ = max(λ_max(Σ⁻¹), λ_max(S))`, if `γ₀ > 0` and `η ≤ 1/γ₁` then
/// `γ₁⁻¹ I ⪯ Σ' ⪯ γ₀⁻¹ I`. Returns `None` when the hypotheses fail.
pub fn check_eigenvalue_sandwich(
    k: usize,
    cov: &SpdMatrix,
    s: &SymMatrix,
    next: &SpdMatrix,
    ctx: CheckContext,
    rel_slack: f64,
) -> Result<Option<[BoundCheck; 2]>> {
    let s_eig = crate::psd::sym_eig(s)?;
    let gamma0 = (1.0 / cov.lambda_max()).min(s_eig.lambda_min());
    let gamma1 = (1.0 / cov.lambda_min()).max(s_eig.lambda_max());
    // relative tolerance absorbs rounding in 1/λ_min(Σ) when η sits exactly on 1/γ₁
    if !(gamma0 > 0.0) || ctx.eta > (1.0 + 1e-12) / gamma1 {
        return Ok(None);
    }
    let (lo, hi) = (1.0 / gamma1, 1.0 / gamma0);
    Ok(Some([
        BoundCheck::new("eigenvalue_sandwich_lower", k + 1, lo, next.lambda_min(), rel_slack * lo, ctx),
        BoundCheck::new("eigenvalue_sandwich_upper", k + 1, next.lambda_max(), hi, rel_slack * hi, ctx),
    ]))
}

/// Eventual monotone decrease of `W2²(p_k, π_⋆)` against a reference limit: over the
/// second half of the horizon the distance is non-increasing (up to `slack`), and it
/// ends below where it started.
pub fn check_asymptotic_decrease(w2_to_reference: &[f64], ctx: CheckContext, slack: f64) -> Result<Vec<BoundCheck>> {
    let n = w2_to_reference.len();
    if n < 4 {
        return Err(invalid("check_asymptotic_decrease: series too short"));
    }
    let mut checks: Vec<BoundCheck> = (n / 2..n - 1)
        .map(|k| BoundCheck::new("asymptotic_monotone", k + 1, w2_to_reference[k + 1], w2_to_reference[k], slack, ctx))
        .collect();
    checks.push(BoundCheck::new("asymptotic_progress", n - 1, w2_to_reference[n - 1], w2_to_reference[0], 0.0, ctx));
    Ok(checks)
}

/// `mean ± std_err` of a vector-valued Monte Carlo estimate against an exact value,
/// coordinate-wise: `max_i |x̂_i − x_i| / se_i`.
pub fn max_standardized_error(estimate: &DVector<f64>, exact: &DVector<f64>, std_err: &DVector<f64>) -> f64 {
    (0..estimate.len())
        .map(|i| (estimate[i] - exact[i]).abs() / std_err[i].max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gvi::{run, StepConfig, Variant};
    use crate::potentials::{ill_conditioned_quadratic, quadratic_potential, PotentialSpec};
    use crate::rng::stream_rng;
    use alloc::vec;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn objective_of_standard_gaussian_against_centered_unit_quadratic() {
        let pot = quadratic_potential(DVector::zeros(3), SpdMatrix::identity(3)).unwrap();
        let mu = GaussianMeasure::standard(3);
        let f = objective(&pot, &mu, MomentMode::Exact, 0, &mut stream_rng(0, 0)).unwrap();
        assert!((f.mean - (1.5 + entropy(&mu))).abs() < 1e-14);
    }

    #[test]
    fn objective_gap_equals_kl() {
        let mut rng = stream_rng(21, 0);
        for _ in 0..10 {
            let q = ill_conditioned_quadratic(4, -1.0, 1.0, &mut rng).unwrap();
            let target = q.target();
            let basis = crate::psd::random_orthogonal(4, &mut rng).unwrap();
            let spectrum: Vec<f64> = (0..4).map(|_| 0.2 + rng.random::<f64>() * 3.0).collect();
            let mu = GaussianMeasure::new(
                DVector::from_fn(4, |_, _| rng.random::<f64>() * 2.0 - 1.0),
                SpdMatrix::from_spectrum(&basis, &spectrum).unwrap(),
            )
            .unwrap();
            let f = |m: &GaussianMeasure| objective(&q, m, MomentMode::Exact, 0, &mut stream_rng(0, 0)).unwrap().mean;
            let gap = f(&mu) - f(&target);
            assert!((gap - kl_gaussian(&mu, &target).unwrap()).abs() < 1e-8);
        }
    }

    #[test]
    fn objective_monte_carlo_within_four_standard_errors() {
        let mut rng = stream_rng(22, 0);
        let q = ill_conditioned_quadratic(3, -1.0, 0.0, &mut rng).unwrap();
        let mu = GaussianMeasure::from_cov_matrix(dvector![0.5, 0.0, 1.0], dmatrix![1.0, 0.3, 0.0; 0.3, 2.0, 0.0; 0.0, 0.0, 0.5])
            .unwrap();
        let exact = objective(&q, &mu, MomentMode::Exact, 0, &mut rng).unwrap();
        let mc = objective(&q, &mu, MomentMode::MonteCarlo, 1_000_000, &mut rng).unwrap();
        assert!((mc.mean - exact.mean).abs() <= 4.0 * mc.std_err);
    }

    #[test]
    fn grad_norm_examples() {
        let pot = quadratic_potential(dvector![0.0], SpdMatrix::identity(1)).unwrap();
        let mu = GaussianMeasure::from_cov_matrix(dvector![0.0], dmatrix![4.0]).unwrap();
        let m = compute_moments(&pot, &mu, MomentMode::Exact, 0, &mut stream_rng(0, 0)).unwrap();
        assert!((grad_norm_sq(&mu, &m).unwrap() - 2.25).abs() < 1e-14);

        let mut rng = stream_rng(23, 0);
        let q = ill_conditioned_quadratic(5, -2.0, 0.0, &mut rng).unwrap();
        let target = q.target();
        let m = compute_moments(&q, &target, MomentMode::Exact, 0, &mut rng).unwrap();
        assert!(grad_norm_sq(&target, &m).unwrap() <= 1e-10);
    }

    #[test]
    fn grad_norm_closed_form_matches_sampling() {
        let mut rng = stream_rng(24, 0);
        let q = ill_conditioned_quadratic(3, -1.0, 0.0, &mut rng).unwrap();
        let mu = GaussianMeasure::from_cov_matrix(dvector![1.0, -1.0, 0.0], dmatrix![2.0, 0.1, 0.0; 0.1, 0.5, 0.2; 0.0, 0.2, 1.0])
            .unwrap();
        let m = compute_moments(&q, &mu, MomentMode::Exact, 0, &mut rng).unwrap();
        let closed = grad_norm_sq(&mu, &m).unwrap();
        let g = bw_grad_objective(&mu, &m).unwrap();
        let mc = norm_sq_monte_carlo(&g, &mu, 200_000, &mut rng).unwrap();
        assert!((mc.mean - closed).abs() <= 4.0 * mc.std_err);
    }

    #[test]
    fn sigma_examples() {
        let pot = quadratic_potential(dvector![0.0], SpdMatrix::identity(1)).unwrap();
        let mu = GaussianMeasure::from_cov_matrix(dvector![0.0], dmatrix![4.0]).unwrap();
        let mut rng = stream_rng(25, 0);
        let exact = compute_moments(&pot, &mu, MomentMode::Exact, 0, &mut rng).unwrap();
        let s = sigma_sq_estimate(&pot, &mu, &exact, 100_000, &mut rng).unwrap();
        assert!((s.mean - 4.0).abs() <= 4.0 * s.std_err);
        assert!(sigma_sq_estimate(&pot, &mu, &exact, 1, &mut rng).is_err());

        let target = pot.target();
        let check = check_variance_bound(&pot, &mu, &target, VarianceForm::Convex, 10_000, 3.0, &mut rng).unwrap();
        assert!(check.pass);
        assert!((check.rhs - 18.0).abs() < 1e-12);
        assert!(check_variance_bound(&pot, &mu, &target, VarianceForm::Convex, 99, 3.0, &mut rng).is_err());
    }

    #[test]
    fn one_step_and_rate_checks_on_fixed_point_are_trivial() {
        let mut rng = stream_rng(26, 0);
        let q = ill_conditioned_quadratic(3, -1.0, 0.0, &mut rng).unwrap();
        let ctx = CheckContext { eta: 1.0, alpha: q.alpha(), beta: q.beta(), replicas: 1, seed: None };
        let zeros = vec![0.0; 5];
        for c in check_one_step_inequality(&zeros, &zeros, ctx, 1e-8).unwrap() {
            assert!(c.pass && c.lhs == 0.0);
        }
        for which in [RateTheorem::ConvexDeterministic, RateTheorem::StronglyConvexDeterministic] {
            assert!(check_rate_theorem(which, &zeros, 0.0, ctx, 1e-8).unwrap().iter().all(|c| c.pass));
        }
    }

    #[test]
    fn rate_checks_reject_violated_hypotheses() {
        let ctx = CheckContext { eta: 2.0, alpha: 0.5, beta: 1.0, replicas: 1, seed: None };
        assert!(check_rate_theorem(RateTheorem::ConvexDeterministic, &[1.0, 0.5], 1.0, ctx, 0.0).is_err());
        let ctx = CheckContext { eta: 0.5, alpha: -1.0, beta: 1.0, replicas: 1, seed: None };
        assert!(check_rate_theorem(RateTheorem::StronglyConvexDeterministic, &[1.0], 1.0, ctx, 0.0).is_err());
        assert!(check_rate_theorem(RateTheorem::NonConvexDeterministic, &[1.0], 1.0, ctx, 0.0).is_ok());
    }

    #[test]
    fn deterministic_run_satisfies_all_inequalities() {
        let mut rng = stream_rng(27, 0);
        let q = ill_conditioned_quadratic(6, -3.0, 0.0, &mut rng).unwrap();
        let (alpha, beta) = (q.alpha(), q.beta());
        let target = q.target();
        let pot: PotentialSpec = q.into();
        let cfg = StepConfig::new(1.0 / beta, Variant::Fbgvi, 0).unwrap();
        let p0 = GaussianMeasure::isotropic(DVector::zeros(6), 1.0 / beta);
        let mut recorder = Recorder::new(&pot, MomentMode::Exact, 0, stream_rng(0, 1)).with_target(target).unwrap();
        let mut rows = vec![];
        run(&pot, IterState::start(p0, 0, 0), &cfg, 100, false, |s| {
            rows.push(recorder.record(s)?);
            Ok(())
        })
        .unwrap();
        let ctx = CheckContext { eta: 1.0 / beta, alpha, beta, replicas: 1, seed: Some(0) };
        let w2: Vec<f64> = rows.iter().map(|r| r.w2_sq.unwrap()).collect();
        let gap: Vec<f64> = rows.iter().map(|r| r.f).collect();
        for r in &rows {
            assert!((r.f - r.kl.unwrap()).abs() < 1e-8);
        }
        let all = [
            check_one_step_inequality(&w2, &gap, ctx, 1e-8).unwrap(),
            check_rate_theorem(RateTheorem::ConvexDeterministic, &gap, w2[0], ctx, 1e-8).unwrap(),
            check_rate_theorem(RateTheorem::StronglyConvexDeterministic, &w2, w2[0], ctx, 1e-8).unwrap(),
            check_eigenvalue_floor(&rows.iter().map(|r| r.lambda_min).collect::<Vec<_>>(), ctx, 1e-9).unwrap(),
        ];
        for c in all.iter().flatten() {
            assert!(c.pass, "{c:?}");
        }
    }

    #[test]
    fn eigenvalue_sandwich_on_quadratic() {
        let mut rng = stream_rng(28, 0);
        let q = ill_conditioned_quadratic(4, -1.0, 0.0, &mut rng).unwrap();
        let beta = q.beta();
        let pot: PotentialSpec = q.clone().into();
        let cfg = StepConfig::new(1.0 / beta, Variant::Fbgvi, 0).unwrap();
        let ctx = CheckContext { eta: 1.0 / beta, alpha: q.alpha(), beta, replicas: 1, seed: None };
        let traj = run(&pot, IterState::start(GaussianMeasure::isotropic(DVector::zeros(4), 1.0 / beta), 0, 0), &cfg, 30, true, |_| Ok(()))
            .unwrap();
        let mut applied = 0;
        for w in traj.states.windows(2) {
            let s = &w[1].last_moments.as_ref().unwrap().s_hat;
            if let Some(checks) = check_eigenvalue_sandwich(w[0].k, w[0].p.cov(), s, w[1].p.cov(), ctx, 1e-9).unwrap() {
                applied += 1;
                assert!(checks.iter().all(|c| c.pass), "{checks:?}");
                // α⁻¹ upper bound of the sandwich
                assert!(w[1].p.cov().lambda_max() <= 1.0 / q.alpha() * (1.0 + 1e-9));
            }
        }
        assert_eq!(applied, 30);
    }

    #[test]
    fn ensemble_checks_compute_means() {
        let ctx = CheckContext { eta: 0.05, alpha: 1.0, beta: 1.0, replicas: 0, seed: None };
        let ens = EnsembleSummary {
            n_steps: 10,
            dim: 2,
            w2_initial: 1.0,
            lambda_max_target: 1.0,
            min_gap: vec![0.1, 0.2],
            final_w2: vec![0.5, 0.7],
        };
        let c = check_stochastic_rate(RateTheorem::StronglyConvexStochastic, &ens, ctx, 3.0);
        assert!(c.is_err(), "eta above alpha^2/(48 beta^3) must be rejected");
        let ctx = CheckContext { eta: 1e-2, ..ctx };
        let c = check_stochastic_rate(RateTheorem::ConvexStochastic, &ens, ctx, 3.0).unwrap();
        assert!((c.lhs - 0.15).abs() < 1e-15);
        assert_eq!(c.context.replicas, 2);
        assert!((c.rhs - (2.0 / 0.1 + 2.0 * 24.0 * 1e-2 + 12.0 * 1e-2 * 2.0)).abs() < 1e-12);
    }

    use rand::Rng;
}
