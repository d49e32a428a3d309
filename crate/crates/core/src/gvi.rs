//! Steppers: forward–backward GVI (deterministic and stochastic), the BW-SGD
//! baseline, and the Laplace approximation.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};
// Float supplies libm-backed methods under no_std; with std linked (tests) the inherent ones win.
#[allow(unused_imports)]
use num_traits::Float;

use crate::bw::{bw_grad_entropy, entropy_jko_warm, pushforward_affine, AffineMap, GaussianMeasure};
use crate::error::{check_dim, invalid, Error, Result};
use crate::potentials::{compute_moments, MomentEstimate, MomentMode, Potential};
use crate::psd::{sym_eig, SpdMatrix, SymMatrix, SPD_RATIO};
use crate::rng::{stream_rng, StreamRng};

/// Monte Carlo batch used by the deterministic variants when moments are not closed form.
pub const DEFAULT_MOMENT_BATCH: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Fbgvi,
    StochasticFbgvi,
    BwSgd,
    StochasticBwSgd,
}

impl Variant {
    pub fn is_stochastic(self) -> bool {
        matches!(self, Variant::StochasticFbgvi | Variant::StochasticBwSgd)
    }

    pub fn is_forward_backward(self) -> bool {
        matches!(self, Variant::Fbgvi | Variant::StochasticFbgvi)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Fbgvi => "fbgvi",
            Variant::StochasticFbgvi => "stochastic_fbgvi",
            Variant::BwSgd => "bw_sgd",
            Variant::StochasticBwSgd => "stochastic_bw_sgd",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Deterministic variants estimate `(E∇V, E∇²V)` with `moment_mode`/`n_samples`;
/// stochastic variants average `batch` single-point oracles (one by default).
#[derive(Clone, Debug, PartialEq)]
pub struct StepConfig {
    pub eta: f64,
    pub variant: Variant,
    pub moment_mode: MomentMode,
    pub n_samples: usize,
    pub batch: usize,
    pub seed: u64,
}

/// Step size outside the regime where the descent guarantees hold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSizeWarning {
    pub eta: f64,
    pub limit: f64,
    pub variant: Variant,
}

impl fmt::Display for StepSizeWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step size {} exceeds {} for {}; convergence guarantees do not apply", self.eta, self.limit, self.variant)
    }
}

impl StepConfig {
    pub fn new(eta: f64, variant: Variant, seed: u64) -> Result<Self> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(invalid("StepConfig: eta must be positive and finite"));
        }
        Ok(Self { eta, variant, moment_mode: MomentMode::Exact, n_samples: DEFAULT_MOMENT_BATCH, batch: 1, seed })
    }

    pub fn with_moments(mut self, mode: MomentMode, n_samples: usize) -> Result<Self> {
        if mode != MomentMode::Exact && n_samples == 0 {
            return Err(invalid("StepConfig: n_samples must be positive"));
        }
        self.moment_mode = mode;
        self.n_samples = n_samples;
        Ok(self)
    }

    pub fn with_batch(mut self, batch: usize) -> Result<Self> {
        if batch == 0 {
            return Err(invalid("StepConfig: batch must be positive"));
        }
        self.batch = batch;
        Ok(self)
    }

    /// `η ≤ 1/β` for deterministic variants, `η ≤ 1/(2β)` for stochastic ones.
    pub fn step_size_warning(&self, beta: f64) -> Option<StepSizeWarning> {
        let limit = if self.variant.is_stochastic() { 0.5 / beta } else { 1.0 / beta };
        (self.eta > limit).then_some(StepSizeWarning { eta: self.eta, limit, variant: self.variant })
    }
}

/// The iterate `p_k` with the moments that produced it and the generator for the next step.
#[derive(Clone, Debug, PartialEq)]
pub struct IterState {
    pub k: usize,
    pub p: GaussianMeasure,
    pub last_moments: Option<MomentEstimate>,
    pub rng: StreamRng,
}

impl IterState {
    pub fn new(p0: GaussianMeasure, rng: StreamRng) -> Self {
        Self { k: 0, p: p0, last_moments: None, rng }
    }

    /// Starts on stream `stream` of `seed`.
    pub fn start(p0: GaussianMeasure, seed: u64, stream: u64) -> Self {
        Self::new(p0, stream_rng(seed, stream))
    }
}

/// `∇_BW V(μ) : x ↦ b̂ + Ŝ(x − m_μ)`.
pub fn bw_grad_potential(mu: &GaussianMeasure, moments: &MomentEstimate) -> Result<AffineMap> {
    check_dim(mu.dim(), moments.b_hat.len())?;
    AffineMap::new(moments.b_hat.clone(), moments.s_hat.clone(), mu.mean().clone())
}

/// Moments for one step of `cfg.variant`, advancing `rng` only for sampled oracles.
pub fn step_moments<P: Potential + ?Sized>(
    pot: &P,
    p: &GaussianMeasure,
    cfg: &StepConfig,
    rng: &mut StreamRng,
) -> Result<MomentEstimate> {
    if cfg.variant.is_stochastic() {
        compute_moments(pot, p, MomentMode::MonteCarlo, cfg.batch, rng)
    } else {
        compute_moments(pot, p, cfg.moment_mode, cfg.n_samples, rng)
    }
}

/// Forward step on `V` then entropy JKO: `m' = m − ηb`, `Σ_½ = (I − ηS)Σ(I − ηS)`,
/// `p' = JKO_{ηH}(N(m', Σ_½))`. `Σ_½` may be singular; `p'` has covariance `⪰ ηI`.
/// The eigensolve of `Σ_½` starts from the eigenbasis of `Σ`.
pub fn forward_backward_update(p: &GaussianMeasure, moments: &MomentEstimate, eta: f64) -> Result<GaussianMeasure> {
    check_dim(p.dim(), moments.b_hat.len())?;
    let d = p.dim();
    let mean = p.mean() - &moments.b_hat * eta;
    let contraction = SymMatrix::symmetrized(DMatrix::identity(d, d) - moments.s_hat.as_matrix() * eta);
    let half = contraction.congruence(p.cov().as_sym());
    entropy_jko_warm(&mean, &half, eta, p.cov().eigen().vectors())
}

/// `Σ' = (I − η(S − Σ⁻¹)) Σ (I − η(S − Σ⁻¹))`, `m' = m − ηb`. `k` labels the produced iterate
/// in the divergence error.
pub fn bw_sgd_update(p: &GaussianMeasure, moments: &MomentEstimate, eta: f64, k: usize) -> Result<GaussianMeasure> {
    let grad = bw_grad_potential(p, moments)?.add(&bw_grad_entropy(p))?;
    let map = AffineMap::identity(p.mean().clone()).sub(&grad.scale(eta))?;
    let diverged = |lambda_min: f64| Error::Divergence { k, lambda_min };
    let image = match pushforward_affine(p, &map) {
        Ok(image) => image,
        Err(Error::NonFinite { .. } | Error::NoConvergence { .. }) => return Err(diverged(f64::NAN)),
        Err(e) => return Err(e),
    };
    let (lmin, lmax) = (image.eigen.lambda_min(), image.eigen.lambda_max());
    if !(lmin > SPD_RATIO * lmax) || image.mean.iter().any(|v| !v.is_finite()) {
        return Err(diverged(lmin));
    }
    image.into_measure().map_err(|_| diverged(lmin))
}

pub fn fbgvi_step<P: Potential + ?Sized>(state: &IterState, pot: &P, cfg: &StepConfig) -> Result<IterState> {
    if !cfg.variant.is_forward_backward() {
        return Err(invalid("fbgvi_step: variant is not forward-backward"));
    }
    let mut rng = state.rng.clone();
    let moments = step_moments(pot, &state.p, cfg, &mut rng)?;
    let p = forward_backward_update(&state.p, &moments, cfg.eta)?;
    Ok(IterState { k: state.k + 1, p, last_moments: Some(moments), rng })
}

pub fn bw_sgd_step<P: Potential + ?Sized>(state: &IterState, pot: &P, cfg: &StepConfig) -> Result<IterState> {
    if cfg.variant.is_forward_backward() {
        return Err(invalid("bw_sgd_step: variant is not BW-SGD"));
    }
    let mut rng = state.rng.clone();
    let moments = step_moments(pot, &state.p, cfg, &mut rng)?;
    let p = bw_sgd_update(&state.p, &moments, cfg.eta, state.k + 1)?;
    Ok(IterState { k: state.k + 1, p, last_moments: Some(moments), rng })
}

/// One step of whichever stepper `cfg.variant` names.
pub fn step<P: Potential + ?Sized>(state: &IterState, pot: &P, cfg: &StepConfig) -> Result<IterState> {
    if cfg.variant.is_forward_backward() {
        fbgvi_step(state, pot, cfg)
    } else {
        bw_sgd_step(state, pot, cfg)
    }
}

/// `N(x*, ∇²V(x*)⁻¹)` at the mode found by damped Newton from `x0`.
pub fn laplace_approximation<P: Potential + ?Sized>(
    pot: &P,
    x0: &DVector<f64>,
    max_iter: usize,
    tol: f64,
) -> Result<GaussianMeasure> {
    check_dim(pot.dim(), x0.len())?;
    if !(tol > 0.0) {
        return Err(invalid("laplace_approximation: tol must be positive"));
    }
    let mut x = x0.clone();
    let mut value = pot.value(&x);
    for _ in 0..max_iter {
        let (g, h) = pot.grad_hess(&x);
        if g.norm() <= tol {
            return laplace_at(x, h);
        }
        let hess = SpdMatrix::from_sym(h)?;
        let direction = hess.inverse().matrix() * &g;
        let slope = g.dot(&direction);
        // Armijo backtracking from the full Newton step. A negligible Newton decrement
        // means V can no longer resolve the decrease, so the full step is taken.
        let tiny = 0.5 * slope <= 1e-10 * (1.0 + value.abs());
        let mut t = 1.0;
        loop {
            let candidate = &x - &direction * t;
            let v = pot.value(&candidate);
            if tiny || v <= value - 1e-4 * t * slope || t < 1e-12 {
                x = candidate;
                value = v;
                break;
            }
            t *= 0.5;
        }
        if !value.is_finite() {
            return Err(Error::NonFinite { context: "Newton iterate" });
        }
    }
    let (g, h) = pot.grad_hess(&x);
    if g.norm() <= tol {
        return laplace_at(x, h);
    }
    Err(Error::NotConverged { method: "Newton", iterations: max_iter, residual: g.norm() })
}

fn laplace_at(mode: DVector<f64>, hess: SymMatrix) -> Result<GaussianMeasure> {
    let precision = SpdMatrix::from_sym(hess)?;
    GaussianMeasure::new(mode, precision.inverse())
}

/// States visited by [`run`]; `error` is set when a step failed, in which case
/// `last` is the final state that was reached.
#[derive(Clone, Debug)]
pub struct Trajectory {
    /// Every state from `k = 0`, when retained.
    pub states: Vec<IterState>,
    pub last: IterState,
    pub error: Option<Error>,
}

impl Trajectory {
    pub fn is_complete(&self) -> bool {
        self.error.is_none()
    }

    pub fn into_result(self) -> Result<Self> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(self),
        }
    }
}

/// Applies the configured stepper `n_steps` times, calling `hook` on every state
/// including the initial one. A hook error stops the run like a stepper error.
pub fn run<P, H>(
    pot: &P,
    initial: IterState,
    cfg: &StepConfig,
    n_steps: usize,
    retain_states: bool,
    mut hook: H,
) -> Result<Trajectory>
where
    P: Potential + ?Sized,
    H: FnMut(&IterState) -> Result<()>,
{
    if n_steps == 0 {
        return Err(invalid("run: need at least one step"));
    }
    check_dim(pot.dim(), initial.p.dim())?;
    let mut states = Vec::new();
    let mut current = initial;
    let mut error = hook(&current).err();
    for _ in 0..n_steps {
        if error.is_some() {
            break;
        }
        match step(&current, pot, cfg) {
            Ok(next) => {
                let prev = core::mem::replace(&mut current, next);
                if retain_states {
                    states.push(prev);
                }
                error = hook(&current).err();
            }
            Err(e) => error = Some(e),
        }
    }
    if retain_states {
        states.push(current.clone());
    }
    Ok(Trajectory { states, last: current, error })
}

/// Eigenvalues of a symmetric matrix, ascending; a convenience for checks on `Σ_k`.
pub fn spectrum_bounds(m: &SymMatrix) -> Result<(f64, f64)> {
    let e = sym_eig(m)?;
    Ok((e.lambda_min(), e.lambda_max()))
}
