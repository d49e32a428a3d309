//! The acceptance-criteria suite behind `fbgvi check`.
//!
//! Each criterion yields a list of [`CheckLine`]s; a criterion passes iff it produced at
//! least one line and every line passes. Errors and blown runtime budgets are failing lines.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use fbgvi_core::bw::{
    affine_inner_product, bw_grad_entropy, entropy, entropy_jko, kl_gaussian, w2_squared, AffineMap,
    GaussianMeasure,
};
use fbgvi_core::diagnostics::{
    check_eigenvalue_floor, check_one_step_inequality, check_rate_theorem, check_stochastic_rate,
    check_variance_bound, grad_norm_sq, BoundCheck, CheckContext, EnsembleSummary, Estimate, RateTheorem,
    VarianceForm,
};
use fbgvi_core::gvi::{bw_grad_potential, laplace_approximation, run, IterState, StepConfig, Variant};
use fbgvi_core::oracles::{fd_directional_derivative, grid_jko_1d, GridSpec};
use fbgvi_core::potentials::{
    compute_moments, double_well_potential, ill_conditioned_quadratic, logistic_potential, MomentMode, Potential,
    PotentialSpec, QuadraticPotential,
};
use fbgvi_core::psd::{max_abs, random_orthogonal, SpdMatrix, SymMatrix};
use fbgvi_core::rng::{stream_rng, StreamRng};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{
    DiagnosticsSection, EtaSpec, Experiment, ExperimentConfig, MomentModeName, MomentsSection, OutputSection,
    RunSection, VariantName,
};
use crate::experiment::{run_all, ComboResult, Dataset, Problem};
use crate::trace::render_trace;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    /// Reduced instance counts and horizons; finishes in well under a minute.
    Fast,
    /// Instance counts, horizons and runtime budgets as stated by the criteria.
    Full,
}

/// Seed used by `check` when none is given.
pub const DEFAULT_CHECK_SEED: u64 = 20_240_601;

/// One line of the check report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckLine {
    pub criterion: u8,
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instance: Option<usize>,
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
    pub eta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub replicas: usize,
    pub seed: Option<u64>,
}

impl CheckLine {
    fn bound(criterion: u8, instance: Option<usize>, b: &BoundCheck) -> Self {
        Self {
            criterion,
            name: b.name.to_string(),
            instance,
            k: b.k,
            lhs: b.lhs,
            rhs: b.rhs,
            slack: b.slack,
            pass: b.pass,
            eta: b.context.eta,
            alpha: b.context.alpha,
            beta: b.context.beta,
            replicas: b.context.replicas,
            seed: b.context.seed,
        }
    }

    /// `lhs ≤ rhs + slack` without a step-size context.
    fn plain(criterion: u8, name: &str, instance: Option<usize>, lhs: f64, rhs: f64, slack: f64) -> Self {
        Self {
            criterion,
            name: name.to_string(),
            instance,
            k: 0,
            lhs,
            rhs,
            slack,
            pass: lhs <= rhs + slack,
            eta: f64::NAN,
            alpha: f64::NAN,
            beta: f64::NAN,
            replicas: 0,
            seed: None,
        }
    }

    fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }
}

#[derive(Clone, Debug)]
pub struct CriterionReport {
    pub id: u8,
    pub title: &'static str,
    pub checks: Vec<CheckLine>,
    pub notes: Vec<String>,
    pub elapsed: Duration,
}

impl CriterionReport {
    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.pass).count()
    }

    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.failures() == 0
    }

    pub fn summary_line(&self) -> String {
        format!(
            "criterion {:>2} {} {} ({} checks, {} failed, {:.1} s)",
            self.id,
            if self.passed() { "PASS" } else { "FAIL" },
            self.title,
            self.checks.len(),
            self.failures(),
            self.elapsed.as_secs_f64()
        )
    }
}

pub const TITLES: [&str; 12] = [
    "entropy JKO fixed point and 1-D grid oracle",
    "BW gradients against finite differences",
    "stationarity of the quadratic target",
    "convex rate of FB-GVI",
    "strongly convex rate of FB-GVI",
    "nonconvex stationarity rate of FB-GVI",
    "one-step inequality",
    "stochastic gradient variance bound",
    "strongly convex rate of stochastic FB-GVI",
    "eigenvalue floor 1/beta",
    "qualitative experiments (monotone KL, stability ordering, Laplace comparison)",
    "determinism across worker counts",
];

/// Runtime budgets of the full suite, in seconds.
const BUDGETS: [Option<f64>; 12] =
    [Some(10.0), Some(20.0), None, Some(30.0), None, None, None, None, Some(180.0), None, Some(300.0), None];

type CheckResult = Result<Vec<CheckLine>, String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn bounds(criterion: u8, instance: Option<usize>, checks: &[BoundCheck]) -> Vec<CheckLine> {
    checks.iter().map(|b| CheckLine::bound(criterion, instance, b)).collect()
}

/// Keeps the tightest check (largest `lhs − rhs − slack`) of a per-step series.
fn worst(lines: Vec<CheckLine>) -> Option<CheckLine> {
    lines.into_iter().max_by(|a, b| (a.lhs - a.rhs - a.slack).total_cmp(&(b.lhs - b.rhs - b.slack)))
}

fn random_spd(dim: usize, lo: f64, hi: f64, rng: &mut StreamRng) -> Result<SpdMatrix, String> {
    let basis = random_orthogonal(dim, rng).map_err(err)?;
    let spectrum: Vec<f64> = (0..dim).map(|_| lo * (hi / lo).powf(rng.random::<f64>())).collect();
    SpdMatrix::from_spectrum(&basis, &spectrum).map_err(err)
}

fn random_measure(dim: usize, mean_scale: f64, lo: f64, hi: f64, rng: &mut StreamRng) -> Result<GaussianMeasure, String> {
    let mean = DVector::from_fn(dim, |_, _| mean_scale * rng.sample::<f64, _>(StandardNormal));
    GaussianMeasure::new(mean, random_spd(dim, lo, hi, rng)?).map_err(err)
}

fn normal_vec(dim: usize, rng: &mut StreamRng) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal))
}

// ---------------------------------------------------------------------------
// Criterion 1

/// An entropy JKO implementation under test: `(mean, Σ, η) ↦ argmin`.
pub type JkoFn<'a> = &'a dyn Fn(&DVector<f64>, &SymMatrix, f64) -> fbgvi_core::Result<GaussianMeasure>;

pub const JKO_ETAS: [f64; 5] = [1e-3, 1e-2, 1e-1, 1.0, 10.0];

/// Fixed-point residual `‖(Σ₁ − ηI)Σ₁⁻¹(Σ₁ − ηI) − Σ‖_max` against `1e-9·max(1, ‖Σ‖_max)`
/// over `n_matrices` random SPD matrices with `d ≤ 20`, and the 1-D grid oracle.
pub fn jko_checks(jko: JkoFn<'_>, n_matrices: usize, seed: u64) -> CheckResult {
    let mut rng = stream_rng(seed, 101);
    let mut lines = Vec::new();
    for i in 0..n_matrices {
        let d = rng.random_range(1..=20);
        let sigma = random_spd(d, 1e-3, 1e2, &mut rng)?;
        let scale = max_abs(sigma.matrix()).max(1.0);
        for &eta in &JKO_ETAS {
            let out = jko(&DVector::zeros(d), sigma.as_sym(), eta).map_err(err)?;
            let shifted = out.cov().matrix() - DMatrix::identity(d, d) * eta;
            let back = &shifted * out.cov().inverse().matrix() * &shifted;
            let residual = max_abs(&(back - sigma.matrix()));
            lines.push(CheckLine::plain(1, "jko_fixed_point", Some(i), residual, 1e-9 * scale, 0.0).with_eta(eta));
        }
    }
    for &var in &[0.1, 1.0, 10.0] {
        for &eta in &JKO_ETAS {
            let grid = GridSpec::new(0.5 * var, var + 4.0 * eta + 1.0, 1000).map_err(err)?;
            let (s, cell) = grid_jko_1d(var, eta, grid).map_err(err)?;
            let closed = jko(&DVector::zeros(1), &SymMatrix::from_diagonal(&[var]), eta).map_err(err)?;
            let closed = closed.cov().matrix()[(0, 0)];
            let gap = (s - closed).abs();
            lines.push(CheckLine::plain(1, "jko_grid_within_cell", None, gap, cell, 0.0).with_eta(eta));
            lines.push(CheckLine::plain(1, "jko_grid_relative", None, gap / closed, 1e-4, 0.0).with_eta(eta));
        }
    }
    Ok(lines)
}

fn criterion_1(suite: Suite, seed: u64) -> CheckResult {
    let n = if suite == Suite::Full { 200 } else { 40 };
    jko_checks(&|m, s, eta| entropy_jko(m, s, eta), n, seed)
}

// ---------------------------------------------------------------------------
// Criterion 2

fn criterion_2(suite: Suite, seed: u64) -> CheckResult {
    let mut rng = stream_rng(seed, 102);
    let n = if suite == Suite::Full { 100 } else { 30 };
    let mut lines = Vec::new();
    for i in 0..n {
        let d = rng.random_range(1..=5);
        let pot: PotentialSpec = if i % 2 == 0 {
            ill_conditioned_quadratic(d, -1.0, 0.5, &mut rng).map_err(err)?.into()
        } else {
            double_well_potential(d, rng.random_range(0.5..2.0)).map_err(err)?.into()
        };
        let mu = random_measure(d, 1.0, 0.2, 3.0, &mut rng)?;
        let b = normal_vec(d, &mut rng);
        let g = DMatrix::from_fn(d, d, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
        let h = AffineMap::new(b, SymMatrix::symmetrized(&g + g.transpose()), mu.mean().clone()).map_err(err)?;

        let moments = compute_moments(&pot, &mu, MomentMode::Exact, 0, &mut rng).map_err(err)?;
        let closed_v = affine_inner_product(&bw_grad_potential(&mu, &moments).map_err(err)?, &h, &mu).map_err(err)?;
        let fd_v = fd_directional_derivative(|m| pot.exact_expectation(m), &mu, &h, 1e-4).map_err(err)?;
        let closed_h = affine_inner_product(&bw_grad_entropy(&mu), &h, &mu).map_err(err)?;
        let fd_h = fd_directional_derivative(|m| Ok(entropy(m)), &mu, &h, 1e-4).map_err(err)?;
        lines.push(CheckLine::plain(2, "bw_grad_potential_fd", Some(i), (fd_v - closed_v).abs(), 1e-5 * closed_v.abs().max(1.0), 0.0));
        lines.push(CheckLine::plain(2, "bw_grad_entropy_fd", Some(i), (fd_h - closed_h).abs(), 1e-5 * closed_h.abs().max(1.0), 0.0));
    }
    Ok(lines)
}

// ---------------------------------------------------------------------------
// Criterion 3

fn criterion_3(suite: Suite, seed: u64) -> CheckResult {
    let mut rng = stream_rng(seed, 103);
    let n = if suite == Suite::Full { 10 } else { 3 };
    let mut lines = Vec::new();
    for i in 0..n {
        let q = ill_conditioned_quadratic(10, -3.0, 0.0, &mut rng).map_err(err)?;
        let target = q.target();
        for frac in [0.1, 0.5, 1.0] {
            let eta = frac / q.beta();
            let cfg = StepConfig::new(eta, Variant::Fbgvi, seed).map_err(err)?;
            let state = IterState::start(target.clone(), seed, i as u64);
            let next = fbgvi_core::gvi::fbgvi_step(&state, &q, &cfg).map_err(err)?;
            let w2 = w2_squared(&next.p, &target).map_err(err)?;
            lines.push(CheckLine::plain(3, "stationary_target", Some(i), w2, 1e-9, 0.0).with_eta(eta).with_k(1));
        }
    }
    Ok(lines)
}

// ---------------------------------------------------------------------------
// Criteria 4, 5, 7 share the deterministic quadratic runs.

struct QuadraticRun {
    gaps: Vec<f64>,
    w2: Vec<f64>,
    lambda_min: Vec<f64>,
    ctx: CheckContext,
}

fn quadratic_runs(suite: Suite, seed: u64) -> Result<Vec<QuadraticRun>, String> {
    let (instances, n_steps) = if suite == Suite::Full { (10, 500) } else { (3, 200) };
    let mut rng = stream_rng(seed, 104);
    let pots: Vec<QuadraticPotential> =
        (0..instances).map(|_| ill_conditioned_quadratic(10, -3.0, 0.0, &mut rng)).collect::<Result<_, _>>().map_err(err)?;
    pots.par_iter()
        .enumerate()
        .map(|(i, q)| {
            let beta = q.beta();
            let eta = 1.0 / beta;
            let target = q.target();
            let cfg = StepConfig::new(eta, Variant::Fbgvi, seed).map_err(err)?;
            let p0 = GaussianMeasure::isotropic(DVector::zeros(10), 1.0 / beta);
            let mut series = QuadraticRun {
                gaps: Vec::new(),
                w2: Vec::new(),
                lambda_min: Vec::new(),
                ctx: CheckContext { eta, alpha: q.alpha(), beta, replicas: 1, seed: Some(seed) },
            };
            let traj = run(q, IterState::start(p0, seed, i as u64), &cfg, n_steps, false, |s| {
                series.gaps.push(kl_gaussian(&s.p, &target)?);
                series.w2.push(w2_squared(&s.p, &target)?);
                series.lambda_min.push(s.p.cov().lambda_min());
                Ok(())
            })
            .map_err(err)?;
            traj.into_result().map_err(err)?;
            Ok(series)
        })
        .collect()
}

fn criterion_4(runs: &[QuadraticRun]) -> CheckResult {
    let mut lines = Vec::new();
    for (i, r) in runs.iter().enumerate() {
        let checks = check_rate_theorem(RateTheorem::ConvexDeterministic, &r.gaps, r.w2[0], r.ctx, 1e-8).map_err(err)?;
        lines.extend(bounds(4, Some(i), &checks));
    }
    Ok(lines)
}

fn criterion_5(runs: &[QuadraticRun]) -> CheckResult {
    let mut lines = Vec::new();
    for (i, r) in runs.iter().enumerate() {
        let checks =
            check_rate_theorem(RateTheorem::StronglyConvexDeterministic, &r.w2, r.w2[0], r.ctx, 1e-8).map_err(err)?;
        lines.extend(bounds(5, Some(i), &checks));
    }
    Ok(lines)
}

fn criterion_7(runs: &[QuadraticRun]) -> CheckResult {
    let mut lines = Vec::new();
    for (i, r) in runs.iter().enumerate() {
        let checks = check_one_step_inequality(&r.w2, &r.gaps, r.ctx, 1e-8).map_err(err)?;
        lines.extend(bounds(7, Some(i), &checks));
    }
    Ok(lines)
}

// ---------------------------------------------------------------------------
// Criterion 6

/// `λ_min(Σ_k)` along a run, for the eigenvalue floor. `at` relabels the last entry when
/// only the initial and the smallest value were kept.
struct FloorSeries {
    lambda_min: Vec<f64>,
    at: Option<usize>,
    ctx: CheckContext,
}

fn criterion_6(suite: Suite, seed: u64, floors: &mut Vec<FloorSeries>) -> CheckResult {
    let (instances, n_steps) = if suite == Suite::Full { (3, 2000) } else { (1, 500) };
    let mut rng = stream_rng(seed, 106);
    let pot = double_well_potential(5, 1.0).map_err(err)?;
    let beta = pot.beta();
    let eta = 1.0 / beta;
    let cfg = StepConfig::new(eta, Variant::Fbgvi, seed).map_err(err)?;
    let ctx = CheckContext { eta, alpha: pot.alpha(), beta, replicas: 1, seed: Some(seed) };
    let mut lines = Vec::new();
    for i in 0..instances {
        let p0 = GaussianMeasure::isotropic(normal_vec(5, &mut rng), 1.0 / beta);
        let (mut grads, mut values, mut lambda_min) = (Vec::new(), Vec::new(), Vec::new());
        let mut moment_rng = stream_rng(seed, 1060 + i as u64);
        let traj = run(&pot, IterState::start(p0, seed, 60 + i as u64), &cfg, n_steps, false, |s| {
            let m = compute_moments(&pot, &s.p, MomentMode::Exact, 0, &mut moment_rng)?;
            grads.push(grad_norm_sq(&s.p, &m)?);
            values.push(pot.exact_expectation(&s.p)? + entropy(&s.p));
            lambda_min.push(s.p.cov().lambda_min());
            Ok(())
        })
        .map_err(err)?;
        traj.into_result().map_err(err)?;
        // F(p₀) − min_k F(p_k) never exceeds F(p₀) − inf F, so the bound only tightens
        let delta = values[0] - values.iter().copied().fold(f64::INFINITY, f64::min);
        let checks =
            check_rate_theorem(RateTheorem::NonConvexDeterministic, &grads[..n_steps], delta, ctx, 0.0).map_err(err)?;
        lines.extend(bounds(6, Some(i), &checks));
        floors.push(FloorSeries { lambda_min, at: None, ctx });
    }
    Ok(lines)
}

// ---------------------------------------------------------------------------
// Criterion 8

fn criterion_8(suite: Suite, seed: u64) -> CheckResult {
    let n = if suite == Suite::Full { 50 } else { 20 };
    let mut rng = stream_rng(seed, 108);
    let mut lines = Vec::new();
    for i in 0..n {
        let d = rng.random_range(1..=10);
        let lo = rng.random_range(-2.0..0.0);
        let hi = lo + rng.random_range(0.0..2.0);
        let q = ill_conditioned_quadratic(d, lo, hi, &mut rng).map_err(err)?;
        let mu = random_measure(d, 2.0, 0.1, 10.0, &mut rng)?;
        let target = q.target();
        for form in [VarianceForm::Convex, VarianceForm::StronglyConvex] {
            let b = check_variance_bound(&q, &mu, &target, form, 10_000, 3.0, &mut rng).map_err(err)?;
            lines.push(CheckLine::bound(8, Some(i), &b));
        }
    }
    Ok(lines)
}

// ---------------------------------------------------------------------------
// Criterion 9

struct StochasticRun {
    final_w2: f64,
    lambda_min: f64,
    k_min: usize,
}

/// `η = α²/(48β³)` on a `κ = 10`, `d = 5` quadratic with `N = ⌈2 ln 10 / (αη)⌉`.
fn criterion_9(suite: Suite, seed: u64, floors: &mut Vec<FloorSeries>, notes: &mut Vec<String>) -> CheckResult {
    let replicas = if suite == Suite::Full { 256 } else { 16 };
    let mut rng = stream_rng(seed, 109);
    let q = ill_conditioned_quadratic(5, -1.0, 0.0, &mut rng).map_err(err)?;
    let (alpha, beta) = (q.alpha(), q.beta());
    let eta = alpha * alpha / (48.0 * beta.powi(3));
    let n_steps = (2.0 * 10f64.ln() / (alpha * eta)).ceil() as usize;
    let target = q.target();
    let p0 = GaussianMeasure::isotropic(DVector::zeros(5), 1.0 / beta);
    let w0 = w2_squared(&p0, &target).map_err(err)?;
    let cfg = StepConfig::new(eta, Variant::StochasticFbgvi, seed).map_err(err)?;
    notes.push(format!("kappa = {:.3}, eta = {eta:.6e}, N = {n_steps}, replicas = {replicas}", beta / alpha));
    let runs: Vec<StochasticRun> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut lmin = (f64::INFINITY, 0usize);
            let traj = run(&q, IterState::start(p0.clone(), seed, 9_000 + r as u64), &cfg, n_steps, false, |s| {
                let l = s.p.cov().lambda_min();
                if l < lmin.0 {
                    lmin = (l, s.k);
                }
                Ok(())
            })
            .map_err(err)?;
            let traj = traj.into_result().map_err(err)?;
            Ok(StochasticRun { final_w2: w2_squared(&traj.last.p, &target).map_err(err)?, lambda_min: lmin.0, k_min: lmin.1 })
        })
        .collect::<Result<_, String>>()?;
    let ens = EnsembleSummary {
        n_steps,
        dim: 5,
        w2_initial: w0,
        lambda_max_target: target.cov().lambda_max(),
        min_gap: Vec::new(),
        final_w2: runs.iter().map(|r| r.final_w2).collect(),
    };
    let ctx = CheckContext { eta, alpha, beta, replicas, seed: Some(seed) };
    let check = check_stochastic_rate(RateTheorem::StronglyConvexStochastic, &ens, ctx, 3.0).map_err(err)?;
    for run in &runs {
        let lambda_min = vec![p0.cov().lambda_min(), run.lambda_min];
        floors.push(FloorSeries { lambda_min, at: Some(run.k_min), ctx });
    }
    Ok(vec![CheckLine::bound(9, None, &check)])
}

// ---------------------------------------------------------------------------
// Criterion 10

fn criterion_10(quadratic: &[QuadraticRun], others: &[FloorSeries]) -> CheckResult {
    let series = quadratic.iter().map(|r| (&r.lambda_min, None, r.ctx)).chain(others.iter().map(|r| (&r.lambda_min, r.at, r.ctx)));
    let mut lines = Vec::new();
    for (i, (lambda_min, at, ctx)) in series.enumerate() {
        let checks = check_eigenvalue_floor(lambda_min, ctx, 1e-9).map_err(err)?;
        let mut checks = bounds(10, Some(i), &checks);
        if let (Some(k), Some(last)) = (at, checks.last_mut()) {
            last.k = k;
        }
        lines.extend(worst(checks));
    }
    Ok(lines)
}

// ---------------------------------------------------------------------------
// Criterion 11

fn base_config(experiment: Experiment, variant: VariantName, eta: EtaSpec, steps: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        experiment,
        run: RunSection { variant, eta, steps, replicas: 1, seed, trace_every: 1 },
        moments: MomentsSection { mode: MomentModeName::Exact, samples: None, batch: 1 },
        diagnostics: DiagnosticsSection::default(),
        output: OutputSection { dir: "check".into() },
    }
}

fn ill_conditioned_gaussian() -> Experiment {
    Experiment::GaussianTarget { d: 10, log10_min: -9.0, log10_max: 0.0 }
}

/// Step sizes of the stability sweep, in units of `1/β`.
pub const STABILITY_GRID: [f64; 12] = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.25, 2.5, 3.0, 4.0];

fn first_divergent_eta(results: &[ComboResult]) -> Option<f64> {
    crate::trace::summarize(results).into_iter().find(|r| r.divergence_step.is_some()).map(|r| r.eta)
}

fn criterion_11(suite: Suite, seed: u64, notes: &mut Vec<String>) -> CheckResult {
    let base = std::path::Path::new(".");
    let mut lines = Vec::new();

    // (a) monotone KL for η ≤ 1/β
    let steps = if suite == Suite::Full { 1000 } else { 200 };
    let cfg = base_config(ill_conditioned_gaussian(), VariantName::Fbgvi, EtaSpec::List(vec![0.1, 0.5, 1.0]), steps, seed);
    let problem = Problem::build(&cfg, base).map_err(err)?;
    let beta = problem.pot.beta();
    let cfg = ExperimentConfig {
        run: RunSection { eta: EtaSpec::List(vec![0.1 / beta, 0.5 / beta, 1.0 / beta]), ..cfg.run },
        ..cfg
    };
    for res in run_all(&cfg, &problem, None).map_err(err)? {
        let kl: Vec<f64> = res.records.iter().map(|r| r.kl.unwrap_or(f64::NAN)).collect();
        let rise = kl.windows(2).enumerate().map(|(k, w)| (k + 1, w[1] - w[0], 1e-12 * w[0].abs().max(1.0)));
        let worst_rise = rise.max_by(|a, b| (a.1 - a.2).total_cmp(&(b.1 - b.2))).ok_or("empty trace")?;
        let complete = res.status == crate::experiment::Status::Completed && res.records.len() == steps + 1;
        lines.push(CheckLine::plain(11, "kl_non_increasing", Some(res.eta_index), worst_rise.1, 0.0, worst_rise.2)
            .with_eta(res.eta)
            .with_k(worst_rise.0));
        lines.push(CheckLine::plain(11, "kl_run_complete", Some(res.eta_index), if complete { 0.0 } else { 1.0 }, 0.0, 0.0)
            .with_eta(res.eta));
    }

    // (b) stability ordering on the same target
    let grid: Vec<f64> = STABILITY_GRID.iter().map(|f| f / beta).collect();
    let sweep_steps = if suite == Suite::Full { 300 } else { 150 };
    let mut first = BTreeMap::new();
    for variant in [VariantName::Fbgvi, VariantName::BwSgd] {
        let cfg = base_config(ill_conditioned_gaussian(), variant, EtaSpec::List(grid.clone()), sweep_steps, seed);
        let results = run_all(&cfg, &problem, None).map_err(err)?;
        if let Some(r) = results.iter().find(|r| matches!(r.status, crate::experiment::Status::Aborted { .. })) {
            return Err(format!("{variant:?} sweep aborted at eta {}: {}", r.eta, r.status.describe()));
        }
        let div = first_divergent_eta(&results);
        notes.push(format!(
            "{} first divergent eta*beta: {}",
            Variant::from(variant).name(),
            div.map_or("none in grid".into(), |e| format!("{:.3}", e * beta))
        ));
        first.insert(Variant::from(variant).name(), div);
    }
    let bw = first["bw_sgd"].unwrap_or(f64::INFINITY);
    let fb = first["fbgvi"].unwrap_or(f64::INFINITY);
    let mut ordering = CheckLine::plain(11, "stability_ordering", None, bw, fb, 0.0);
    ordering.pass = bw.is_finite() && bw < fb;
    lines.push(ordering);

    // (c) stochastic FB-GVI against the Laplace approximation on logistic regression
    lines.extend(laplace_comparison(suite, seed, notes)?);
    Ok(lines)
}

/// Step sizes of the logistic comparison; the check uses the smallest.
pub const LOGISTIC_ETAS: [f64; 3] = [1e-4, 3e-4, 1e-3];

fn laplace_comparison(suite: Suite, seed: u64, notes: &mut Vec<String>) -> CheckResult {
    let (steps, n_mc) = if suite == Suite::Full { (40_000, 1_000_000) } else { (20_000, 200_000) };
    let data = Dataset::generate(seed, 5, 100, None).map_err(err)?;
    let pot = logistic_potential(data.x.clone(), data.y.clone()).map_err(err)?;
    let laplace = laplace_approximation(&pot, &DVector::zeros(5), 200, 1e-10).map_err(err)?;
    let mut finals = Vec::new();
    for (i, &eta) in LOGISTIC_ETAS.iter().enumerate() {
        let cfg = StepConfig::new(eta, Variant::StochasticFbgvi, seed).map_err(err)?;
        let traj = run(&pot, IterState::start(GaussianMeasure::standard(5), seed, 1_100 + i as u64), &cfg, steps, false, |_| Ok(()))
            .map_err(err)?
            .into_result()
            .map_err(err)?;
        finals.push((eta, traj.last.p));
    }
    // common random numbers: both measures push forward the same standard normal draws
    let mut rng = stream_rng(seed, 111);
    let z: Vec<DVector<f64>> = (0..n_mc).map(|_| normal_vec(5, &mut rng)).collect();
    let values = |mu: &GaussianMeasure| -> Vec<f64> {
        let root = mu.cov().sqrt().into_matrix();
        z.par_iter().map(|z| pot.value(&(mu.mean() + &root * z))).collect()
    };
    let v_laplace = values(&laplace);
    let f_laplace = Estimate::from_samples(&v_laplace).map_err(err)?;
    let f_laplace_mean = f_laplace.mean + entropy(&laplace);
    notes.push(format!("F(Laplace) = {f_laplace_mean:.6} +/- {:.1e}", f_laplace.std_err));
    let mut lines = Vec::new();
    for (i, (eta, mu)) in finals.iter().enumerate() {
        let v = values(mu);
        let f_vi = Estimate::from_samples(&v).map_err(err)?;
        let diff: Vec<f64> = v.iter().zip(&v_laplace).map(|(a, b)| a - b).collect();
        let diff = Estimate::from_samples(&diff).map_err(err)?;
        let f_vi_mean = f_vi.mean + entropy(mu);
        notes.push(format!(
            "eta = {eta:.0e}: F(p_N) = {f_vi_mean:.6} +/- {:.1e}, F(p_N) - F(Laplace) = {:.6} +/- {:.1e}",
            f_vi.std_err,
            diff.mean + entropy(mu) - entropy(&laplace),
            diff.std_err
        ));
        if i == 0 {
            // F̂_VI + 3 SE of the paired difference below F̂_Laplace
            let mut line = CheckLine::plain(11, "vi_below_laplace", None, f_vi_mean, f_laplace_mean, -3.0 * diff.std_err)
                .with_eta(*eta)
                .with_k(steps);
            line.pass = f_vi_mean + 3.0 * diff.std_err < f_laplace_mean;
            line.replicas = n_mc;
            lines.push(line);
        }
    }
    Ok(lines)
}

// ---------------------------------------------------------------------------
// Criterion 12

/// Renders every trace of `cfg` using `jobs` workers.
pub fn render_all(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<String>, String> {
    let problem = Problem::build(cfg, std::path::Path::new(".")).map_err(err)?;
    Ok(run_all(cfg, &problem, Some(jobs)).map_err(err)?.iter().map(|r| render_trace(cfg, r)).collect())
}

fn criterion_12(suite: Suite, seed: u64) -> CheckResult {
    let steps = if suite == Suite::Full { 200 } else { 50 };
    let mut configs = [
        base_config(
            Experiment::GaussianTarget { d: 4, log10_min: -2.0, log10_max: 0.0 },
            VariantName::StochasticFbgvi,
            EtaSpec::List(vec![0.05, 0.2]),
            steps,
            seed,
        ),
        base_config(ill_conditioned_gaussian(), VariantName::BwSgd, EtaSpec::List(vec![0.5, 1.5]), steps, seed),
        base_config(
            Experiment::LogisticRegression { d: 3, n: 50, theta_true: None, data: None },
            VariantName::StochasticFbgvi,
            EtaSpec::Scalar(1e-3),
            steps,
            seed,
        ),
    ];
    configs[0].run.replicas = 3;
    configs[0].diagnostics.sigma_redraws = Some(20);
    configs[2].run.replicas = 3;
    configs[2].run.trace_every = 10;
    configs[2].diagnostics.samples = 2_000;
    let mut lines = Vec::new();
    for (i, cfg) in configs.iter().enumerate() {
        let serial = render_all(cfg, 1)?;
        let repeat = render_all(cfg, 1)?;
        let parallel = render_all(cfg, 3)?;
        let differing = serial.iter().zip(&repeat).zip(&parallel).filter(|((a, b), c)| a != b || a != c).count();
        let mut line = CheckLine::plain(12, "byte_identical_traces", Some(i), differing as f64, 0.0, 0.0);
        line.replicas = serial.len();
        line.pass &= serial.len() == parallel.len() && !serial.is_empty();
        lines.push(line);
    }
    Ok(lines)
}

// ---------------------------------------------------------------------------

/// Runs criteria 1–12 in order, handing each report to `on_report` as soon as it is done.
pub fn run_suite(suite: Suite, seed: u64, mut on_report: impl FnMut(&CriterionReport)) -> Vec<CriterionReport> {
    let mut reports = Vec::new();
    let mut finish = |id: u8, result: CheckResult, notes: Vec<String>, elapsed: Duration| {
        let mut checks = match result {
            Ok(lines) => lines,
            Err(e) => vec![failure(id, &e)],
        };
        if checks.is_empty() {
            checks.push(failure(id, "no checks were produced"));
        }
        if let (Suite::Full, Some(budget)) = (suite, BUDGETS[id as usize - 1]) {
            checks.push(CheckLine::plain(id, "runtime_seconds", None, elapsed.as_secs_f64(), budget, 0.0));
        }
        let report = CriterionReport { id, title: TITLES[id as usize - 1], checks, notes, elapsed };
        on_report(&report);
        reports.push(report);
    };
    let timed = |f: &mut dyn FnMut() -> CheckResult| {
        let start = Instant::now();
        let r = f();
        (r, start.elapsed())
    };

    let (r, t) = timed(&mut || criterion_1(suite, seed));
    finish(1, r, Vec::new(), t);
    let (r, t) = timed(&mut || criterion_2(suite, seed));
    finish(2, r, Vec::new(), t);
    let (r, t) = timed(&mut || criterion_3(suite, seed));
    finish(3, r, Vec::new(), t);

    let start = Instant::now();
    let quadratic = quadratic_runs(suite, seed);
    let runs_elapsed = start.elapsed();
    let shared = |f: fn(&[QuadraticRun]) -> CheckResult| match &quadratic {
        Ok(runs) => f(runs),
        Err(e) => Err(e.clone()),
    };
    let (r, t) = timed(&mut || shared(criterion_4));
    finish(4, r, Vec::new(), t + runs_elapsed);
    let (r, t) = timed(&mut || shared(criterion_5));
    finish(5, r, vec!["reuses the criterion 4 runs".into()], t);

    let mut floors = Vec::new();
    let (r, t) = timed(&mut || criterion_6(suite, seed, &mut floors));
    finish(6, r, Vec::new(), t);
    let (r, t) = timed(&mut || shared(criterion_7));
    finish(7, r, vec!["reuses the criterion 4 runs".into()], t);
    let (r, t) = timed(&mut || criterion_8(suite, seed));
    finish(8, r, Vec::new(), t);
    let mut notes = Vec::new();
    let (r, t) = timed(&mut || criterion_9(suite, seed, &mut floors, &mut notes));
    finish(9, r, notes, t);

    let (r, t) = timed(&mut || match &quadratic {
        Ok(runs) => criterion_10(runs, &floors),
        Err(e) => Err(e.clone()),
    });
    finish(10, r, vec!["one line per run: the step with the smallest lambda_min".into()], t);

    let mut notes = Vec::new();
    let (r, t) = timed(&mut || criterion_11(suite, seed, &mut notes));
    finish(11, r, notes, t);
    let (r, t) = timed(&mut || criterion_12(suite, seed));
    finish(12, r, Vec::new(), t);
    reports
}

fn failure(id: u8, message: &str) -> CheckLine {
    let mut line = CheckLine::plain(id, &format!("error: {message}"), None, f64::NAN, f64::NAN, 0.0);
    line.pass = false;
    line
}

/// JSON Lines report: one object per check.
pub fn render_report(reports: &[CriterionReport]) -> String {
    let mut out = String::new();
    for line in reports.iter().flat_map(|r| &r.checks) {
        out.push_str(&serde_json::to_string(line).expect("check lines serialize"));
        out.push('\n');
    }
    out
}
