//! Problem construction and execution of `(η, replica)` combinations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use fbgvi_core::bw::{kl_gaussian, GaussianMeasure};
use fbgvi_core::diagnostics::{Recorder, TraceRecord};
use fbgvi_core::gvi::{run, IterState, StepConfig, Variant};
use fbgvi_core::potentials::{
    double_well_potential, generate_logistic_data, ill_conditioned_quadratic, logistic_potential, Potential,
    PotentialSpec,
};
use fbgvi_core::rng::stream_rng;
use fbgvi_core::Error;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::config::{Experiment, ExperimentConfig};
use crate::error::HarnessError;

/// Stream used for problem construction (target, data).
pub const PROBLEM_STREAM: u64 = 0;

/// Stepper stream of one combination; the diagnostics stream is the next one up.
pub fn iteration_stream(eta_index: usize, replica: usize) -> u64 {
    (((eta_index as u64) << 32) | replica as u64) * 2 + 1
}

pub fn diagnostics_stream(eta_index: usize, replica: usize) -> u64 {
    iteration_stream(eta_index, replica) + 1
}

/// Logistic regression data, with the parameter that generated it when known.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub theta_true: Option<DVector<f64>>,
}

impl Dataset {
    /// `θ` (given or drawn from `N(0, I)`) and then the rows, all on the problem stream.
    pub fn generate(seed: u64, d: usize, n: usize, theta_true: Option<&[f64]>) -> Result<Self, HarnessError> {
        let mut rng = stream_rng(seed, PROBLEM_STREAM);
        let theta = match theta_true {
            Some(t) => DVector::from_column_slice(t),
            None => DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal)),
        };
        let (x, y) = generate_logistic_data(&theta, n, &mut rng)?;
        Ok(Self { x, y, theta_true: Some(theta) })
    }

    /// Reads a `x_1,…,x_d,y` CSV; `#` lines are metadata and skipped.
    pub fn load(path: &Path, d: usize, n: usize) -> Result<Self, HarnessError> {
        let data_err = |message: String| HarnessError::Data { path: path.to_path_buf(), message };
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| data_err(e.to_string()))?;
        let headers = reader.headers().map_err(|e| data_err(e.to_string()))?.clone();
        let expected: Vec<String> = (1..=d).map(|j| format!("x_{j}")).chain(["y".to_string()]).collect();
        if headers.iter().ne(expected.iter().map(String::as_str)) {
            return Err(data_err(format!("expected header {}", expected.join(","))));
        }
        let mut values = Vec::with_capacity(n * (d + 1));
        for (i, row) in reader.records().enumerate() {
            let row = row.map_err(|e| data_err(e.to_string()))?;
            for cell in row.iter() {
                let v: f64 = cell.trim().parse().map_err(|_| data_err(format!("row {}: bad number `{cell}`", i + 1)))?;
                values.push(v);
            }
        }
        let rows = values.len() / (d + 1);
        if rows != n {
            return Err(data_err(format!("expected {n} rows, found {rows}")));
        }
        let all = DMatrix::from_row_slice(n, d + 1, &values);
        Ok(Self { x: all.columns(0, d).into_owned(), y: all.column(d).into_owned(), theta_true: None })
    }
}

/// Everything a combination needs besides its step size and streams.
#[derive(Clone, Debug)]
pub struct Problem {
    pub pot: PotentialSpec,
    pub p0: GaussianMeasure,
    /// The exact target when the posterior is Gaussian.
    pub target: Option<GaussianMeasure>,
    pub dataset: Option<Dataset>,
}

impl Problem {
    /// `base_dir` resolves a relative data path (normally the config's directory).
    pub fn build(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Self, HarnessError> {
        let seed = cfg.run.seed;
        let d = cfg.experiment.dim();
        let p0 = GaussianMeasure::standard(d);
        Ok(match &cfg.experiment {
            Experiment::GaussianTarget { log10_min, log10_max, .. } => {
                let mut rng = stream_rng(seed, PROBLEM_STREAM);
                let q = ill_conditioned_quadratic(d, *log10_min, *log10_max, &mut rng)?;
                let target = q.target();
                Self { pot: q.into(), p0, target: Some(target), dataset: None }
            }
            Experiment::LogisticRegression { n, theta_true, data, .. } => {
                let dataset = match data {
                    Some(path) => Dataset::load(&resolve(base_dir, path), d, *n)?,
                    None => Dataset::generate(seed, d, *n, theta_true.as_deref())?,
                };
                let pot = logistic_potential(dataset.x.clone(), dataset.y.clone())?;
                Self { pot: pot.into(), p0, target: None, dataset: Some(dataset) }
            }
            Experiment::DoubleWell { scale, .. } => {
                Self { pot: double_well_potential(d, *scale)?.into(), p0, target: None, dataset: None }
            }
        })
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// How a combination ended.
#[derive(Clone, Debug, PartialEq)]
pub enum Status {
    Completed,
    /// A recorded outcome, not a process failure: the stepper lost positive
    /// definiteness, produced non-finite values, or the monitored KL rose above its start.
    Diverged { k: usize, reason: String },
    /// Any other numerical failure.
    Aborted { k: usize, message: String },
}

impl Status {
    pub fn divergence_step(&self) -> Option<usize> {
        match self {
            Status::Diverged { k, .. } => Some(*k),
            _ => None,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Status::Completed => "completed".into(),
            Status::Diverged { k, reason } => format!("diverged k={k} reason={reason}"),
            Status::Aborted { k, message } => format!("aborted k={k} error={message}"),
        }
    }
}

/// One `(η, replica)` run.
#[derive(Clone, Debug, PartialEq)]
pub struct ComboResult {
    pub eta_index: usize,
    pub eta: f64,
    pub replica: usize,
    pub records: Vec<TraceRecord>,
    pub status: Status,
    pub warning: Option<String>,
}

/// KL may exceed its initial value by this relative amount before the run counts as diverged.
pub const KL_RISE_TOLERANCE: f64 = 1e-9;

pub fn step_config(cfg: &ExperimentConfig, eta: f64) -> Result<StepConfig, HarnessError> {
    let variant = Variant::from(cfg.run.variant);
    let mut step = StepConfig::new(eta, variant, cfg.run.seed)?;
    if variant.is_stochastic() {
        step = step.with_batch(cfg.moments.batch)?;
    } else {
        step = step.with_moments(cfg.moments.mode.into(), cfg.moments.samples.unwrap_or(0))?;
    }
    Ok(step)
}

pub fn run_combo(
    cfg: &ExperimentConfig,
    problem: &Problem,
    eta_index: usize,
    replica: usize,
) -> Result<ComboResult, HarnessError> {
    let eta = cfg.etas()[eta_index];
    let step = step_config(cfg, eta)?;
    let warning = step.step_size_warning(problem.pot.beta()).map(|w| w.to_string());
    let (n_steps, every) = (cfg.run.steps, cfg.run.trace_every);
    let diag = &cfg.diagnostics;
    let diag_rng = stream_rng(cfg.run.seed, diagnostics_stream(eta_index, replica));
    let mut recorder = Recorder::new(&problem.pot, diag.mode.into(), diag.samples, diag_rng);
    if let Some(t) = &problem.target {
        recorder = recorder.with_target(t.clone())?;
    }
    if let Some(r) = diag.sigma_redraws {
        recorder = recorder.with_sigma_redraws(r);
    }
    let monitor = if step.variant.is_stochastic() { None } else { problem.target.as_ref() };
    let start = Instant::now();
    let wall = diag.record_wall_time;

    let mut records: Vec<TraceRecord> = Vec::new();
    let mut kl_start = f64::NAN;
    let mut kl_rise: Option<usize> = None;
    let mut hook_failed_at: Option<usize> = None;
    let initial = IterState::start(problem.p0.clone(), cfg.run.seed, iteration_stream(eta_index, replica));
    let traj = run(&problem.pot, initial, &step, n_steps, false, |s| {
        let result = (|| {
            let rising = match monitor {
                Some(t) => {
                    let kl = kl_gaussian(&s.p, t)?;
                    if s.k == 0 {
                        kl_start = kl;
                    }
                    // written so that a NaN KL also counts as rising
                    let held = kl <= kl_start + KL_RISE_TOLERANCE * kl_start.abs().max(1.0);
                    !held
                }
                None => false,
            };
            if rising || s.k % every == 0 || s.k == n_steps {
                let mut rec = recorder.record(s)?;
                if wall {
                    rec.wall_ns = Some(start.elapsed().as_nanos() as u64);
                }
                records.push(rec);
            }
            if rising {
                kl_rise = Some(s.k);
                return Err(Error::Divergence { k: s.k, lambda_min: s.p.cov().lambda_min() });
            }
            Ok(())
        })();
        if result.is_err() {
            hook_failed_at = Some(s.k);
        }
        result
    })?;

    let status = match traj.error {
        None => Status::Completed,
        Some(e) => {
            let k = hook_failed_at.unwrap_or(traj.last.k + 1);
            if records.last().is_none_or(|r| r.k != traj.last.k) {
                // best effort: the last reached state may itself be unrecordable
                if let Ok(rec) = recorder.record(&traj.last) {
                    records.push(rec);
                }
            }
            match e {
                _ if kl_rise.is_some() => Status::Diverged { k, reason: "kl_increase".into() },
                Error::Divergence { .. } => Status::Diverged { k, reason: "not_positive_definite".into() },
                Error::NonFinite { .. } => Status::Diverged { k, reason: "non_finite".into() },
                other => Status::Aborted { k, message: other.to_string() },
            }
        }
    };
    Ok(ComboResult { eta_index, eta, replica, records, status, warning })
}

/// Runs every combination, on `jobs` worker threads when given. Results come back in
/// `(eta_index, replica)` order whatever the scheduling.
pub fn run_all(cfg: &ExperimentConfig, problem: &Problem, jobs: Option<usize>) -> Result<Vec<ComboResult>, HarnessError> {
    let combos: Vec<(usize, usize)> =
        (0..cfg.etas().len()).flat_map(|i| (0..cfg.run.replicas).map(move |r| (i, r))).collect();
    let work = || combos.par_iter().map(|&(i, r)| run_combo(cfg, problem, i, r)).collect::<Result<Vec<_>, _>>();
    match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| HarnessError::Usage(format!("cannot start worker pool: {e}")))?
            .install(work),
        None => work(),
    }
}

/// Output directory after applying the `FBGVI_OUTPUT_ROOT` override to relative paths.
pub fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    output_dir_with_root(&cfg.output.dir, std::env::var_os(crate::OUTPUT_ROOT_ENV).map(PathBuf::from))
}

pub fn output_dir_with_root(dir: &Path, root: Option<PathBuf>) -> PathBuf {
    match root {
        Some(root) if dir.is_relative() => root.join(dir),
        _ => dir.to_path_buf(),
    }
}
