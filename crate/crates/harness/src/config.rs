//! Experiment configuration: one TOML file with typed sections.
//!
//! Seed and step size have no defaults. A config that omits either is rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use fbgvi_core::gvi::Variant;
use fbgvi_core::potentials::MomentMode;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub run: RunSection,
    pub moments: MomentsSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    /// Quadratic target with precision spectrum log-spaced over `10^log10_min ..= 10^log10_max`.
    GaussianTarget { d: usize, log10_min: f64, log10_max: f64 },
    /// Flat-prior logistic regression. Data comes from `data` when given, otherwise it is
    /// generated from the seed with `theta_true` (drawn from `N(0, I)` when absent).
    LogisticRegression {
        d: usize,
        n: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta_true: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data: Option<PathBuf>,
    },
    DoubleWell { d: usize, scale: f64 },
}

impl Experiment {
    pub fn dim(&self) -> usize {
        match *self {
            Experiment::GaussianTarget { d, .. }
            | Experiment::LogisticRegression { d, .. }
            | Experiment::DoubleWell { d, .. } => d,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::GaussianTarget { .. } => "gaussian_target",
            Experiment::LogisticRegression { .. } => "logistic_regression",
            Experiment::DoubleWell { .. } => "double_well",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    Fbgvi,
    StochasticFbgvi,
    BwSgd,
    StochasticBwSgd,
}

impl From<VariantName> for Variant {
    fn from(v: VariantName) -> Self {
        match v {
            VariantName::Fbgvi => Variant::Fbgvi,
            VariantName::StochasticFbgvi => Variant::StochasticFbgvi,
            VariantName::BwSgd => Variant::BwSgd,
            VariantName::StochasticBwSgd => Variant::StochasticBwSgd,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentModeName {
    Exact,
    MonteCarlo,
    Quadrature,
}

impl From<MomentModeName> for MomentMode {
    fn from(m: MomentModeName) -> Self {
        match m {
            MomentModeName::Exact => MomentMode::Exact,
            MomentModeName::MonteCarlo => MomentMode::MonteCarlo,
            MomentModeName::Quadrature => MomentMode::Quadrature,
        }
    }
}

/// A single step size or a sweep list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaSpec {
    Scalar(f64),
    List(Vec<f64>),
}

impl EtaSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            EtaSpec::Scalar(e) => vec![*e],
            EtaSpec::List(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub variant: VariantName,
    pub eta: EtaSpec,
    /// Iterations `N`; a trace has rows `k = 0..=N` at the `trace_every` stride.
    pub steps: usize,
    pub replicas: usize,
    pub seed: u64,
    #[serde(default = "one")]
    pub trace_every: usize,
}

/// Moment oracle for the stepper. Deterministic variants use `mode` with `samples`
/// (Monte Carlo draws or quadrature nodes per axis); stochastic variants draw `batch`
/// points per step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsSection {
    pub mode: MomentModeName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default = "one")]
    pub batch: usize,
}

/// Trace-row estimators. Exact moments are used whenever the potential has them;
/// otherwise `mode`/`samples` apply.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    #[serde(default = "monte_carlo")]
    pub mode: MomentModeName,
    #[serde(default = "diagnostic_samples")]
    pub samples: usize,
    /// Fills the `sigmasq` column from this many single-point redraws.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_redraws: Option<usize>,
    /// Fills `wall_ns`; traces are then no longer byte-reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self { mode: monte_carlo(), samples: diagnostic_samples(), sigma_redraws: None, record_wall_time: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

fn one() -> usize {
    1
}

fn monte_carlo() -> MomentModeName {
    MomentModeName::MonteCarlo
}

fn diagnostic_samples() -> usize {
    10_000
}

/// A schema or validation failure, located by line (when known) and field.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}, field `{}`: {}", self.field, self.message),
            None => write!(f, "field `{}`: {}", self.field, self.message),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text).map_err(|e| HarnessError::Config { path: path.to_path_buf(), error: e })
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            ConfigError { line, field: field_at(text, line), message: e.message().to_string() }
        })?;
        cfg.validate().map_err(|(field, message)| ConfigError {
            line: locate_field(text, field),
            field: field.to_string(),
            message,
        })?;
        Ok(cfg)
    }

    /// The config as TOML, suitable for embedding in output headers and reparsing.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn etas(&self) -> Vec<f64> {
        self.run.eta.values()
    }

    fn validate(&self) -> Result<(), (&'static str, String)> {
        let d = self.experiment.dim();
        if d == 0 {
            return Err(("experiment.d", "must be at least 1".into()));
        }
        match &self.experiment {
            Experiment::GaussianTarget { log10_min, log10_max, .. } => {
                if !(log10_min.is_finite() && log10_max.is_finite() && log10_min <= log10_max) {
                    return Err(("experiment.log10_min", "need finite log10_min <= log10_max".into()));
                }
            }
            Experiment::LogisticRegression { n, theta_true, .. } => {
                if *n == 0 {
                    return Err(("experiment.n", "must be at least 1".into()));
                }
                if let Some(t) = theta_true {
                    if t.len() != d {
                        return Err(("experiment.theta_true", format!("expected {d} entries, got {}", t.len())));
                    }
                    if t.iter().any(|v| !v.is_finite()) {
                        return Err(("experiment.theta_true", "entries must be finite".into()));
                    }
                }
            }
            Experiment::DoubleWell { scale, .. } => {
                if !(*scale > 0.0 && scale.is_finite()) {
                    return Err(("experiment.scale", "must be positive".into()));
                }
            }
        }
        let etas = self.etas();
        if etas.is_empty() {
            return Err(("run.eta", "list must not be empty".into()));
        }
        if let Some(e) = etas.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(("run.eta", format!("entries must be positive and finite, got {e}")));
        }
        for (field, v) in [("run.steps", self.run.steps), ("run.replicas", self.run.replicas)] {
            if v == 0 {
                return Err((field, "must be at least 1".into()));
            }
        }
        if self.run.trace_every == 0 {
            return Err(("run.trace_every", "must be at least 1".into()));
        }
        if self.moments.batch == 0 {
            return Err(("moments.batch", "must be at least 1".into()));
        }
        let stochastic = Variant::from(self.run.variant).is_stochastic();
        let exact_capable = !matches!(self.experiment, Experiment::LogisticRegression { .. });
        if !stochastic {
            match self.moments.mode {
                MomentModeName::Exact if !exact_capable => {
                    return Err(("moments.mode", "logistic regression has no exact moments".into()));
                }
                MomentModeName::Exact => {}
                _ if self.moments.samples.unwrap_or(0) == 0 => {
                    return Err(("moments.samples", "required (>= 1) for monte_carlo and quadrature".into()));
                }
                MomentModeName::Quadrature if d > fbgvi_core::oracles::MAX_QUADRATURE_DIM => {
                    return Err(("moments.mode", format!("quadrature supports d <= {}", fbgvi_core::oracles::MAX_QUADRATURE_DIM)));
                }
                _ => {}
            }
        }
        if !exact_capable {
            let diag = &self.diagnostics;
            match diag.mode {
                MomentModeName::Exact => {
                    return Err(("diagnostics.mode", "logistic regression has no exact moments".into()));
                }
                MomentModeName::Quadrature if d > fbgvi_core::oracles::MAX_QUADRATURE_DIM => {
                    return Err(("diagnostics.mode", format!("quadrature supports d <= {}", fbgvi_core::oracles::MAX_QUADRATURE_DIM)));
                }
                MomentModeName::MonteCarlo if diag.samples < 2 => {
                    return Err(("diagnostics.samples", "Monte Carlo objective needs at least 2".into()));
                }
                _ => {}
            }
        }
        if self.diagnostics.sigma_redraws.is_some_and(|r| r < 2) {
            return Err(("diagnostics.sigma_redraws", "must be at least 2".into()));
        }
        Ok(())
    }
}

/// Best-effort `section.key` name for the key on `line`.
fn field_at(text: &str, line: Option<usize>) -> String {
    let Some(line) = line else { return String::from("<document>") };
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let l = raw.trim();
        if l.starts_with('[') {
            section = l.trim_matches(|c| c == '[' || c == ']').trim().to_string();
        }
        if i + 1 == line {
            if let Some((key, _)) = l.split_once('=') {
                let key = key.trim();
                return if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
            }
            return if section.is_empty() { String::from("<document>") } else { section };
        }
    }
    String::from("<document>")
}

/// Line of `section.key` in `text`, if the key is written there.
fn locate_field(text: &str, field: &str) -> Option<usize> {
    let (section, key) = field.split_once('.')?;
    let mut current = String::new();
    let mut section_line = None;
    for (i, raw) in text.lines().enumerate() {
        let l = raw.trim();
        if l.starts_with('[') {
            current = l.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == section {
                section_line = Some(i + 1);
            }
        } else if current == section && l.split_once('=').is_some_and(|(k, _)| k.trim() == key) {
            return Some(i + 1);
        }
    }
    section_line
}
