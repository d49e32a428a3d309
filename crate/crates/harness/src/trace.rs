//! CSV artifacts: traces, sweep summaries and logistic datasets.
//!
//! Every file opens with `#` metadata lines carrying the resolved config and seed, then a
//! header row. Floats are written with 17 significant digits, absent values as empty
//! cells, lines end in LF.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fbgvi_core::diagnostics::{Estimate, TraceRecord};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::HarnessError;
use crate::experiment::{diagnostics_stream, iteration_stream, ComboResult, Dataset, Status};

pub const TRACE_COLUMNS: [&str; 9] = ["k", "kl", "f", "w2sq", "gradnormsq", "sigmasq", "lmin", "lmax", "wall_ns"];

pub const SUMMARY_COLUMNS: [&str; 13] = [
    "eta",
    "replicas",
    "completed",
    "diverged",
    "aborted",
    "divergence_step",
    "final_k",
    "final_kl",
    "final_kl_se",
    "final_f",
    "final_f_se",
    "min_gradnormsq",
    "final_gradnormsq",
];

pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

fn comment_block(out: &mut String, title: &str, cfg: &ExperimentConfig, extra: &[(&str, String)]) {
    let _ = writeln!(out, "# {title}");
    let _ = writeln!(out, "# generator: fbgvi {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "# seed: {}", cfg.run.seed);
    for (k, v) in extra {
        let _ = writeln!(out, "# {k}: {v}");
    }
    let _ = writeln!(out, "# config:");
    for line in cfg.to_toml().lines() {
        let _ = writeln!(out, "#   {line}");
    }
}

fn csv_writer(buf: Vec<u8>) -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(buf)
}

fn finish(out: String, w: csv::Writer<Vec<u8>>) -> String {
    let body = w.into_inner().expect("writing to memory cannot fail");
    out + &String::from_utf8(body).expect("CSV cells are UTF-8")
}

pub fn trace_file_name(eta_index: usize, replica: usize) -> String {
    format!("trace_eta{eta_index:03}_rep{replica:03}.csv")
}

pub fn render_trace(cfg: &ExperimentConfig, result: &ComboResult) -> String {
    let mut out = String::new();
    let mut extra = vec![
        ("experiment", cfg.experiment.name().to_string()),
        ("variant", fbgvi_core::gvi::Variant::from(cfg.run.variant).name().to_string()),
        ("eta", fmt_float(result.eta)),
        ("eta_index", result.eta_index.to_string()),
        ("replica", result.replica.to_string()),
        ("iteration_stream", iteration_stream(result.eta_index, result.replica).to_string()),
        ("diagnostics_stream", diagnostics_stream(result.eta_index, result.replica).to_string()),
        ("status", result.status.describe()),
    ];
    if let Some(w) = &result.warning {
        extra.push(("warning", w.clone()));
    }
    comment_block(&mut out, "fbgvi trace", cfg, &extra);
    let mut w = csv_writer(Vec::new());
    w.write_record(TRACE_COLUMNS).expect("in-memory write");
    for r in &result.records {
        w.write_record([
            r.k.to_string(),
            fmt_opt(r.kl),
            fmt_float(r.f),
            fmt_opt(r.w2_sq),
            fmt_float(r.grad_norm_sq),
            fmt_opt(r.sigma_sq),
            fmt_float(r.lambda_min),
            fmt_float(r.lambda_max),
            r.wall_ns.map(|n| n.to_string()).unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    finish(out, w)
}

/// One parsed trace row; absent cells are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub kl: Option<f64>,
    pub f: f64,
    pub w2sq: Option<f64>,
    pub gradnormsq: f64,
    pub sigmasq: Option<f64>,
    pub lmin: f64,
    pub lmax: f64,
    pub wall_ns: Option<u64>,
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>, HarnessError> {
    let data_err = |e: csv::Error| HarnessError::Data { path: path.to_path_buf(), message: e.to_string() };
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(data_err)?;
    reader.deserialize().collect::<Result<Vec<TraceRow>, _>>().map_err(data_err)
}

/// Per-η aggregate over replicas, as written to the sweep summary.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub eta: f64,
    pub replicas: usize,
    pub completed: usize,
    pub diverged: usize,
    pub aborted: usize,
    /// Earliest divergence over replicas.
    pub divergence_step: Option<usize>,
    /// Last recorded `k`, smallest over replicas.
    pub final_k: usize,
    pub final_kl: Option<Estimate>,
    pub final_f: Estimate,
    pub min_grad_norm_sq: f64,
    pub final_grad_norm_sq: f64,
}

fn replica_estimate(xs: &[f64]) -> Estimate {
    if xs.len() >= 2 {
        Estimate::from_samples(xs).expect("two or more samples")
    } else {
        Estimate::exact(xs[0])
    }
}

/// Groups results by η (ascending, stable for ties) and aggregates the last record of
/// each replica.
pub fn summarize(results: &[ComboResult]) -> Vec<SweepRow> {
    let mut indices: Vec<usize> = results.iter().map(|r| r.eta_index).collect();
    indices.sort_unstable();
    indices.dedup();
    let mut rows: Vec<SweepRow> = indices
        .into_iter()
        .map(|i| {
            let group: Vec<&ComboResult> = results.iter().filter(|r| r.eta_index == i).collect();
            let last: Vec<&TraceRecord> = group.iter().filter_map(|r| r.records.last()).collect();
            let kls: Option<Vec<f64>> = last.iter().map(|r| r.kl).collect();
            let fs: Vec<f64> = last.iter().map(|r| r.f).collect();
            let min_grad = group
                .iter()
                .flat_map(|r| r.records.iter().map(|x| x.grad_norm_sq))
                .fold(f64::INFINITY, f64::min);
            let final_grad = last.iter().map(|r| r.grad_norm_sq).sum::<f64>() / last.len().max(1) as f64;
            let count = |p: fn(&Status) -> bool| group.iter().filter(|r| p(&r.status)).count();
            SweepRow {
                eta: group[0].eta,
                replicas: group.len(),
                completed: count(|s| matches!(s, Status::Completed)),
                diverged: count(|s| matches!(s, Status::Diverged { .. })),
                aborted: count(|s| matches!(s, Status::Aborted { .. })),
                divergence_step: group.iter().filter_map(|r| r.status.divergence_step()).min(),
                final_k: last.iter().map(|r| r.k).min().unwrap_or(0),
                final_kl: kls.filter(|v| !v.is_empty()).map(|v| replica_estimate(&v)),
                final_f: if fs.is_empty() { Estimate::exact(f64::NAN) } else { replica_estimate(&fs) },
                min_grad_norm_sq: min_grad,
                final_grad_norm_sq: final_grad,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.eta.total_cmp(&b.eta));
    rows
}

pub fn render_summary(cfg: &ExperimentConfig, rows: &[SweepRow]) -> String {
    let mut out = String::new();
    comment_block(
        &mut out,
        "fbgvi sweep summary",
        cfg,
        &[("variant", fbgvi_core::gvi::Variant::from(cfg.run.variant).name().to_string())],
    );
    let mut w = csv_writer(Vec::new());
    w.write_record(SUMMARY_COLUMNS).expect("in-memory write");
    let se = |e: &Estimate| if e.n >= 2 { fmt_float(e.std_err) } else { String::new() };
    for r in rows {
        w.write_record([
            fmt_float(r.eta),
            r.replicas.to_string(),
            r.completed.to_string(),
            r.diverged.to_string(),
            r.aborted.to_string(),
            r.divergence_step.map(|k| k.to_string()).unwrap_or_default(),
            r.final_k.to_string(),
            r.final_kl.map(|e| fmt_float(e.mean)).unwrap_or_default(),
            r.final_kl.as_ref().map(se).unwrap_or_default(),
            fmt_float(r.final_f.mean),
            se(&r.final_f),
            fmt_float(r.min_grad_norm_sq),
            fmt_float(r.final_grad_norm_sq),
        ])
        .expect("in-memory write");
    }
    finish(out, w)
}

/// Dataset sidecar contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub theta_true: Option<Vec<f64>>,
    pub config: String,
}

pub fn render_dataset(cfg: &ExperimentConfig, data: &Dataset) -> String {
    let mut out = String::new();
    comment_block(&mut out, "fbgvi logistic dataset", cfg, &[]);
    let d = data.x.ncols();
    let mut w = csv_writer(Vec::new());
    let header: Vec<String> = (1..=d).map(|j| format!("x_{j}")).chain(["y".to_string()]).collect();
    w.write_record(&header).expect("in-memory write");
    for i in 0..data.x.nrows() {
        let row: Vec<String> = (0..d).map(|j| fmt_float(data.x[(i, j)])).chain([fmt_float(data.y[i])]).collect();
        w.write_record(&row).expect("in-memory write");
    }
    finish(out, w)
}

pub fn dataset_metadata(cfg: &ExperimentConfig, data: &Dataset) -> DatasetMetadata {
    DatasetMetadata {
        seed: cfg.run.seed,
        n: data.x.nrows(),
        d: data.x.ncols(),
        theta_true: data.theta_true.as_ref().map(|t| t.iter().copied().collect()),
        config: cfg.to_toml(),
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<PathBuf, HarnessError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| HarnessError::io(path, e))?;
    Ok(path.to_path_buf())
}
