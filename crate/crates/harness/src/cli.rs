//! Subcommands. Each returns the process exit code and writes progress to `out`.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::checks::{render_report, run_suite, Suite, DEFAULT_CHECK_SEED};
use crate::config::{EtaSpec, Experiment, ExperimentConfig};
use crate::error::{exit, HarnessError};
use crate::experiment::{output_dir, output_dir_with_root, run_all, ComboResult, Dataset, Problem, Status};
use crate::trace::{dataset_metadata, render_dataset, render_summary, render_trace, summarize, trace_file_name, write_file};

#[derive(Debug, Parser)]
#[command(name = "fbgvi", version, about = "Gaussian variational inference experiments and checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every (eta, replica) combination of a config and write one trace per combination.
    Run {
        config: PathBuf,
        /// Worker threads; output does not depend on it.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Like `run`, plus a per-eta summary table; `run.eta` must be a list.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run the acceptance-criteria suite; exit 0 iff every check passes.
    Check {
        #[arg(long, value_enum, default_value_t = SuiteArg::Fast)]
        suite: SuiteArg,
        #[arg(long)]
        seed: Option<u64>,
        /// JSON Lines report path (default: check_report.jsonl under the output root).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write a logistic-regression dataset and its metadata sidecar.
    Datagen { config: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    Fast,
    Full,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Fast => Suite::Fast,
            SuiteArg::Full => Suite::Full,
        }
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match cli.command {
        Command::Run { config, jobs } => cmd_run(&config, jobs, false, out),
        Command::Sweep { config, jobs } => cmd_run(&config, jobs, true, out),
        Command::Check { suite, seed, report } => cmd_check(suite.into(), seed.unwrap_or(DEFAULT_CHECK_SEED), report, out),
        Command::Datagen { config } => cmd_datagen(&config, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn config_base(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn cmd_run(path: &Path, jobs: Option<usize>, sweep: bool, out: &mut dyn Write) -> Result<i32, HarnessError> {
    let cfg = ExperimentConfig::load(path)?;
    if sweep && !matches!(cfg.run.eta, EtaSpec::List(_)) {
        return Err(HarnessError::Config {
            path: path.to_path_buf(),
            error: crate::config::ConfigError {
                line: None,
                field: "run.eta".into(),
                message: "sweep needs a list of step sizes".into(),
            },
        });
    }
    let problem = Problem::build(&cfg, &config_base(path))?;
    let results = run_all(&cfg, &problem, jobs)?;
    let dir = output_dir(&cfg);
    for r in &results {
        let file = write_file(&dir.join(trace_file_name(r.eta_index, r.replica)), &render_trace(&cfg, r))?;
        let _ = writeln!(out, "{}  eta={:.6e} replica={} {}", file.display(), r.eta, r.replica, r.status.describe());
        if let Some(w) = &r.warning {
            let _ = writeln!(out, "  warning: {w}");
        }
    }
    if sweep {
        let rows = summarize(&results);
        let file = write_file(&dir.join("sweep_summary.csv"), &render_summary(&cfg, &rows))?;
        let _ = writeln!(out, "summary: {}", file.display());
        for row in &rows {
            let _ = writeln!(
                out,
                "  eta={:.6e} diverged={}/{} divergence_step={} final_f={:.6e}",
                row.eta,
                row.diverged,
                row.replicas,
                row.divergence_step.map_or("-".into(), |k| k.to_string()),
                row.final_f.mean
            );
        }
    }
    Ok(exit_code_for(&results))
}

/// Aborted runs make the process fail with the numerical-abort code; divergences do not.
pub fn exit_code_for(results: &[ComboResult]) -> i32 {
    if results.iter().any(|r| matches!(r.status, Status::Aborted { .. })) {
        exit::NUMERICAL_ABORT
    } else {
        exit::OK
    }
}

fn cmd_check(suite: Suite, seed: u64, report: Option<PathBuf>, out: &mut dyn Write) -> Result<i32, HarnessError> {
    let _ = writeln!(out, "check suite {suite:?}, seed {seed}");
    let reports = run_suite(suite, seed, |r| {
        let _ = writeln!(out, "{}", r.summary_line());
        for note in &r.notes {
            let _ = writeln!(out, "    {note}");
        }
        for c in r.checks.iter().filter(|c| !c.pass).take(5) {
            let _ = writeln!(out, "    failed: {} k={} lhs={:e} rhs={:e} slack={:e}", c.name, c.k, c.lhs, c.rhs, c.slack);
        }
    });
    let path = report.unwrap_or_else(|| {
        output_dir_with_root(Path::new("check_report.jsonl"), std::env::var_os(crate::OUTPUT_ROOT_ENV).map(PathBuf::from))
    });
    write_file(&path, &render_report(&reports))?;
    let failed: usize = reports.iter().map(|r| r.failures()).sum();
    let _ = writeln!(out, "report: {} ({failed} failing checks)", path.display());
    Ok(if reports.iter().all(|r| r.passed()) { exit::OK } else { exit::CHECK_FAILED })
}

fn cmd_datagen(path: &Path, out: &mut dyn Write) -> Result<i32, HarnessError> {
    let cfg = ExperimentConfig::load(path)?;
    let Experiment::LogisticRegression { d, n, theta_true, data } = &cfg.experiment else {
        return Err(HarnessError::Usage(format!(
            "{}: datagen needs experiment.kind = \"logistic_regression\"",
            path.display()
        )));
    };
    if data.is_some() {
        return Err(HarnessError::Usage(format!(
            "{}: experiment.data points at an existing dataset; remove it to generate one",
            path.display()
        )));
    }
    let dataset = Dataset::generate(cfg.run.seed, *d, *n, theta_true.as_deref())?;
    let dir = output_dir(&cfg);
    let csv = write_file(&dir.join("dataset.csv"), &render_dataset(&cfg, &dataset))?;
    let meta = serde_json::to_string_pretty(&dataset_metadata(&cfg, &dataset)).expect("metadata serializes") + "\n";
    let json = write_file(&dir.join("dataset.json"), &meta)?;
    let _ = writeln!(out, "{}\n{}", csv.display(), json.display());
    Ok(exit::OK)
}
