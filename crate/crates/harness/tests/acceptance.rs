//! Acceptance criteria 1–12 at full size, one pass/fail line per criterion.
//!
//! Runs without the libtest harness so criteria execute sequentially and their
//! runtime budgets are measured without competing test threads. Set
//! `FBGVI_ACCEPTANCE_SUITE=fast` for the reduced suite.

use fbgvi_harness::checks::{render_report, run_suite, Suite, DEFAULT_CHECK_SEED};

fn main() {
    // `cargo test -- --list` and filtered runs expect libtest-style output; this target has one test
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    if let Some(filter) = args.iter().find(|a| !a.starts_with('-')) {
        if !"acceptance".contains(filter.as_str()) {
            println!("acceptance suite skipped by filter `{filter}`");
            return;
        }
    }
    let suite = match std::env::var("FBGVI_ACCEPTANCE_SUITE").as_deref() {
        Ok("fast") => Suite::Fast,
        _ => Suite::Full,
    };
    println!("acceptance suite ({suite:?}), seed {DEFAULT_CHECK_SEED}");
    let reports = run_suite(suite, DEFAULT_CHECK_SEED, |r| {
        println!("{}", r.summary_line());
        for note in &r.notes {
            println!("    {note}");
        }
        for c in r.checks.iter().filter(|c| !c.pass).take(10) {
            println!(
                "    failed: {} instance={:?} k={} lhs={:e} rhs={:e} slack={:e}",
                c.name, c.instance, c.k, c.lhs, c.rhs, c.slack
            );
        }
    });
    if let Ok(path) = std::env::var("FBGVI_ACCEPTANCE_REPORT") {
        std::fs::write(&path, render_report(&reports)).expect("report path is writable");
    }
    let failed: Vec<u8> = reports.iter().filter(|r| !r.passed()).map(|r| r.id).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", reports.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
