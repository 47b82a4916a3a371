//! Experiment driver: configuration, the five experiments and their reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod config;
pub mod error;
pub mod experiments;
pub mod report;
pub mod verify;

use std::fs;

use log::{error, info};

use crate::config::RunConfig;
use crate::error::Result;
use crate::experiments::Context;
use crate::report::Report;

/// Runs one experiment and writes its report into `cfg.out`. On failure the
/// rows computed so far are still written before the error is returned.
pub fn run(cfg: &RunConfig) -> Result<Report> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.workers {
        builder = builder.num_threads(n);
    }
    let pool = builder.build()?;
    fs::create_dir_all(&cfg.out)?;
    let ctx = Context::with_cache(&cfg.out.join("cache"));
    let mut report = Report::new(experiments::header(cfg.experiment));
    info!("running {} into {}", cfg.experiment.name(), cfg.out.display());
    let outcome = pool.install(|| experiments::run(cfg, &ctx, &mut report));
    if let Err(e) = &outcome {
        error!("{} failed: {e}", cfg.experiment.name());
        report.note(format!("run failed: {e}"));
    }
    report.write(&cfg.out)?;
    fs::write(cfg.out.join("config.toml"), cfg.to_toml()?)?;
    outcome.map(|()| report)
}
