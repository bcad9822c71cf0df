//! Experiment runner: data, virtual residuals, training of every method,
//! evaluation and reports.
//!
//! A run repeats the whole pipeline once per seed. Within a seed all methods
//! share data, splits, architecture, initialization seed and training
//! settings; only the loss (and, for the separate formulation, the residual
//! cache) differs.

mod config;
mod report;
mod run;

use std::time::Instant;

use rayon::prelude::*;

pub use config::{default_lambda, simulation_train_config, ExperimentConfig, Task};
pub use report::{render_summary, report_emit, Aggregate, RunKind, RunReport, Stat};
pub use run::{
    evaluate, predicted_errors, residuals_for_seed, run_seed, seed_data, task_architecture,
    train_method, CacheSummary, MethodRun, SeedData, SeedRun,
};

use crate::error::Result;
use crate::losses::LossVariant;

/// Run every configured method over `repeats` seeds and, when `output_dir`
/// is set, write the report files there.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    run_kind(cfg, RunKind::Experiment)
}

/// Separate formulation with and without virtual residuals, side by side.
///
/// Methods default to `separate_laplace` and `separate_no_vr`; if the
/// configured list already contains `separate_no_vr` it is used as given.
pub fn ablation_no_vr(cfg: &ExperimentConfig) -> Result<RunReport> {
    let mut cfg = cfg.clone();
    if !cfg.methods.contains(&LossVariant::SeparateNoVr) {
        cfg.methods = vec![LossVariant::SeparateLaplace, LossVariant::SeparateNoVr];
    }
    let mut report = run_kind(&cfg, RunKind::Ablation)?;
    let mpe = |v| {
        report
            .aggregate(v)
            .and_then(|a| a.mean_predicted_error)
            .map(|s| s.mean)
    };
    if let (Some(vr), Some(no_vr)) = (
        mpe(LossVariant::SeparateLaplace),
        mpe(LossVariant::SeparateNoVr),
    ) {
        report.notes.push(format!(
            "mean predicted error on test: separate_laplace {vr:.4}, separate_no_vr {no_vr:.4}"
        ));
    }
    if let Some(dir) = &cfg.output_dir {
        report_emit(&report, dir)?;
    }
    Ok(report)
}

fn run_kind(cfg: &ExperimentConfig, kind: RunKind) -> Result<RunReport> {
    cfg.validate()?;
    let started = Instant::now();
    let seeds: Vec<u64> = (0..cfg.repeats).map(|k| cfg.repeat_seed(k)).collect();
    let runs = seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, seed))
        .collect::<Result<Vec<_>>>()?;

    let aggregates = cfg
        .methods
        .iter()
        .map(|&m| Aggregate::from_runs(m, &runs))
        .collect();
    let mut notes = vec![format!(
        "optimizer, learning rate, epochs, batch size and initialization are implementation \
         choices: {:?}, lr {}, {} epochs, batch {}, patience {}",
        cfg.train.optimizer,
        cfg.train.learning_rate,
        cfg.train.epochs,
        cfg.train.batch_size,
        cfg.train.patience
    )];
    if !cfg.methods.iter().any(|m| m.uses_lambda()) {
        notes.push(format!(
            "lambda = {} is ignored: no configured method uses it",
            cfg.lambda
        ));
    }
    notes.push(format!("clamp constant c = {}", cfg.clamp_c));
    for run in &runs {
        for m in &run.methods {
            if let Some(err) = &m.error {
                notes.push(format!(
                    "DIVERGED: {} at seed {} excluded from aggregates: {err}",
                    m.method, run.seed
                ));
            }
            if let (Some(train), Some(test)) = (m.train_mean_residual, m.test.as_ref()) {
                if train >= test.mean_residual {
                    notes.push(format!(
                        "no overfitting gap for {} at seed {}: train residual {train:.4} >= test {:.4}",
                        m.method, run.seed, test.mean_residual
                    ));
                }
            }
        }
        if let Some(c) = run.cache.as_ref().filter(|c| c.stale_override) {
            notes.push(format!(
                "seed {} used a stale residual cache ({}) by explicit override",
                run.seed, c.fingerprint
            ));
        }
    }

    let report = RunReport {
        kind,
        task: cfg.task.label(),
        config: cfg.clone(),
        train_fingerprint: cfg.train.fingerprint(),
        seeds: runs,
        aggregates,
        notes,
        total_seconds: started.elapsed().as_secs_f64(),
    };
    if kind == RunKind::Experiment {
        if let Some(dir) = &cfg.output_dir {
            report_emit(&report, dir)?;
        }
    }
    Ok(report)
}
