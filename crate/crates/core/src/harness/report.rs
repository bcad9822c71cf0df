use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::SeedRun;
use crate::error::{Error, Result};
use crate::losses::LossVariant;
use crate::metrics;

/// Mean and sample standard deviation over repeats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Zero when only one value is present.
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: LossVariant,
    pub runs_ok: usize,
    pub runs_failed: usize,
    pub rmse: Option<Stat>,
    pub ermse: Option<Stat>,
    pub pir_half: Option<Stat>,
    pub mean_predicted_error: Option<Stat>,
    pub train_residual: Option<Stat>,
    pub test_residual: Option<Stat>,
    pub pir_curve: Option<Vec<(f64, Stat)>>,
}

impl Aggregate {
    /// Recompute from per-seed entries; diverged runs are left out.
    pub fn from_runs(method: LossVariant, seeds: &[SeedRun]) -> Self {
        let runs: Vec<_> = seeds.iter().filter_map(|s| s.method(method)).collect();
        let ok: Vec<_> = runs.iter().filter_map(|r| Some((r.test.as_ref()?, r))).collect();
        let collect = |f: &dyn Fn(&metrics::MetricsReport) -> Option<f64>| -> Option<Stat> {
            let v: Vec<f64> = ok.iter().filter_map(|(t, _)| f(t)).collect();
            Stat::of(&v)
        };
        let pir_curve = ok.first().and_then(|(t, _)| t.pir_curve.as_ref()).map(|grid| {
            grid.iter()
                .filter_map(|&(eta, _)| Some((eta, collect(&|t| t.pir_at(eta))?)))
                .collect()
        });
        let train: Vec<f64> = ok.iter().filter_map(|(_, r)| r.train_mean_residual).collect();
        Aggregate {
            method,
            runs_ok: ok.len(),
            runs_failed: runs.len() - ok.len(),
            rmse: collect(&|t| Some(t.rmse)),
            ermse: collect(&|t| t.ermse),
            pir_half: collect(&|t| t.pir_at(0.5)),
            mean_predicted_error: collect(&|t| t.mean_predicted_error),
            train_residual: Stat::of(&train),
            test_residual: collect(&|t| Some(t.mean_residual)),
            pir_curve,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Experiment,
    Ablation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub kind: RunKind,
    pub task: String,
    /// Full configuration, training defaults included.
    pub config: ExperimentConfig,
    pub train_fingerprint: String,
    pub seeds: Vec<SeedRun>,
    pub aggregates: Vec<Aggregate>,
    pub notes: Vec<String>,
    pub total_seconds: f64,
}

impl RunReport {
    pub fn aggregate(&self, method: LossVariant) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.method == method)
    }

    /// The report with raw pairs removed and timings zeroed, for comparing runs.
    pub fn without_timings(&self) -> RunReport {
        let mut out = self.stripped();
        out.total_seconds = 0.0;
        for s in &mut out.seeds {
            s.seconds = 0.0;
        }
        out
    }

    fn stripped(&self) -> RunReport {
        let mut out = self.clone();
        for s in &mut out.seeds {
            for m in &mut s.methods {
                if let Some(t) = &mut m.test {
                    t.pairs = None;
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.stripped()).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            row: e.line(),
            column: e.column().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn fmt_stat(s: Option<Stat>) -> String {
    match s {
        Some(s) if s.n > 1 => format!("{:.3} ± {:.3}", s.mean, s.std),
        Some(s) => format!("{:.3}", s.mean),
        None => "-".into(),
    }
}

/// Plain-text table with one row per (task, method).
pub fn render_summary(reports: &[RunReport]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<12} {:<18} {:>6} {:>16} {:>16} {:>16} {:>16}",
        "task", "method", "lambda", "target RMSE", "eRMSE", "PiR(0.5)", "mean exp(-w)"
    )
    .unwrap();
    for report in reports {
        for agg in &report.aggregates {
            let lambda = if agg.method.uses_lambda() {
                format!("{}", report.config.lambda)
            } else {
                "-".into()
            };
            writeln!(
                out,
                "{:<12} {:<18} {:>6} {:>16} {:>16} {:>16} {:>16}",
                report.task,
                agg.method.name(),
                lambda,
                fmt_stat(agg.rmse),
                fmt_stat(agg.ermse),
                fmt_stat(agg.pir_half),
                fmt_stat(agg.mean_predicted_error),
            )
            .unwrap();
        }
    }
    out
}

/// Write `report.json`, `summary.txt`, `pir_curves.csv` and one pair CSV per
/// (method, seed) under `dir/pairs/`. Returns the written paths.
pub fn report_emit(report: &RunReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let pairs_dir = dir.join("pairs");
    std::fs::create_dir_all(&pairs_dir).map_err(|e| Error::io(&pairs_dir, e))?;
    let mut written = Vec::new();
    let mut write = |path: PathBuf, text: String| -> Result<()> {
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };

    write(dir.join("report.json"), report.to_json())?;
    write(dir.join("summary.txt"), render_summary(std::slice::from_ref(report)))?;

    let mut curves = String::from("method,eta,mean,std\n");
    for agg in &report.aggregates {
        for (eta, s) in agg.pir_curve.iter().flatten() {
            writeln!(curves, "{},{eta},{:?},{:?}", agg.method, s.mean, s.std).unwrap();
        }
    }
    write(dir.join("pir_curves.csv"), curves)?;

    for seed in &report.seeds {
        for m in &seed.methods {
            if let Some(pairs) = m.test.as_ref().and_then(|t| t.pairs.as_ref()) {
                let name = format!("{}_seed{}.csv", m.method, seed.seed);
                write(pairs_dir.join(name), metrics::pairs_to_csv(pairs))?;
            }
        }
    }
    Ok(written)
}
