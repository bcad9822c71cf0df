use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Task};
use crate::data::{self, Dataset, SplitTag, SyntheticConfig};
use crate::error::{Error, Result};
use crate::folds::{self, ResidualCache};
use crate::losses::LossVariant;
use crate::metrics::{self, MetricsReport};
use crate::netcore::{self, Architecture, MlpModel, TrainConfig};

/// Train, validation and test sets of one repeat.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub train: Dataset,
    pub validation: Option<Dataset>,
    pub test: Dataset,
}

/// Build the datasets of the repeat with seed `seed`.
///
/// Synthetic tasks draw one pool of `n_train + n_val + n_test` samples and
/// cut it in that order; CSV tasks are split at random with the seed.
pub fn seed_data(task: &Task, seed: u64) -> Result<SeedData> {
    match task {
        Task::Synthetic {
            delta,
            n_train,
            n_val,
            n_test,
        } => {
            let total = n_train + n_val + n_test;
            let pool = data::generate_synthetic(&SyntheticConfig::new(total, *delta, seed))?;
            let range = |a: usize, b: usize| (a..b).collect::<Vec<_>>();
            let train = pool.subset(&range(0, *n_train)).with_split_tag(SplitTag::Train);
            let validation = (*n_val > 0).then(|| {
                pool.subset(&range(*n_train, n_train + n_val))
                    .with_split_tag(SplitTag::Validation)
            });
            let test = pool
                .subset(&range(n_train + n_val, total))
                .with_split_tag(SplitTag::Test);
            Ok(SeedData {
                train,
                validation,
                test,
            })
        }
        Task::Csv {
            path,
            inputs,
            target,
            normalize,
            fractions,
        } => {
            let cols: Vec<&str> = inputs.iter().map(String::as_str).collect();
            let full = data::load_csv(path, &cols, target, *normalize)?;
            let (train, validation, test) = data::split(&full, *fractions, seed)?;
            Ok(SeedData {
                train,
                validation: Some(validation),
                test,
            })
        }
    }
}

/// Two-head network body used for every task.
pub fn task_architecture(input_dim: usize) -> Architecture {
    Architecture::simulation(input_dim, 2)
}

/// How the residual cache of a seed was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheSummary {
    pub fingerprint: String,
    /// Mean virtual residual in original target units.
    pub mean_residual: f64,
    pub loaded_from: Option<PathBuf>,
    pub stale_override: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRun {
    pub method: LossVariant,
    /// Test-split metrics; absent when training diverged.
    pub test: Option<MetricsReport>,
    /// Mean absolute residual on the training split.
    pub train_mean_residual: Option<f64>,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub train_fingerprint: String,
    pub cache: Option<CacheSummary>,
    pub methods: Vec<MethodRun>,
    /// Wall-clock seconds; the only non-deterministic field of a run.
    pub seconds: f64,
}

impl SeedRun {
    pub fn method(&self, v: LossVariant) -> Option<&MethodRun> {
        self.methods.iter().find(|m| m.method == v)
    }
}

/// Signal predictions and predicted errors of a model under `variant`'s head
/// convention, in original target units. The error vector is empty for
/// variants without an uncertainty head.
pub fn predicted_errors(
    model: &MlpModel,
    data: &Dataset,
    cfg: &ExperimentConfig,
    variant: LossVariant,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = netcore::predict(model, data)?;
    let loss = cfg.loss_config(variant);
    let mut e: Vec<f64> = match p.w {
        Some(w) if variant.estimates_uncertainty() => w.iter().map(|&w| loss.predicted_error(w)).collect(),
        _ => Vec::new(),
    };
    let mut y = p.y;
    if let Some(norm) = data.normalization() {
        y.iter_mut().for_each(|v| *v = norm.target(*v));
        e.iter_mut().for_each(|v| *v = norm.error(*v));
    }
    Ok((y, e))
}

/// Targets in original units.
fn original_targets(data: &Dataset) -> Vec<f64> {
    match data.normalization() {
        Some(norm) => data.targets().iter().map(|&t| norm.target(t)).collect(),
        None => data.targets().to_vec(),
    }
}

/// Test metrics of a trained model, pairs included, in original target units.
pub fn evaluate(
    model: &MlpModel,
    data: &Dataset,
    cfg: &ExperimentConfig,
    variant: LossVariant,
) -> Result<MetricsReport> {
    let (y, e) = predicted_errors(model, data, cfg, variant)?;
    let targets = original_targets(data);
    if variant.estimates_uncertainty() {
        MetricsReport::with_uncertainty(&y, &targets, &e, &metrics::default_eta_grid())
    } else {
        MetricsReport::signal_only(&y, &targets)
    }
}

fn train_units(data: &Dataset, r: f64) -> f64 {
    data.normalization().map_or(r, |n| n.error(r))
}

/// Mean absolute training residual in original target units.
fn train_residual(model: &MlpModel, data: &Dataset) -> Result<f64> {
    Ok(train_units(data, netcore::mean_abs_error(model, data)?))
}

fn cache_path(cfg: &ExperimentConfig, seed: u64) -> Option<PathBuf> {
    cfg.cache_dir
        .as_ref()
        .map(|d| d.join(format!("residuals_seed{seed}.txt")))
}

/// Residual cache for one seed: loaded from `cache_dir` when a file is
/// there, computed (and saved, if `cache_dir` is set) otherwise.
pub fn residuals_for_seed(
    cfg: &ExperimentConfig,
    data: &SeedData,
    seed: u64,
) -> Result<(ResidualCache, CacheSummary)> {
    let plan = folds::make_fold_plan(data.train.len(), cfg.m, seed)?;
    let fold_cfg = TrainConfig {
        seed,
        ..cfg.fold_train_config()
    };
    let arch = task_architecture(data.train.input_dim());
    let expected = folds::cache_fingerprint(&data.train, &plan, &fold_cfg, &arch);
    let path = cache_path(cfg, seed);

    if let Some(path) = path.as_ref().filter(|p| p.exists()) {
        let cache = folds::load_cache(path)?;
        let stale = match cache.verify_fingerprint(&expected) {
            Ok(()) => false,
            Err(Error::StaleCache { .. }) if cfg.allow_stale_cache => true,
            Err(e) => return Err(e),
        };
        let summary = CacheSummary {
            fingerprint: cache.fingerprint.clone(),
            mean_residual: train_units(&data.train, cache.mean_residual()),
            loaded_from: Some(path.clone()),
            stale_override: stale,
        };
        return Ok((cache, summary));
    }

    let cache = folds::compute_virtual_residuals(
        &data.train,
        &plan,
        &fold_cfg,
        &arch,
        data.validation.as_ref(),
    )?;
    if let Some(path) = &path {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        folds::save_cache(&cache, path)?;
    }
    let summary = CacheSummary {
        fingerprint: cache.fingerprint.clone(),
        mean_residual: train_units(&data.train, cache.mean_residual()),
        loaded_from: None,
        stale_override: false,
    };
    Ok((cache, summary))
}

/// Train `variant` on a seed's data and keep the model.
pub fn train_method(
    cfg: &ExperimentConfig,
    data: &SeedData,
    seed: u64,
    variant: LossVariant,
    residuals: Option<&ResidualCache>,
) -> Result<netcore::TrainedModel> {
    let arch = task_architecture(data.train.input_dim()).with_heads(variant.heads());
    let model = arch.build(seed)?;
    let train_cfg = TrainConfig { seed, ..cfg.train };
    let residuals = residuals.filter(|_| variant.needs_residual_cache());
    netcore::train(
        model,
        &data.train,
        &train_cfg,
        &cfg.loss_config(variant),
        residuals,
        data.validation.as_ref(),
    )
}

/// Everything for one repeat: data, residuals if any method needs them,
/// then every method on identical data and initialization seed.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let started = Instant::now();
    let data = seed_data(&cfg.task, seed)?;
    let cached = if cfg.needs_residuals() {
        Some(residuals_for_seed(cfg, &data, seed)?)
    } else {
        None
    };
    let mut methods = Vec::with_capacity(cfg.methods.len());
    for &variant in &cfg.methods {
        let residuals = cached.as_ref().map(|(c, _)| c);
        let run = match train_method(cfg, &data, seed, variant, residuals) {
            Ok(trained) => {
                let test = evaluate(&trained.model, &data.test, cfg, variant)?;
                let train_res = train_residual(&trained.model, &data.train)?;
                MethodRun {
                    method: variant,
                    test: Some(test),
                    train_mean_residual: Some(train_res),
                    epochs_run: trained.log.epochs.len(),
                    best_epoch: trained.log.best_epoch,
                    error: None,
                }
            }
            Err(e @ Error::Divergence { .. }) => MethodRun {
                method: variant,
                test: None,
                train_mean_residual: None,
                epochs_run: 0,
                best_epoch: None,
                error: Some(e.to_string()),
            },
            Err(e) => return Err(e),
        };
        methods.push(run);
    }
    Ok(SeedRun {
        seed,
        n_train: data.train.len(),
        n_val: data.validation.as_ref().map_or(0, Dataset::len),
        n_test: data.test.len(),
        train_fingerprint: TrainConfig { seed, ..cfg.train }.fingerprint(),
        cache: cached.map(|(_, s)| s),
        methods,
        seconds: started.elapsed().as_secs_f64(),
    })
}
