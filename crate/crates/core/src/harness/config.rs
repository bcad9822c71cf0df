use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{LossConfig, LossVariant};
use crate::netcore::{Optimizer, TrainConfig};

/// Where the data of an experiment comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    /// The step-function simulation. Train, validation and test samples are
    /// drawn from one pool per seed; `n_val = 0` disables early stopping.
    Synthetic {
        delta: f64,
        n_train: usize,
        n_val: usize,
        n_test: usize,
    },
    /// A headed CSV file split at random per seed.
    Csv {
        path: PathBuf,
        inputs: Vec<String>,
        target: String,
        normalize: bool,
        fractions: (f64, f64, f64),
    },
}

impl Task {
    pub fn synthetic(delta: f64) -> Self {
        Task::Synthetic {
            delta,
            n_train: 128,
            n_val: 0,
            n_test: 500,
        }
    }

    /// Short label for tables, e.g. `delta=5` or the CSV file stem.
    pub fn label(&self) -> String {
        match self {
            Task::Synthetic { delta, .. } => format!("delta={delta}"),
            Task::Csv { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "csv".into()),
        }
    }
}

/// Uncertainty weight used for the simulation at a given step height:
/// 0.02 for a unit step, 0.1 otherwise.
pub fn default_lambda(delta: f64) -> f64 {
    if delta == 1.0 {
        0.02
    } else {
        0.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: Task,
    pub methods: Vec<LossVariant>,
    /// Weight of the uncertainty term for the separate variants.
    pub lambda: f64,
    pub clamp_c: f64,
    /// Fold count for virtual residuals.
    pub m: usize,
    /// Training settings; `train.seed` is replaced per repeat.
    pub train: TrainConfig,
    /// Fold-model settings; `None` reuses `train`.
    pub fold_train: Option<TrainConfig>,
    pub seed: u64,
    pub repeats: usize,
    pub output_dir: Option<PathBuf>,
    /// Directory holding one residual cache file per seed.
    pub cache_dir: Option<PathBuf>,
    pub allow_stale_cache: bool,
}

/// Training defaults of the simulation runs.
pub fn simulation_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 1000,
        batch_size: 32,
        learning_rate: 3e-3,
        seed: 0,
        optimizer: Optimizer::default(),
        patience: 10,
    }
}

impl ExperimentConfig {
    /// Joint Laplace vs. separate formulation on the simulation, plus the
    /// plain L1 baseline.
    pub fn synthetic(delta: f64) -> Self {
        ExperimentConfig {
            task: Task::synthetic(delta),
            methods: vec![
                LossVariant::L1Only,
                LossVariant::JointLaplace,
                LossVariant::SeparateLaplace,
            ],
            lambda: default_lambda(delta),
            clamp_c: 1.0,
            m: 10,
            train: simulation_train_config(),
            fold_train: None,
            seed: 0,
            repeats: 1,
            output_dir: None,
            cache_dir: None,
            allow_stale_cache: false,
        }
    }

    pub fn csv(path: impl Into<PathBuf>, inputs: Vec<String>, target: impl Into<String>) -> Self {
        ExperimentConfig {
            task: Task::Csv {
                path: path.into(),
                inputs,
                target: target.into(),
                normalize: true,
                fractions: (0.8, 0.1, 0.1),
            },
            lambda: 0.02,
            train: TrainConfig {
                epochs: 200,
                ..TrainConfig::default()
            },
            ..Self::synthetic(0.0)
        }
    }

    pub fn loss_config(&self, variant: LossVariant) -> LossConfig {
        LossConfig {
            variant,
            lambda: self.lambda,
            clamp_c: self.clamp_c,
        }
    }

    pub fn fold_train_config(&self) -> TrainConfig {
        self.fold_train.unwrap_or(self.train)
    }

    /// Seed of repeat `k`.
    pub fn repeat_seed(&self, k: usize) -> u64 {
        self.seed.wrapping_add(k as u64)
    }

    pub fn needs_residuals(&self) -> bool {
        self.methods.iter().any(|v| v.needs_residual_cache())
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.needs_residuals() && self.m < 2 {
            return Err(Error::Config(format!("fold count must be >= 2, got {}", self.m)));
        }
        self.loss_config(LossVariant::SeparateLaplace).validate()?;
        self.train.validate()?;
        self.fold_train_config().validate()?;
        match &self.task {
            Task::Synthetic {
                delta,
                n_train,
                n_test,
                ..
            } => {
                if !delta.is_finite() {
                    return Err(Error::Config(format!("delta must be finite, got {delta}")));
                }
                if *n_train == 0 || *n_test == 0 {
                    return Err(Error::Config("n_train and n_test must be positive".into()));
                }
                if self.needs_residuals() && self.m > *n_train {
                    return Err(Error::Config(format!(
                        "fold count {} exceeds the {n_train} training samples",
                        self.m
                    )));
                }
            }
            Task::Csv { inputs, .. } => {
                if inputs.is_empty() {
                    return Err(Error::Config("csv task needs input columns".into()));
                }
            }
        }
        Ok(())
    }

    /// Apply one `key = value` setting. Keys are the ones accepted in
    /// config files and as CLI flags.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
        }
        fn flag(key: &str, value: &str) -> Result<bool> {
            match value {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{value}`"))),
            }
        }
        let value = value.trim();
        match key {
            "task" => match value {
                "synthetic" => {
                    if !matches!(self.task, Task::Synthetic { .. }) {
                        self.task = Task::synthetic(0.0);
                    }
                }
                "csv" => {
                    if !matches!(self.task, Task::Csv { .. }) {
                        self.task = Task::Csv {
                            path: PathBuf::new(),
                            inputs: Vec::new(),
                            target: String::new(),
                            normalize: true,
                            fractions: (0.8, 0.1, 0.1),
                        };
                    }
                }
                other => return Err(Error::Config(format!("unknown task `{other}`"))),
            },
            "delta" | "n_train" | "n_val" | "n_test" => {
                let Task::Synthetic {
                    delta,
                    n_train,
                    n_val,
                    n_test,
                } = &mut self.task
                else {
                    return Err(Error::Config(format!("`{key}` applies to the synthetic task")));
                };
                match key {
                    "delta" => *delta = num(key, value)?,
                    "n_train" => *n_train = num(key, value)?,
                    "n_val" => *n_val = num(key, value)?,
                    _ => *n_test = num(key, value)?,
                }
            }
            "csv_path" | "input_cols" | "target_col" | "normalize" | "split" => {
                let Task::Csv {
                    path,
                    inputs,
                    target,
                    normalize,
                    fractions,
                } = &mut self.task
                else {
                    return Err(Error::Config(format!("`{key}` applies to the csv task")));
                };
                match key {
                    "csv_path" => *path = PathBuf::from(value),
                    "input_cols" => {
                        *inputs = value.split(',').map(|s| s.trim().to_owned()).collect()
                    }
                    "target_col" => *target = value.to_owned(),
                    "normalize" => *normalize = flag(key, value)?,
                    _ => {
                        let parts: Vec<f64> = value
                            .split(',')
                            .map(|s| num(key, s.trim()))
                            .collect::<Result<_>>()?;
                        let [a, b, c] = parts[..] else {
                            return Err(Error::Config("`split` needs three fractions".into()));
                        };
                        *fractions = (a, b, c);
                    }
                }
            }
            "methods" => {
                self.methods = value
                    .split(',')
                    .map(|s| s.trim().parse())
                    .collect::<Result<_>>()?
            }
            "lambda" => self.lambda = num(key, value)?,
            "clamp_c" => self.clamp_c = num(key, value)?,
            "m" | "folds" => self.m = num(key, value)?,
            "epochs" => self.train.epochs = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "learning_rate" => self.train.learning_rate = num(key, value)?,
            "patience" => self.train.patience = num(key, value)?,
            "optimizer" => {
                self.train.optimizer = match value {
                    "sgd" => Optimizer::Sgd,
                    "adam" => match self.train.optimizer {
                        a @ Optimizer::Adam { .. } => a,
                        Optimizer::Sgd => Optimizer::default(),
                    },
                    other => return Err(Error::Config(format!("unknown optimizer `{other}`"))),
                }
            }
            "beta1" | "beta2" | "eps" => {
                let Optimizer::Adam { beta1, beta2, eps } = &mut self.train.optimizer else {
                    return Err(Error::Config(format!("`{key}` applies to adam")));
                };
                let v = num(key, value)?;
                match key {
                    "beta1" => *beta1 = v,
                    "beta2" => *beta2 = v,
                    _ => *eps = v,
                }
            }
            "fold_epochs" => {
                let mut cfg = self.fold_train_config();
                cfg.epochs = num(key, value)?;
                self.fold_train = Some(cfg);
            }
            "seed" => self.seed = num(key, value)?,
            "repeats" => self.repeats = num(key, value)?,
            "output_dir" => self.output_dir = Some(PathBuf::from(value)),
            "cache_dir" => self.cache_dir = Some(PathBuf::from(value)),
            "allow_stale_cache" => self.allow_stale_cache = flag(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Apply a flat `key = value` document. `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", k + 1))
            })?;
            self.apply(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }
}
