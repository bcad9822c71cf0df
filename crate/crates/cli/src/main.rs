use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aleatoric::harness::{self, ExperimentConfig, RunReport};
use aleatoric::losses::LossVariant;
use aleatoric::netcore::MlpModel;
use aleatoric::{metrics, Error, Result};
use clap::{Args, Parser, Subcommand};

/// Environment variable naming the default output root.
const OUT_ENV: &str = "ALEATORIC_OUT";

#[derive(Parser, Debug)]
#[command(name = "aleatoric", version, about = "Aleatoric uncertainty experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat `key = value` settings file, applied before any flag.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Output root for runs, caches and checkpoints.
    #[arg(long, global = true, env = OUT_ENV, default_value = "runs")]
    out: PathBuf,

    /// Extra `key=value` setting; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(flatten)]
    flags: ConfigFlags,
}

// One optional flag per config key. Values are parsed by the same code that
// reads config files, so both report errors identically.
macro_rules! config_flags {
    ($($field:ident => $help:literal),* $(,)?) => {
        #[derive(Args, Debug, Default)]
        struct ConfigFlags {
            $(
                #[arg(long, global = true, value_name = "VALUE", help = $help)]
                $field: Option<String>,
            )*
        }

        impl ConfigFlags {
            fn pairs(&self) -> Vec<(&'static str, &str)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        out.push((stringify!($field), v.as_str()));
                    }
                )*
                out
            }
        }
    };
}

config_flags! {
    task => "Task kind: synthetic or csv",
    delta => "Step height of the synthetic signal",
    n_train => "Synthetic training samples",
    n_val => "Synthetic validation samples (0 disables early stopping)",
    n_test => "Synthetic test samples",
    csv_path => "CSV file for the csv task",
    input_cols => "Comma-separated input columns",
    target_col => "Target column",
    normalize => "Standardize inputs (true/false)",
    split => "Train,validation,test fractions",
    methods => "Comma-separated methods",
    lambda => "Weight of the certainty term in the separate loss",
    clamp_c => "Clamp constant c of the certainty head",
    m => "Number of folds for virtual residuals",
    epochs => "Training epochs",
    batch_size => "Mini-batch size",
    learning_rate => "Learning rate",
    patience => "Early-stopping patience in epochs",
    optimizer => "adam or sgd",
    beta1 => "Adam beta1",
    beta2 => "Adam beta2",
    eps => "Adam epsilon",
    fold_epochs => "Epochs for fold models (defaults to epochs)",
    seed => "Base seed",
    repeats => "Number of seeds",
    output_dir => "Output directory (defaults to a folder under the output root)",
    cache_dir => "Residual cache directory",
    allow_stale_cache => "Accept a residual cache whose fingerprint does not match",
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the synthetic comparison for one or more step heights.
    Simulate {
        #[arg(long, value_delimiter = ',', default_value = "0,1,5")]
        deltas: Vec<f64>,
    },
    /// Run the configured task (synthetic or csv) once per seed.
    Run,
    /// Build or verify the virtual-residual cache of every seed.
    Folds,
    /// Train one method on the configured task and save a checkpoint.
    Train {
        #[arg(long, default_value = "separate_laplace")]
        method: LossVariant,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split of the configured seed.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Head convention; defaults to l1_only for one head, separate_laplace for two.
        #[arg(long)]
        method: Option<LossVariant>,
        /// Where to write the (r, e_hat) pairs.
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// Separate formulation with and without virtual residuals.
    Ablate,
    /// Print a summary table of finished runs.
    Report {
        /// Report files or directories searched for `report.json`; defaults to the output root.
        inputs: Vec<PathBuf>,
        /// Also write the table to this file.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

impl Cli {
    fn config(&self, base: ExperimentConfig) -> Result<ExperimentConfig> {
        let mut cfg = base;
        if let Some(path) = &self.config {
            cfg.apply_file(path).map_err(|e| match e {
                Error::Io { path, source } => {
                    Error::Config(format!("config file {}: {source}", path.display()))
                }
                other => other,
            })?;
        }
        for (k, v) in self.flags.pairs() {
            cfg.apply(k, v)?;
        }
        for item in &self.set {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{item}`")))?;
            cfg.apply(k.trim(), v)?;
        }
        Ok(cfg)
    }

    fn config_sets(&self, key: &str) -> Result<bool> {
        let in_file = match &self.config {
            Some(path) => std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
                .lines()
                .filter_map(|l| l.split_once('='))
                .any(|(k, _)| k.trim() == key),
            None => false,
        };
        let in_flags = self.flags.pairs().iter().any(|(k, _)| *k == key);
        let in_set = self.set.iter().any(|s| s.split('=').next().map(str::trim) == Some(key));
        Ok(in_file || in_flags || in_set)
    }

    /// Output and cache directories default to `out/<name>` and `out/<name>/cache`.
    fn place(&self, cfg: &mut ExperimentConfig, name: &str) {
        let dir = cfg.output_dir.clone().unwrap_or_else(|| self.out.join(name));
        if cfg.cache_dir.is_none() {
            cfg.cache_dir = Some(dir.join("cache"));
        }
        cfg.output_dir = Some(dir);
    }
}

fn default_base() -> ExperimentConfig {
    ExperimentConfig::synthetic(0.0)
}

fn print_report(report: &RunReport) {
    print!("{}", harness::render_summary(std::slice::from_ref(report)));
    for note in &report.notes {
        println!("note: {note}");
    }
}

fn check_divergence(reports: &[RunReport]) -> Result<()> {
    for r in reports {
        for s in &r.seeds {
            for m in &s.methods {
                if let Some(e) = &m.error {
                    return Err(Error::Numeric(format!(
                        "{} diverged at seed {}: {e}",
                        m.method, s.seed
                    )));
                }
            }
        }
    }
    Ok(())
}

fn simulate(cli: &Cli, deltas: &[f64]) -> Result<()> {
    let lambda_fixed = cli.config_sets("lambda")?;
    let root = cli.out.join("simulate");
    let mut reports = Vec::new();
    for &delta in deltas {
        let mut cfg = cli.config(ExperimentConfig::synthetic(delta))?;
        cfg.apply("delta", &delta.to_string())?;
        if !lambda_fixed {
            cfg.lambda = harness::default_lambda(delta);
        }
        let base = cfg.output_dir.clone().unwrap_or_else(|| root.clone());
        let dir = base.join(format!("delta_{delta}"));
        cfg.output_dir = Some(dir.clone());
        if cfg.cache_dir.is_none() {
            cfg.cache_dir = Some(dir.join("cache"));
        }
        let report = harness::run_experiment(&cfg)?;
        for note in &report.notes {
            eprintln!("note [{}]: {note}", report.task);
        }
        reports.push(report);
    }
    let table = harness::render_summary(&reports);
    std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let path = root.join("summary.txt");
    std::fs::write(&path, &table).map_err(|e| Error::io(&path, e))?;
    print!("{table}");
    check_divergence(&reports)
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = cli.config(default_base())?;
    cli.place(&mut cfg, "run");
    let report = harness::run_experiment(&cfg)?;
    print_report(&report);
    check_divergence(std::slice::from_ref(&report))
}

fn ablate(cli: &Cli) -> Result<()> {
    let mut cfg = cli.config(ExperimentConfig::synthetic(1.0))?;
    cli.place(&mut cfg, "ablate");
    let report = harness::ablation_no_vr(&cfg)?;
    print_report(&report);
    check_divergence(std::slice::from_ref(&report))
}

fn folds(cli: &Cli) -> Result<()> {
    let mut cfg = cli.config(default_base())?;
    cli.place(&mut cfg, "folds");
    cfg.validate()?;
    for k in 0..cfg.repeats {
        let seed = cfg.repeat_seed(k);
        let data = harness::seed_data(&cfg.task, seed)?;
        let (cache, summary) = harness::residuals_for_seed(&cfg, &data, seed)?;
        let source = match &summary.loaded_from {
            Some(p) => format!("loaded {}", p.display()),
            None => "computed".to_owned(),
        };
        println!(
            "seed {seed}: {} residuals, mean {:.4}, fingerprint {} ({source})",
            cache.len(),
            summary.mean_residual,
            summary.fingerprint
        );
    }
    Ok(())
}

fn train(cli: &Cli, method: LossVariant, checkpoint: Option<&Path>) -> Result<()> {
    let mut cfg = cli.config(default_base())?;
    cfg.methods = vec![method];
    cli.place(&mut cfg, "train");
    cfg.validate()?;
    let seed = cfg.seed;
    let data = harness::seed_data(&cfg.task, seed)?;
    let cache = if method.needs_residual_cache() {
        Some(harness::residuals_for_seed(&cfg, &data, seed)?.0)
    } else {
        None
    };
    let trained = harness::train_method(&cfg, &data, seed, method, cache.as_ref())?;
    let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| {
        cfg.output_dir
            .clone()
            .unwrap_or_else(|| cli.out.join("train"))
            .join(format!("{method}_seed{seed}.ckpt"))
    });
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    trained.model.save(&path)?;
    let last = trained.log.epochs.last();
    println!(
        "{method}: {} epochs, final train loss {:.5}, checkpoint {}",
        trained.log.epochs.len(),
        last.map_or(f64::NAN, |e| e.train_loss),
        path.display()
    );
    Ok(())
}

fn eval(cli: &Cli, checkpoint: &Path, method: Option<LossVariant>, pairs: Option<&Path>) -> Result<()> {
    let cfg = cli.config(default_base())?;
    let model = MlpModel::load(checkpoint)?;
    let method = method.unwrap_or(if model.heads() == 1 {
        LossVariant::L1Only
    } else {
        LossVariant::SeparateLaplace
    });
    if model.heads() != method.heads() {
        return Err(Error::Config(format!(
            "checkpoint has {} output(s) but {method} needs {}",
            model.heads(),
            method.heads()
        )));
    }
    let data = harness::seed_data(&cfg.task, cfg.seed)?;
    let mut report = harness::evaluate(&model, &data.test, &cfg, method)?;
    if let Some(p) = report.pairs.take() {
        let path = pairs.map(Path::to_path_buf).unwrap_or_else(|| {
            cli.out
                .join("eval")
                .join(format!("pairs_{method}_seed{}.csv", cfg.seed))
        });
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(&path, metrics::pairs_to_csv(&p))
            .map_err(|e| Error::io(&path, e))?;
        eprintln!("pairs written to {}", path.display());
    }
    println!("{}", serde_json::to_string_pretty(&report).expect("metrics serialize"));
    Ok(())
}

fn collect_reports(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_file() {
        out.push(path.to_path_buf());
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for entry in entries {
        if entry.is_dir() {
            collect_reports(&entry, out)?;
        } else if entry.file_name().is_some_and(|n| n == "report.json") {
            out.push(entry);
        }
    }
    Ok(())
}

fn report(cli: &Cli, inputs: &[PathBuf], output: Option<&Path>) -> Result<()> {
    let roots = if inputs.is_empty() {
        vec![cli.out.clone()]
    } else {
        inputs.to_vec()
    };
    let mut files = Vec::new();
    for root in &roots {
        collect_reports(root, &mut files)?;
    }
    if files.is_empty() {
        return Err(Error::Config("no report.json found".into()));
    }
    let reports = files.iter().map(RunReport::load).collect::<Result<Vec<_>>>()?;
    let table = harness::render_summary(&reports);
    if let Some(path) = output {
        std::fs::write(path, &table).map_err(|e| Error::io(path, e))?;
    }
    print!("{table}");
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate { deltas } => simulate(cli, deltas),
        Command::Run => run(cli),
        Command::Folds => folds(cli),
        Command::Train { method, checkpoint } => train(cli, *method, checkpoint.as_deref()),
        Command::Eval {
            checkpoint,
            method,
            pairs,
        } => eval(cli, checkpoint, *method, pairs.as_deref()),
        Command::Ablate => ablate(cli),
        Command::Report { inputs, output } => report(cli, inputs, output.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
