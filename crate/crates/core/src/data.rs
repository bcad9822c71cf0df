//! Datasets: the step-function simulation generator, a CSV loader, and
//! seeded train/validation/test splitting.
//!
//! Every sample carries a stable integer id assigned at construction. Subsets
//! and splits keep the ids of the samples they contain, so residual caches
//! and exported pairs can always be traced back to the source row.

use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Full,
    Train,
    Validation,
    Test,
}

/// Ground truth kept alongside simulated samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    /// Noise-free signal `f(x)`.
    pub signal: Vec<f64>,
    /// Noise standard deviation `sigma(x)`.
    pub sigma: Vec<f64>,
    /// Realized noise `n(x) = y - f(x)`.
    pub noise: Vec<f64>,
}

impl SyntheticTruth {
    fn select(&self, positions: &[usize]) -> Self {
        let pick = |v: &[f64]| positions.iter().map(|&p| v[p]).collect();
        SyntheticTruth {
            signal: pick(&self.signal),
            sigma: pick(&self.sigma),
            noise: pick(&self.noise),
        }
    }

    /// Ideal certainty `-ln |n(x)|` of sample `i`. Diagnostic only.
    pub fn certainty_target(&self, i: usize) -> f64 {
        -self.noise[i].abs().ln()
    }
}

/// Per-column standardization applied at load time, inputs and target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

impl Normalization {
    /// Undo the standardization of one input row.
    pub fn invert(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    /// A standardized target value in original units.
    pub fn target(&self, v: f64) -> f64 {
        v * self.target_std + self.target_mean
    }

    /// An absolute error in original target units.
    pub fn error(&self, e: f64) -> f64 {
        e * self.target_std
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    ids: Vec<usize>,
    inputs: Array2<f64>,
    targets: Vec<f64>,
    input_names: Vec<String>,
    truth: Option<SyntheticTruth>,
    normalization: Option<Normalization>,
    split: SplitTag,
}

/// A minibatch copied out of a dataset.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<usize>,
    pub inputs: Array2<f64>,
    pub targets: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl Dataset {
    /// Samples with ids `0..n` and generic input names `x0, x1, ...`.
    pub fn new(inputs: Array2<f64>, targets: Vec<f64>) -> Result<Self> {
        let ids = (0..targets.len()).collect();
        let names = (0..inputs.ncols()).map(|j| format!("x{j}")).collect();
        Self::from_parts(ids, inputs, targets, names)
    }

    pub fn from_parts(
        ids: Vec<usize>,
        inputs: Array2<f64>,
        targets: Vec<f64>,
        input_names: Vec<String>,
    ) -> Result<Self> {
        if inputs.nrows() != targets.len() || ids.len() != targets.len() {
            return Err(Error::Input(format!(
                "{} inputs, {} targets and {} ids",
                inputs.nrows(),
                targets.len(),
                ids.len()
            )));
        }
        if input_names.len() != inputs.ncols() {
            return Err(Error::Shape {
                expected: inputs.ncols(),
                actual: input_names.len(),
            });
        }
        if !inputs.iter().chain(&targets).all(|v| v.is_finite()) {
            return Err(Error::Numeric("dataset values".into()));
        }
        Ok(Dataset {
            ids,
            inputs,
            targets,
            input_names,
            truth: None,
            normalization: None,
            split: SplitTag::Full,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i).to_slice().expect("standard layout")
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn input_names(&self) -> &[String] {
        &self.input_names
    }

    pub fn truth(&self) -> Option<&SyntheticTruth> {
        self.truth.as_ref()
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    pub fn split_tag(&self) -> SplitTag {
        self.split
    }

    pub fn with_split_tag(mut self, split: SplitTag) -> Self {
        self.split = split;
        self
    }

    /// Samples at the given positions, ids preserved.
    pub fn subset(&self, positions: &[usize]) -> Dataset {
        Dataset {
            ids: positions.iter().map(|&p| self.ids[p]).collect(),
            inputs: self.inputs.select(Axis(0), positions),
            targets: positions.iter().map(|&p| self.targets[p]).collect(),
            input_names: self.input_names.clone(),
            truth: self.truth.as_ref().map(|t| t.select(positions)),
            normalization: self.normalization.clone(),
            split: self.split,
        }
    }

    pub fn batch(&self, positions: &[usize]) -> Batch {
        Batch {
            ids: positions.iter().map(|&p| self.ids[p]).collect(),
            inputs: self.inputs.select(Axis(0), positions),
            targets: positions.iter().map(|&p| self.targets[p]).collect(),
        }
    }

    /// The whole dataset as one batch.
    pub fn full_batch(&self) -> Batch {
        Batch {
            ids: self.ids.clone(),
            inputs: self.inputs.clone(),
            targets: self.targets.clone(),
        }
    }

    /// Concatenate datasets that share input names.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Input("nothing to concatenate".into()))?;
        let views: Vec<_> = parts.iter().map(|d| d.inputs.view()).collect();
        let inputs = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::Input(format!("cannot concatenate inputs: {e}")))?;
        let mut out = Dataset::from_parts(
            parts.iter().flat_map(|d| d.ids.iter().copied()).collect(),
            inputs,
            parts.iter().flat_map(|d| d.targets.iter().copied()).collect(),
            first.input_names.clone(),
        )?;
        if parts.iter().all(|d| d.truth.is_some()) {
            let cat = |f: fn(&SyntheticTruth) -> &Vec<f64>| {
                parts
                    .iter()
                    .flat_map(|d| f(d.truth.as_ref().unwrap()).iter().copied())
                    .collect()
            };
            out.truth = Some(SyntheticTruth {
                signal: cat(|t| &t.signal),
                sigma: cat(|t| &t.sigma),
                noise: cat(|t| &t.noise),
            });
        }
        out.normalization = first.normalization.clone();
        out.split = first.split;
        Ok(out)
    }

    /// CSV with a header row: input columns, the target `y`, and `f`, `sigma`
    /// when the dataset is simulated.
    pub fn to_csv_string(&self) -> String {
        let mut header: Vec<String> = vec!["id".into()];
        header.extend(self.input_names.iter().cloned());
        header.push("y".into());
        if self.truth.is_some() {
            header.push("f".into());
            header.push("sigma".into());
        }
        let mut out = header.join(",");
        out.push('\n');
        for i in 0..self.len() {
            let mut fields = vec![self.ids[i].to_string()];
            fields.extend(self.input(i).iter().map(|v| format!("{v:?}")));
            fields.push(format!("{:?}", self.targets[i]));
            if let Some(t) = &self.truth {
                fields.push(format!("{:?}", t.signal[i]));
                fields.push(format!("{:?}", t.sigma[i]));
            }
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    /// Height of the step at `x = 0.5`.
    pub delta: f64,
    pub seed: u64,
    pub noise_family: NoiseFamily,
}

impl SyntheticConfig {
    pub fn new(n: usize, delta: f64, seed: u64) -> Self {
        SyntheticConfig {
            n,
            delta,
            seed,
            noise_family: NoiseFamily::Gaussian,
        }
    }
}

/// `f(x) = 2x - 1` below one half and `2x - 1 + delta` from one half on.
pub fn step_signal(x: f64, delta: f64) -> f64 {
    let base = 2.0 * x - 1.0;
    if x < 0.5 {
        base
    } else {
        base + delta
    }
}

/// Noise scale `sigma(x) = 1.99 x + 0.01`.
pub fn noise_sigma(x: f64) -> f64 {
    1.99 * x + 0.01
}

/// Draw `x ~ U[0, 1)` and `y = f(x) + n`, `n ~ N(0, sigma(x)^2)`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    if cfg.n == 0 {
        return Err(Error::Config("synthetic sample count must be positive".into()));
    }
    if !cfg.delta.is_finite() {
        return Err(Error::Config(format!("delta must be finite, got {}", cfg.delta)));
    }
    let mut rng = rng::stream_rng(cfg.seed, stream::TRAIN_DATA);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut xs = Vec::with_capacity(cfg.n);
    let mut truth = SyntheticTruth {
        signal: Vec::with_capacity(cfg.n),
        sigma: Vec::with_capacity(cfg.n),
        noise: Vec::with_capacity(cfg.n),
    };
    let mut ys = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let x: f64 = rng.random();
        let f = step_signal(x, cfg.delta);
        let sigma = noise_sigma(x);
        let noise = match cfg.noise_family {
            NoiseFamily::Gaussian => sigma * unit.sample(&mut rng),
        };
        let y = f + noise;
        xs.push(x);
        ys.push(y);
        truth.signal.push(f);
        truth.sigma.push(sigma);
        // realized noise, exact in floating point
        truth.noise.push(y - f);
    }
    let inputs = Array2::from_shape_vec((cfg.n, 1), xs).expect("n x 1");
    let mut data = Dataset::from_parts((0..cfg.n).collect(), inputs, ys, vec!["x".into()])?;
    data.truth = Some(truth);
    Ok(data)
}

/// Read `input_cols` and `target_col` from a headed CSV file.
///
/// With `normalize`, every input column and the target are standardized
/// and the statistics kept in [`Dataset::normalization`].
pub fn load_csv(
    path: impl AsRef<Path>,
    input_cols: &[&str],
    target_col: &str,
    normalize: bool,
) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, input_cols, target_col, normalize)
}

/// As [`load_csv`], from an in-memory string.
pub fn parse_csv(
    text: &str,
    input_cols: &[&str],
    target_col: &str,
    normalize: bool,
) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 1,
            column: String::new(),
            message: e.to_string(),
        })?
        .clone();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(Error::Parse {
            row: 1,
            column: String::new(),
            message: "empty file".into(),
        });
    }
    if input_cols.is_empty() {
        return Err(Error::Config("at least one input column is required".into()));
    }
    let locate = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            row: 1,
            column: name.to_owned(),
            message: format!("missing column `{name}`"),
        })
    };
    let input_idx: Vec<usize> = input_cols.iter().map(|c| locate(c)).collect::<Result<_>>()?;
    let target_idx = locate(target_col)?;

    let mut flat = Vec::new();
    let mut targets = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let row = k + 2;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let cell = |idx: usize| -> Result<f64> {
            let column = headers.get(idx).unwrap_or_default().to_owned();
            let raw = record.get(idx).ok_or_else(|| Error::Parse {
                row,
                column: column.clone(),
                message: "missing cell".into(),
            })?;
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row,
                column: column.clone(),
                message: format!("`{raw}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column,
                    message: format!("`{raw}` is not finite"),
                });
            }
            Ok(v)
        };
        for &idx in &input_idx {
            flat.push(cell(idx)?);
        }
        targets.push(cell(target_idx)?);
    }
    if targets.is_empty() {
        return Err(Error::Parse {
            row: 2,
            column: String::new(),
            message: "file has a header but no data rows".into(),
        });
    }
    let n = targets.len();
    let mut inputs = Array2::from_shape_vec((n, input_idx.len()), flat).expect("row-major");
    let normalization = normalize.then(|| {
        let mut means = Vec::new();
        let mut stds = Vec::new();
        for mut col in inputs.columns_mut() {
            let (mean, std) = standardize(col.iter_mut());
            means.push(mean);
            stds.push(std);
        }
        let (target_mean, target_std) = standardize(targets.iter_mut());
        Normalization {
            means,
            stds,
            target_mean,
            target_std,
        }
    });
    let names = input_cols.iter().map(|s| s.to_string()).collect();
    let mut data = Dataset::from_parts((0..n).collect(), inputs, targets, names)?;
    data.normalization = normalization;
    Ok(data)
}

/// Shift and scale values in place to zero mean and unit population
/// variance. A constant column keeps scale 1.
fn standardize<'a>(values: impl Iterator<Item = &'a mut f64>) -> (f64, f64) {
    let mut values: Vec<&mut f64> = values.collect();
    let n = values.len() as f64;
    let mean = values.iter().map(|v| **v).sum::<f64>() / n;
    let var = values.iter().map(|v| (**v - mean).powi(2)).sum::<f64>() / n;
    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
    for v in values.iter_mut() {
        **v = (**v - mean) / std;
    }
    (mean, std)
}

/// Seeded random partition into train, validation and test sets.
///
/// Sizes are `round(n * train)`, `round(n * val)` and the remainder.
pub fn split(
    data: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::Config(format!(
            "split fractions must be positive, got {fractions:?}"
        )));
    }
    if (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must sum to 1, got {}",
            ft + fv + fs
        )));
    }
    let n = data.len();
    let n_train = (n as f64 * ft).round() as usize;
    let n_val = (n as f64 * fv).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Config(format!(
            "split {fractions:?} of {n} samples leaves an empty part"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream_rng(seed, stream::SPLIT));
    let (train, rest) = order.split_at(n_train);
    let (val, test) = rest.split_at(n_val);
    Ok((
        data.subset(train).with_split_tag(SplitTag::Train),
        data.subset(val).with_split_tag(SplitTag::Validation),
        data.subset(test).with_split_tag(SplitTag::Test),
    ))
}
