use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, stream};

/// Hidden widths of the simulation network, followed by the shared 16-wide
/// layer that feeds the heads.
const SIMULATION_HIDDEN: [usize; 7] = [32, 64, 128, 128, 64, 32, 16];

/// The simulation network leaves its last two layers (16-wide and heads) linear.
pub const SIMULATION_LINEAR_TAIL: usize = 2;

/// Layer sizes of the eight-layer simulation network.
pub fn simulation_layer_sizes(input_dim: usize, heads: usize) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(SIMULATION_HIDDEN.len() + 2);
    sizes.push(input_dim);
    sizes.extend_from_slice(&SIMULATION_HIDDEN);
    sizes.push(heads);
    sizes
}

/// How biases are drawn at initialization. Weights are always Glorot uniform.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasInit {
    #[default]
    Zero,
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    ///
    /// With zero biases and inputs in `[0, 1)` every ReLU of the first layer
    /// bends at the origin, so the initial network is linear on the data and
    /// needs many steps to develop any curvature.
    FanIn,
}

/// Layer sizes, the number of trailing linear layers and the bias draw.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub layer_sizes: Vec<usize>,
    pub linear_tail: usize,
    #[serde(default)]
    pub bias_init: BiasInit,
}

impl Architecture {
    pub fn new(layer_sizes: Vec<usize>, linear_tail: usize) -> Self {
        Architecture {
            layer_sizes,
            linear_tail,
            bias_init: BiasInit::Zero,
        }
    }

    pub fn with_bias_init(mut self, bias_init: BiasInit) -> Self {
        self.bias_init = bias_init;
        self
    }

    /// The eight-layer simulation network for `input_dim` inputs and `heads` outputs.
    pub fn simulation(input_dim: usize, heads: usize) -> Self {
        Architecture::new(simulation_layer_sizes(input_dim, heads), SIMULATION_LINEAR_TAIL)
            .with_bias_init(BiasInit::FanIn)
    }

    /// Same body with a different number of heads.
    pub fn with_heads(&self, heads: usize) -> Self {
        let mut sizes = self.layer_sizes.clone();
        if let Some(last) = sizes.last_mut() {
            *last = heads;
        }
        Architecture {
            layer_sizes: sizes,
            ..self.clone()
        }
    }

    pub fn build(&self, seed: u64) -> Result<MlpModel> {
        MlpModel::init_with(&self.layer_sizes, seed, self.bias_init)?
            .with_linear_tail(self.linear_tail)
    }

    /// Closed-form parameter count, `sum(n_i * n_{i+1} + n_{i+1})`.
    pub fn num_params(&self) -> usize {
        self.layer_sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sizes: Vec<String> = self.layer_sizes.iter().map(|n| n.to_string()).collect();
        write!(f, "{} (linear tail {}", sizes.join("-"), self.linear_tail)?;
        match self.bias_init {
            BiasInit::Zero => write!(f, ")"),
            BiasInit::FanIn => write!(f, ", fan-in biases)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `(out, in)`, row-major.
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Layer {
            weights: Array2::zeros((fan_out, fan_in)),
            biases: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.nrows()
    }
}

/// Output of a two-head model for a single input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeteroscedasticPrediction {
    /// Signal estimate, in target units.
    pub y: f64,
    /// Certainty, `-ln` of the predicted Laplace scale.
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    linear_tail: usize,
    seed: u64,
    pub(crate) layers: Vec<Layer>,
}

/// Activations kept from a batch forward pass. `activations[0]` is the input.
pub(crate) struct ForwardTrace {
    pub activations: Vec<Array2<f64>>,
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases, ReLU on every layer but the last.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        Self::init_with(layer_sizes, seed, BiasInit::Zero)
    }

    /// As [`MlpModel::init`] with a choice of bias draw. Weights come first
    /// from the stream, so both choices share the same weights.
    pub fn init_with(layer_sizes: &[usize], seed: u64, bias_init: BiasInit) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "layer_sizes needs an input and an output size, got {layer_sizes:?}"
            )));
        }
        if let Some(pos) = layer_sizes.iter().position(|&n| n == 0) {
            return Err(Error::Config(format!("layer size at position {pos} is zero")));
        }
        let mut rng = rng::stream_rng(seed, stream::INIT);
        let mut layers = layer_sizes
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-limit..limit));
                Layer {
                    weights,
                    biases: Array1::zeros(fan_out),
                }
            })
            .collect::<Vec<_>>();
        if bias_init == BiasInit::FanIn {
            for layer in &mut layers {
                let limit = 1.0 / (layer.fan_in() as f64).sqrt();
                layer.biases.mapv_inplace(|_| rng.random_range(-limit..limit));
            }
        }
        Ok(MlpModel {
            layer_sizes: layer_sizes.to_vec(),
            linear_tail: 1,
            seed,
            layers,
        })
    }

    /// Build a model from explicit layers. Sizes are taken from the layers.
    pub fn from_layers(layers: Vec<Layer>, linear_tail: usize, seed: u64) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::Config("a model needs at least one layer".into()))?;
        let mut sizes = vec![first.fan_in()];
        for layer in &layers {
            let expected = *sizes.last().unwrap();
            if layer.fan_in() != expected {
                return Err(Error::Shape {
                    expected,
                    actual: layer.fan_in(),
                });
            }
            if layer.biases.len() != layer.fan_out() {
                return Err(Error::Shape {
                    expected: layer.fan_out(),
                    actual: layer.biases.len(),
                });
            }
            sizes.push(layer.fan_out());
        }
        if sizes.contains(&0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        MlpModel {
            layer_sizes: sizes,
            linear_tail: 1,
            seed,
            layers,
        }
        .with_linear_tail(linear_tail)
    }

    /// Number of trailing layers without a ReLU.
    pub fn with_linear_tail(mut self, linear_tail: usize) -> Result<Self> {
        if linear_tail == 0 || linear_tail > self.layers.len() {
            return Err(Error::Config(format!(
                "linear_tail must be in 1..={}, got {linear_tail}",
                self.layers.len()
            )));
        }
        self.linear_tail = linear_tail;
        Ok(self)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn linear_tail(&self) -> usize {
        self.linear_tail
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::new(self.layer_sizes.clone(), self.linear_tail)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn heads(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub(crate) fn has_relu(&self, layer: usize) -> bool {
        layer + self.linear_tail < self.layers.len()
    }

    /// Parameter `k` in flat order: layer by layer, weights row-major then biases.
    pub fn param(&self, k: usize) -> f64 {
        *self.param_ref(k)
    }

    pub fn set_param(&mut self, k: usize, value: f64) {
        *self.param_mut(k) = value;
    }

    fn param_ref(&self, mut k: usize) -> &f64 {
        for layer in &self.layers {
            let nw = layer.weights.len();
            if k < nw {
                return &layer.weights.as_slice().unwrap()[k];
            }
            k -= nw;
            if k < layer.biases.len() {
                return &layer.biases[k];
            }
            k -= layer.biases.len();
        }
        panic!("parameter index out of range");
    }

    fn param_mut(&mut self, mut k: usize) -> &mut f64 {
        for layer in &mut self.layers {
            let nw = layer.weights.len();
            if k < nw {
                return &mut layer.weights.as_slice_mut().unwrap()[k];
            }
            k -= nw;
            if k < layer.biases.len() {
                return &mut layer.biases[k];
            }
            k -= layer.biases.len();
        }
        panic!("parameter index out of range");
    }

    /// All parameters in flat order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            out.extend(layer.weights.iter());
            out.extend(layer.biases.iter());
        }
        out
    }

    /// Raw head outputs for a batch of row-vector inputs, `(batch, heads)`.
    pub fn forward_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(inputs.ncols())?;
        let mut a = inputs.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            a = self.apply_layer(i, layer, &a);
        }
        Ok(a)
    }

    pub(crate) fn forward_trace(&self, inputs: ArrayView2<'_, f64>) -> Result<ForwardTrace> {
        self.check_input(inputs.ncols())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(inputs.to_owned());
        for (i, layer) in self.layers.iter().enumerate() {
            let next = self.apply_layer(i, layer, activations.last().unwrap());
            activations.push(next);
        }
        Ok(ForwardTrace { activations })
    }

    fn apply_layer(&self, i: usize, layer: &Layer, a: &Array2<f64>) -> Array2<f64> {
        let mut z = a.dot(&layer.weights.t());
        z += &layer.biases.view().insert_axis(Axis(0));
        if self.has_relu(i) {
            z.mapv_inplace(|v| v.max(0.0));
        }
        z
    }

    fn check_input(&self, actual: usize) -> Result<()> {
        if actual != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                actual,
            });
        }
        Ok(())
    }

    /// Raw head outputs for one input.
    pub fn forward_raw(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("contiguous row");
        Ok(self.forward_batch(view)?.into_raw_vec_and_offset().0)
    }

    /// `(y, w)` for a two-head model.
    pub fn forward(&self, x: &[f64]) -> Result<HeteroscedasticPrediction> {
        if self.heads() != 2 {
            return Err(Error::Shape {
                expected: 2,
                actual: self.heads(),
            });
        }
        let out = self.forward_raw(x)?;
        Ok(HeteroscedasticPrediction { y: out[0], w: out[1] })
    }

    /// Text checkpoint. Floats are written in shortest round-trip form, so
    /// loading reproduces every parameter bit for bit.
    pub fn to_checkpoint(&self) -> String {
        let join = |it: &mut dyn Iterator<Item = &f64>| {
            it.map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
        };
        let mut out = String::new();
        out.push_str("# aleatoric mlp checkpoint v1\n");
        let sizes: Vec<String> = self.layer_sizes.iter().map(|n| n.to_string()).collect();
        writeln!(out, "layer_sizes = {}", sizes.join(",")).unwrap();
        writeln!(out, "linear_tail = {}", self.linear_tail).unwrap();
        writeln!(out, "seed = {}", self.seed).unwrap();
        for (i, layer) in self.layers.iter().enumerate() {
            writeln!(out, "layer.{i}.weights = {}", join(&mut layer.weights.iter())).unwrap();
            writeln!(out, "layer.{i}.biases = {}", join(&mut layer.biases.iter())).unwrap();
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Parse {
            row: 0,
            column: "checkpoint".into(),
            message: msg,
        };
        let mut sizes: Option<Vec<usize>> = None;
        let mut tail = 1usize;
        let mut seed = 0u64;
        let mut weights: Vec<Option<Vec<f64>>> = Vec::new();
        let mut biases: Vec<Option<Vec<f64>>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse {
                    row: lineno + 1,
                    column: "checkpoint".into(),
                    message: "expected `key = value`".into(),
                })?;
            let (key, value) = (key.trim(), value.trim());
            let floats = || -> Result<Vec<f64>> {
                value
                    .split_whitespace()
                    .map(|t| {
                        t.parse::<f64>().map_err(|e| Error::Parse {
                            row: lineno + 1,
                            column: key.to_owned(),
                            message: e.to_string(),
                        })
                    })
                    .collect()
            };
            match key {
                "layer_sizes" => {
                    let parsed = value
                        .split(',')
                        .map(|t| t.trim().parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| bad(format!("layer_sizes: {e}")))?;
                    let layers = parsed.len().saturating_sub(1);
                    weights = vec![None; layers];
                    biases = vec![None; layers];
                    sizes = Some(parsed);
                }
                "linear_tail" => tail = value.parse().map_err(|e| bad(format!("linear_tail: {e}")))?,
                "seed" => seed = value.parse().map_err(|e| bad(format!("seed: {e}")))?,
                _ => {
                    let mut parts = key.split('.');
                    let (Some("layer"), Some(idx), Some(kind), None) =
                        (parts.next(), parts.next(), parts.next(), parts.next())
                    else {
                        return Err(bad(format!("unknown key `{key}`")));
                    };
                    let idx: usize = idx.parse().map_err(|_| bad(format!("bad layer index in `{key}`")))?;
                    let slot = match kind {
                        "weights" => weights.get_mut(idx),
                        "biases" => biases.get_mut(idx),
                        _ => None,
                    }
                    .ok_or_else(|| bad(format!("unexpected key `{key}`")))?;
                    *slot = Some(floats()?);
                }
            }
        }
        let sizes = sizes.ok_or_else(|| bad("missing layer_sizes".into()))?;
        let mut layers = Vec::with_capacity(weights.len());
        for (i, (w, b)) in weights.into_iter().zip(biases).enumerate() {
            let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
            let w = w.ok_or_else(|| bad(format!("missing layer.{i}.weights")))?;
            let b = b.ok_or_else(|| bad(format!("missing layer.{i}.biases")))?;
            if w.len() != fan_in * fan_out {
                return Err(Error::Shape {
                    expected: fan_in * fan_out,
                    actual: w.len(),
                });
            }
            layers.push(Layer {
                weights: Array2::from_shape_vec((fan_out, fan_in), w).expect("checked length"),
                biases: Array1::from(b),
            });
        }
        Self::from_layers(layers, tail, seed)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_checkpoint()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn init_is_deterministic() {
        let a = MlpModel::init(&[1, 16, 2], 7).unwrap();
        let b = MlpModel::init(&[1, 16, 2], 7).unwrap();
        assert_eq!(a, b);
        let c = MlpModel::init(&[1, 16, 2], 8).unwrap();
        assert_ne!(a.flat_params(), c.flat_params());
    }

    #[test]
    fn fan_in_biases_keep_weights() {
        let zero = MlpModel::init(&[3, 5, 2], 9).unwrap();
        let fan = MlpModel::init_with(&[3, 5, 2], 9, BiasInit::FanIn).unwrap();
        for (a, b) in zero.layers().iter().zip(fan.layers()) {
            assert_eq!(a.weights, b.weights);
            assert!(a.biases.iter().all(|&v| v == 0.0));
            let limit = 1.0 / (b.fan_in() as f64).sqrt();
            assert!(b.biases.iter().all(|v| v.abs() < limit));
            assert!(b.biases.iter().any(|&v| v != 0.0));
        }
        assert_eq!(Architecture::simulation(1, 2).bias_init, BiasInit::FanIn);
        assert_eq!(Architecture::simulation(1, 2).with_heads(1).bias_init, BiasInit::FanIn);
    }

    #[test]
    fn init_rejects_bad_sizes() {
        assert!(matches!(MlpModel::init(&[], 0), Err(Error::Config(_))));
        assert!(matches!(MlpModel::init(&[3], 0), Err(Error::Config(_))));
        assert!(matches!(MlpModel::init(&[3, 0, 2], 0), Err(Error::Config(_))));
    }

    #[test]
    fn simulation_parameter_count() {
        let sizes = simulation_layer_sizes(1, 2);
        assert_eq!(sizes, vec![1, 32, 64, 128, 128, 64, 32, 16, 2]);
        // 64 + 2112 + 8320 + 16512 + 8256 + 2080 + 528 + 34
        let m = MlpModel::init(&sizes, 3).unwrap();
        assert_eq!(m.num_params(), 37_906);
        assert_eq!(m.layers().len(), 8);
    }

    #[test]
    fn weights_within_glorot_bound() {
        let m = MlpModel::init(&[4, 10, 2], 1).unwrap();
        let bound = (6.0f64 / 14.0).sqrt();
        assert!(m.layers()[0].weights.iter().all(|w| w.abs() < bound));
        assert!(m.layers()[0].biases.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_network_predicts_zero() {
        let layers = vec![Layer::zeros(3, 5), Layer::zeros(5, 2)];
        let m = MlpModel::from_layers(layers, 1, 0).unwrap();
        let p = m.forward(&[0.3, -1.0, 9.0]).unwrap();
        assert_eq!((p.y, p.w), (0.0, 0.0));
    }

    #[test]
    fn single_linear_layer() {
        let layer = Layer {
            weights: array![[2.0], [3.0]],
            biases: array![0.5, -0.5],
        };
        let m = MlpModel::from_layers(vec![layer], 1, 0).unwrap();
        let p = m.forward(&[1.0]).unwrap();
        assert_eq!((p.y, p.w), (2.5, 2.5));
        assert_eq!(m.forward(&[1.0]).unwrap(), p);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let m = MlpModel::init(&[2, 4, 2], 0).unwrap();
        assert!(matches!(
            m.forward(&[1.0]),
            Err(Error::Shape { expected: 2, actual: 1 })
        ));
        let single = MlpModel::init(&[2, 4, 1], 0).unwrap();
        assert!(single.forward(&[1.0, 2.0]).is_err());
        assert_eq!(single.forward_raw(&[1.0, 2.0]).unwrap().len(), 1);
    }

    #[test]
    fn linear_tail_bounds() {
        let m = MlpModel::init(&[1, 4, 4, 2], 0).unwrap();
        assert!(m.clone().with_linear_tail(0).is_err());
        assert!(m.clone().with_linear_tail(4).is_err());
        let m = m.with_linear_tail(2).unwrap();
        assert!(m.has_relu(0) && !m.has_relu(1) && !m.has_relu(2));
    }

    #[test]
    fn flat_param_indexing_matches_flat_params() {
        let mut m = MlpModel::init(&[2, 3, 2], 5).unwrap();
        let flat = m.flat_params();
        for (k, v) in flat.iter().enumerate() {
            assert_eq!(m.param(k), *v);
        }
        m.set_param(7, 42.0);
        assert_eq!(m.flat_params()[7], 42.0);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let m = MlpModel::init(&simulation_layer_sizes(1, 2), 99)
            .unwrap()
            .with_linear_tail(SIMULATION_LINEAR_TAIL)
            .unwrap();
        let back = MlpModel::from_checkpoint(&m.to_checkpoint()).unwrap();
        assert_eq!(back, m);
        for x in [0.0, 0.123_456_789, 0.999] {
            let (a, b) = (m.forward(&[x]).unwrap(), back.forward(&[x]).unwrap());
            assert_eq!(a.y.to_bits(), b.y.to_bits());
            assert_eq!(a.w.to_bits(), b.w.to_bits());
        }
    }

    #[test]
    fn checkpoint_rejects_truncated_layers() {
        let m = MlpModel::init(&[1, 3, 2], 1).unwrap();
        let text: String = m
            .to_checkpoint()
            .lines()
            .filter(|l| !l.starts_with("layer.1.biases"))
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(MlpModel::from_checkpoint(&text).is_err());
    }
}
