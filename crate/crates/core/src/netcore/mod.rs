//! Dense feed-forward network with analytic gradients and a minibatch trainer.
//!
//! Parameters live in per-layer `ndarray` blocks: weights are `(out, in)` and
//! the forward pass computes `z = a W^T + b` for a batch `a` of row vectors.
//! ReLU follows every layer except a configurable number of trailing linear
//! layers (one by default).

mod grad;
mod model;
mod optim;
mod train;

pub(crate) use train::fnv1a;

pub use grad::{backward, BatchGradient, Gradients};
pub use model::{
    simulation_layer_sizes, Architecture, BiasInit, HeteroscedasticPrediction, Layer, MlpModel, SIMULATION_LINEAR_TAIL,
};
pub use optim::{Optimizer, OptimizerState};
pub use train::{
    mean_abs_error, predict, train, train_observed, BatchEvent, EpochLog, Predictions, TrainConfig,
    TrainLog, TrainedModel,
};
