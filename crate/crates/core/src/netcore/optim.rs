use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::grad::Gradients;
use super::model::MlpModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Optimizer {
    pub fn validate(&self) -> Result<()> {
        if let Optimizer::Adam { beta1, beta2, eps } = *self {
            let ok = (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0;
            if !ok {
                return Err(Error::Config(format!(
                    "adam needs beta1, beta2 in [0, 1) and eps > 0, got ({beta1}, {beta2}, {eps})"
                )));
            }
        }
        Ok(())
    }
}

/// Moment estimates for Adam; empty for SGD.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    optimizer: Optimizer,
    step: i32,
    first: Gradients,
    second: Gradients,
}

impl OptimizerState {
    pub fn new(optimizer: Optimizer, model: &MlpModel) -> Self {
        OptimizerState {
            optimizer,
            step: 0,
            first: Gradients::zeros_like(model),
            second: Gradients::zeros_like(model),
        }
    }

    pub fn apply(&mut self, model: &mut MlpModel, grads: &Gradients, lr: f64) {
        self.step += 1;
        match self.optimizer {
            Optimizer::Sgd => {
                for (layer, g) in model.layers.iter_mut().zip(&grads.layers) {
                    layer.weights.scaled_add(-lr, &g.weights);
                    layer.biases.scaled_add(-lr, &g.biases);
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(self.step);
                let bc2 = 1.0 - beta2.powi(self.step);
                let update = |p: &mut f64, m: &mut f64, v: &mut f64, &g: &f64| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                };
                for (((layer, g), m), v) in model
                    .layers
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(&mut self.first.layers)
                    .zip(&mut self.second.layers)
                {
                    Zip::from(&mut layer.weights)
                        .and(&mut m.weights)
                        .and(&mut v.weights)
                        .and(&g.weights)
                        .for_each(update);
                    Zip::from(&mut layer.biases)
                        .and(&mut m.biases)
                        .and(&mut v.biases)
                        .and(&g.biases)
                        .for_each(update);
                }
            }
        }
    }
}
