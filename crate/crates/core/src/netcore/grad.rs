use ndarray::{Array2, Axis, Zip};

use super::model::{Layer, MlpModel};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::folds::ResidualCache;
use crate::losses::{LossConfig, LossVariant};

/// Per-layer gradient blocks shaped like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Gradients {
            layers: model
                .layers()
                .iter()
                .map(|l| Layer::zeros(l.fan_in(), l.fan_out()))
                .collect(),
        }
    }

    /// Gradient entries in the model's flat parameter order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend(layer.weights.iter());
            out.extend(layer.biases.iter());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.biases.iter()).all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone)]
pub struct BatchGradient {
    /// Batch-mean loss at the current parameters.
    pub loss: f64,
    pub grads: Gradients,
}

/// Exact gradient of the batch-mean loss with respect to every parameter.
///
/// The virtual residual of `SeparateLaplace`, and the detached live residual
/// of `SeparateNoVr`, enter as constants: no gradient reaches the signal head
/// through the uncertainty term.
pub fn backward(
    model: &MlpModel,
    batch: &Batch,
    loss_cfg: &LossConfig,
    residuals: Option<&ResidualCache>,
) -> Result<BatchGradient> {
    loss_cfg.validate()?;
    let variant = loss_cfg.variant;
    match (variant.needs_residual_cache(), residuals.is_some()) {
        (true, false) => {
            return Err(Error::Config(format!(
                "{variant} needs a residual cache"
            )))
        }
        (false, true) => {
            return Err(Error::Config(format!(
                "{variant} does not take a residual cache"
            )))
        }
        _ => {}
    }
    if variant != LossVariant::L1Only && model.heads() != 2 {
        return Err(Error::Config(format!(
            "{variant} needs a two-head model, this one has {} heads",
            model.heads()
        )));
    }
    let n = batch.len();
    if n == 0 {
        return Err(Error::Input("empty batch".into()));
    }

    let trace = model.forward_trace(batch.inputs.view())?;
    let out = trace.activations.last().unwrap();
    let heads = model.heads();
    let inv_n = 1.0 / n as f64;

    let mut d_out = Array2::<f64>::zeros((n, heads));
    let mut total = 0.0;
    for (i, (&id, &target)) in batch.ids.iter().zip(&batch.targets).enumerate() {
        let y = out[[i, 0]];
        let w = if heads > 1 { out[[i, 1]] } else { 0.0 };
        let r_tilde = match residuals {
            Some(cache) => Some(cache.residual(id)?),
            None => None,
        };
        let s = loss_cfg.sample(y, w, target, r_tilde)?;
        total += s.value;
        d_out[[i, 0]] = s.d_y * inv_n;
        if heads > 1 {
            d_out[[i, 1]] = s.d_w * inv_n;
        }
    }

    let mut grads = Gradients::zeros_like(model);
    let mut delta = d_out;
    for l in (0..model.layers.len()).rev() {
        if model.has_relu(l) {
            Zip::from(&mut delta)
                .and(&trace.activations[l + 1])
                .for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
        }
        let input = &trace.activations[l];
        grads.layers[l].weights = delta.t().dot(input);
        grads.layers[l].biases = delta.sum_axis(Axis(0));
        if l > 0 {
            delta = delta.dot(&model.layers[l].weights);
        }
    }

    Ok(BatchGradient {
        loss: total * inv_n,
        grads,
    })
}
