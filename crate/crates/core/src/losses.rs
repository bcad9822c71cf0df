//! Per-sample losses for heteroscedastic regression and their derivatives
//! with respect to the two network heads.
//!
//! Notation used throughout: `y` is the signal head, `w` the certainty head
//! (`w = -ln b` for a Laplace scale `b`), `y_star` the target and
//! `r = |y - y_star|` the absolute residual. The joint Gaussian variant reads
//! its second head as `ln sigma^2` instead of a certainty.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which objective a model is trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// Plain L1 on the signal head only.
    L1Only,
    /// Gaussian negative log-likelihood with a log-variance head.
    JointGaussian,
    /// Laplace negative log-likelihood, `exp(w) r - w`.
    JointLaplace,
    /// `r + lambda (exp(w) r_tilde - w)` with `r_tilde` an out-of-fold residual.
    SeparateLaplace,
    /// As `SeparateLaplace`, but `r_tilde` is the live residual with its
    /// gradient stopped.
    SeparateNoVr,
}

impl LossVariant {
    pub const ALL: [LossVariant; 5] = [
        LossVariant::L1Only,
        LossVariant::JointGaussian,
        LossVariant::JointLaplace,
        LossVariant::SeparateLaplace,
        LossVariant::SeparateNoVr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossVariant::L1Only => "l1_only",
            LossVariant::JointGaussian => "joint_gaussian",
            LossVariant::JointLaplace => "joint_laplace",
            LossVariant::SeparateLaplace => "separate_laplace",
            LossVariant::SeparateNoVr => "separate_no_vr",
        }
    }

    /// Number of output heads a model trained with this loss carries.
    pub fn heads(self) -> usize {
        match self {
            LossVariant::L1Only => 1,
            _ => 2,
        }
    }

    pub fn needs_residual_cache(self) -> bool {
        self == LossVariant::SeparateLaplace
    }

    /// Whether `lambda` enters the objective.
    pub fn uses_lambda(self) -> bool {
        matches!(self, LossVariant::SeparateLaplace | LossVariant::SeparateNoVr)
    }

    pub fn estimates_uncertainty(self) -> bool {
        self != LossVariant::L1Only
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss variant `{s}`")))
    }
}

/// Loss selection plus its two scalar hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub variant: LossVariant,
    /// Weight of the uncertainty term; ignored by the non-separate variants.
    pub lambda: f64,
    /// `exp(w)` is evaluated as `exp(w / clamp_c)`. `1.0` leaves it untouched.
    pub clamp_c: f64,
}

impl LossConfig {
    pub fn new(variant: LossVariant) -> Self {
        LossConfig {
            variant,
            lambda: 0.1,
            clamp_c: 1.0,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_clamp(mut self, clamp_c: f64) -> Self {
        self.clamp_c = clamp_c;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.clamp_c.is_finite() && self.clamp_c > 0.0) {
            return Err(Error::Config(format!(
                "clamp_c must be finite and > 0, got {}",
                self.clamp_c
            )));
        }
        Ok(())
    }

    /// Value and head derivatives `(loss, dL/dy, dL/dw)` for one sample.
    ///
    /// `r_tilde` is read only by `SeparateLaplace` and must be present there.
    /// For `L1Only` the `w` argument is ignored and `dL/dw` is zero.
    pub fn sample(&self, y: f64, w: f64, y_star: f64, r_tilde: Option<f64>) -> Result<SampleLoss> {
        let diff = y - y_star;
        let r = diff.abs();
        let sign = l1_subgradient(diff);
        let c = self.clamp_c;
        let out = match self.variant {
            LossVariant::L1Only => SampleLoss {
                value: r,
                d_y: sign,
                d_w: 0.0,
            },
            LossVariant::JointGaussian => {
                let inv_var = (-w).exp();
                SampleLoss {
                    value: loss_joint_gaussian(y, w, y_star)?,
                    d_y: diff * inv_var,
                    d_w: 0.5 - 0.5 * diff * diff * inv_var,
                }
            }
            LossVariant::JointLaplace => {
                let scale = (w / c).exp();
                SampleLoss {
                    value: loss_joint_laplace(y, w, y_star, c)?,
                    d_y: scale * sign,
                    d_w: scale * r / c - 1.0,
                }
            }
            LossVariant::SeparateLaplace | LossVariant::SeparateNoVr => {
                let r_tilde = match self.variant {
                    LossVariant::SeparateNoVr => r,
                    _ => r_tilde.ok_or_else(|| {
                        Error::CacheIntegrity("separate loss evaluated without a virtual residual".into())
                    })?,
                };
                let lambda = self.lambda;
                SampleLoss {
                    value: loss_separate(y, w, y_star, r_tilde, lambda, c)?,
                    d_y: sign,
                    d_w: lambda * ((w / c).exp() * r_tilde / c - 1.0),
                }
            }
        };
        Ok(out)
    }

    /// Predicted absolute error implied by the second head.
    ///
    /// For the Laplace variants this is the minimizer of the per-sample
    /// certainty term, `c exp(-w / c)`, which is `exp(-w)` at `c = 1`. The
    /// Gaussian variant predicts `sigma = exp(ln_var / 2)`.
    pub fn predicted_error(&self, w: f64) -> f64 {
        match self.variant {
            LossVariant::JointGaussian => (0.5 * w).exp(),
            _ if self.clamp_c == 1.0 => error_estimate(w),
            _ => self.clamp_c * (-w / self.clamp_c).exp(),
        }
    }
}

/// Loss value and derivatives with respect to the signal and certainty heads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleLoss {
    pub value: f64,
    pub d_y: f64,
    pub d_w: f64,
}

/// Subgradient of `|d|`; zero at an exact fit.
#[inline]
pub fn l1_subgradient(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn finite(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(what.to_owned()))
    }
}

/// Gaussian NLL `(y* - y)^2 / (2 sigma^2) + ln(sigma^2) / 2` with `sigma^2 = exp(log_var)`.
pub fn loss_joint_gaussian(y: f64, log_var: f64, y_star: f64) -> Result<f64> {
    finite("loss_joint_gaussian inputs", &[y, log_var, y_star])?;
    let d = y_star - y;
    Ok(d * d * (-log_var).exp() / 2.0 + 0.5 * log_var)
}

/// Laplace NLL in certainty form, `exp(w / c) |y* - y| - w`.
pub fn loss_joint_laplace(y: f64, w: f64, y_star: f64, clamp_c: f64) -> Result<f64> {
    finite("loss_joint_laplace inputs", &[y, w, y_star, clamp_c])?;
    Ok((w / clamp_c).exp() * (y_star - y).abs() - w)
}

/// Separated loss `|y* - y| + lambda (exp(w / c) r_tilde - w)`.
pub fn loss_separate(
    y: f64,
    w: f64,
    y_star: f64,
    r_tilde: f64,
    lambda: f64,
    clamp_c: f64,
) -> Result<f64> {
    finite("loss_separate inputs", &[y, w, y_star, r_tilde, lambda, clamp_c])?;
    if r_tilde < 0.0 {
        return Err(Error::CacheIntegrity(format!(
            "virtual residual must be non-negative, got {r_tilde}"
        )));
    }
    let target = (y_star - y).abs();
    if lambda == 0.0 {
        return Ok(target);
    }
    Ok(target + lambda * ((w / clamp_c).exp() * r_tilde - w))
}

/// Absolute error predicted by a certainty `w`: `exp(-w)`.
#[inline]
pub fn error_estimate(w: f64) -> f64 {
    (-w).exp()
}
