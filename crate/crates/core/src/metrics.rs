//! Evaluation of signal and error estimates.
//!
//! Uncertainty quality is scored on pairs `(r, e_hat)` of an actual absolute
//! residual and the error the model predicted for that sample:
//!
//! - eRMSE, the root mean squared gap `sqrt(mean((e_hat - r)^2))`;
//! - PiR(eta), the fraction of samples with `eta * e_hat <= r < e_hat / eta`.
//!
//! The PiR band is half-open: a residual exactly on the lower edge counts,
//! one exactly on the upper edge does not, so PiR(1) is always zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    /// Actual absolute residual.
    pub r: f64,
    /// Predicted absolute error.
    pub e_hat: f64,
}

impl EvalPair {
    pub fn new(r: f64, e_hat: f64) -> Result<Self> {
        if !(r.is_finite() && r >= 0.0) {
            return Err(Error::Input(format!("residual must be finite and >= 0, got {r}")));
        }
        if !(e_hat.is_finite() && e_hat > 0.0) {
            return Err(Error::Input(format!(
                "predicted error must be finite and > 0, got {e_hat}"
            )));
        }
        Ok(EvalPair { r, e_hat })
    }

    #[inline]
    pub fn in_band(&self, eta: f64) -> bool {
        eta * self.e_hat <= self.r && self.r < self.e_hat / eta
    }
}

pub fn rmse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Input("rmse of an empty set".into()));
    }
    let sq: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((sq / predictions.len() as f64).sqrt())
}

pub fn ermse(pairs: &[EvalPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Input("eRMSE of an empty set".into()));
    }
    let sq: f64 = pairs.iter().map(|p| (p.e_hat - p.r).powi(2)).sum();
    Ok((sq / pairs.len() as f64).sqrt())
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::Input(format!("eta must lie in (0, 1], got {eta}")));
    }
    Ok(())
}

pub fn pir(pairs: &[EvalPair], eta: f64) -> Result<f64> {
    check_eta(eta)?;
    if pairs.is_empty() {
        return Err(Error::Input("PiR of an empty set".into()));
    }
    let inside = pairs.iter().filter(|p| p.in_band(eta)).count();
    Ok(inside as f64 / pairs.len() as f64)
}

/// `1.0, 0.9, ..., 0.1`.
pub fn default_eta_grid() -> Vec<f64> {
    (1..=10).rev().map(|k| k as f64 / 10.0).collect()
}

pub fn pir_curve(pairs: &[EvalPair], grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    grid.iter().map(|&eta| Ok((eta, pir(pairs, eta)?))).collect()
}

/// Mean of per-group eRMSE, for tasks scored per image or per group.
pub fn ermse_grouped(groups: &[Vec<EvalPair>]) -> Result<f64> {
    grouped_mean(groups, ermse)
}

/// Mean of per-group PiR(eta).
pub fn pir_grouped(groups: &[Vec<EvalPair>], eta: f64) -> Result<f64> {
    grouped_mean(groups, |g| pir(g, eta))
}

fn grouped_mean(groups: &[Vec<EvalPair>], f: impl Fn(&[EvalPair]) -> Result<f64>) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::Input("no groups".into()));
    }
    let mut total = 0.0;
    for g in groups {
        total += f(g)?;
    }
    Ok(total / groups.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub rmse: f64,
    /// Absent for models without an uncertainty head.
    pub ermse: Option<f64>,
    pub pir_curve: Option<Vec<(f64, f64)>>,
    /// Mean predicted error over the evaluated samples.
    pub mean_predicted_error: Option<f64>,
    pub mean_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pairs: Option<Vec<EvalPair>>,
}

impl MetricsReport {
    /// Score a signal-only model.
    pub fn signal_only(predictions: &[f64], targets: &[f64]) -> Result<Self> {
        let rmse = rmse(predictions, targets)?;
        Ok(MetricsReport {
            n: targets.len(),
            rmse,
            ermse: None,
            pir_curve: None,
            mean_predicted_error: None,
            mean_residual: mean_abs(predictions, targets),
            pairs: None,
        })
    }

    /// Score signal and predicted errors, keeping the raw pairs.
    pub fn with_uncertainty(
        predictions: &[f64],
        targets: &[f64],
        predicted_errors: &[f64],
        grid: &[f64],
    ) -> Result<Self> {
        let mut report = Self::signal_only(predictions, targets)?;
        if predicted_errors.len() != targets.len() {
            return Err(Error::Input(format!(
                "{} predicted errors for {} targets",
                predicted_errors.len(),
                targets.len()
            )));
        }
        let pairs = predictions
            .iter()
            .zip(targets)
            .zip(predicted_errors)
            .map(|((p, t), &e)| EvalPair::new((p - t).abs(), e))
            .collect::<Result<Vec<_>>>()?;
        report.ermse = Some(ermse(&pairs)?);
        report.pir_curve = Some(pir_curve(&pairs, grid)?);
        report.mean_predicted_error =
            Some(predicted_errors.iter().sum::<f64>() / predicted_errors.len() as f64);
        report.pairs = Some(pairs);
        Ok(report)
    }

    /// PiR at `eta`, if `eta` is on the report's grid.
    pub fn pir_at(&self, eta: f64) -> Option<f64> {
        self.pir_curve
            .as_ref()?
            .iter()
            .find(|(e, _)| (e - eta).abs() < 1e-12)
            .map(|&(_, v)| v)
    }
}

fn mean_abs(predictions: &[f64], targets: &[f64]) -> f64 {
    predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / targets.len() as f64
}

/// Two-column `r,e_hat` CSV.
pub fn pairs_to_csv(pairs: &[EvalPair]) -> String {
    let mut out = String::from("r,e_hat\n");
    for p in pairs {
        out.push_str(&format!("{:?},{:?}\n", p.r, p.e_hat));
    }
    out
}
