//! Training losses and their gradients with respect to predictions.

use crate::error::{Error, Result};
use crate::tcn_model::{sigmoid, softplus};

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::InvalidInput(format!("length mismatch: {a} labels, {b} predictions")));
    }
    if a == 0 {
        return Err(Error::InvalidInput("empty loss input".into()));
    }
    Ok(())
}

/// Mean relative squared error `(1/M) Σ ((y - ŷ) / y)^2`, evaluated as
/// `(y - ŷ)^2 / y^2` so integer inputs give correctly rounded terms.
pub fn mrse_loss(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y.len(), y_hat.len())?;
    if let Some(bad) = y.iter().find(|&&v| v <= 0.0) {
        return Err(Error::InvalidInput(format!("MRSE undefined for label {bad}")));
    }
    Ok(y.iter()
        .zip(y_hat)
        .map(|(y, p)| (y - p).powi(2) / (y * y))
        .sum::<f64>()
        / y.len() as f64)
}

/// `d/dŷ ((y - ŷ) / y)^2`
pub fn mrse_term_grad(y: f64, y_hat: f64) -> f64 {
    2.0 * (y_hat - y) / (y * y)
}

/// Binary cross entropy from the logit `r`, in the stable form
/// `softplus(r) - y r`, and its derivative `σ(r) - y`.
pub fn bce_with_logit(y: f64, logit: f64) -> (f64, f64) {
    (softplus(logit) - y * logit, sigmoid(logit) - y)
}

/// Mean `-[y ln p + (1 - y) ln(1 - p)]` for probabilities strictly inside
/// `(0, 1)`.
pub fn bce_loss(y: &[f64], p: &[f64]) -> Result<f64> {
    check_lengths(y.len(), p.len())?;
    Ok(y.iter()
        .zip(p)
        .map(|(&y, &p)| -(y * p.ln() + (1.0 - y) * (-p).ln_1p()))
        .sum::<f64>()
        / y.len() as f64)
}

/// Mean squared error, the elapse-inference objective.
pub fn mse_loss(target: &[f64], pred: &[f64]) -> Result<f64> {
    check_lengths(target.len(), pred.len())?;
    Ok(target
        .iter()
        .zip(pred)
        .map(|(t, p)| (t - p).powi(2))
        .sum::<f64>()
        / target.len() as f64)
}
