//! Loss definitions and training schedules as plain functions. The training
//! loop evaluates them through the tape; these forms serve tests, evaluation
//! and reporting.

use super::ModelError;

fn check_batch(a: &[Vec<f64>], b: &[Vec<f64>], what: &str) -> Result<(), ModelError> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(ModelError::InvalidConfig(format!(
            "{what}: batch shapes disagree"
        )));
    }
    if a.is_empty() || a[0].is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    Ok(())
}

/// Mean absolute error between predicted and target images, normalized by
/// batch size times component count.
pub fn loss_rec(predictions: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64, ModelError> {
    check_batch(predictions, targets, "loss_rec")?;
    let n = predictions.len();
    let ns = predictions[0].len();
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .flat_map(|(p, t)| p.iter().zip(t).map(|(&a, &b)| (a - b).abs()))
        .sum();
    Ok(sum / (n as f64 * ns as f64))
}

/// Mean absolute error between the predicted error and the actual absolute
/// prediction error |s_hat - s|.
pub fn loss_err(
    error_predictions: &[Vec<f64>],
    predictions: &[Vec<f64>],
    targets: &[Vec<f64>],
) -> Result<f64, ModelError> {
    check_batch(error_predictions, predictions, "loss_err")?;
    check_batch(predictions, targets, "loss_err")?;
    let n = predictions.len();
    let ns = predictions[0].len();
    let mut sum = 0.0;
    for ((e, p), t) in error_predictions.iter().zip(predictions).zip(targets) {
        for i in 0..p.len() {
            sum += (e[i] - (p[i] - t[i]).abs()).abs();
        }
    }
    Ok(sum / (n as f64 * ns as f64))
}

/// L = L_rec + alpha * L_err.
pub fn loss_total(rec: f64, err: f64, alpha: f64) -> Result<f64, ModelError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ModelError::InvalidConfig(format!(
            "alpha {alpha} outside [0, 1]"
        )));
    }
    Ok(rec + alpha * err)
}

/// Error-loss weight: ramps linearly from 0 at iteration 0 to 1 at
/// `ramp_end`, then stays at 1.
pub fn alpha_at(iter: usize, ramp_end: usize) -> f64 {
    debug_assert!(ramp_end > 0);
    (iter as f64 / ramp_end as f64).min(1.0)
}

/// Learning rate: linear from lr_start at iteration 0 to lr_end at
/// `iterations`.
pub fn lr_at(iter: usize, iterations: usize, lr_start: f64, lr_end: f64) -> f64 {
    debug_assert!(iterations > 0);
    lr_start + (lr_end - lr_start) * iter as f64 / iterations as f64
}
