//! Cross-entropy with a sharpness penalty on the target logits.

use crate::error::{Error, Result};
use crate::stmodel::{log_softmax, TokenId};

/// `CE(logits, targets) − α · mean_m logits[m][targets[m]]`, with CE summed
/// over positions.
pub fn sharpness_loss(logits: &[Vec<f64>], targets: &[TokenId], alpha: f64) -> Result<f64> {
    Ok(sharpness_loss_grad(logits, targets, alpha)?.0)
}

/// [`sharpness_loss`] and its gradient with respect to each logit vector.
pub fn sharpness_loss_grad(
    logits: &[Vec<f64>],
    targets: &[TokenId],
    alpha: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if logits.len() != targets.len() {
        return Err(Error::invalid(format!(
            "{} logit vectors for {} target positions",
            logits.len(),
            targets.len()
        )));
    }
    if !(alpha >= 0.0) {
        return Err(Error::invalid(format!("alpha must be >= 0, got {alpha}")));
    }
    let positions = targets.len();
    let mut ce = 0.0;
    let mut penalty = 0.0;
    let mut grads = Vec::with_capacity(positions);
    for (row, &t) in logits.iter().zip(targets) {
        let t = t as usize;
        if t >= row.len() {
            return Err(Error::invalid(format!("target id {t} outside {} logits", row.len())));
        }
        let lsm = log_softmax(row);
        ce -= lsm[t];
        penalty += row[t];
        let mut g: Vec<f64> = lsm.iter().map(|v| v.exp()).collect();
        g[t] -= 1.0 + alpha / positions as f64;
        grads.push(g);
    }
    let mean = if positions > 0 { penalty / positions as f64 } else { 0.0 };
    Ok((ce - alpha * mean, grads))
}
