//! Plain-value loss functions. The differentiable versions live on the
//! tape ([`crate::tape::Tape::bce_mean`], [`crate::tape::Tape::dice_loss`]);
//! these compute the same values without recording.

use crate::error::{AvnError, Result};

pub const BCE_EPS: f64 = 1e-7;

/// Mean of -[y ln p + (1-y) ln(1-p)] with p clamped to [eps, 1-eps].
pub fn bce_loss(probs: &[f64], labels: &[f64]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(AvnError::dim("bce_loss", probs.len(), labels.len()));
    }
    let n = probs.len() as f64;
    let mut loss = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        let c = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        loss -= (y * c.ln() + (1.0 - y) * (1.0 - c).ln()) / n;
    }
    Ok(loss)
}

/// 1 - (2 sum(p*y) + smooth) / (sum(p) + sum(y) + smooth).
pub fn dice_loss(probs: &[f64], labels: &[f64], smooth: f64) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(AvnError::dim("dice_loss", probs.len(), labels.len()));
    }
    let inter: f64 = probs.iter().zip(labels).map(|(&p, &y)| p * y).sum();
    let psum: f64 = probs.iter().sum();
    let ysum: f64 = labels.iter().sum();
    Ok(1.0 - (2.0 * inter + smooth) / (psum + ysum + smooth))
}

/// lambda_bce * BCE + lambda_dice * Dice.
pub fn combined_loss(
    probs: &[f64],
    labels: &[f64],
    lambda_bce: f64,
    lambda_dice: f64,
    smooth: f64,
) -> Result<f64> {
    Ok(lambda_bce * bce_loss(probs, labels)? + lambda_dice * dice_loss(probs, labels, smooth)?)
}
