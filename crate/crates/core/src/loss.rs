//! Training objective: photometric, transmittance sparsity and Eikonal terms.

use serde::{Deserialize, Serialize};

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::math::{Rgb, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Weight of the transmittance sparsity term.
    pub lambda_trans: f64,
    /// Weight of the Eikonal term.
    pub lambda_reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_trans: 0.1,
            lambda_reg: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_trans >= 0.0 && self.lambda_reg >= 0.0) {
            return Err(Error::InvalidArgument("loss weights must be non-negative"));
        }
        Ok(())
    }
}

/// Per-term values of one evaluation of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub color: f64,
    pub trans: f64,
    pub reg: f64,
}

/// Mean over pixels of the channel-summed absolute intensity error.
pub fn photometric_loss(pred: &[Rgb], gt: &[Rgb]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if pred.len() != gt.len() {
        return Err(Error::Shape("prediction and target counts differ"));
    }
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (0..3).map(|c| (p[c] - g[c]).abs()).sum::<f64>())
        .sum();
    Ok(sum / pred.len() as f64)
}

/// `(1/|batch|)·Σ_p Σ_ℓ |1 − T_ℓ|` over the internal segments of each pixel.
pub fn sparsity_loss<S: AsRef<[f64]>>(per_pixel: &[S]) -> Result<f64> {
    if per_pixel.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let sum: f64 = per_pixel
        .iter()
        .map(|p| p.as_ref().iter().map(|t| (1.0 - t).abs()).sum::<f64>())
        .sum();
    Ok(sum / per_pixel.len() as f64)
}

/// Mean of `(‖∇g‖ − 1)²`; an empty sample set contributes 0.
pub fn eikonal_loss(gradients: &[Vec3]) -> f64 {
    if gradients.is_empty() {
        return 0.0;
    }
    gradients.iter().map(|g| (g.length() - 1.0).powi(2)).sum::<f64>() / gradients.len() as f64
}

/// `L_color + λ₁·L_trans + λ₂·L_reg`; the sparsity term is dropped when
/// `sparsity` is false.
pub fn total_loss(c: LossComponents, w: &LossWeights, sparsity: bool) -> Result<f64> {
    for (name, v) in [("color", c.color), ("trans", c.trans), ("reg", c.reg)] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss(name));
        }
    }
    let trans = if sparsity { w.lambda_trans * c.trans } else { 0.0 };
    Ok(c.color + trans + w.lambda_reg * c.reg)
}
