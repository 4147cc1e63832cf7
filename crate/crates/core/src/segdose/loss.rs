use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volgrid::{Mask3, Volume3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub w_dice: f64,
    pub w_bce: f64,
    pub eps: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_dice: 1.0,
            w_bce: 1.0,
            eps: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    /// Unweighted soft Dice loss `1 - (2Σpg + eps) / (Σp + Σg + eps)`.
    pub dice_term: f64,
    /// Unweighted mean binary cross-entropy.
    pub bce_term: f64,
    pub gradient: Vec<f64>,
}

/// Soft Dice plus binary cross-entropy with its exact gradient, on plain
/// slices. `truth` must be 0/1.
pub fn combined_loss_raw(pred: &[f64], truth: &[u8], weights: &LossWeights) -> Result<LossOutput> {
    let LossWeights { w_dice, w_bce, eps } = *weights;
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "prediction and truth lengths differ or are empty ({} vs {})",
            pred.len(),
            truth.len()
        )));
    }
    if !(w_dice >= 0.0 && w_bce >= 0.0) {
        return Err(Error::InvalidParameter("loss weights must be nonnegative".into()));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    if let Some((i, &p)) = pred
        .iter()
        .enumerate()
        .find(|(_, p)| !(0.0..=1.0).contains(*p))
    {
        return Err(Error::OutOfRange(format!(
            "prediction {p} at index {i} is outside [0, 1]"
        )));
    }
    let n = pred.len() as f64;
    let (mut inter, mut sp, mut sg, mut bce) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (&p, &g) in pred.iter().zip(truth) {
        let g = g as f64;
        inter += p * g;
        sp += p;
        sg += g;
        bce -= g * (p + eps).ln() + (1.0 - g) * (1.0 - p + eps).ln();
    }
    let num = 2.0 * inter + eps;
    let den = sp + sg + eps;
    let dice_term = 1.0 - num / den;
    let bce_term = bce / n;
    let gradient = pred
        .iter()
        .zip(truth)
        .map(|(&p, &g)| {
            let g = g as f64;
            let d_dice = -(2.0 * g * den - num) / (den * den);
            let d_bce = (-g / (p + eps) + (1.0 - g) / (1.0 - p + eps)) / n;
            w_dice * d_dice + w_bce * d_bce
        })
        .collect();
    Ok(LossOutput {
        loss: w_dice * dice_term + w_bce * bce_term,
        dice_term,
        bce_term,
        gradient,
    })
}

/// Combined loss of a probability volume against a binary mask. The
/// gradient in the output is elementwise with respect to `pred`.
pub fn combined_loss(pred: &Volume3, truth: &Mask3, weights: &LossWeights) -> Result<LossOutput> {
    pred.grid().ensure_matches(truth.grid(), "combined_loss")?;
    let p: Vec<f64> = pred.values().iter().map(|&v| v as f64).collect();
    combined_loss_raw(&p, truth.values(), weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::Grid;

    fn truth() -> Mask3 {
        Mask3::from_fn(Grid::unit([4, 4, 4]).unwrap(), |i, j, _| i < 2 && j > 0).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let t = truth();
        let out = combined_loss(&t.to_volume(), &t, &LossWeights::default()).unwrap();
        assert!(out.dice_term.abs() < 1e-12);
        assert!(out.bce_term.abs() < 2e-6);
    }

    #[test]
    fn total_miss() {
        let t = truth();
        let pred = t.to_volume().map(|v| 1.0 - v).unwrap();
        let out = combined_loss(&pred, &t, &LossWeights::default()).unwrap();
        assert!((out.dice_term - 1.0).abs() < 1e-6);
    }

    #[test]
    fn out_of_range_prediction() {
        let t = truth();
        let pred = Volume3::filled(*t.grid(), 1.5);
        assert!(matches!(
            combined_loss(&pred, &t, &LossWeights::default()),
            Err(Error::OutOfRange(_))
        ));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let truth: Vec<u8> = (0..30).map(|i| (i % 3 == 0) as u8).collect();
        let pred: Vec<f64> = (0..30).map(|i| 0.1 + 0.8 * ((i * 7 % 30) as f64 / 30.0)).collect();
        let w = LossWeights::default();
        let out = combined_loss_raw(&pred, &truth, &w).unwrap();
        let h = 1e-6;
        for i in 0..pred.len() {
            let mut up = pred.clone();
            let mut dn = pred.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (combined_loss_raw(&up, &truth, &w).unwrap().loss
                - combined_loss_raw(&dn, &truth, &w).unwrap().loss)
                / (2.0 * h);
            assert!((fd - out.gradient[i]).abs() <= 1e-6 * out.gradient[i].abs().max(1e-3));
        }
    }
}
