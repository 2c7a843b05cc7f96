//! Fused loss operations with analytic gradients.

use alloc::vec::Vec;

use super::{Op, Tape, Var};
use crate::math;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Clamp applied to heatmap probabilities before taking logs.
pub const HEAT_EPS: f64 = 1e-4;
/// Clamp applied to edge probabilities before taking logs.
pub const BCE_EPS: f64 = 1e-7;

pub(crate) fn focal_term(p: f64, t: f64, alpha: f64, beta: f64) -> (f64, f64) {
    let clamped = !(HEAT_EPS..=1.0 - HEAT_EPS).contains(&p);
    let p = p.clamp(HEAT_EPS, 1.0 - HEAT_EPS);
    let (value, grad) = if t == 1.0 {
        let q = 1.0 - p;
        let v = -math::powf(q, alpha) * math::ln(p);
        let g = alpha * math::powf(q, alpha - 1.0) * math::ln(p) - math::powf(q, alpha) / p;
        (v, g)
    } else {
        let wneg = math::powf(1.0 - t, beta);
        let v = -wneg * math::powf(p, alpha) * math::ln(1.0 - p);
        let g = -wneg * (alpha * math::powf(p, alpha - 1.0) * math::ln(1.0 - p) - math::powf(p, alpha) / (1.0 - p));
        (v, g)
    };
    (value, if clamped { 0.0 } else { grad })
}

pub(crate) fn dice_parts(p: &[f64], g: &[f64]) -> (f64, f64) {
    let inter: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    let union: f64 = p.iter().map(|a| a * a).sum::<f64>() + g.iter().map(|b| b * b).sum::<f64>();
    (inter, union)
}

fn check_same(op: &'static str, shape: &[usize], len: usize) -> Result<()> {
    if shape.iter().product::<usize>() != len {
        return Err(Error::ShapeMismatch {
            op,
            left: shape.to_vec(),
            right: alloc::vec![len],
        });
    }
    Ok(())
}

impl Tape {
    /// Penalty-reduced pixelwise focal loss on probabilities `pred`
    /// against a splatted `target` heatmap, summed and divided by the
    /// number of exact-1 target cells (at least one).
    pub fn focal_loss(&mut self, pred: Var, target: Vec<f64>, alpha: f64, beta: f64) -> Result<Var> {
        check_same("focal_loss", self.shape(pred), target.len())?;
        let positives = target.iter().filter(|&&t| t == 1.0).count();
        let norm = positives.max(1) as f64;
        let total: f64 = self
            .data(pred)
            .iter()
            .zip(&target)
            .map(|(&p, &t)| focal_term(p, t, alpha, beta).0)
            .sum();
        let out = Tensor::scalar(total / norm);
        Ok(self.push(
            out,
            Op::Focal {
                pred,
                target,
                alpha,
                beta,
                norm,
            },
            &[pred],
        ))
    }

    /// `1 − (2Σpg + ε) / (Σp² + Σg² + ε)`.
    pub fn dice_loss(&mut self, pred: Var, target: Vec<f64>, eps: f64) -> Result<Var> {
        check_same("dice_loss", self.shape(pred), target.len())?;
        let (inter, union) = dice_parts(self.data(pred), &target);
        let out = Tensor::scalar(1.0 - (2.0 * inter + eps) / (union + eps));
        Ok(self.push(out, Op::Dice { pred, target, eps }, &[pred]))
    }

    /// Mean binary cross-entropy of probabilities against 0/1 labels.
    /// An empty input yields a constant zero.
    pub fn bce_loss(&mut self, pred: Var, labels: Vec<f64>) -> Result<Var> {
        check_same("bce_loss", self.shape(pred), labels.len())?;
        if labels.is_empty() {
            return Ok(self.constant(Tensor::scalar(0.0)));
        }
        let total: f64 = self
            .data(pred)
            .iter()
            .zip(&labels)
            .map(|(&p, &y)| {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(y * math::ln(p) + (1.0 - y) * math::ln(1.0 - p))
            })
            .sum();
        let out = Tensor::scalar(total / labels.len() as f64);
        Ok(self.push(
            out,
            Op::Bce {
                pred,
                labels,
                eps: BCE_EPS,
            },
            &[pred],
        ))
    }
}
