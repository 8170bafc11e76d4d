//! Mixed SSIM + L1 objective on a single-channel prediction.

use crate::error::{Error, Result};
use crate::iqa::ssim_raw;
use crate::tensor::Tensor;

/// Weight of the SSIM term.
pub const ALPHA: f64 = 0.84;

/// `alpha * (1 - SSIM) + (1 - alpha) * mean|pred - target|` and its gradient
/// with respect to `pred`. SSIM uses unit data range.
pub fn ssim_l1_loss_raw(pred: &[f64], target: &[f64], w: usize, h: usize) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() || pred.len() != w * h {
        return Err(Error::Shape(format!(
            "loss on {}-pixel prediction and {}-pixel target for {w}x{h}",
            pred.len(),
            target.len()
        )));
    }
    let (s, g_ssim) = ssim_raw(pred, target, w, h, 1.0, true)?;
    let g_ssim = g_ssim.expect("gradient requested");
    let n = (w * h) as f64;
    let mut l1 = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .zip(&g_ssim)
        .map(|((&p, &t), &gs)| {
            let d = p - t;
            l1 += d.abs();
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            -ALPHA * gs + (1.0 - ALPHA) * sign / n
        })
        .collect();
    Ok((ALPHA * (1.0 - s) + (1.0 - ALPHA) * l1 / n, grad))
}

pub fn ssim_l1_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.channels != 1 || !pred.same_shape(target) {
        return Err(Error::Shape("loss needs matching single-channel tensors".into()));
    }
    let (loss, grad) = ssim_l1_loss_raw(&pred.data, &target.data, pred.width, pred.height)?;
    Ok((loss, Tensor::from_vec(1, pred.height, pred.width, grad)?))
}
