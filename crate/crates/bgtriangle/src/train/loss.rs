//! Photometric training loss: `(1 - lambda) L2 + lambda (1 - SSIM) / 2`
//! with an analytic per-pixel gradient.

use crate::error::Result;
use crate::geom::Vec3;
use crate::metrics::{ssim_with_grad, SSIM_WINDOW};

#[derive(Clone, Debug)]
pub struct LossOutput {
    pub total: f64,
    pub l2: f64,
    pub dssim: f64,
    /// d total / d rendered pixel.
    pub grad: Vec<Vec3>,
}

/// Largest odd window not exceeding the image; images smaller than the
/// standard 11x11 window use a shrunken window rather than failing, so the
/// same loss runs on tiny diagnostic renders.
pub fn effective_window(width: usize, height: usize) -> usize {
    let m = SSIM_WINDOW.min(width).min(height);
    if m % 2 == 0 {
        m - 1
    } else {
        m
    }
}

pub fn photometric_loss(
    render: &[Vec3],
    target: &[Vec3],
    width: usize,
    height: usize,
    lambda: f64,
) -> Result<LossOutput> {
    if render.len() != target.len() || render.len() != width * height {
        return Err(crate::error::Error::DimensionMismatch {
            context: "loss images",
            expected: width * height,
            got: render.len().min(target.len()),
        });
    }
    let n = (render.len() * 3) as f64;
    let mut l2 = 0.0;
    let mut grad: Vec<Vec3> = Vec::with_capacity(render.len());
    for (r, t) in render.iter().zip(target) {
        let d = r - t;
        l2 += d.norm_squared();
        grad.push(d * (2.0 * (1.0 - lambda) / n));
    }
    l2 /= n;

    let mut dssim = 0.0;
    if lambda > 0.0 {
        let window = effective_window(width, height);
        let (ssim, ssim_grad) = ssim_with_grad(render, target, width, height, window)?;
        dssim = (1.0 - ssim) / 2.0;
        for (g, sg) in grad.iter_mut().zip(&ssim_grad) {
            *g -= sg * (lambda / 2.0);
        }
    }
    Ok(LossOutput { total: (1.0 - lambda) * l2 + lambda * dssim, l2, dssim, grad })
}
