//! Image and geometry quality metrics: PSNR, SSIM (with analytic gradient,
//! shared with the training loss), Chamfer distance, and an edge-sharpness
//! score for boundary ablations.

use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Default SSIM window: 11x11 Gaussian, sigma 1.5.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn check_same_shape(a: &[Vec3], b: &[Vec3], context: &'static str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { context, expected: a.len(), got: b.len() });
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical images.
pub fn psnr(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    check_same_shape(a, b, "psnr images")?;
    if a.is_empty() {
        return Err(Error::EmptyPointSet("psnr"));
    }
    let mut mse = 0.0;
    for (x, y) in a.iter().zip(b) {
        mse += (x - y).norm_squared();
    }
    mse /= (a.len() * 3) as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

fn gaussian_kernel(window: usize, sigma: f64) -> Vec<f64> {
    let half = (window / 2) as isize;
    let mut k: Vec<f64> = (-half..=half)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Valid-windowed separable correlation of a single-channel map.
fn correlate_valid(src: &[f64], w: usize, h: usize, kernel: &[f64]) -> (Vec<f64>, usize, usize) {
    let win = kernel.len();
    let ow = w - win + 1;
    let oh = h - win + 1;
    // Horizontal pass.
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                acc += kv * src[y * w + x + k];
            }
            tmp[y * ow + x] = acc;
        }
    }
    // Vertical pass.
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                acc += kv * tmp[(y + k) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    (out, ow, oh)
}

/// Scatter-correlation: spreads each valid-window value back over the pixels
/// it covered, weighted by the kernel (the adjoint of `correlate_valid`).
fn scatter_valid(src: &[f64], ow: usize, oh: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let win = kernel.len();
    let h = oh + win - 1;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = src[y * ow + x];
            if v == 0.0 {
                continue;
            }
            for (k, kv) in kernel.iter().enumerate() {
                tmp[(y + k) * ow + x] += kv * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = tmp[y * ow + x];
            if v == 0.0 {
                continue;
            }
            for (k, kv) in kernel.iter().enumerate() {
                out[y * w + x + k] += kv * v;
            }
        }
    }
    out
}

/// Mean SSIM over valid window positions, channel-averaged, plus the
/// gradient of the mean with respect to the first image.
pub fn ssim_with_grad(
    a: &[Vec3],
    b: &[Vec3],
    width: usize,
    height: usize,
    window: usize,
) -> Result<(f64, Vec<Vec3>)> {
    check_same_shape(a, b, "ssim images")?;
    if width < window || height < window {
        return Err(Error::ImageSmallerThanWindow { width, height, window });
    }
    let kernel = gaussian_kernel(window, SSIM_SIGMA);
    let mut total = 0.0;
    let mut grad = vec![Vec3::zeros(); a.len()];
    let n_windows_per_channel = (width - window + 1) * (height - window + 1);
    let norm = 1.0 / (3.0 * n_windows_per_channel as f64);

    for ch in 0..3 {
        let x: Vec<f64> = a.iter().map(|p| p[ch]).collect();
        let y: Vec<f64> = b.iter().map(|p| p[ch]).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u * v).collect();

        let (mu_x, ow, oh) = correlate_valid(&x, width, height, &kernel);
        let (mu_y, _, _) = correlate_valid(&y, width, height, &kernel);
        let (m_xx, _, _) = correlate_valid(&xx, width, height, &kernel);
        let (m_yy, _, _) = correlate_valid(&yy, width, height, &kernel);
        let (m_xy, _, _) = correlate_valid(&xy, width, height, &kernel);

        // Per-window coefficient maps for the gradient:
        // ds/dx_k = g_k (c0 + cy y_k + cx x_k).
        let mut c0 = vec![0.0; ow * oh];
        let mut cx = vec![0.0; ow * oh];
        let mut cy = vec![0.0; ow * oh];
        for i in 0..ow * oh {
            let sx = m_xx[i] - mu_x[i] * mu_x[i];
            let sy = m_yy[i] - mu_y[i] * mu_y[i];
            let sxy = m_xy[i] - mu_x[i] * mu_y[i];
            let a1 = 2.0 * mu_x[i] * mu_y[i] + SSIM_C1;
            let a2 = 2.0 * sxy + SSIM_C2;
            let b1 = mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + SSIM_C1;
            let b2 = sx + sy + SSIM_C2;
            let s = (a1 * a2) / (b1 * b2);
            total += s;
            // d s / d x_k = g_k [ (2 mu_y A2 + 2 A1 (y_k - mu_y)) / (B1 B2)
            //                     - s (2 mu_x / B1 + 2 (x_k - mu_x) / B2) ]
            let inv_b1b2 = 1.0 / (b1 * b2);
            let t_yk = 2.0 * a1 * inv_b1b2;
            let t_xk = -s * 2.0 / b2;
            c0[i] = 2.0 * mu_y[i] * a2 * inv_b1b2 - t_yk * mu_y[i]
                - s * 2.0 * mu_x[i] / b1
                + s * 2.0 * mu_x[i] / b2;
            cy[i] = t_yk;
            cx[i] = t_xk;
        }
        let g0 = scatter_valid(&c0, ow, oh, width, &kernel);
        let gx = scatter_valid(&cx, ow, oh, width, &kernel);
        let gy = scatter_valid(&cy, ow, oh, width, &kernel);
        for (i, g) in grad.iter_mut().enumerate() {
            g[ch] = norm * (g0[i] + gx[i] * x[i] + gy[i] * y[i]);
        }
    }
    // Exact division keeps ssim(a, a) = 1 bit-exact.
    Ok((total / (3.0 * n_windows_per_channel as f64), grad))
}

/// Mean SSIM at the standard 11x11 window.
pub fn ssim(a: &[Vec3], b: &[Vec3], width: usize, height: usize) -> Result<f64> {
    ssim_with_grad(a, b, width, height, SSIM_WINDOW).map(|(s, _)| s)
}

/// Naive double-loop SSIM reference (tests and acceptance oracle).
pub fn ssim_reference(
    a: &[Vec3],
    b: &[Vec3],
    width: usize,
    height: usize,
    window: usize,
) -> Result<f64> {
    check_same_shape(a, b, "ssim images")?;
    if width < window || height < window {
        return Err(Error::ImageSmallerThanWindow { width, height, window });
    }
    let kernel = gaussian_kernel(window, SSIM_SIGMA);
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..3 {
        for wy in 0..=height - window {
            for wx in 0..=width - window {
                let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for ky in 0..window {
                    for kx in 0..window {
                        let wgt = kernel[ky] * kernel[kx];
                        let xv = a[(wy + ky) * width + wx + kx][ch];
                        let yv = b[(wy + ky) * width + wx + kx][ch];
                        mx += wgt * xv;
                        my += wgt * yv;
                        mxx += wgt * xv * xv;
                        myy += wgt * yv * yv;
                        mxy += wgt * xv * yv;
                    }
                }
                let sx = mxx - mx * mx;
                let sy = myy - my * my;
                let sxy = mxy - mx * my;
                let s = ((2.0 * mx * my + SSIM_C1) * (2.0 * sxy + SSIM_C2))
                    / ((mx * mx + my * my + SSIM_C1) * (sx + sy + SSIM_C2));
                total += s;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Symmetric Chamfer distance: half the sum of directed mean
/// nearest-neighbor distances. Grid-accelerated above 10^4 points with
/// results identical to the brute force scan.
pub fn chamfer(p: &[Vec3], q: &[Vec3]) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::EmptyPointSet("chamfer"));
    }
    Ok(0.5 * (directed_mean_nn(p, q) + directed_mean_nn(q, p)))
}

fn directed_mean_nn(from: &[Vec3], to: &[Vec3]) -> f64 {
    let total: f64 = if to.len() <= 10_000 {
        use rayon::prelude::*;
        from.par_iter().map(|p| brute_nn(*p, to).sqrt()).sum()
    } else {
        let grid = PointGrid::build(to);
        use rayon::prelude::*;
        from.par_iter().map(|p| grid.nearest_sq(*p).sqrt()).sum()
    };
    total / from.len() as f64
}

fn brute_nn(p: Vec3, to: &[Vec3]) -> f64 {
    to.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min)
}

/// Uniform voxel grid for exact nearest-neighbor queries: search rings of
/// cells outward until the closed ring bound exceeds the best hit.
struct PointGrid {
    cell: f64,
    origin: Vec3,
    dims: [i64; 3],
    cells: Vec<Vec<u32>>,
    points: Vec<Vec3>,
}

impl PointGrid {
    fn build(points: &[Vec3]) -> Self {
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let extent = hi - lo;
        let volume = (extent.x.max(1e-9)) * (extent.y.max(1e-9)) * (extent.z.max(1e-9));
        // Aim for a few points per cell.
        let cell = (volume / points.len() as f64).cbrt().max(1e-9);
        let dims = [
            ((extent.x / cell).floor() as i64 + 1).max(1),
            ((extent.y / cell).floor() as i64 + 1).max(1),
            ((extent.z / cell).floor() as i64 + 1).max(1),
        ];
        let mut cells = vec![Vec::new(); (dims[0] * dims[1] * dims[2]) as usize];
        for (i, p) in points.iter().enumerate() {
            let c = Self::cell_of_static(*p, lo, cell, dims);
            cells[c].push(i as u32);
        }
        Self { cell, origin: lo, dims, cells, points: points.to_vec() }
    }

    fn cell_of_static(p: Vec3, origin: Vec3, cell: f64, dims: [i64; 3]) -> usize {
        let ix = (((p.x - origin.x) / cell).floor() as i64).clamp(0, dims[0] - 1);
        let iy = (((p.y - origin.y) / cell).floor() as i64).clamp(0, dims[1] - 1);
        let iz = (((p.z - origin.z) / cell).floor() as i64).clamp(0, dims[2] - 1);
        ((iz * dims[1] + iy) * dims[0] + ix) as usize
    }

    fn nearest_sq(&self, p: Vec3) -> f64 {
        let ix = (((p.x - self.origin.x) / self.cell).floor() as i64).clamp(0, self.dims[0] - 1);
        let iy = (((p.y - self.origin.y) / self.cell).floor() as i64).clamp(0, self.dims[1] - 1);
        let iz = (((p.z - self.origin.z) / self.cell).floor() as i64).clamp(0, self.dims[2] - 1);
        let mut best = f64::INFINITY;
        let max_ring = self.dims.iter().max().copied().unwrap_or(1);
        for ring in 0..=max_ring {
            // Once the nearest possible point in this ring cannot beat the
            // best hit, the scan is complete.
            if ring > 0 {
                let ring_min = (ring - 1) as f64 * self.cell;
                if best.is_finite() && ring_min * ring_min > best {
                    break;
                }
            }
            for dz in -ring..=ring {
                for dy in -ring..=ring {
                    for dx in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        let (cx, cy, cz) = (ix + dx, iy + dy, iz + dz);
                        if cx < 0
                            || cy < 0
                            || cz < 0
                            || cx >= self.dims[0]
                            || cy >= self.dims[1]
                            || cz >= self.dims[2]
                        {
                            continue;
                        }
                        let cell_idx = ((cz * self.dims[1] + cy) * self.dims[0] + cx) as usize;
                        for &pi in &self.cells[cell_idx] {
                            best = best.min((p - self.points[pi as usize]).norm_squared());
                        }
                    }
                }
            }
        }
        best
    }
}

/// 3x3 Sobel gradient magnitude of a grayscale image (replicated border).
pub fn sobel_magnitude(gray: &[f64], width: usize, height: usize) -> Vec<f64> {
    let at = |x: i64, y: i64| -> f64 {
        let xc = x.clamp(0, width as i64 - 1) as usize;
        let yc = y.clamp(0, height as i64 - 1) as usize;
        gray[yc * width + xc]
    };
    let mut out = vec![0.0; width * height];
    for y in 0..height as i64 {
        for x in 0..width as i64 {
            let gx = -at(x - 1, y - 1) + at(x + 1, y - 1) - 2.0 * at(x - 1, y)
                + 2.0 * at(x + 1, y)
                - at(x - 1, y + 1)
                + at(x + 1, y + 1);
            let gy = -at(x - 1, y - 1) - 2.0 * at(x, y - 1) - at(x + 1, y - 1)
                + at(x - 1, y + 1)
                + 2.0 * at(x, y + 1)
                + at(x + 1, y + 1);
            out[y as usize * width + x as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

/// Rec. 601 luma.
pub fn luminance(image: &[Vec3]) -> Vec<f64> {
    image.iter().map(|c| 0.299 * c.x + 0.587 * c.y + 0.114 * c.z).collect()
}

/// Mean Sobel magnitude over masked pixels.
pub fn edge_sharpness(
    image: &[Vec3],
    width: usize,
    height: usize,
    mask: &[bool],
) -> Result<f64> {
    if image.len() != mask.len() {
        return Err(Error::DimensionMismatch {
            context: "edge_sharpness mask",
            expected: image.len(),
            got: mask.len(),
        });
    }
    let count = mask.iter().filter(|m| **m).count();
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let grad = sobel_magnitude(&luminance(image), width, height);
    let sum: f64 = grad.iter().zip(mask).filter(|(_, m)| **m).map(|(g, _)| g).sum();
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect()
    }

    #[test]
    fn psnr_anchors() {
        let a = vec![Vec3::repeat(0.5); 64];
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let zero = vec![Vec3::zeros(); 64];
        let one = vec![Vec3::repeat(1.0); 64];
        assert_abs_diff_eq!(psnr(&zero, &one).unwrap(), 0.0, epsilon = 1e-12);
        // Uniform squared error of 0.01 -> 20 dB.
        let b: Vec<Vec3> = a.iter().map(|c| c + Vec3::repeat(0.1)).collect();
        assert_abs_diff_eq!(psnr(&a, &b).unwrap(), 20.0, epsilon = 1e-9);
        assert_abs_diff_eq!(psnr(&b, &a).unwrap(), 20.0, epsilon = 1e-9);
        assert!(psnr(&a, &zero[..32].to_vec()).is_err());
    }

    #[test]
    fn ssim_identical_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(&mut rng, 16 * 16);
        let (s, _) = ssim_with_grad(&a, &a, 16, 16, SSIM_WINDOW).unwrap();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn ssim_opposite_constants_near_zero() {
        // Closed form for constant images: sigma terms vanish, so
        // s = (2 mx my + C1) C2 / ((mx^2 + my^2 + C1) (0 + C2)).
        let a = vec![Vec3::zeros(); 16 * 16];
        let b = vec![Vec3::repeat(1.0); 16 * 16];
        let s = ssim(&a, &b, 16, 16).unwrap();
        let expected = SSIM_C1 / (1.0 + SSIM_C1);
        assert_abs_diff_eq!(s, expected, epsilon = 1e-12);
        assert!(s < 0.01);
    }

    #[test]
    fn ssim_matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_image(&mut rng, 20 * 14);
        let b = random_image(&mut rng, 20 * 14);
        let fast = ssim(&a, &b, 20, 14).unwrap();
        let naive = ssim_reference(&a, &b, 20, 14, SSIM_WINDOW).unwrap();
        assert_abs_diff_eq!(fast, naive, epsilon = 1e-9);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = vec![Vec3::zeros(); 64];
        assert!(matches!(
            ssim(&a, &a, 8, 8),
            Err(Error::ImageSmallerThanWindow { .. })
        ));
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = 13;
        let h = 12;
        let mut a = random_image(&mut rng, w * h);
        let b = random_image(&mut rng, w * h);
        let (_, grad) = ssim_with_grad(&a, &b, w, h, SSIM_WINDOW).unwrap();
        let eps = 1e-6;
        for trial in 0..40 {
            let idx = (trial * 7) % (w * h);
            let ch = trial % 3;
            let orig = a[idx][ch];
            a[idx][ch] = orig + eps;
            let (sp, _) = ssim_with_grad(&a, &b, w, h, SSIM_WINDOW).unwrap();
            a[idx][ch] = orig - eps;
            let (sm, _) = ssim_with_grad(&a, &b, w, h, SSIM_WINDOW).unwrap();
            a[idx][ch] = orig;
            let fd = (sp - sm) / (2.0 * eps);
            assert_relative_eq!(grad[idx][ch], fd, epsilon = 1e-7, max_relative = 1e-5);
        }
    }

    #[test]
    fn chamfer_anchors() {
        let p = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)];
        assert_eq!(chamfer(&p, &p).unwrap(), 0.0);
        let a = vec![Vec3::zeros()];
        let b = vec![Vec3::new(3.0, 0.0, 0.0)];
        assert_abs_diff_eq!(chamfer(&a, &b).unwrap(), 3.0, epsilon = 1e-12);
        assert!(chamfer(&a, &[]).is_err());
        // Symmetry.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p: Vec<Vec3> = (0..50).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let q: Vec<Vec3> = (0..70).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        assert_abs_diff_eq!(chamfer(&p, &q).unwrap(), chamfer(&q, &p).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn grid_nn_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let points: Vec<Vec3> = (0..3000)
            .map(|_| Vec3::new(rng.gen::<f64>() * 3.0, rng.gen::<f64>() * 0.5, rng.gen()))
            .collect();
        let grid = PointGrid::build(&points);
        for _ in 0..200 {
            let p = Vec3::new(
                rng.gen::<f64>() * 4.0 - 0.5,
                rng.gen::<f64>() * 1.0 - 0.25,
                rng.gen::<f64>() * 1.5 - 0.25,
            );
            let brute = brute_nn(p, &points);
            let fast = grid.nearest_sq(p);
            assert_eq!(brute.to_bits(), fast.to_bits());
        }
    }

    #[test]
    fn sobel_unit_step_value() {
        // Hand-evaluated stencil: a vertical 0 -> 1 step gives |gx| = 4 at
        // the two columns adjacent to the edge (0-1 scale).
        let w = 8;
        let h = 6;
        let gray: Vec<f64> =
            (0..w * h).map(|i| if (i % w) >= 4 { 1.0 } else { 0.0 }).collect();
        let g = sobel_magnitude(&gray, w, h);
        for y in 1..h - 1 {
            assert_abs_diff_eq!(g[y * w + 3], 4.0, epsilon = 1e-12);
            assert_abs_diff_eq!(g[y * w + 4], 4.0, epsilon = 1e-12);
            assert_abs_diff_eq!(g[y * w + 1], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn edge_sharpness_prefers_hard_edges() {
        let w = 16;
        let h = 16;
        let hard: Vec<Vec3> = (0..w * h)
            .map(|i| if (i % w) >= 8 { Vec3::repeat(1.0) } else { Vec3::zeros() })
            .collect();
        // Soft edge: linear ramp over 6 pixels approximates a blurred step.
        let soft: Vec<Vec3> = (0..w * h)
            .map(|i| {
                let x = (i % w) as f64;
                Vec3::repeat(((x - 5.0) / 6.0).clamp(0.0, 1.0))
            })
            .collect();
        let mask: Vec<bool> = (0..w * h).map(|i| (4..12).contains(&(i % w))).collect();
        let hard_score = edge_sharpness(&hard, w, h, &mask).unwrap();
        let soft_score = edge_sharpness(&soft, w, h, &mask).unwrap();
        assert!(hard_score > soft_score);
        let flat = vec![Vec3::repeat(0.5); w * h];
        assert_abs_diff_eq!(edge_sharpness(&flat, w, h, &mask).unwrap(), 0.0, epsilon = 1e-12);
        let empty = vec![false; w * h];
        assert!(matches!(edge_sharpness(&flat, w, h, &empty), Err(Error::EmptyMask)));
    }
}
