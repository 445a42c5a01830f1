//! Splatting: Gaussian projection, discontinuity-aware blending, and
//! tile-based front-to-back compositing.
//!
//! Each sub-primitive projects to a 2D Gaussian. Near primitive boundaries
//! a blending coefficient `w` in [0, 1] suppresses contributions across the
//! boundary: `w` ramps from 0.5 at a boundary point to 1 on the Gaussian's
//! own side (and symmetrically to 0 on the far side) over the boundary
//! radius, so edges stay sharp while the rendering remains differentiable.

use crate::camera::Camera;
use crate::geom::{Mat2, Mat3, Vec2, Vec3};
use crate::raster::{BoundaryPoint, RasterBuffers};
use crate::subprim::SubPrimitive;
use rayon::prelude::*;

/// Side length of the compositing / boundary-search tiles, in pixels.
pub const TILE_SIZE: u32 = 16;
/// Influence cutoff: a boundary point covers a pixel within `K_CUT * sigma`.
/// gamma saturates at one sigma, so any cutoff >= 1 is lossless; 3 leaves
/// margin for the backward band.
pub const K_CUT: f64 = 3.0;
/// Descriptive screen-space bounding radius of a projected Gaussian, in
/// standard deviations of its major axis.
pub const GAUSSIAN_CUTOFF_SIGMA: f64 = 3.0;
/// Tile binning margin over the bounding radius. Contributions survive the
/// ALPHA_SKIP threshold only inside ~3.33 sigma (for w = 1, o < 1), so
/// binning at 3.6 sigma makes the tile lists a strict superset of every
/// pixel a Gaussian can touch: tiling is lossless and the support edge is
/// set by the alpha threshold alone, not by a moving distance cut.
pub const BIN_MARGIN: f64 = 1.2;
/// Contributions with alpha below this are skipped.
pub const ALPHA_SKIP: f64 = 1.0 / 255.0;
/// Alpha is clamped to at most this value.
pub const ALPHA_MAX: f64 = 0.99;
/// A pixel stops accumulating once its transmittance drops below this.
pub const TRANSMITTANCE_EPS: f64 = 1e-4;
/// Low-pass regularization added to the projected covariance diagonal.
pub const COV_REGULARIZATION: f64 = 0.3;

/// Blurring ramp `gamma(d; sigma) = min(2^(d/sigma - 1), 1)`: maps distance
/// to [0.5, 1] inside the boundary radius and saturates outside.
pub fn gamma(d: f64, sigma: f64) -> f64 {
    (2.0f64.powf(d / sigma - 1.0)).min(1.0)
}

/// Derivative of `gamma` in the unsaturated region:
/// `gamma'(d) = (ln 2 / sigma) * gamma(d)` for d < sigma, zero beyond.
pub fn gamma_prime(d: f64, sigma: f64) -> f64 {
    if d < sigma {
        (2.0f64.ln() / sigma) * gamma(d, sigma)
    } else {
        0.0
    }
}

/// A sub-primitive projected to screen space.
#[derive(Clone, Debug)]
pub struct ProjectedGaussian {
    /// Index into the sub-primitive list.
    pub sub_index: usize,
    pub owner_id: u64,
    pub owner_index: usize,
    pub mean: Vec2,
    pub cov: Mat2,
    /// Inverse covariance.
    pub conic: Mat2,
    pub depth: f64,
    /// Final color: diffuse plus SH residual, clamped to [0, 1].
    pub color: Vec3,
    /// Screen-space bounding radius (3 sigma of the major axis).
    pub radius: f64,
}

/// Projects one sub-primitive; `None` when behind the near plane.
pub fn project(sub: &SubPrimitive, sub_index: usize, cam: &Camera) -> Option<ProjectedGaussian> {
    let t = cam.world_to_camera(sub.position);
    if t.z <= cam.near {
        return None;
    }
    let mean = cam.project_camera_point(t);
    let jac = cam.projection_jacobian(t);
    let rot_world = sub.world_rotation();
    let d = Mat3::from_diagonal(&Vec3::new(
        sub.scale[0] * sub.scale[0],
        sub.scale[1] * sub.scale[1],
        sub.scale[2] * sub.scale[2],
    ));
    let cov3 = rot_world * d * rot_world.transpose();
    let cov3_cam = cam.rotation * cov3 * cam.rotation.transpose();
    let mut cov = jac * cov3_cam * jac.transpose();
    cov[(0, 0)] += COV_REGULARIZATION;
    cov[(1, 1)] += COV_REGULARIZATION;
    let det = cov.determinant();
    if det <= 0.0 {
        return None;
    }
    let conic = Mat2::new(cov[(1, 1)], -cov[(0, 1)], -cov[(1, 0)], cov[(0, 0)]) / det;
    // Largest eigenvalue of the 2x2 covariance.
    let mid = 0.5 * (cov[(0, 0)] + cov[(1, 1)]);
    let disc = (mid * mid - det).max(0.0).sqrt();
    let radius = GAUSSIAN_CUTOFF_SIGMA * (mid + disc).max(0.0).sqrt();

    let view_dir = (sub.position - cam.position()).normalize();
    let residual = crate::sh::eval_sh_residual(&sub.sh, view_dir);
    let c = sub.diffuse + residual;
    let color = Vec3::new(c.x.clamp(0.0, 1.0), c.y.clamp(0.0, 1.0), c.z.clamp(0.0, 1.0));

    Some(ProjectedGaussian {
        sub_index,
        owner_id: sub.owner_id,
        owner_index: sub.owner_index,
        mean,
        cov,
        conic,
        depth: t.z,
        color,
        radius,
    })
}

/// Projects all sub-primitives, keeping the deterministic input order.
pub fn project_all(subs: &[SubPrimitive], cam: &Camera) -> Vec<ProjectedGaussian> {
    subs.iter().enumerate().filter_map(|(i, s)| project(s, i, cam)).collect()
}

/// Tile-bucketed boundary points, sorted by owner id within each tile for
/// binary search.
#[derive(Clone, Debug)]
pub struct BoundaryTileIndex {
    pub tiles_x: u32,
    pub tiles_y: u32,
    /// Boundary point indices per tile, sorted by (owner id, insertion).
    pub tiles: Vec<Vec<u32>>,
}

impl BoundaryTileIndex {
    pub fn tile_of(&self, p: Vec2) -> Option<usize> {
        let tx = (p.x / TILE_SIZE as f64).floor();
        let ty = (p.y / TILE_SIZE as f64).floor();
        if tx < 0.0 || ty < 0.0 || tx >= self.tiles_x as f64 || ty >= self.tiles_y as f64 {
            return None;
        }
        Some(ty as usize * self.tiles_x as usize + tx as usize)
    }
}

fn disc_overlaps_tile(center: Vec2, radius: f64, tx: u32, ty: u32) -> bool {
    let x0 = (tx * TILE_SIZE) as f64;
    let y0 = (ty * TILE_SIZE) as f64;
    let x1 = x0 + TILE_SIZE as f64;
    let y1 = y0 + TILE_SIZE as f64;
    let dx = (x0 - center.x).max(0.0).max(center.x - x1);
    let dy = (y0 - center.y).max(0.0).max(center.y - y1);
    dx * dx + dy * dy < radius * radius
}

/// Builds the tile index: each boundary point is registered in exactly the
/// tiles its influence disc (radius `K_CUT * sigma`) overlaps.
pub fn build_boundary_tiles(points: &[BoundaryPoint], width: u32, height: u32) -> BoundaryTileIndex {
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let mut tiles = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    for (i, bp) in points.iter().enumerate() {
        let r = K_CUT * bp.sigma;
        let tx_min = (((bp.pos2d.x - r) / TILE_SIZE as f64).floor().max(0.0)) as u32;
        let ty_min = (((bp.pos2d.y - r) / TILE_SIZE as f64).floor().max(0.0)) as u32;
        let tx_max = ((bp.pos2d.x + r) / TILE_SIZE as f64).floor() as i64;
        let ty_max = ((bp.pos2d.y + r) / TILE_SIZE as f64).floor() as i64;
        let tx_max = tx_max.clamp(0, tiles_x as i64 - 1) as u32;
        let ty_max = ty_max.clamp(0, tiles_y as i64 - 1) as u32;
        for ty in ty_min..=ty_max {
            for tx in tx_min..=tx_max {
                if disc_overlaps_tile(bp.pos2d, r, tx, ty) {
                    tiles[(ty * tiles_x + tx) as usize].push(i as u32);
                }
            }
        }
    }
    for tile in &mut tiles {
        // Stable: preserves insertion order within an owner id.
        tile.sort_by_key(|i| points[*i as usize].owner_id);
    }
    BoundaryTileIndex { tiles_x, tiles_y, tiles }
}

/// The boundary point found for a (pixel, owner) query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocatedBoundary {
    pub point: u32,
    pub dist: f64,
    pub gamma: f64,
    /// True when the queried pixel belongs to the Gaussian's own primitive.
    pub same_side: bool,
}

/// Searches the tile of `q` for the most influential boundary point owned by
/// `g` (smallest gamma; ties broken by smaller distance, then smaller point
/// index) among those whose influence disc covers `q`.
fn locate_boundary(
    q: Vec2,
    g: u64,
    index: &BoundaryTileIndex,
    points: &[BoundaryPoint],
) -> Option<(u32, f64, f64)> {
    let tile = index.tile_of(q)?;
    let bucket = &index.tiles[tile];
    let start = bucket.partition_point(|i| points[*i as usize].owner_id < g);
    let mut best: Option<(f64, f64, u32)> = None; // (gamma, dist, index)
    for &i in &bucket[start..] {
        let bp = &points[i as usize];
        if bp.owner_id != g {
            break;
        }
        let d = (q - bp.pos2d).norm();
        if d >= K_CUT * bp.sigma {
            continue;
        }
        let gam = gamma(d, bp.sigma);
        let candidate = (gam, d, i);
        best = Some(match best {
            None => candidate,
            Some(b) => {
                if (candidate.0, candidate.1, candidate.2) < (b.0, b.1, b.2) {
                    candidate
                } else {
                    b
                }
            }
        });
    }
    best.map(|(gam, d, i)| (i, d, gam))
}

/// Blending coefficient for a Gaussian owned by `g` at pixel `q` whose index
/// map entry is `pixel_id`. Returns the coefficient and the located boundary
/// point, if any.
pub fn blending_coefficient_located(
    q: Vec2,
    g: u64,
    pixel_id: i64,
    index: &BoundaryTileIndex,
    points: &[BoundaryPoint],
) -> (f64, Option<LocatedBoundary>) {
    let own_side = pixel_id >= 0 && pixel_id as u64 == g;
    match locate_boundary(q, g, index, points) {
        None => {
            // No boundary influence: the coefficient degenerates to the
            // indicator of being inside the primitive's own region.
            if own_side {
                (1.0, None)
            } else {
                (0.0, None)
            }
        }
        Some((point, dist, gam)) => {
            let located = LocatedBoundary { point, dist, gamma: gam, same_side: own_side };
            if own_side {
                (gam, Some(located))
            } else {
                (1.0 - gam, Some(located))
            }
        }
    }
}

/// Blending coefficient as a plain value (spec operation surface).
pub fn blending_coefficient(
    q: Vec2,
    g: u64,
    pixel_id: i64,
    index: &BoundaryTileIndex,
    points: &[BoundaryPoint],
) -> f64 {
    blending_coefficient_located(q, g, pixel_id, index, points).0
}

/// Brute-force reference scan over all boundary points (used by tests and
/// the acceptance suite to prove the tile index lossless).
pub fn blending_coefficient_brute_force(
    q: Vec2,
    g: u64,
    pixel_id: i64,
    points: &[BoundaryPoint],
) -> f64 {
    let mut best: Option<(f64, f64, u32)> = None;
    for (i, bp) in points.iter().enumerate() {
        if bp.owner_id != g {
            continue;
        }
        let d = (q - bp.pos2d).norm();
        if d >= K_CUT * bp.sigma {
            continue;
        }
        let gam = gamma(d, bp.sigma);
        let candidate = (gam, d, i as u32);
        best = Some(match best {
            None => candidate,
            Some(b) => {
                if candidate < b {
                    candidate
                } else {
                    b
                }
            }
        });
    }
    let own_side = pixel_id >= 0 && pixel_id as u64 == g;
    match best {
        None => {
            if own_side {
                1.0
            } else {
                0.0
            }
        }
        Some((gam, _, _)) => {
            if own_side {
                gam
            } else {
                1.0 - gam
            }
        }
    }
}

/// One recorded contribution, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct PixelContribution {
    /// Index into the projected-Gaussian list.
    pub gaussian: u32,
    /// Transmittance before this contribution.
    pub t_before: f64,
    pub alpha: f64,
    /// Blending coefficient used in alpha.
    pub w: f64,
    /// Gaussian falloff exp term.
    pub gexp: f64,
    /// True when alpha hit the ALPHA_MAX clamp (gradient is cut there).
    pub clamped: bool,
    pub located: Option<LocatedBoundary>,
}

#[derive(Clone, Debug, Default)]
pub struct CompositeOptions {
    /// Renders with w = 1 everywhere (the "without boundaries" ablation).
    pub disable_blending: bool,
    /// Keep per-pixel contribution records for the backward pass.
    pub collect_records: bool,
}

/// Composited image plus transmittance and (optionally) contribution records.
#[derive(Clone, Debug)]
pub struct CompositeOutput {
    pub width: u32,
    pub height: u32,
    pub image: Vec<Vec3>,
    /// Final transmittance per pixel.
    pub t_final: Vec<f64>,
    /// Per-pixel contribution records (empty unless requested).
    pub records: Vec<Vec<PixelContribution>>,
}

/// Front-to-back alpha compositing over 16x16 tiles.
///
/// Within a tile, Gaussians are sorted by (depth, sub-primitive index);
/// per pixel, alpha = o * w * exp-term, clamped and thresholded, and
/// accumulation terminates once transmittance is negligible. Tiles are
/// independent, so the result is identical for any thread count.
pub fn composite(
    gaussians: &[ProjectedGaussian],
    buffers: &RasterBuffers,
    boundary_index: &BoundaryTileIndex,
    boundary_points: &[BoundaryPoint],
    background: Vec3,
    opacity: f64,
    opts: &CompositeOptions,
) -> CompositeOutput {
    let (width, height) = (buffers.width, buffers.height);
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);

    // Bin Gaussians into tiles (sequential, deterministic insertion order).
    let mut tile_gaussians: Vec<Vec<u32>> = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    for (i, g) in gaussians.iter().enumerate() {
        let r = (g.radius * BIN_MARGIN).max(1.0);
        let tx_min = (((g.mean.x - r) / TILE_SIZE as f64).floor().max(0.0)) as u32;
        let ty_min = (((g.mean.y - r) / TILE_SIZE as f64).floor().max(0.0)) as u32;
        let tx_max = (((g.mean.x + r) / TILE_SIZE as f64).floor()).min(tiles_x as f64 - 1.0);
        let ty_max = (((g.mean.y + r) / TILE_SIZE as f64).floor()).min(tiles_y as f64 - 1.0);
        if tx_max < 0.0 || ty_max < 0.0 {
            continue;
        }
        for ty in ty_min..=ty_max as u32 {
            for tx in tx_min..=tx_max as u32 {
                tile_gaussians[(ty * tiles_x + tx) as usize].push(i as u32);
            }
        }
    }

    struct TileResult {
        tile: usize,
        pixels: Vec<(usize, Vec3, f64, Vec<PixelContribution>)>,
    }

    let tile_results: Vec<TileResult> = (0..(tiles_x * tiles_y) as usize)
        .into_par_iter()
        .map(|tile| {
            let tx = (tile as u32) % tiles_x;
            let ty = (tile as u32) / tiles_x;
            let mut order = tile_gaussians[tile].clone();
            order.sort_by(|a, b| {
                let ga = &gaussians[*a as usize];
                let gb = &gaussians[*b as usize];
                ga.depth
                    .total_cmp(&gb.depth)
                    .then(ga.sub_index.cmp(&gb.sub_index))
            });

            let x_end = ((tx + 1) * TILE_SIZE).min(width);
            let y_end = ((ty + 1) * TILE_SIZE).min(height);
            let mut pixels = Vec::with_capacity((TILE_SIZE * TILE_SIZE) as usize);
            // (owner, w, located) cache per pixel.
            let mut w_cache: Vec<(u64, f64, Option<LocatedBoundary>)> = Vec::with_capacity(8);
            for py in ty * TILE_SIZE..y_end {
                for px in tx * TILE_SIZE..x_end {
                    let pixel_index = buffers.pixel_index(px, py);
                    let q = Vec2::new(px as f64 + 0.5, py as f64 + 0.5);
                    let pixel_id = buffers.i_id[pixel_index];
                    w_cache.clear();
                    let mut color = Vec3::zeros();
                    let mut t = 1.0;
                    let mut records = Vec::new();
                    for &gi in &order {
                        let g = &gaussians[gi as usize];
                        let d = q - g.mean;
                        let e = -0.5 * (g.conic * d).dot(&d);
                        if e < -13.0 {
                            // exp(-13) is far below the alpha threshold.
                            continue;
                        }
                        let gexp = e.exp();
                        let (w, located) = if opts.disable_blending {
                            (1.0, None)
                        } else {
                            match w_cache.iter().find(|(owner, _, _)| *owner == g.owner_id) {
                                Some((_, w, located)) => (*w, *located),
                                None => {
                                    let (w, located) = blending_coefficient_located(
                                        q,
                                        g.owner_id,
                                        pixel_id,
                                        boundary_index,
                                        boundary_points,
                                    );
                                    w_cache.push((g.owner_id, w, located));
                                    (w, located)
                                }
                            }
                        };
                        let alpha_raw = opacity * w * gexp;
                        if alpha_raw < ALPHA_SKIP {
                            continue;
                        }
                        let clamped = alpha_raw > ALPHA_MAX;
                        let alpha = alpha_raw.min(ALPHA_MAX);
                        if opts.collect_records {
                            records.push(PixelContribution {
                                gaussian: gi,
                                t_before: t,
                                alpha,
                                w,
                                gexp,
                                clamped,
                                located,
                            });
                        }
                        color += g.color * (t * alpha);
                        t *= 1.0 - alpha;
                        if t < TRANSMITTANCE_EPS {
                            break;
                        }
                    }
                    color += background * t;
                    pixels.push((pixel_index, color, t, records));
                }
            }
            TileResult { tile, pixels }
        })
        .collect();

    let n = (width * height) as usize;
    let mut out = CompositeOutput {
        width,
        height,
        image: vec![background; n],
        t_final: vec![1.0; n],
        records: vec![Vec::new(); if opts.collect_records { n } else { 0 }],
    };
    let mut sorted = tile_results;
    sorted.sort_by_key(|r| r.tile);
    for tr in sorted {
        for (idx, color, t, records) in tr.pixels {
            out.image[idx] = color;
            out.t_final[idx] = t;
            if opts.collect_records {
                out.records[idx] = records;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bezier::BarycentricCoord;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gamma_anchor_values() {
        assert_eq!(gamma(0.0, 2.0), 0.5);
        assert_eq!(gamma(2.0, 2.0), 1.0);
        assert_eq!(gamma(5.0, 2.0), 1.0);
        assert!(gamma(1.0, 2.0) > 0.5 && gamma(1.0, 2.0) < 1.0);
    }

    #[test]
    fn gamma_prime_identity() {
        // Supplement identity gamma' = (ln 2 / sigma) * gamma inside the ramp.
        for sigma in [0.5, 1.0, 3.0] {
            for frac in [0.0, 0.25, 0.5, 0.99] {
                let d = frac * sigma;
                assert_abs_diff_eq!(
                    gamma_prime(d, sigma),
                    2.0f64.ln() / sigma * gamma(d, sigma),
                    epsilon = 1e-15
                );
            }
            assert_eq!(gamma_prime(sigma, sigma), 0.0);
            assert_eq!(gamma_prime(2.0 * sigma, sigma), 0.0);
        }
    }

    fn synthetic_boundary(points: &[(f64, f64, u64, f64)]) -> Vec<BoundaryPoint> {
        points
            .iter()
            .map(|(x, y, owner, sigma)| BoundaryPoint {
                pixel: (*x as u32, *y as u32),
                owner_id: *owner,
                owner_index: *owner as usize,
                bc: BarycentricCoord::centroid(),
                point3d: Vec3::zeros(),
                pos2d: Vec2::new(*x, *y),
                sigma: *sigma,
            })
            .collect()
    }

    #[test]
    fn tile_membership_small_disc() {
        let points = synthetic_boundary(&[(8.0, 8.0, 0, 0.5)]);
        let index = build_boundary_tiles(&points, 64, 64);
        let occupied: usize = index.tiles.iter().filter(|t| !t.is_empty()).count();
        assert_eq!(occupied, 1);
        assert_eq!(index.tiles[0], vec![0]);
    }

    #[test]
    fn tile_membership_corner_disc() {
        // Influence disc crossing the 4-tile corner at (16, 16).
        let points = synthetic_boundary(&[(16.0, 16.0, 0, 1.0)]);
        let index = build_boundary_tiles(&points, 64, 64);
        let occupied: Vec<usize> = index
            .tiles
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.is_empty())
            .map(|(i, _)| i)
            .collect();
        assert_eq!(occupied, vec![0, 1, 4, 5]);
    }

    #[test]
    fn tile_membership_matches_brute_force_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let points: Vec<BoundaryPoint> = (0..500)
            .map(|i| {
                let raw = (
                    rng.gen::<f64>() * 96.0,
                    rng.gen::<f64>() * 96.0,
                    (i % 17) as u64,
                    0.2 + rng.gen::<f64>() * 6.0,
                );
                synthetic_boundary(&[raw]).pop().unwrap()
            })
            .collect();
        let index = build_boundary_tiles(&points, 96, 96);
        for (tile_idx, tile) in index.tiles.iter().enumerate() {
            let tx = (tile_idx as u32) % index.tiles_x;
            let ty = (tile_idx as u32) / index.tiles_x;
            let mut expected: Vec<u32> = (0..points.len() as u32)
                .filter(|i| {
                    let bp = &points[*i as usize];
                    disc_overlaps_tile(bp.pos2d, K_CUT * bp.sigma, tx, ty)
                })
                .collect();
            expected.sort_by_key(|i| points[*i as usize].owner_id);
            assert_eq!(tile, &expected, "tile ({}, {})", tx, ty);
            // Within-tile owner ids are non-decreasing.
            assert!(tile.windows(2).all(|w| {
                points[w[0] as usize].owner_id <= points[w[1] as usize].owner_id
            }));
        }
    }

    /// A 2x1-ish index map: id 0 on the left half, id 1 on the right.
    fn split_buffers(width: u32, height: u32) -> RasterBuffers {
        let mut buffers = RasterBuffers::new(width, height);
        for y in 0..height {
            for x in 0..width {
                let idx = buffers.pixel_index(x, y);
                buffers.i_id[idx] = if x < width / 2 { 0 } else { 1 };
                buffers.i_prim[idx] = buffers.i_id[idx] as usize;
                buffers.depth[idx] = 1.0;
                buffers.i_uv[idx] = [1.0, 0.0, 0.0];
            }
        }
        buffers
    }

    #[test]
    fn blending_cases_at_and_beyond_boundary() {
        let width = 32;
        let _buffers = split_buffers(width, 32);
        let sigma = 4.0;
        let points = synthetic_boundary(&[(16.0, 16.0, 0, sigma), (17.0, 16.0, 1, sigma)]);
        let index = build_boundary_tiles(&points, width, 32);

        // d = 0: gamma = 0.5, so w = 0.5 on both sides of the boundary
        // (own side at the owner-0 point, far side at the owner-1 point).
        assert_eq!(blending_coefficient(Vec2::new(16.0, 16.0), 0, 0, &index, &points), 0.5);
        assert_eq!(blending_coefficient(Vec2::new(17.0, 16.0), 1, 0, &index, &points), 0.5);

        // d >= sigma: own side 1, far side 0.
        let far_left = Vec2::new(16.0 - sigma - 0.5, 16.0);
        assert_eq!(blending_coefficient(far_left, 0, 0, &index, &points), 1.0);
        assert_eq!(blending_coefficient(far_left, 1, 0, &index, &points), 0.0);

        // No covering point at all: indicator of ownership.
        let outside = Vec2::new(2.0, 2.0);
        assert_eq!(blending_coefficient(outside, 0, 0, &index, &points), 1.0);
        assert_eq!(blending_coefficient(outside, 1, 0, &index, &points), 0.0);
    }

    #[test]
    fn blending_own_side_outweighs_far_side_near_boundary() {
        // Inside region a near the a/b boundary the coefficient from a's
        // Gaussian (own side) exceeds the coefficient from b's.
        let width = 32;
        let buffers = split_buffers(width, 32);
        let _ = &buffers;
        let sigma = 4.0;
        let points = synthetic_boundary(&[(16.0, 16.0, 0, sigma), (16.0, 16.0, 1, sigma)]);
        let index = build_boundary_tiles(&points, width, 32);
        let p1 = Vec2::new(14.5, 16.0); // inside id 0, near the boundary
        let w_own = blending_coefficient(p1, 0, 0, &index, &points);
        let w_far = blending_coefficient(p1, 1, 0, &index, &points);
        assert!(w_own >= 0.5);
        assert!(w_far <= 0.5);
        assert!(w_own > w_far);
    }

    #[test]
    fn blending_is_continuous_at_disc_edge() {
        let width = 64;
        let sigma = 3.0;
        let points = synthetic_boundary(&[(32.0, 32.0, 5, sigma)]);
        let index = build_boundary_tiles(&points, width, width);
        // Approaching the saturation radius from inside matches the
        // no-covering-point values exactly at d = sigma.
        let inside_own =
            blending_coefficient(Vec2::new(32.0 + sigma - 1e-9, 32.0), 5, 5, &index, &points);
        let outside_own =
            blending_coefficient(Vec2::new(32.0 + sigma + 1.0, 32.0), 5, 5, &index, &points);
        assert_abs_diff_eq!(inside_own, 1.0, epsilon = 1e-9);
        assert_eq!(outside_own, 1.0);
        let inside_far =
            blending_coefficient(Vec2::new(32.0 + sigma - 1e-9, 32.0), 5, 0, &index, &points);
        let outside_far =
            blending_coefficient(Vec2::new(32.0 + sigma + 1.0, 32.0), 5, 0, &index, &points);
        assert_abs_diff_eq!(inside_far, 0.0, epsilon = 1e-9);
        assert_eq!(outside_far, 0.0);
    }

    #[test]
    fn tile_search_matches_brute_force_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let width = 128u32;
        let points: Vec<BoundaryPoint> = (0..2000)
            .map(|i| {
                synthetic_boundary(&[(
                    rng.gen::<f64>() * width as f64,
                    rng.gen::<f64>() * width as f64,
                    (i % 23) as u64,
                    0.2 + rng.gen::<f64>() * 4.0,
                )])
                .pop()
                .unwrap()
            })
            .collect();
        let index = build_boundary_tiles(&points, width, width);
        for _ in 0..3000 {
            let q = Vec2::new(rng.gen::<f64>() * width as f64, rng.gen::<f64>() * width as f64);
            let g = (rng.gen::<u32>() % 23) as u64;
            let pixel_id = (rng.gen::<u32>() % 24) as i64 - 1;
            let fast = blending_coefficient(q, g, pixel_id, &index, &points);
            let brute = blending_coefficient_brute_force(q, g, pixel_id, &points);
            assert_eq!(fast.to_bits(), brute.to_bits());
        }
    }

    fn lone_gaussian(mean: Vec2, sigma: f64, color: Vec3, depth: f64, owner: u64) -> ProjectedGaussian {
        let cov = Mat2::new(sigma * sigma, 0.0, 0.0, sigma * sigma);
        ProjectedGaussian {
            sub_index: 0,
            owner_id: owner,
            owner_index: owner as usize,
            mean,
            cov,
            conic: cov.try_inverse().unwrap(),
            depth,
            color,
            radius: 3.0 * sigma,
        }
    }

    #[test]
    fn composite_empty_scene_is_background() {
        let buffers = split_buffers(32, 32);
        let index = build_boundary_tiles(&[], 32, 32);
        let bg = Vec3::new(0.2, 0.4, 0.6);
        let out = composite(&[], &buffers, &index, &[], bg, 0.99, &CompositeOptions::default());
        assert!(out.image.iter().all(|c| *c == bg));
        assert!(out.t_final.iter().all(|t| *t == 1.0));
    }

    #[test]
    fn composite_single_gaussian_center_pixel() {
        // One Gaussian centered exactly on a pixel center with w = 1:
        // alpha = o there, C = o * c + (1 - o) * bg.
        let mut buffers = split_buffers(32, 32);
        for id in buffers.i_id.iter_mut() {
            *id = 0;
        }
        let index = build_boundary_tiles(&[], 32, 32);
        let color = Vec3::new(0.9, 0.1, 0.3);
        let bg = Vec3::new(0.0, 0.0, 1.0);
        let o = 0.99;
        let g = lone_gaussian(Vec2::new(16.5, 16.5), 1.0, color, 2.0, 0);
        let out =
            composite(&[g], &buffers, &index, &[], bg, o, &CompositeOptions::default());
        let center = out.image[(16 * 32 + 16) as usize];
        let expected = color * o + bg * (1.0 - o);
        assert_relative_eq!(center, expected, epsilon = 1e-12);
    }

    #[test]
    fn composite_matches_direct_summation_oracle() {
        // Three overlapping Gaussians on one pixel: C equals the direct
        // evaluation of sum T_i alpha_i c_i + T_n c_bg.
        let mut buffers = split_buffers(8, 8);
        for id in buffers.i_id.iter_mut() {
            *id = 0;
        }
        let index = build_boundary_tiles(&[], 8, 8);
        let bg = Vec3::new(0.25, 0.25, 0.25);
        let o = 0.8;
        let gaussians = vec![
            lone_gaussian(Vec2::new(4.5, 4.5), 1.5, Vec3::new(1.0, 0.0, 0.0), 1.0, 0),
            lone_gaussian(Vec2::new(4.0, 4.2), 2.0, Vec3::new(0.0, 1.0, 0.0), 2.0, 0),
            lone_gaussian(Vec2::new(5.0, 4.8), 1.0, Vec3::new(0.0, 0.0, 1.0), 3.0, 0),
        ];
        let mut with_index = gaussians.clone();
        for (i, g) in with_index.iter_mut().enumerate() {
            g.sub_index = i;
        }
        let opts = CompositeOptions { disable_blending: false, collect_records: true };
        let out = composite(&with_index, &buffers, &index, &[], bg, o, &opts);

        for py in 0..8u32 {
            for px in 0..8u32 {
                let q = Vec2::new(px as f64 + 0.5, py as f64 + 0.5);
                let idx = (py * 8 + px) as usize;
                // Direct oracle: sort by depth, accumulate the sum formula.
                let mut terms: Vec<(f64, Vec3)> = Vec::new();
                let mut t = 1.0;
                for g in &with_index {
                    let d = q - g.mean;
                    let e = (-0.5 * (g.conic * d).dot(&d)).exp();
                    let alpha = (o * e).min(ALPHA_MAX);
                    if o * e < ALPHA_SKIP || e < (-13.0f64).exp() {
                        continue;
                    }
                    terms.push((t * alpha, g.color));
                    t *= 1.0 - alpha;
                    if t < TRANSMITTANCE_EPS {
                        break;
                    }
                }
                let mut expected = bg * t;
                for (ta, c) in &terms {
                    expected += c * *ta;
                }
                assert_relative_eq!(out.image[idx], expected, epsilon = 1e-12);
                // Energy: sum T_i alpha_i + T_n = 1 (telescoping).
                let sum: f64 = out.records[idx].iter().map(|r| r.t_before * r.alpha).sum();
                assert_abs_diff_eq!(sum + out.t_final[idx], 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn transmittance_is_monotone_and_telescoping() {
        let mut buffers = split_buffers(16, 16);
        for id in buffers.i_id.iter_mut() {
            *id = 0;
        }
        let index = build_boundary_tiles(&[], 16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let gaussians: Vec<ProjectedGaussian> = (0..40)
            .map(|i| {
                let mut g = lone_gaussian(
                    Vec2::new(rng.gen::<f64>() * 16.0, rng.gen::<f64>() * 16.0),
                    0.5 + rng.gen::<f64>() * 2.0,
                    Vec3::new(rng.gen(), rng.gen(), rng.gen()),
                    rng.gen::<f64>() * 10.0,
                    0,
                );
                g.sub_index = i;
                g
            })
            .collect();
        let opts = CompositeOptions { disable_blending: false, collect_records: true };
        let out = composite(&gaussians, &buffers, &index, &[], Vec3::zeros(), 0.9, &opts);
        for (idx, records) in out.records.iter().enumerate() {
            let mut t = 1.0;
            for r in records {
                assert!(r.t_before <= t + 1e-15);
                assert_abs_diff_eq!(r.t_before, t, epsilon = 1e-15);
                t *= 1.0 - r.alpha;
                assert!((0.0..=1.0).contains(&t));
            }
            assert_abs_diff_eq!(t, out.t_final[idx], epsilon = 1e-15);
        }
    }

    #[test]
    fn disabling_blending_matches_plain_reference() {
        // Self-consistency of the w = 1 ablation path: a simple all-pixels
        // reference compositor with no boundary logic gives the same image.
        let buffers = split_buffers(32, 32);
        let sigma = 2.0;
        let points = synthetic_boundary(&[(16.0, 16.0, 0, sigma)]);
        let index = build_boundary_tiles(&points, 32, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let gaussians: Vec<ProjectedGaussian> = (0..60)
            .map(|i| {
                let mut g = lone_gaussian(
                    Vec2::new(rng.gen::<f64>() * 32.0, rng.gen::<f64>() * 32.0),
                    0.5 + rng.gen::<f64>() * 2.0,
                    Vec3::new(rng.gen(), rng.gen(), rng.gen()),
                    rng.gen::<f64>() * 10.0,
                    (i % 2) as u64,
                );
                g.sub_index = i;
                g
            })
            .collect();
        let opts = CompositeOptions { disable_blending: true, collect_records: false };
        let bg = Vec3::new(0.1, 0.1, 0.1);
        let out = composite(&gaussians, &buffers, &index, &points, bg, 0.95, &opts);

        let mut order: Vec<usize> = (0..gaussians.len()).collect();
        order.sort_by(|a, b| {
            gaussians[*a]
                .depth
                .total_cmp(&gaussians[*b].depth)
                .then(gaussians[*a].sub_index.cmp(&gaussians[*b].sub_index))
        });
        for py in 0..32u32 {
            for px in 0..32u32 {
                let q = Vec2::new(px as f64 + 0.5, py as f64 + 0.5);
                let mut color = Vec3::zeros();
                let mut t = 1.0;
                for &gi in &order {
                    let g = &gaussians[gi];
                    let d = q - g.mean;
                    let e = -0.5 * (g.conic * d).dot(&d);
                    if e < -13.0 {
                        continue;
                    }
                    let alpha_raw = 0.95 * e.exp();
                    if alpha_raw < ALPHA_SKIP {
                        continue;
                    }
                    let alpha = alpha_raw.min(ALPHA_MAX);
                    color += g.color * (t * alpha);
                    t *= 1.0 - alpha;
                    if t < TRANSMITTANCE_EPS {
                        break;
                    }
                }
                color += bg * t;
                let idx = (py * 32 + px) as usize;
                assert_relative_eq!(out.image[idx], color, epsilon = 1e-12);
            }
        }
    }
}
