//! Adaptive split/prune scheduling.
//!
//! Between scheduler events the loop accumulates, per primitive, the mean
//! position-gradient norm, the mean target edge gradient over owned pixels,
//! and visibility bookkeeping. At an event, primitives above the gradient or
//! edge thresholds are replaced by their four exact midpoint subdivisions
//! (color nets restricted polynomially, attribute maps resampled at child
//! texel centers), and occluded or degenerate primitives are pruned.

use crate::attrmap::sample_footprint;
use crate::backward::GradientBuffers;
use crate::bezier::{restrict_values, subdivision_corners, BarycentricCoord, SCENE_DEGREE};
use crate::error::{Error, Result};
use crate::raster::RasterBuffers;
use crate::scene::{BgTrianglePrimitive, Scene, VISIBILITY_RESOLUTION};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Split and prune thresholds plus schedule, with the published defaults.
#[derive(Clone, Debug)]
pub struct RefineConfig {
    /// Mean position-gradient norm above which a primitive splits.
    pub tau_g: f64,
    /// Mean accumulated edge gradient (0-255 Sobel scale) above which a
    /// primitive splits.
    pub tau_b: f64,
    /// Visibility view-ratio below which a primitive is pruned.
    pub tau_v: f64,
    /// Visible-texel ratio below which a primitive is pruned.
    pub tau_r: f64,
    /// Surface area below which a primitive is pruned.
    pub tau_a: f64,
    /// Control-net aspect ratio above which a primitive is pruned.
    pub tau_s: f64,
    /// Hard cap on the primitive count.
    pub primitive_ceiling: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            tau_g: 0.0018,
            tau_b: 13.0,
            tau_v: 0.08,
            tau_r: 0.4,
            tau_a: 3e-4,
            tau_s: 10.0,
            primitive_ceiling: 10_000,
        }
    }
}

/// Folds one view's gradients and edge prior into the per-primitive stats.
/// `edge_map` holds Sobel magnitudes of the grayscale target on the 0-255
/// scale. Primitives owning no pixel in this view only advance their view
/// counter.
pub fn accumulate_split_stats(
    scene: &mut Scene,
    grads: &GradientBuffers,
    buffers: &RasterBuffers,
    edge_map: &[f64],
) {
    let n = scene.primitives.len();
    let mut pixel_count = vec![0u64; n];
    let mut edge_sum = vec![0.0; n];
    for idx in 0..buffers.i_id.len() {
        if !buffers.is_foreground(idx) {
            continue;
        }
        let prim = buffers.i_prim[idx];
        pixel_count[prim] += 1;
        edge_sum[prim] += edge_map[idx];
        let bc = buffers.bc_at(idx);
        for (texel, w) in sample_footprint(VISIBILITY_RESOLUTION, bc) {
            if w > 0.0 {
                scene.primitives[prim].stats.visibility_texture[texel] = true;
            }
        }
    }
    for (i, prim) in scene.primitives.iter_mut().enumerate() {
        prim.stats.total_views += 1;
        if pixel_count[i] == 0 {
            continue;
        }
        prim.stats.seen_views += 1;
        prim.stats.position_grad_sum += grads.prims[i].mean_position_grad_norm();
        prim.stats.position_grad_views += 1;
        prim.stats.edge_grad_sum += edge_sum[i] / pixel_count[i] as f64;
        prim.stats.edge_grad_views += 1;
    }
}

/// Four children of a primitive: exact geometric subdivision, polynomially
/// restricted color nets, attribute maps resampled at child texel centers.
pub fn split_primitive(
    prim: &BgTrianglePrimitive,
    ids: [u64; 4],
) -> Result<[BgTrianglePrimitive; 4]> {
    let nets = prim.geometry.subdivide_4()?;
    let corners = subdivision_corners();
    let mut out = Vec::with_capacity(4);
    for ((net, corner), id) in nets.into_iter().zip(&corners).zip(ids) {
        let color_net = restrict_values(SCENE_DEGREE, &prim.color_net, corner)?;
        let mut child = BgTrianglePrimitive::new(id, net, crate::geom::Vec3::repeat(0.5));
        child.color_net = color_net;
        for kind in [
            crate::attrmap::AttributeKind::Rotation,
            crate::attrmap::AttributeKind::Scaling,
            crate::attrmap::AttributeKind::Sh,
        ] {
            let parent_map = prim.map(kind);
            let child_map = child.map_mut(kind);
            for (texel, ix, iy) in child_map.texel_coords() {
                let child_bc = child_map.texel_center(ix, iy);
                let parent_bc = BarycentricCoord::combine(child_bc.as_array(), corner);
                let value = parent_map.sample_raw(parent_bc);
                child_map.texel_mut(texel).copy_from_slice(&value);
            }
        }
        out.push(child);
    }
    Ok(out.try_into().map_err(|_| ()).expect("four children"))
}

/// Outcome counters of one scheduler event.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RefineReport {
    pub split: usize,
    pub children_kept: usize,
    pub children_dropped: usize,
    pub pruned: usize,
}

/// Runs one split/prune event. Stats reset afterwards. `seed` keeps the
/// ceiling-limited child selection deterministic.
pub fn split_and_prune(scene: &mut Scene, config: &RefineConfig, seed: u64) -> Result<RefineReport> {
    let mut report = RefineReport::default();

    // ---- split ----
    // Each accepted split nets +3 primitives. When the ceiling cannot take
    // every candidate, the candidates furthest over their thresholds split
    // first and the rest stay intact, so coverage never tears and the
    // budget concentrates where the criteria fire hardest.
    let _ = seed;
    let mut candidates: Vec<(usize, f64)> = scene
        .primitives
        .iter()
        .enumerate()
        .filter(|(_, prim)| {
            prim.stats.position_grad_views > 0
                && (prim.stats.mean_position_grad() > config.tau_g
                    || prim.stats.mean_edge_grad() > config.tau_b)
        })
        .map(|(i, prim)| {
            let score = (prim.stats.mean_position_grad() / config.tau_g)
                .max(prim.stats.mean_edge_grad() / config.tau_b);
            (i, score)
        })
        .collect();
    let budget = config.primitive_ceiling.saturating_sub(scene.primitives.len()) / 3;
    if candidates.len() > budget {
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        report.children_dropped = (candidates.len() - budget) * 4;
        candidates.truncate(budget);
    }
    let accepted: Vec<usize> = candidates.into_iter().map(|(i, _)| i).collect();
    let accepted: std::collections::BTreeSet<usize> = accepted.into_iter().collect();
    let mut kept: Vec<BgTrianglePrimitive> = Vec::with_capacity(scene.primitives.len());
    let primitives = std::mem::take(&mut scene.primitives);
    for (i, prim) in primitives.into_iter().enumerate() {
        if accepted.contains(&i) {
            let ids = [
                scene.allocate_id(),
                scene.allocate_id(),
                scene.allocate_id(),
                scene.allocate_id(),
            ];
            kept.extend(split_primitive(&prim, ids)?);
            report.split += 1;
            report.children_kept += 4;
        } else {
            kept.push(prim);
        }
    }
    scene.primitives = kept;

    // ---- prune ----
    let before = scene.primitives.len();
    scene.primitives.retain(|prim| {
        // Stats-driven criteria apply only to primitives observed since the
        // last event; fresh children carry no history yet.
        if prim.stats.total_views > 0 {
            if prim.stats.visibility_ratio() < config.tau_v {
                return false;
            }
            if prim.stats.visible_texel_ratio() < config.tau_r {
                return false;
            }
        }
        prim.approximate_area() >= config.tau_a && prim.aspect_ratio() <= config.tau_s
    });
    report.pruned = before - scene.primitives.len();
    if scene.primitives.is_empty() {
        return Err(Error::AllPrimitivesPruned);
    }
    for prim in &mut scene.primitives {
        prim.stats.reset();
    }
    Ok(report)
}
