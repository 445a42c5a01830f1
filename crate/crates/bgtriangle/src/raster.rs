//! Tessellation and rasterization.
//!
//! Bézier triangles are tessellated into a uniform barycentric grid of flat
//! triangles per view, then rasterized with a z-buffer and perspective-correct
//! interpolation of the barycentric coordinates. The pass produces the
//! coordinate map `I_uv`, the index map `I_id`, a depth map, and the boundary
//! pixel set used by discontinuity-aware blending.

use crate::bezier::BarycentricCoord;
use crate::camera::Camera;
use crate::geom::{Vec2, Vec3};
use crate::scene::Scene;
use rayon::prelude::*;

/// Background sentinel in the index map.
pub const BACKGROUND_ID: i64 = -1;

/// Tessellation level bounds: `4^level` flat triangles per primitive.
pub const MIN_LEVEL: u32 = 1;
pub const MAX_LEVEL: u32 = 6;

/// Uniform tessellation of one primitive: a vertex grid with exact
/// barycentric parameters plus a triangle index list.
#[derive(Clone, Debug)]
pub struct Tessellation {
    pub level: u32,
    /// Barycentric parameter and world position per grid vertex.
    pub vertices: Vec<(BarycentricCoord, Vec3)>,
    pub triangles: Vec<[u32; 3]>,
}

/// Per-view rasterization output.
#[derive(Clone, Debug)]
pub struct RasterBuffers {
    pub width: u32,
    pub height: u32,
    /// Barycentric coordinates per pixel; (0, 0, 0) for background.
    pub i_uv: Vec<[f64; 3]>,
    /// Owning primitive id per pixel; -1 for background.
    pub i_id: Vec<i64>,
    /// Index of the owning primitive in `scene.primitives`; usize::MAX for
    /// background. Valid for the scene the buffers were rendered from.
    pub i_prim: Vec<usize>,
    /// Camera-space depth; +inf for background.
    pub depth: Vec<f64>,
}

impl RasterBuffers {
    pub fn new(width: u32, height: u32) -> Self {
        let n = (width * height) as usize;
        Self {
            width,
            height,
            i_uv: vec![[0.0; 3]; n],
            i_id: vec![BACKGROUND_ID; n],
            i_prim: vec![usize::MAX; n],
            depth: vec![f64::INFINITY; n],
        }
    }

    pub fn pixel_index(&self, x: u32, y: u32) -> usize {
        (y * self.width + x) as usize
    }

    pub fn is_foreground(&self, idx: usize) -> bool {
        self.i_id[idx] >= 0
    }

    pub fn bc_at(&self, idx: usize) -> BarycentricCoord {
        let [_, v, w] = self.i_uv[idx];
        BarycentricCoord::from_vw_clamped(v, w)
    }

    pub fn foreground_count(&self) -> usize {
        self.i_id.iter().filter(|id| **id >= 0).count()
    }
}

/// A boundary pixel: a foreground pixel with a 4-neighbor of different id.
///
/// The pixel location, barycentric parameter, and radius are fixed at
/// extraction; the 3D point and its projection are re-derived from the
/// control points (that is the only path through which gradients reach
/// geometry from the blending term).
#[derive(Clone, Debug)]
pub struct BoundaryPoint {
    pub pixel: (u32, u32),
    pub owner_id: u64,
    pub owner_index: usize,
    pub bc: BarycentricCoord,
    /// Surface point at `bc` of the owner primitive.
    pub point3d: Vec3,
    /// Projection of `point3d`, used for all distance computations.
    pub pos2d: Vec2,
    /// Projected boundary radius in pixels.
    pub sigma: f64,
}

/// Tessellation level from the longest projected control-net edge: the
/// smallest level with `edge / 2^level <= 1` pixel, clamped to [1, 6].
pub fn choose_level(prim_geometry: &crate::bezier::ControlNet, cam: &Camera) -> u32 {
    let mut longest: f64 = 0.0;
    let projected: Vec<Vec2> = prim_geometry
        .points()
        .iter()
        .map(|p| {
            let mut pc = cam.world_to_camera(*p);
            // Clamp points at or behind the near plane for sizing purposes.
            pc.z = pc.z.max(cam.near);
            cam.project_camera_point(pc)
        })
        .collect();
    for (a, b) in prim_geometry.net_edges() {
        longest = longest.max((projected[a] - projected[b]).norm());
    }
    let mut level = MIN_LEVEL;
    while level < MAX_LEVEL && longest / (1u64 << level) as f64 > 1.0 {
        level += 1;
    }
    level
}

/// Tessellates one primitive into `4^level` flat triangles on the exact
/// barycentric grid.
pub fn tessellate(prim_geometry: &crate::bezier::ControlNet, level: u32) -> Tessellation {
    let m = 1u32 << level;
    let mut vertices = Vec::with_capacity(((m + 1) * (m + 2) / 2) as usize);
    // Grid rows: a = rows of descending u; within a row, b spans v.
    let mut row_start = Vec::with_capacity((m + 1) as usize);
    for a in 0..=m {
        row_start.push(vertices.len() as u32);
        for b in 0..=a {
            let v = b as f64 / m as f64;
            let w = (a - b) as f64 / m as f64;
            let bc = BarycentricCoord::from_vw_clamped(v, w);
            vertices.push((bc, prim_geometry.evaluate(bc)));
        }
    }
    let mut triangles = Vec::with_capacity((m * m) as usize);
    for a in 0..m {
        for b in 0..=a {
            let top = row_start[a as usize] + b;
            let bl = row_start[(a + 1) as usize] + b;
            let br = bl + 1;
            triangles.push([top, bl, br]);
            if b < a {
                triangles.push([top, br, top + 1]);
            }
        }
    }
    Tessellation { level, vertices, triangles }
}

struct ProjectedVertex {
    screen: Vec2,
    z: f64,
    bc: BarycentricCoord,
}

/// Rasterizes the whole scene with nearest-depth wins and a deterministic
/// (depth, primitive id, triangle index) tie-break. The winner per pixel is
/// independent of primitive processing order.
pub fn rasterize(scene: &Scene, cam: &Camera) -> RasterBuffers {
    let mut buffers = RasterBuffers::new(cam.width, cam.height);
    // Tie-break bookkeeping: primitive id then flat-triangle index.
    let mut win_key: Vec<(i64, u32)> = vec![(i64::MAX, u32::MAX); buffers.depth.len()];

    let tessellations: Vec<Option<Tessellation>> = scene
        .primitives
        .par_iter()
        .map(|prim| {
            if cull_primitive(&prim.geometry, cam) {
                None
            } else {
                Some(tessellate(&prim.geometry, choose_level(&prim.geometry, cam)))
            }
        })
        .collect();

    for (prim_index, (prim, tess)) in scene.primitives.iter().zip(&tessellations).enumerate() {
        let Some(tess) = tess else { continue };
        let projected: Vec<Option<ProjectedVertex>> = tess
            .vertices
            .iter()
            .map(|(bc, world)| {
                let pc = cam.world_to_camera(*world);
                if pc.z <= cam.near || pc.z >= cam.far {
                    None
                } else {
                    Some(ProjectedVertex { screen: cam.project_camera_point(pc), z: pc.z, bc: *bc })
                }
            })
            .collect();
        for (tri_index, tri) in tess.triangles.iter().enumerate() {
            let (Some(v0), Some(v1), Some(v2)) = (
                projected[tri[0] as usize].as_ref(),
                projected[tri[1] as usize].as_ref(),
                projected[tri[2] as usize].as_ref(),
            ) else {
                // Triangles crossing the near/far planes are dropped; toy
                // scenes keep geometry well inside the frustum.
                continue;
            };
            raster_triangle(
                &mut buffers,
                &mut win_key,
                v0,
                v1,
                v2,
                prim.id,
                prim_index,
                tri_index as u32,
            );
        }
    }
    buffers
}

fn cull_primitive(geometry: &crate::bezier::ControlNet, cam: &Camera) -> bool {
    // Convex hull property: if every control point is behind the near plane
    // the surface is too. Also cull when the projected hull misses the image.
    let mut any_in_front = false;
    let mut lo = Vec2::repeat(f64::INFINITY);
    let mut hi = Vec2::repeat(f64::NEG_INFINITY);
    for p in geometry.points() {
        let pc = cam.world_to_camera(*p);
        if pc.z > cam.near {
            any_in_front = true;
        }
        let clamped = Vec3::new(pc.x, pc.y, pc.z.max(cam.near));
        let s = cam.project_camera_point(clamped);
        lo = lo.inf(&s);
        hi = hi.sup(&s);
    }
    if !any_in_front {
        return true;
    }
    hi.x < 0.0 || hi.y < 0.0 || lo.x > cam.width as f64 || lo.y > cam.height as f64
}

#[allow(clippy::too_many_arguments)]
fn raster_triangle(
    buffers: &mut RasterBuffers,
    win_key: &mut [(i64, u32)],
    v0: &ProjectedVertex,
    v1: &ProjectedVertex,
    v2: &ProjectedVertex,
    prim_id: u64,
    prim_index: usize,
    tri_index: u32,
) {
    let area = edge_function(v0.screen, v1.screen, v2.screen);
    if area == 0.0 {
        return;
    }
    let min_x = v0.screen.x.min(v1.screen.x).min(v2.screen.x).floor().max(0.0) as i64;
    let max_x =
        (v0.screen.x.max(v1.screen.x).max(v2.screen.x).ceil() as i64).min(buffers.width as i64 - 1);
    let min_y = v0.screen.y.min(v1.screen.y).min(v2.screen.y).floor().max(0.0) as i64;
    let max_y = (v0.screen.y.max(v1.screen.y).max(v2.screen.y).ceil() as i64)
        .min(buffers.height as i64 - 1);
    if min_x > max_x || min_y > max_y {
        return;
    }
    let inv_area = 1.0 / area;
    for py in min_y..=max_y {
        for px in min_x..=max_x {
            let p = Vec2::new(px as f64 + 0.5, py as f64 + 0.5);
            let w0 = edge_function(v1.screen, v2.screen, p) * inv_area;
            let w1 = edge_function(v2.screen, v0.screen, p) * inv_area;
            let w2 = edge_function(v0.screen, v1.screen, p) * inv_area;
            // Backfaces rasterize too: dividing by the signed area flips all
            // three weights positive for either winding.
            if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                continue;
            }
            // Perspective-correct interpolation of depth and parameters.
            let inv_z = w0 / v0.z + w1 / v1.z + w2 / v2.z;
            let z = 1.0 / inv_z;
            let idx = buffers.pixel_index(px as u32, py as u32);
            let better = z < buffers.depth[idx]
                || (z == buffers.depth[idx] && (prim_id as i64, tri_index) < win_key[idx]);
            if !better {
                continue;
            }
            let bv =
                (w0 * v0.bc.v() / v0.z + w1 * v1.bc.v() / v1.z + w2 * v2.bc.v() / v2.z) * z;
            let bw =
                (w0 * v0.bc.w() / v0.z + w1 * v1.bc.w() / v1.z + w2 * v2.bc.w() / v2.z) * z;
            let bc = BarycentricCoord::from_vw_clamped(bv, bw);
            buffers.depth[idx] = z;
            buffers.i_id[idx] = prim_id as i64;
            buffers.i_prim[idx] = prim_index;
            buffers.i_uv[idx] = bc.as_array();
            win_key[idx] = (prim_id as i64, tri_index);
        }
    }
}

fn edge_function(a: Vec2, b: Vec2, p: Vec2) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Extracts boundary pixels: foreground pixels with a 4-neighbor of
/// different id (background counts as different; pixels outside the image do
/// not). The projected radius is `r_b * fx / depth` of the re-evaluated
/// surface point.
pub fn extract_boundaries(
    buffers: &RasterBuffers,
    scene: &Scene,
    cam: &Camera,
    boundary_scale: f64,
) -> Vec<BoundaryPoint> {
    let mut out = Vec::new();
    let (w, h) = (buffers.width as i64, buffers.height as i64);
    for y in 0..h {
        for x in 0..w {
            let idx = buffers.pixel_index(x as u32, y as u32);
            let id = buffers.i_id[idx];
            if id < 0 {
                continue;
            }
            let mut is_boundary = false;
            for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                if buffers.i_id[buffers.pixel_index(nx as u32, ny as u32)] != id {
                    is_boundary = true;
                    break;
                }
            }
            if !is_boundary {
                continue;
            }
            let owner_index = buffers.i_prim[idx];
            let bc = buffers.bc_at(idx);
            let point3d = scene.primitives[owner_index].geometry.evaluate(bc);
            let pc = cam.world_to_camera(point3d);
            let depth = pc.z.max(cam.near);
            out.push(BoundaryPoint {
                pixel: (x as u32, y as u32),
                owner_id: id as u64,
                owner_index,
                bc,
                point3d,
                pos2d: cam.project_camera_point(Vec3::new(pc.x, pc.y, depth)),
                sigma: boundary_scale * cam.fx / depth,
            });
        }
    }
    out
}

/// Recomputes the live fields (3D point and projection) of frozen boundary
/// points from the current control points. Pixel location, barycentric
/// parameter, owner, and radius stay fixed, matching the backward pass's
/// detachment.
pub fn refresh_boundary_points(points: &mut [BoundaryPoint], scene: &Scene, cam: &Camera) {
    for bp in points {
        bp.point3d = scene.primitives[bp.owner_index].geometry.evaluate(bp.bc);
        let pc = cam.world_to_camera(bp.point3d);
        let depth = pc.z.max(cam.near);
        bp.pos2d = cam.project_camera_point(Vec3::new(pc.x, pc.y, depth));
    }
}
