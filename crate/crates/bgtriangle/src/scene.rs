//! The learnable scene: BG-Triangle primitives plus global constants.

use crate::attrmap::{AttributeKind, AttributeMap};
use crate::bezier::{uniform_barycentric, BarycentricCoord, ControlNet, SCENE_DEGREE};
use crate::error::{Error, Result};
use crate::geom::{rotation_from_unit_quat, uniform_quat, Quat, Vec3, IDENTITY_QUAT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Leg resolution of the per-primitive visibility texture.
pub const VISIBILITY_RESOLUTION: u32 = 8;
/// Sub-primitive opacity constant (close to 1, never learned).
pub const DEFAULT_OPACITY: f64 = 0.99;
/// Default world radius of boundary Gaussians.
pub const DEFAULT_BOUNDARY_SCALE: f64 = 0.01;
/// Thin-axis factor: the third Gaussian axis is this fraction of the mean
/// in-plane scale, keeping sub-primitives disc-like on the surface.
pub const THIN_AXIS_FACTOR: f64 = 1e-4;

/// Split/prune bookkeeping attached to each primitive. Reset after every
/// scheduler event.
#[derive(Clone, Debug)]
pub struct PrimitiveStats {
    /// Views (iterations) in which the primitive owned at least one pixel.
    pub seen_views: u64,
    /// Iterations since creation or the last scheduler event.
    pub total_views: u64,
    /// Occupancy over the triangular visibility texture, unioned over views.
    pub visibility_texture: Vec<bool>,
    /// Sum over visible iterations of the mean position control-point
    /// gradient norm.
    pub position_grad_sum: f64,
    pub position_grad_views: u64,
    /// Sum over visible iterations of the per-pixel mean edge gradient
    /// (Sobel magnitude of the target on the 0-255 scale).
    pub edge_grad_sum: f64,
    pub edge_grad_views: u64,
}

impl Default for PrimitiveStats {
    fn default() -> Self {
        Self {
            seen_views: 0,
            total_views: 0,
            visibility_texture: vec![false; crate::attrmap::texel_count(VISIBILITY_RESOLUTION)],
            position_grad_sum: 0.0,
            position_grad_views: 0,
            edge_grad_sum: 0.0,
            edge_grad_views: 0,
        }
    }
}

impl PrimitiveStats {
    pub fn reset(&mut self) {
        *self = Self::default();
    }

    pub fn visibility_ratio(&self) -> f64 {
        if self.total_views == 0 {
            1.0
        } else {
            self.seen_views as f64 / self.total_views as f64
        }
    }

    pub fn visible_texel_ratio(&self) -> f64 {
        let marked = self.visibility_texture.iter().filter(|m| **m).count();
        marked as f64 / self.visibility_texture.len() as f64
    }

    pub fn mean_position_grad(&self) -> f64 {
        if self.position_grad_views == 0 {
            0.0
        } else {
            self.position_grad_sum / self.position_grad_views as f64
        }
    }

    pub fn mean_edge_grad(&self) -> f64 {
        if self.edge_grad_views == 0 {
            0.0
        } else {
            self.edge_grad_sum / self.edge_grad_views as f64
        }
    }
}

/// One degree-2 Bézier Gaussian triangle.
#[derive(Clone, Debug)]
pub struct BgTrianglePrimitive {
    pub id: u64,
    pub geometry: ControlNet,
    /// Six RGB color control points, clamped to [0, 1] after optimizer steps.
    pub color_net: Vec<Vec3>,
    pub rotation_map: AttributeMap,
    pub scaling_map: AttributeMap,
    pub sh_map: AttributeMap,
    pub stats: PrimitiveStats,
}

impl BgTrianglePrimitive {
    pub fn new(id: u64, geometry: ControlNet, color: Vec3) -> Self {
        Self {
            id,
            geometry,
            color_net: vec![color; 6],
            rotation_map: AttributeMap::new_constant(AttributeKind::Rotation, &IDENTITY_QUAT),
            scaling_map: AttributeMap::new_constant(AttributeKind::Scaling, &[0.0, 0.0]),
            sh_map: AttributeMap::new_constant(
                AttributeKind::Sh,
                &vec![0.0; AttributeKind::Sh.channels()],
            ),
            stats: PrimitiveStats::default(),
        }
    }

    pub fn map(&self, kind: AttributeKind) -> &AttributeMap {
        match kind {
            AttributeKind::Rotation => &self.rotation_map,
            AttributeKind::Scaling => &self.scaling_map,
            AttributeKind::Sh => &self.sh_map,
        }
    }

    pub fn map_mut(&mut self, kind: AttributeKind) -> &mut AttributeMap {
        match kind {
            AttributeKind::Rotation => &mut self.rotation_map,
            AttributeKind::Scaling => &mut self.scaling_map,
            AttributeKind::Sh => &mut self.sh_map,
        }
    }

    /// Diffuse color at `bc` (Bernstein interpolation of the color net),
    /// clamped to [0, 1].
    pub fn diffuse_color(&self, bc: BarycentricCoord) -> Vec3 {
        let c = crate::bezier::evaluate_values(SCENE_DEGREE, &self.color_net, bc)
            .expect("color net has six points");
        Vec3::new(c.x.clamp(0.0, 1.0), c.y.clamp(0.0, 1.0), c.z.clamp(0.0, 1.0))
    }

    /// Attribute value at `bc`; rotation samples come back as a unit
    /// quaternion (w, x, y, z), other kinds raw.
    pub fn sample_attribute(&self, kind: AttributeKind, bc: BarycentricCoord) -> Vec<f64> {
        match kind {
            AttributeKind::Rotation => self.rotation_map.sample_quat(bc).to_vec(),
            _ => self.map(kind).sample_raw(bc),
        }
    }

    /// Uniformly distributed surface samples (seeded).
    pub fn sample_surface_points(&self, count: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| self.geometry.evaluate(uniform_barycentric(rng.gen(), rng.gen())))
            .collect()
    }

    /// Surface area estimated from the four planar triangles spanned by the
    /// corner and edge-midpoint surface points.
    pub fn approximate_area(&self) -> f64 {
        let s = |v: f64, w: f64| self.geometry.evaluate(BarycentricCoord::from_vw_clamped(v, w));
        let cu = s(0.0, 0.0);
        let cv = s(1.0, 0.0);
        let cw = s(0.0, 1.0);
        let muv = s(0.5, 0.0);
        let muw = s(0.0, 0.5);
        let mvw = s(0.5, 0.5);
        let tri = |a: Vec3, b: Vec3, c: Vec3| 0.5 * (b - a).cross(&(c - a)).norm();
        tri(cu, muv, muw) + tri(muv, cv, mvw) + tri(muw, mvw, cw) + tri(mvw, muw, muv)
    }

    /// Elongation of the control net: ratio of the two largest principal
    /// extents (singular values of the centered control points). Rotation
    /// invariant; the smallest extent measures flatness and is ignored.
    pub fn aspect_ratio(&self) -> f64 {
        let pts = self.geometry.points();
        let centroid: Vec3 = pts.iter().sum::<Vec3>() / pts.len() as f64;
        let mut m = nalgebra::Matrix3::<f64>::zeros();
        for p in pts {
            let d = p - centroid;
            m += d * d.transpose();
        }
        let eig = m.symmetric_eigen();
        let mut ev: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).collect();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if ev[1] <= 1e-12 * ev[0].max(1e-300) {
            f64::INFINITY
        } else {
            ev[0] / ev[1]
        }
    }
}

/// A full scene: primitives plus rendering constants.
#[derive(Clone, Debug)]
pub struct Scene {
    pub primitives: Vec<BgTrianglePrimitive>,
    next_id: u64,
    /// Background color composited behind the last Gaussian.
    pub background: Vec3,
    /// Sub-primitive opacity `o`.
    pub opacity: f64,
    /// World radius `r_b` of boundary Gaussians.
    pub boundary_scale: f64,
}

impl Scene {
    pub fn new(primitives: Vec<BgTrianglePrimitive>, next_id: u64) -> Self {
        Self {
            primitives,
            next_id,
            background: Vec3::new(1.0, 1.0, 1.0),
            opacity: DEFAULT_OPACITY,
            boundary_scale: DEFAULT_BOUNDARY_SCALE,
        }
    }

    pub fn allocate_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn index_of_id(&self, id: u64) -> Option<usize> {
        self.primitives.iter().position(|p| p.id == id)
    }

    /// Half-diagonal of the control-point bounding box; used to scale the
    /// position learning rate.
    pub fn extent(&self) -> f64 {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &self.primitives {
            let (l, h) = p.geometry.bounds();
            lo = lo.inf(&l);
            hi = hi.sup(&h);
        }
        0.5 * (hi - lo).norm()
    }

    /// Uniform surface samples across all primitives, `per_primitive` each.
    pub fn sample_surface_points(&self, per_primitive: usize, seed: u64) -> Vec<Vec3> {
        let mut out = Vec::with_capacity(per_primitive * self.primitives.len());
        for (i, prim) in self.primitives.iter().enumerate() {
            out.extend(prim.sample_surface_points(per_primitive, seed.wrapping_add(i as u64)));
        }
        out
    }
}

fn equilateral_net(center: Vec3, edge: f64, orientation: &Quat) -> ControlNet {
    let rot = rotation_from_unit_quat(orientation);
    let r = edge / 3.0_f64.sqrt();
    let corners: Vec<Vec3> = [90.0_f64, 210.0, 330.0]
        .iter()
        .map(|deg| {
            let a = deg.to_radians();
            center + rot * Vec3::new(r * a.cos(), r * a.sin(), 0.0)
        })
        .collect();
    flat_net_from_corners(corners[0], corners[1], corners[2])
}

/// Degree-2 net of a flat triangle: corners plus edge midpoints.
pub fn flat_net_from_corners(cu: Vec3, cv: Vec3, cw: Vec3) -> ControlNet {
    let points = vec![
        cu,
        0.5 * (cu + cv),
        0.5 * (cu + cw),
        cv,
        0.5 * (cv + cw),
        cw,
    ];
    ControlNet::new(SCENE_DEGREE, points).expect("finite corners")
}

/// Median nearest-neighbor distance (brute force).
fn median_nn_distance(points: &[Vec3]) -> f64 {
    if points.len() < 2 {
        return 1.0;
    }
    let mut nn: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    nn.sort_by(|a, b| a.partial_cmp(b).unwrap());
    nn[nn.len() / 2]
}

/// Builds a scene by dropping one equilateral primitive with a random
/// orientation at each of `target_count` points sampled from the cloud.
///
/// `triangle_size` defaults to twice the median nearest-neighbor distance
/// among the sampled points. Deterministic under a fixed seed.
pub fn init_from_point_cloud(
    points: &[Vec3],
    target_count: usize,
    triangle_size: Option<f64>,
    seed: u64,
) -> Result<Scene> {
    if points.is_empty() {
        return Err(Error::EmptyPointCloud);
    }
    if target_count == 0 {
        return Err(Error::InvalidConfig("target_count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let take = target_count.min(points.len());
    // Partial Fisher-Yates: the first `take` slots are a uniform sample
    // without replacement.
    let mut order: Vec<usize> = (0..points.len()).collect();
    for i in 0..take {
        let j = i + (rng.gen::<u64>() as usize) % (points.len() - i);
        order.swap(i, j);
    }
    let sampled: Vec<Vec3> = order[..take].iter().map(|i| points[*i]).collect();
    let size = triangle_size.unwrap_or_else(|| 2.0 * median_nn_distance(&sampled));

    let mut primitives = Vec::with_capacity(take);
    for (i, center) in sampled.iter().enumerate() {
        let q = uniform_quat(rng.gen(), rng.gen(), rng.gen());
        let net = equilateral_net(*center, size, &q);
        let mut prim = BgTrianglePrimitive::new(i as u64, net, Vec3::repeat(0.5));
        // Footprint of the in-plane Gaussian axes at initialization.
        let log_scale = (size / (2.0 * AttributeKind::Scaling.resolution() as f64)).ln();
        for v in prim.scaling_map.values_mut() {
            *v = log_scale;
        }
        primitives.push(prim);
    }
    Ok(Scene::new(primitives, take as u64))
}

/// Builds a scene of flat primitives tiling the faces of a cube:
/// `2 * per_face_subdiv^2` triangles per face.
pub fn init_from_cube(center: Vec3, edge: f64, per_face_subdiv: u32) -> Result<Scene> {
    if edge <= 0.0 {
        return Err(Error::InvalidConfig("cube edge must be positive".into()));
    }
    let s = per_face_subdiv.max(1);
    let h = edge / 2.0;
    // (normal axis, sign, u axis, v axis)
    let faces = [
        (0usize, 1.0, 1usize, 2usize),
        (0, -1.0, 1, 2),
        (1, 1.0, 0, 2),
        (1, -1.0, 0, 2),
        (2, 1.0, 0, 1),
        (2, -1.0, 0, 1),
    ];
    let mut primitives = Vec::new();
    let mut id = 0u64;
    for (axis, sign, ua, va) in faces {
        let corner_at = |iu: u32, iv: u32| {
            let mut p = Vec3::zeros();
            p[axis] = sign * h;
            p[ua] = -h + edge * iu as f64 / s as f64;
            p[va] = -h + edge * iv as f64 / s as f64;
            center + p
        };
        for iu in 0..s {
            for iv in 0..s {
                let a = corner_at(iu, iv);
                let b = corner_at(iu + 1, iv);
                let c = corner_at(iu, iv + 1);
                let d = corner_at(iu + 1, iv + 1);
                for (p, q, r) in [(a, b, c), (d, c, b)] {
                    primitives.push(BgTrianglePrimitive::new(
                        id,
                        flat_net_from_corners(p, q, r),
                        Vec3::repeat(0.5),
                    ));
                    id += 1;
                }
            }
        }
    }
    // Gaussian footprint from the tile size.
    let tri_edge = edge / s as f64;
    let log_scale = (tri_edge / (2.0 * AttributeKind::Scaling.resolution() as f64)).ln();
    for prim in &mut primitives {
        for v in prim.scaling_map.values_mut() {
            *v = log_scale;
        }
    }
    Ok(Scene::new(primitives, id))
}
