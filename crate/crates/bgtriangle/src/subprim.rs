//! On-the-fly Gaussian sub-primitives.
//!
//! Every foreground pixel of a render spawns one anisotropic Gaussian whose
//! position, color and attributes are interpolated from the owning
//! BG-Triangle at the pixel's barycentric coordinates. Sub-primitives live
//! for a single view; a different viewpoint is rendered from a different set
//! of Gaussians sampled from the same primitives.

use crate::bezier::BarycentricCoord;
use crate::camera::Camera;
use crate::geom::{Mat3, Quat, Vec3};
use crate::raster::RasterBuffers;
use crate::scene::{Scene, THIN_AXIS_FACTOR};
use crate::sh::SH_RESIDUAL_COEFFS;

/// A pixel-aligned Gaussian, generated per foreground pixel per view.
#[derive(Clone, Debug)]
pub struct SubPrimitive {
    pub pixel: (u32, u32),
    pub owner_id: u64,
    pub owner_index: usize,
    pub bc: BarycentricCoord,
    /// Surface point of the pixel's barycentric parameter.
    pub position: Vec3,
    /// Camera-space depth recomputed from `position` (not the z-buffer).
    pub depth: f64,
    /// Diffuse color, clamped to [0, 1].
    pub diffuse: Vec3,
    /// Unit quaternion from the rotation map; composes onto `frame`.
    pub rotation: Quat,
    /// World-unit Gaussian axes: two in-plane, one thin normal axis.
    pub scale: [f64; 3],
    /// SH residual coefficients (basis-major, RGB per basis).
    pub sh: [f64; SH_RESIDUAL_COEFFS],
    /// Tangent frame columns (t1, t2, n) from the surface partials at `bc`;
    /// the learned rotation is a correction on top of it.
    pub frame: Mat3,
}

impl SubPrimitive {
    /// World rotation of the Gaussian: tangent frame composed with the map
    /// rotation.
    pub fn world_rotation(&self) -> Mat3 {
        self.frame * crate::geom::rotation_from_unit_quat(&self.rotation)
    }
}

/// Orthonormal frame from the surface partials: t1 along `dv`, n along
/// `dv x dw`, t2 completing the right-handed basis. Falls back to identity
/// for degenerate tangents.
pub fn tangent_frame(dv: Vec3, dw: Vec3) -> Mat3 {
    let n_raw = dv.cross(&dw);
    let len_dv = dv.norm();
    let len_n = n_raw.norm();
    if len_dv < 1e-12 || len_n < 1e-12 {
        return Mat3::identity();
    }
    let t1 = dv / len_dv;
    let n = n_raw / len_n;
    let t2 = n.cross(&t1);
    Mat3::from_columns(&[t1, t2, n])
}

/// In-plane scales from the log-scale map sample, plus the thin normal axis.
pub fn scales_from_log(log_scale: &[f64]) -> [f64; 3] {
    let s0 = log_scale[0].exp();
    let s1 = log_scale[1].exp();
    [s0, s1, THIN_AXIS_FACTOR * 0.5 * (s0 + s1)]
}

/// Generates one sub-primitive per foreground pixel, in row-major pixel
/// order. A pure function of the scene and the raster buffers.
pub fn generate(buffers: &RasterBuffers, scene: &Scene, cam: &Camera) -> Vec<SubPrimitive> {
    let mut out = Vec::with_capacity(buffers.foreground_count());
    for y in 0..buffers.height {
        for x in 0..buffers.width {
            let idx = buffers.pixel_index(x, y);
            if !buffers.is_foreground(idx) {
                continue;
            }
            let owner_index = buffers.i_prim[idx];
            let prim = &scene.primitives[owner_index];
            let bc = buffers.bc_at(idx);

            let position = prim.geometry.evaluate(bc);
            let (dv, dw) = prim.geometry.tangents_vw(bc);
            let frame = tangent_frame(dv, dw);
            let rotation = prim.rotation_map.sample_quat(bc);
            let scale = scales_from_log(&prim.scaling_map.sample_raw(bc));
            let sh_raw = prim.sh_map.sample_raw(bc);
            let mut sh = [0.0; SH_RESIDUAL_COEFFS];
            sh.copy_from_slice(&sh_raw);

            out.push(SubPrimitive {
                pixel: (x, y),
                owner_id: prim.id,
                owner_index,
                bc,
                position,
                depth: cam.world_to_camera(position).z,
                diffuse: prim.diffuse_color(bc),
                rotation,
                scale,
                sh,
                frame,
            });
        }
    }
    out
}
