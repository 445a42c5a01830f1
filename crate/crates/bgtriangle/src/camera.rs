//! Pinhole camera.
//!
//! Camera space has +z forward, +x right, +y down; pixel (0, 0) is the top
//! left corner and pixel centers sit at half-integer coordinates. Manifest
//! poses are camera-to-world matrices in the same convention.

use crate::error::{Error, Result};
use crate::geom::{Mat2x3, Mat3, Vec2, Vec3};

#[derive(Clone, Debug)]
pub struct Camera {
    /// World-to-camera rotation.
    pub rotation: Mat3,
    /// World-to-camera translation.
    pub translation: Vec3,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    pub fn new(
        rotation: Mat3,
        translation: Vec3,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidCamera("focal lengths must be positive"));
        }
        if !(near > 0.0 && near < far) {
            return Err(Error::InvalidCamera("near/far planes must satisfy 0 < near < far"));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidCamera("image size must be nonzero"));
        }
        let defect = (rotation * rotation.transpose() - Mat3::identity()).norm();
        if defect > 1e-9 {
            return Err(Error::InvalidCamera("rotation is not orthonormal"));
        }
        Ok(Self { rotation, translation, fx, fy, cx, cy, width, height, near, far })
    }

    /// Builds from a camera-to-world pose (rotation plus camera position).
    pub fn from_camera_to_world(
        c2w: &[[f64; 4]; 4],
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let r_c2w = Mat3::new(
            c2w[0][0], c2w[0][1], c2w[0][2], c2w[1][0], c2w[1][1], c2w[1][2], c2w[2][0],
            c2w[2][1], c2w[2][2],
        );
        let center = Vec3::new(c2w[0][3], c2w[1][3], c2w[2][3]);
        let rotation = r_c2w.transpose();
        let translation = -(rotation * center);
        Self::new(rotation, translation, fx, fy, cx, cy, width, height, near, far)
    }

    /// Camera at `eye` looking at `target` with the given up hint.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        fx: f64,
        fy: f64,
        width: u32,
        height: u32,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            right = forward.cross(&Vec3::new(1.0, 0.0, 0.0));
            if right.norm() < 1e-9 {
                right = forward.cross(&Vec3::new(0.0, 1.0, 0.0));
            }
        }
        let right = right.normalize();
        // +y down in camera space.
        let down = forward.cross(&right).normalize();
        let rotation = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(
            rotation,
            translation,
            fx,
            fy,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
            near,
            far,
        )
    }

    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn position(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Projects a camera-space point to continuous pixel coordinates.
    pub fn project_camera_point(&self, pc: Vec3) -> Vec2 {
        Vec2::new(self.fx * pc.x / pc.z + self.cx, self.fy * pc.y / pc.z + self.cy)
    }

    /// Projects a world point; `None` when at or behind the near plane.
    pub fn project(&self, p: Vec3) -> Option<(Vec2, f64)> {
        let pc = self.world_to_camera(p);
        if pc.z <= self.near {
            return None;
        }
        Some((self.project_camera_point(pc), pc.z))
    }

    /// Jacobian of the projection with respect to the camera-space point.
    pub fn projection_jacobian(&self, pc: Vec3) -> Mat2x3 {
        let z_inv = 1.0 / pc.z;
        let z_inv2 = z_inv * z_inv;
        Mat2x3::new(
            self.fx * z_inv,
            0.0,
            -self.fx * pc.x * z_inv2,
            0.0,
            self.fy * z_inv,
            -self.fy * pc.y * z_inv2,
        )
    }

    /// Focal-length zoom (crop-style close-up).
    pub fn zoomed(&self, factor: f64) -> Self {
        let mut cam = self.clone();
        cam.fx *= factor;
        cam.fy *= factor;
        cam
    }

    /// Moves the camera along its ray to the origin-facing target so that
    /// the distance to `pivot` scales by `factor`.
    pub fn with_distance_scaled(&self, pivot: Vec3, factor: f64) -> Self {
        let eye = self.position();
        let new_eye = pivot + (eye - pivot) * factor;
        let mut cam = self.clone();
        cam.translation = -(cam.rotation * new_eye);
        cam
    }

    /// Horizontal field of view, in radians.
    pub fn fov_x(&self) -> f64 {
        2.0 * (self.width as f64 / (2.0 * self.fx)).atan()
    }

    /// Focal length for a horizontal field of view.
    pub fn focal_from_fov(width: u32, fov_x: f64) -> f64 {
        width as f64 / (2.0 * (fov_x / 2.0).tan())
    }
}
