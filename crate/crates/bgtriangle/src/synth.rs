//! Ground-truth toy scenes and a reference ray tracer.
//!
//! The tracer shares no code with the splatting pipeline: exact ray-box and
//! ray-sphere intersections against analytic surfaces with procedural
//! albedo (no lighting; albedo is radiance). It generates the posed
//! datasets the training loop reconstructs and the images renders are
//! judged against.

use crate::camera::Camera;
use crate::dataio::{save_png_rgba, save_points, Manifest, ManifestFrame};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SurfaceKind {
    /// Axis-aligned cube, edge length 1, centered at the origin.
    Cube,
    /// Unit sphere at the origin.
    Ball,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TexturePattern {
    Checker,
    Stripes,
}

/// Analytic scene description: a unit-scale surface with a procedural
/// two-tone albedo in surface parameter space.
#[derive(Clone, Debug)]
pub struct AnalyticScene {
    pub kind: SurfaceKind,
    pub texture: TexturePattern,
    /// Pattern tiles along each parameter axis.
    pub texels: u32,
    pub light: Vec3,
    pub dark: Vec3,
}

impl AnalyticScene {
    pub fn new(kind: SurfaceKind, texture: TexturePattern, texels: u32) -> Result<Self> {
        if texels == 0 {
            return Err(Error::InvalidConfig("texel count must be at least 1".into()));
        }
        Ok(Self {
            kind,
            texture,
            texels,
            light: Vec3::new(0.85, 0.82, 0.8),
            dark: Vec3::new(0.12, 0.14, 0.2),
        })
    }

    /// Albedo from face-local (s, t) in [0, 1]^2.
    pub fn albedo_from_st(&self, s: f64, t: f64) -> Vec3 {
        let k = self.texels as f64;
        let cell = match self.texture {
            TexturePattern::Checker => {
                (s * k).floor().min(k - 1.0) + (t * k).floor().min(k - 1.0)
            }
            TexturePattern::Stripes => (s * k).floor().min(k - 1.0),
        };
        if (cell as i64).rem_euclid(2) == 0 {
            self.light
        } else {
            self.dark
        }
    }

    /// Surface parameters of a point on the surface.
    pub fn surface_st(&self, p: Vec3) -> (f64, f64) {
        match self.kind {
            SurfaceKind::Cube => {
                // Dominant axis selects the face; the other two coordinates
                // parameterize it.
                let a = p.abs();
                let (s, t) = if a.x >= a.y && a.x >= a.z {
                    (p.y, p.z)
                } else if a.y >= a.x && a.y >= a.z {
                    (p.x, p.z)
                } else {
                    (p.x, p.y)
                };
                (s + 0.5, t + 0.5)
            }
            SurfaceKind::Ball => {
                let theta = p.z.clamp(-1.0, 1.0).acos(); // [0, pi]
                let phi = p.y.atan2(p.x); // [-pi, pi]
                (
                    (phi + std::f64::consts::PI) / (2.0 * std::f64::consts::PI),
                    theta / std::f64::consts::PI,
                )
            }
        }
    }

    /// First hit of a ray, as (t, surface point).
    pub fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<(f64, Vec3)> {
        match self.kind {
            SurfaceKind::Cube => ray_box(origin, dir, 0.5),
            SurfaceKind::Ball => ray_sphere(origin, dir, 1.0),
        }
    }

    /// Surface points sampled uniformly (area-weighted), for point-cloud
    /// initialization and Chamfer references.
    pub fn sample_surface(&self, count: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        match self.kind {
            SurfaceKind::Cube => {
                for _ in 0..count {
                    let face = (rng.gen::<u32>() % 6) as usize;
                    let u = rng.gen::<f64>() - 0.5;
                    let v = rng.gen::<f64>() - 0.5;
                    let sign = if face % 2 == 0 { 0.5 } else { -0.5 };
                    let p = match face / 2 {
                        0 => Vec3::new(sign, u, v),
                        1 => Vec3::new(u, sign, v),
                        _ => Vec3::new(u, v, sign),
                    };
                    out.push(p);
                }
            }
            SurfaceKind::Ball => {
                for _ in 0..count {
                    let z = rng.gen::<f64>() * 2.0 - 1.0;
                    let phi = rng.gen::<f64>() * std::f64::consts::TAU;
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    out.push(Vec3::new(r * phi.cos(), r * phi.sin(), z));
                }
            }
        }
        out
    }
}

fn ray_box(origin: Vec3, dir: Vec3, half: f64) -> Option<(f64, Vec3)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for axis in 0..3 {
        if dir[axis].abs() < 1e-15 {
            if origin[axis].abs() > half {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[axis];
        let mut t0 = (-half - origin[axis]) * inv;
        let mut t1 = (half - origin[axis]) * inv;
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        t_near = t_near.max(t0);
        t_far = t_far.min(t1);
        if t_near > t_far {
            return None;
        }
    }
    let t = if t_near > 1e-9 {
        t_near
    } else if t_far > 1e-9 {
        t_far
    } else {
        return None;
    };
    Some((t, origin + dir * t))
}

fn ray_sphere(origin: Vec3, dir: Vec3, radius: f64) -> Option<(f64, Vec3)> {
    let b = origin.dot(&dir);
    let c = origin.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t = if -b - sq > 1e-9 {
        -b - sq
    } else if -b + sq > 1e-9 {
        -b + sq
    } else {
        return None;
    };
    Some((t, origin + dir * t))
}

/// Ray-traced reference image: `ss`^2 stratified jittered samples per pixel
/// (seeded, deterministic). Returns straight-alpha color (mean over hit
/// samples) and coverage.
pub fn render_reference(
    scene: &AnalyticScene,
    cam: &Camera,
    ss: u32,
    seed: u64,
) -> Result<(Vec<Vec3>, Vec<f64>)> {
    if ss == 0 {
        return Err(Error::InvalidConfig("supersampling must be at least 1".into()));
    }
    let (w, h) = (cam.width as usize, cam.height as usize);
    let origin = cam.position();
    let rot_t = cam.rotation.transpose();
    let rows: Vec<(Vec<Vec3>, Vec<f64>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut colors = Vec::with_capacity(w);
            let mut alphas = Vec::with_capacity(w);
            for x in 0..w {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000);
                rng.set_stream(((y as u64) << 32) | x as u64);
                let mut acc = Vec3::zeros();
                let mut hits = 0u32;
                for sy in 0..ss {
                    for sx in 0..ss {
                        let jx = (sx as f64 + rng.gen::<f64>()) / ss as f64;
                        let jy = (sy as f64 + rng.gen::<f64>()) / ss as f64;
                        let px = x as f64 + jx;
                        let py = y as f64 + jy;
                        let dir_cam =
                            Vec3::new((px - cam.cx) / cam.fx, (py - cam.cy) / cam.fy, 1.0);
                        let dir = (rot_t * dir_cam).normalize();
                        if let Some((_, hit)) = scene.intersect(origin, dir) {
                            let (s, t) = scene.surface_st(hit);
                            acc += scene.albedo_from_st(s, t);
                            hits += 1;
                        }
                    }
                }
                let total = (ss * ss) as f64;
                let alpha = hits as f64 / total;
                let color = if hits > 0 { acc / hits as f64 } else { Vec3::zeros() };
                colors.push(color);
                alphas.push(alpha);
            }
            (colors, alphas)
        })
        .collect();
    let mut colors = Vec::with_capacity(w * h);
    let mut alphas = Vec::with_capacity(w * h);
    for (c, a) in rows {
        colors.extend(c);
        alphas.extend(a);
    }
    Ok((colors, alphas))
}

/// Near-uniform directions on the sphere (golden-angle spiral).
pub fn fibonacci_directions(count: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let a = golden * i as f64;
            Vec3::new(r * a.cos(), r * a.sin(), z)
        })
        .collect()
}

/// Camera ring parameters for dataset generation.
#[derive(Clone, Debug)]
pub struct DatasetParams {
    pub kind: SurfaceKind,
    pub texture: TexturePattern,
    pub texels: u32,
    pub n_train: usize,
    pub n_test: usize,
    pub width: u32,
    pub height: u32,
    /// Camera distance from the origin.
    pub radius: f64,
    /// Horizontal field of view, radians.
    pub fov_x: f64,
    pub supersampling: u32,
    pub seed: u64,
    /// Test cameras at 40% of the training distance (close-up protocol).
    pub close_up: bool,
    /// Surface points written alongside the dataset for initialization.
    pub n_points: usize,
}

impl Default for DatasetParams {
    fn default() -> Self {
        Self {
            kind: SurfaceKind::Cube,
            texture: TexturePattern::Checker,
            texels: 4,
            n_train: 100,
            n_test: 20,
            width: 128,
            height: 128,
            radius: 3.2,
            fov_x: 0.6911112,
            supersampling: 4,
            seed: 0,
            close_up: false,
            n_points: 10_000,
        }
    }
}

fn camera_to_world_matrix(cam: &Camera) -> [[f64; 4]; 4] {
    let r = cam.rotation.transpose();
    let c = cam.position();
    [
        [r[(0, 0)], r[(0, 1)], r[(0, 2)], c.x],
        [r[(1, 0)], r[(1, 1)], r[(1, 2)], c.y],
        [r[(2, 0)], r[(2, 1)], r[(2, 2)], c.z],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

fn camera_at(dir: Vec3, radius: f64, params: &DatasetParams) -> Result<Camera> {
    let fx = Camera::focal_from_fov(params.width, params.fov_x);
    Camera::look_at(
        dir * radius,
        Vec3::zeros(),
        Vec3::new(0.0, 1.0, 0.0),
        fx,
        fx,
        params.width,
        params.height,
        crate::dataio::DEFAULT_NEAR,
        crate::dataio::DEFAULT_FAR,
    )
}

/// Writes `<out>/train` and `<out>/test` dataset splits plus `points.csv`:
/// Fibonacci-sphere cameras facing the origin, ray-traced RGBA targets.
pub fn make_dataset(params: &DatasetParams, out: &Path) -> Result<()> {
    let scene = AnalyticScene::new(params.kind, params.texture, params.texels)?;
    let io_err = |p: &Path, e: std::io::Error| Error::io(p, e);

    // Train and test cameras are interleaved on one spiral so the test set
    // is not a subset of the train set.
    let dirs = fibonacci_directions(params.n_train + params.n_test);
    let test_radius = if params.close_up { 0.4 * params.radius } else { params.radius };

    // Bresenham-style interleave spreads the test views over the spiral.
    let total = params.n_train + params.n_test;
    let is_test: Vec<bool> = (0..total)
        .map(|i| ((i + 1) * params.n_test) / total != (i * params.n_test) / total)
        .collect();

    for (split, take_test) in [("train", false), ("test", true)] {
        let dir = out.join(split);
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let mut frames = Vec::new();
        let mut written = 0usize;
        for (i, d) in dirs.iter().enumerate() {
            if is_test[i] != take_test {
                continue;
            }
            let radius = if take_test { test_radius } else { params.radius };
            let cam = camera_at(*d, radius, params)?;
            let (colors, alpha) = render_reference(&scene, &cam, params.supersampling, params.seed)?;
            let name = format!("r_{}", written);
            save_png_rgba(
                &dir.join(format!("{}.png", name)),
                &colors,
                &alpha,
                params.width,
                params.height,
                true,
            )?;
            frames.push(ManifestFrame {
                file_path: name,
                transform_matrix: camera_to_world_matrix(&cam),
            });
            written += 1;
        }
        let manifest = Manifest { camera_angle_x: params.fov_x, frames };
        let manifest_path = dir.join("transforms.json");
        std::fs::write(
            &manifest_path,
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )
        .map_err(|e| io_err(&manifest_path, e))?;
    }

    let points = scene.sample_surface(params.n_points, params.seed ^ 0x50_1e7);
    save_points(&out.join("points.csv"), &points)?;
    Ok(())
}
