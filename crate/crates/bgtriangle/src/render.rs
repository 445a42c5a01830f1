//! Forward rendering: rasterize, generate sub-primitives, splat.

use crate::camera::Camera;
use crate::geom::Vec3;
use crate::raster::{self, BoundaryPoint, RasterBuffers};
use crate::scene::Scene;
use crate::splat::{self, BoundaryTileIndex, CompositeOptions, CompositeOutput, ProjectedGaussian};
use crate::subprim::{self, SubPrimitive};

#[derive(Clone, Debug, Default)]
pub struct RenderOptions {
    /// Render with all blending coefficients forced to 1.
    pub disable_blending: bool,
    /// Keep contribution records (required for a backward pass).
    pub collect_records: bool,
}

/// Everything a forward pass produced; the backward pass consumes it.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub buffers: RasterBuffers,
    pub boundary: Vec<BoundaryPoint>,
    pub boundary_index: BoundaryTileIndex,
    pub subs: Vec<SubPrimitive>,
    pub gaussians: Vec<ProjectedGaussian>,
    pub composite: CompositeOutput,
}

impl ForwardPass {
    pub fn image(&self) -> &[Vec3] {
        &self.composite.image
    }
}

/// Full forward pass from scratch.
pub fn render(scene: &Scene, cam: &Camera, opts: &RenderOptions) -> ForwardPass {
    let buffers = raster::rasterize(scene, cam);
    let boundary = raster::extract_boundaries(&buffers, scene, cam, scene.boundary_scale);
    render_from_raster(scene, cam, buffers, boundary, opts)
}

/// Forward pass reusing frozen rasterization outputs: the index/coordinate
/// maps and the boundary pixel set (locations, parameters, radii) are taken
/// as given; boundary 3D points and projections, sub-primitives, and
/// compositing are recomputed from the current control points. This is the
/// differentiable slice of the pipeline that finite differences probe.
pub fn render_frozen(
    scene: &Scene,
    cam: &Camera,
    buffers: &RasterBuffers,
    boundary_template: &[BoundaryPoint],
    opts: &RenderOptions,
) -> ForwardPass {
    let mut boundary = boundary_template.to_vec();
    raster::refresh_boundary_points(&mut boundary, scene, cam);
    render_from_raster(scene, cam, buffers.clone(), boundary, opts)
}

fn render_from_raster(
    scene: &Scene,
    cam: &Camera,
    buffers: RasterBuffers,
    boundary: Vec<BoundaryPoint>,
    opts: &RenderOptions,
) -> ForwardPass {
    let boundary_index = splat::build_boundary_tiles(&boundary, buffers.width, buffers.height);
    let subs = subprim::generate(&buffers, scene, cam);
    let gaussians = splat::project_all(&subs, cam);
    let composite = splat::composite(
        &gaussians,
        &buffers,
        &boundary_index,
        &boundary,
        scene.background,
        scene.opacity,
        &CompositeOptions {
            disable_blending: opts.disable_blending,
            collect_records: opts.collect_records,
        },
    );
    ForwardPass { buffers, boundary, boundary_index, subs, gaussians, composite }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{flat_net_from_corners, BgTrianglePrimitive};

    fn toy_scene_and_camera() -> (Scene, Camera) {
        let a = BgTrianglePrimitive::new(
            0,
            flat_net_from_corners(
                Vec3::new(-2.0, -2.0, 0.0),
                Vec3::new(2.0, -2.0, 0.0),
                Vec3::new(-2.0, 2.0, 0.0),
            ),
            Vec3::new(0.8, 0.2, 0.2),
        );
        let b = BgTrianglePrimitive::new(
            1,
            flat_net_from_corners(
                Vec3::new(2.0, -2.0, 0.0),
                Vec3::new(2.0, 2.0, 0.0),
                Vec3::new(-2.0, 2.0, 0.0),
            ),
            Vec3::new(0.2, 0.8, 0.2),
        );
        let mut scene = Scene::new(vec![a, b], 2);
        scene.boundary_scale = 0.05;
        let cam = Camera::look_at(
            Vec3::new(0.3, -0.2, -5.0),
            Vec3::zeros(),
            Vec3::new(0.0, 1.0, 0.0),
            40.0,
            40.0,
            32,
            32,
            0.01,
            100.0,
        )
        .unwrap();
        (scene, cam)
    }

    #[test]
    fn render_is_deterministic() {
        let (scene, cam) = toy_scene_and_camera();
        let opts = RenderOptions { disable_blending: false, collect_records: false };
        let a = render(&scene, &cam, &opts);
        let b = render(&scene, &cam, &opts);
        assert_eq!(a.composite.image.len(), b.composite.image.len());
        for (x, y) in a.composite.image.iter().zip(&b.composite.image) {
            assert_eq!(x.x.to_bits(), y.x.to_bits());
            assert_eq!(x.y.to_bits(), y.y.to_bits());
            assert_eq!(x.z.to_bits(), y.z.to_bits());
        }
    }

    #[test]
    fn render_is_thread_count_invariant() {
        let (scene, cam) = toy_scene_and_camera();
        let opts = RenderOptions { disable_blending: false, collect_records: false };
        let parallel = render(&scene, &cam, &opts);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let serial = pool.install(|| render(&scene, &cam, &opts));
        for (x, y) in parallel.composite.image.iter().zip(&serial.composite.image) {
            assert_eq!(x.x.to_bits(), y.x.to_bits());
            assert_eq!(x.y.to_bits(), y.y.to_bits());
            assert_eq!(x.z.to_bits(), y.z.to_bits());
        }
    }

    #[test]
    fn frozen_render_reproduces_unperturbed_image() {
        let (scene, cam) = toy_scene_and_camera();
        let opts = RenderOptions { disable_blending: false, collect_records: false };
        let full = render(&scene, &cam, &opts);
        let frozen = render_frozen(&scene, &cam, &full.buffers, &full.boundary, &opts);
        for (x, y) in full.composite.image.iter().zip(&frozen.composite.image) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn sub_primitive_count_matches_foreground() {
        let (scene, cam) = toy_scene_and_camera();
        let pass = render(&scene, &cam, &RenderOptions::default());
        assert_eq!(pass.subs.len(), pass.buffers.foreground_count());
        assert!(!pass.boundary.is_empty());
    }
}
