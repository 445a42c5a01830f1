//! Bézier Gaussian Triangle (BG-Triangle) scene representation.
//!
//! A scene is a set of degree-2 Bézier triangle patches carrying color
//! control points and small per-primitive attribute maps. Rendering
//! tessellates and rasterizes the patches, spawns one Gaussian sub-primitive
//! per covered pixel, and composites the Gaussians front-to-back with
//! boundary-aware blending coefficients so that edges between primitives
//! stay sharp. The whole pipeline has an analytic backward pass, which makes
//! scenes trainable from posed images with an adaptive split/prune schedule.
//!
//! The accompanying guide under `book/` walks through the concepts; its code
//! snippets compile and run as doc-tests of this crate.

pub mod attrmap;
pub mod backward;
pub mod bezier;
pub mod camera;
pub mod dataio;
pub mod error;
pub mod geom;
pub mod metrics;
pub mod raster;
pub mod render;
pub mod scene;
pub mod sh;
pub mod splat;
pub mod subprim;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

// Guide chapters run as doc-tests so the book cannot drift from the code.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/bezier-triangles.md")]
    mod bezier_triangles {}
    #[doc = include_str!("../../../book/src/scene.md")]
    mod scene {}
    #[doc = include_str!("../../../book/src/rendering.md")]
    mod rendering {}
    #[doc = include_str!("../../../book/src/blending.md")]
    mod blending {}
    #[doc = include_str!("../../../book/src/backward.md")]
    mod backward {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/toy-scenes.md")]
    mod toy_scenes {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
