//! Dataset loading, checkpoint persistence, debug dumps, and line-stroke
//! export.
//!
//! Datasets are a directory with a `transforms.json` manifest (shared
//! horizontal field of view plus per-frame camera-to-world matrices, +z
//! forward / +y down convention) and 8-bit RGBA PNGs whose alpha channel is
//! the foreground mask.

use crate::attrmap::AttributeKind;
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::raster::{tessellate, BoundaryPoint, RasterBuffers};
use crate::scene::{BgTrianglePrimitive, Scene};
use crate::train::optim::{OptimizerState, PrimitiveMoments};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

// ---------------------------------------------------------------------------
// images

pub fn srgb_encode(linear: f64) -> f64 {
    if linear <= 0.003_130_8 {
        12.92 * linear
    } else {
        1.055 * linear.powf(1.0 / 2.4) - 0.055
    }
}

pub fn srgb_decode(encoded: f64) -> f64 {
    if encoded <= 0.040_45 {
        encoded / 12.92
    } else {
        ((encoded + 0.055) / 1.055).powf(2.4)
    }
}

fn to_u8(value: f64) -> u8 {
    (value.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an RGB PNG; linear-light input is sRGB-encoded unless `srgb` is
/// false.
pub fn save_png_rgb(path: &Path, image: &[Vec3], width: u32, height: u32, srgb: bool) -> Result<()> {
    let mut data = Vec::with_capacity(image.len() * 3);
    for c in image {
        for ch in 0..3 {
            let v = if srgb { srgb_encode(c[ch]) } else { c[ch] };
            data.push(to_u8(v));
        }
    }
    image::save_buffer(path, &data, width, height, image::ColorType::Rgb8)
        .map_err(|e| Error::ImageDecode { path: path.to_path_buf(), detail: e.to_string() })
}

/// Writes an RGBA PNG with a straight-alpha mask channel.
pub fn save_png_rgba(
    path: &Path,
    image: &[Vec3],
    alpha: &[f64],
    width: u32,
    height: u32,
    srgb: bool,
) -> Result<()> {
    let mut data = Vec::with_capacity(image.len() * 4);
    for (c, a) in image.iter().zip(alpha) {
        for ch in 0..3 {
            let v = if srgb { srgb_encode(c[ch]) } else { c[ch] };
            data.push(to_u8(v));
        }
        data.push(to_u8(*a));
    }
    image::save_buffer(path, &data, width, height, image::ColorType::Rgba8)
        .map_err(|e| Error::ImageDecode { path: path.to_path_buf(), detail: e.to_string() })
}

/// Loads an RGBA PNG into linear-light colors plus the alpha mask.
pub fn load_png_rgba(path: &Path, srgb: bool) -> Result<(Vec<Vec3>, Vec<f64>, u32, u32)> {
    let img = image::open(path)
        .map_err(|e| Error::ImageDecode { path: path.to_path_buf(), detail: e.to_string() })?
        .to_rgba8();
    let (w, h) = img.dimensions();
    let mut colors = Vec::with_capacity((w * h) as usize);
    let mut alpha = Vec::with_capacity((w * h) as usize);
    for p in img.pixels() {
        let decode = |v: u8| {
            let f = v as f64 / 255.0;
            if srgb {
                srgb_decode(f)
            } else {
                f
            }
        };
        colors.push(Vec3::new(decode(p[0]), decode(p[1]), decode(p[2])));
        alpha.push(p[3] as f64 / 255.0);
    }
    Ok((colors, alpha, w, h))
}

/// Raw float dump: magic `BGTF`, width, height, channels (u32 LE), then f32
/// little-endian samples. Lossless render output for tests.
pub fn save_raw_f32(path: &Path, image: &[Vec3], width: u32, height: u32) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + image.len() * 12);
    bytes.extend_from_slice(b"BGTF");
    bytes.extend_from_slice(&width.to_le_bytes());
    bytes.extend_from_slice(&height.to_le_bytes());
    bytes.extend_from_slice(&3u32.to_le_bytes());
    for c in image {
        for ch in 0..3 {
            bytes.extend_from_slice(&(c[ch] as f32).to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_raw_f32(path: &Path) -> Result<(Vec<Vec3>, u32, u32)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |detail: &str| Error::CorruptCheckpoint {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    if bytes.len() < 16 || &bytes[0..4] != b"BGTF" {
        return Err(corrupt("bad magic"));
    }
    let read_u32 = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let (w, h, c) = (read_u32(4), read_u32(8), read_u32(12));
    if c != 3 || bytes.len() != 16 + (w * h * c) as usize * 4 {
        return Err(corrupt("unexpected payload size"));
    }
    let mut out = Vec::with_capacity((w * h) as usize);
    for i in 0..(w * h) as usize {
        let off = 16 + i * 12;
        let f = |k: usize| {
            f32::from_le_bytes(bytes[off + 4 * k..off + 4 * k + 4].try_into().unwrap()) as f64
        };
        out.push(Vec3::new(f(0), f(1), f(2)));
    }
    Ok((out, w, h))
}

// ---------------------------------------------------------------------------
// datasets

#[derive(Serialize, Deserialize, Debug)]
pub struct ManifestFrame {
    pub file_path: String,
    pub transform_matrix: [[f64; 4]; 4],
}

#[derive(Serialize, Deserialize, Debug)]
pub struct Manifest {
    /// Shared horizontal field of view, radians.
    pub camera_angle_x: f64,
    pub frames: Vec<ManifestFrame>,
}

#[derive(Clone, Debug)]
pub struct DatasetView {
    pub camera: Camera,
    pub image: Vec<Vec3>,
    /// Foreground mask from the alpha channel.
    pub mask: Vec<f64>,
}

impl DatasetView {
    /// Target composited over a background: straight-alpha over.
    pub fn composited_target(&self, background: Vec3) -> Vec<Vec3> {
        self.image
            .iter()
            .zip(&self.mask)
            .map(|(c, a)| c * *a + background * (1.0 - a))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct SceneDataset {
    pub views: Vec<DatasetView>,
    pub camera_angle_x: f64,
}

pub const DEFAULT_NEAR: f64 = 0.01;
pub const DEFAULT_FAR: f64 = 1000.0;

/// Loads a dataset directory: `transforms.json` plus RGBA images. `srgb`
/// selects linear-light decoding (the default pipeline behavior).
pub fn load_dataset(dir: &Path, srgb: bool) -> Result<SceneDataset> {
    let manifest_path = dir.join("transforms.json");
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::MalformedManifest {
        path: manifest_path.clone(),
        detail: e.to_string(),
    })?;
    if manifest.frames.is_empty() {
        return Err(Error::MalformedManifest {
            path: manifest_path.clone(),
            detail: "manifest has no frames".to_string(),
        });
    }
    if !(manifest.camera_angle_x.is_finite() && manifest.camera_angle_x > 0.0) {
        return Err(Error::MalformedManifest {
            path: manifest_path,
            detail: format!("camera_angle_x = {} is not a valid field of view", manifest.camera_angle_x),
        });
    }

    let mut views = Vec::with_capacity(manifest.frames.len());
    let mut expected: Option<(u32, u32)> = None;
    for frame in &manifest.frames {
        let mut image_path = dir.join(&frame.file_path);
        if image_path.extension().is_none() {
            image_path.set_extension("png");
        }
        let (image, mask, w, h) = load_png_rgba(&image_path, srgb)?;
        if let Some((ew, eh)) = expected {
            if (w, h) != (ew, eh) {
                return Err(Error::ImageSizeMismatch {
                    path: image_path,
                    got_w: w,
                    got_h: h,
                    want_w: ew,
                    want_h: eh,
                });
            }
        } else {
            expected = Some((w, h));
        }
        let fx = Camera::focal_from_fov(w, manifest.camera_angle_x);
        let camera = Camera::from_camera_to_world(
            &frame.transform_matrix,
            fx,
            fx,
            w as f64 / 2.0,
            h as f64 / 2.0,
            w,
            h,
            DEFAULT_NEAR,
            DEFAULT_FAR,
        )?;
        views.push(DatasetView { camera, image, mask });
    }
    Ok(SceneDataset { views, camera_angle_x: manifest.camera_angle_x })
}

/// Loads an x,y,z-per-line point file (CSV or whitespace separated).
pub fn load_points(path: &Path) -> Result<Vec<Vec3>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::MalformedManifest {
                path: path.to_path_buf(),
                detail: format!("line {}: expected x,y,z", lineno + 1),
            })?;
        if parts.len() != 3 {
            return Err(Error::MalformedManifest {
                path: path.to_path_buf(),
                detail: format!("line {}: expected 3 coordinates, got {}", lineno + 1, parts.len()),
            });
        }
        out.push(Vec3::new(parts[0], parts[1], parts[2]));
    }
    Ok(out)
}

pub fn save_points(path: &Path, points: &[Vec3]) -> Result<()> {
    let mut text = String::new();
    for p in points {
        text.push_str(&format!("{:.9},{:.9},{:.9}\n", p.x, p.y, p.z));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// checkpoints

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 4] = b"BGTC";
/// f32 values per primitive: 18 positions, 18 colors, 24 rotation texels,
/// 12 scaling texels, 24 SH coefficients.
pub const PARAMS_PER_PRIMITIVE: usize = 96;

#[derive(Serialize, Deserialize, Debug)]
struct CheckpointHeader {
    version: u32,
    primitive_count: usize,
    degree: u32,
    rotation_resolution: u32,
    scaling_resolution: u32,
    sh_resolution: u32,
    background: [f64; 3],
    opacity: f64,
    boundary_scale: f64,
    next_id: u64,
    ids: Vec<u64>,
    has_optimizer: bool,
    optimizer_step: u64,
    param_layout: String,
}

struct PayloadWriter {
    bytes: Vec<u8>,
}

impl PayloadWriter {
    fn push(&mut self, v: f64) {
        self.bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

struct PayloadReader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> PayloadReader<'a> {
    fn pull(&mut self) -> Option<f64> {
        let end = self.offset + 4;
        if end > self.bytes.len() {
            return None;
        }
        let v = f32::from_le_bytes(self.bytes[self.offset..end].try_into().unwrap());
        self.offset = end;
        Some(v as f64)
    }
}

fn for_each_param(prim: &BgTrianglePrimitive, mut f: impl FnMut(f64)) {
    for p in prim.geometry.points() {
        for axis in 0..3 {
            f(p[axis]);
        }
    }
    for c in &prim.color_net {
        for ch in 0..3 {
            f(c[ch]);
        }
    }
    for v in prim.rotation_map.values() {
        f(*v);
    }
    for v in prim.scaling_map.values() {
        f(*v);
    }
    for v in prim.sh_map.values() {
        f(*v);
    }
}

/// Serializes the scene (and optionally optimizer moments) as a versioned
/// JSON header followed by little-endian f32 parameter arrays. The format
/// round-trips bit-exactly: save, load, save produces identical bytes.
pub fn save_checkpoint(scene: &Scene, optimizer: Option<&OptimizerState>, path: &Path) -> Result<()> {
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        primitive_count: scene.primitives.len(),
        degree: crate::bezier::SCENE_DEGREE,
        rotation_resolution: AttributeKind::Rotation.resolution(),
        scaling_resolution: AttributeKind::Scaling.resolution(),
        sh_resolution: AttributeKind::Sh.resolution(),
        background: [scene.background.x, scene.background.y, scene.background.z],
        opacity: scene.opacity,
        boundary_scale: scene.boundary_scale,
        next_id: scene.next_id(),
        ids: scene.primitives.iter().map(|p| p.id).collect(),
        has_optimizer: optimizer.is_some(),
        optimizer_step: optimizer.map(|o| o.step).unwrap_or(0),
        param_layout:
            "per primitive: position[18] color[18] rotation[24] scaling[12] sh[24] f32le; \
             optimizer appends per primitive the same layout twice (m then v per group)"
                .to_string(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");

    let mut payload = PayloadWriter { bytes: Vec::new() };
    for prim in &scene.primitives {
        for_each_param(prim, |v| payload.push(v));
    }
    if let Some(opt) = optimizer {
        for prim in &scene.primitives {
            let m = opt.moments.get(&prim.id).cloned().unwrap_or_default();
            let groups: [(usize, &Vec<[f64; 2]>); 5] = [
                (18, &m.position),
                (18, &m.color),
                (24, &m.rotation),
                (12, &m.scaling),
                (24, &m.sh),
            ];
            for (len, values) in groups {
                for slot in 0..2 {
                    for i in 0..len {
                        payload.push(values.get(i).map(|v| v[slot]).unwrap_or(0.0));
                    }
                }
            }
        }
    }

    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);
    w.write_all(CHECKPOINT_MAGIC).map_err(io_err)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(header_json.len() as u64).to_le_bytes()).map_err(io_err)?;
    w.write_all(&header_json).map_err(io_err)?;
    w.write_all(&payload.bytes).map_err(io_err)?;
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Scene, Option<OptimizerState>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let corrupt = |detail: String| Error::CorruptCheckpoint { path: path.to_path_buf(), detail };
    if bytes.len() < 16 {
        return Err(corrupt("file shorter than the fixed header".into()));
    }
    if &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion { got: version, expected: CHECKPOINT_VERSION });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + header_len {
        return Err(corrupt("truncated header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..16 + header_len])
        .map_err(|e| corrupt(format!("header: {}", e)))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion { got: header.version, expected: CHECKPOINT_VERSION });
    }
    if header.ids.len() != header.primitive_count {
        return Err(corrupt("id list does not match primitive count".into()));
    }
    let mut reader = PayloadReader { bytes: &bytes[16 + header_len..], offset: 0 };
    let mut primitives = Vec::with_capacity(header.primitive_count);
    for &id in &header.ids {
        let mut pull = || reader.pull().ok_or_else(|| corrupt("short parameter payload".into()));
        let mut points = Vec::with_capacity(6);
        for _ in 0..6 {
            points.push(Vec3::new(pull()?, pull()?, pull()?));
        }
        let geometry = crate::bezier::ControlNet::new(crate::bezier::SCENE_DEGREE, points)?;
        let mut prim = BgTrianglePrimitive::new(id, geometry, Vec3::repeat(0.5));
        for c in prim.color_net.iter_mut() {
            *c = Vec3::new(pull()?, pull()?, pull()?);
        }
        for kind in [AttributeKind::Rotation, AttributeKind::Scaling, AttributeKind::Sh] {
            let map = prim.map_mut(kind);
            for i in 0..map.values().len() {
                map.values_mut()[i] = pull()?;
            }
        }
        primitives.push(prim);
    }
    let mut optimizer = None;
    if header.has_optimizer {
        let mut state = OptimizerState { step: header.optimizer_step, ..Default::default() };
        for &id in &header.ids {
            let mut pull =
                || reader.pull().ok_or_else(|| corrupt("short optimizer payload".into()));
            let mut read_group = |len: usize| -> Result<Vec<[f64; 2]>> {
                let mut out = vec![[0.0; 2]; len];
                for slot in 0..2 {
                    for v in out.iter_mut().take(len) {
                        v[slot] = pull()?;
                    }
                }
                Ok(out)
            };
            let moments = PrimitiveMoments {
                position: read_group(18)?,
                color: read_group(18)?,
                rotation: read_group(24)?,
                scaling: read_group(12)?,
                sh: read_group(24)?,
            };
            state.moments.insert(id, moments);
        }
        optimizer = Some(state);
    }
    if reader.offset != reader.bytes.len() {
        return Err(corrupt("trailing bytes after payload".into()));
    }
    let mut scene = Scene::new(primitives, header.next_id);
    scene.background = Vec3::new(header.background[0], header.background[1], header.background[2]);
    scene.opacity = header.opacity;
    scene.boundary_scale = header.boundary_scale;
    Ok((scene, optimizer))
}

// ---------------------------------------------------------------------------
// debug dumps

/// Index map as a PNG with a deterministic per-id palette; background black.
pub fn dump_id_map(path: &Path, buffers: &RasterBuffers) -> Result<()> {
    let image: Vec<Vec3> = buffers
        .i_id
        .iter()
        .map(|id| {
            if *id < 0 {
                Vec3::zeros()
            } else {
                let h = (*id as u64).wrapping_mul(0x9e3779b97f4a7c15);
                Vec3::new(
                    (h >> 40 & 0xff) as f64 / 255.0,
                    (h >> 24 & 0xff) as f64 / 255.0,
                    (h >> 8 & 0xff) as f64 / 255.0,
                )
            }
        })
        .collect();
    save_png_rgb(path, &image, buffers.width, buffers.height, false)
}

/// Coordinate map as RGB = (u, v, w).
pub fn dump_uv_map(path: &Path, buffers: &RasterBuffers) -> Result<()> {
    let image: Vec<Vec3> =
        buffers.i_uv.iter().map(|uv| Vec3::new(uv[0], uv[1], uv[2])).collect();
    save_png_rgb(path, &image, buffers.width, buffers.height, false)
}

/// Boundary set as CSV rows `x,y,id,sigma`.
pub fn dump_boundary_csv(path: &Path, boundary: &[BoundaryPoint]) -> Result<()> {
    let mut text = String::from("x,y,id,sigma\n");
    for bp in boundary {
        text.push_str(&format!("{},{},{},{:.9}\n", bp.pixel.0, bp.pixel.1, bp.owner_id, bp.sigma));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// stroke export

/// Tessellates every primitive at a fixed level, keeps flat triangles with
/// world area below the threshold (default: 10x the median face area), and
/// writes their deduplicated edges as `v`/`l` records.
pub fn export_strokes(
    scene: &Scene,
    level: u32,
    area_threshold: Option<f64>,
    path: &Path,
) -> Result<()> {
    struct Face {
        corners: [Vec3; 3],
        area: f64,
    }
    let mut faces = Vec::new();
    for prim in &scene.primitives {
        let tess = tessellate(&prim.geometry, level);
        for tri in &tess.triangles {
            let a = tess.vertices[tri[0] as usize].1;
            let b = tess.vertices[tri[1] as usize].1;
            let c = tess.vertices[tri[2] as usize].1;
            let area = 0.5 * (b - a).cross(&(c - a)).norm();
            faces.push(Face { corners: [a, b, c], area });
        }
    }
    let threshold = match area_threshold {
        Some(t) => t,
        None => {
            let mut areas: Vec<f64> = faces.iter().map(|f| f.area).collect();
            areas.sort_by(|a, b| a.partial_cmp(b).unwrap());
            if areas.is_empty() {
                0.0
            } else {
                10.0 * areas[areas.len() / 2]
            }
        }
    };

    let mut vertex_ids: HashMap<[u64; 3], usize> = HashMap::new();
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut seen_edges = std::collections::HashSet::new();
    for face in faces.iter().filter(|f| f.area < threshold) {
        let idx: Vec<usize> = face
            .corners
            .iter()
            .map(|p| {
                let key = [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()];
                *vertex_ids.entry(key).or_insert_with(|| {
                    vertices.push(*p);
                    vertices.len() - 1
                })
            })
            .collect();
        for (a, b) in [(idx[0], idx[1]), (idx[1], idx[2]), (idx[2], idx[0])] {
            let key = (a.min(b), a.max(b));
            if seen_edges.insert(key) {
                edges.push(key);
            }
        }
    }

    let mut text = String::new();
    for v in &vertices {
        text.push_str(&format!("v {:.9} {:.9} {:.9}\n", v.x, v.y, v.z));
    }
    for (a, b) in &edges {
        text.push_str(&format!("l {} {}\n", a + 1, b + 1));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
