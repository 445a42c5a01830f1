//! Command-line interface: dataset synthesis, training, rendering,
//! evaluation, stroke export, and gradient checking.

use anyhow::{bail, Context, Result};
use bgtriangle::backward::{finite_difference_check, ParamRef};
use bgtriangle::dataio;
use bgtriangle::geom::Vec3;
use bgtriangle::metrics;
use bgtriangle::render::{render, RenderOptions};
use bgtriangle::scene::Scene;
use bgtriangle::splat::TILE_SIZE;
use bgtriangle::synth::{self, DatasetParams, SurfaceKind, TexturePattern};
use bgtriangle::train::{self, TrainConfig, TrainView};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "bgtriangle", version, about = "BG-Triangle scene reconstruction and rendering")]
struct Cli {
    /// Global random seed (overrides per-command defaults).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap; 1 gives bitwise-identical output to any N.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Flat key = value config file, applied before command-line flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic toy dataset (train/test splits plus points.csv).
    Synth(SynthArgs),
    /// Optimize a scene against a dataset.
    Train(TrainArgs),
    /// Render dataset views from a checkpoint.
    Render(RenderArgs),
    /// Evaluate a checkpoint against a dataset.
    Eval(EvalArgs),
    /// Export 3D line strokes from small tessellated faces.
    ExportStrokes(ExportStrokesArgs),
    /// Verify analytic gradients against central finite differences.
    CheckGrad(CheckGradArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Cube,
    Ball,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TextureArg {
    Checker,
    Stripes,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "cube")]
    kind: KindArg,
    #[arg(long, value_enum, default_value = "checker")]
    texture: TextureArg,
    /// Pattern tiles per face (or band).
    #[arg(long, default_value_t = 4)]
    texels: u32,
    #[arg(long, default_value_t = 100)]
    n_train: usize,
    #[arg(long, default_value_t = 20)]
    n_test: usize,
    #[arg(long, default_value_t = 128)]
    width: u32,
    #[arg(long, default_value_t = 128)]
    height: u32,
    /// Camera distance from the origin.
    #[arg(long, default_value_t = 3.2)]
    radius: f64,
    /// Horizontal field of view, degrees.
    #[arg(long, default_value_t = 39.6)]
    fov_deg: f64,
    /// Stratified samples per pixel axis.
    #[arg(long, default_value_t = 4)]
    supersampling: u32,
    /// Test cameras at 40% of the training distance.
    #[arg(long, default_value_t = false)]
    close_up: bool,
    /// Surface points written for point-cloud initialization.
    #[arg(long, default_value_t = 10_000)]
    n_points: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InitArg {
    Points,
    Cube,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (with transforms.json).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Scene initialization source.
    #[arg(long, value_enum, default_value = "points")]
    init: InitArg,
    /// Point file for --init points; defaults to <data>/../points.csv.
    #[arg(long)]
    points: Option<PathBuf>,
    /// Primitives sampled from the point cloud.
    #[arg(long, default_value_t = 300)]
    target_count: usize,
    /// Edge length for initial primitives (default: adaptive).
    #[arg(long)]
    triangle_size: Option<f64>,
    /// Cube initialization: edge length.
    #[arg(long, default_value_t = 1.6)]
    cube_edge: f64,
    /// Cube initialization: per-face subdivision.
    #[arg(long, default_value_t = 3)]
    cube_subdiv: u32,
    /// Decode images as sRGB (linear-light training).
    #[arg(long, default_value_t = true)]
    srgb: bool,

    // TrainConfig overrides; unset flags keep config-file or default values.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    split_prune_interval: Option<u64>,
    #[arg(long)]
    split_prune_until: Option<u64>,
    #[arg(long)]
    tau_g: Option<f64>,
    #[arg(long)]
    tau_b: Option<f64>,
    #[arg(long)]
    tau_v: Option<f64>,
    #[arg(long)]
    tau_r: Option<f64>,
    #[arg(long)]
    tau_a: Option<f64>,
    #[arg(long)]
    tau_s: Option<f64>,
    #[arg(long)]
    primitive_ceiling: Option<u64>,
    #[arg(long)]
    position_lr: Option<f64>,
    #[arg(long)]
    position_lr_decay: Option<f64>,
    #[arg(long)]
    color_lr: Option<f64>,
    #[arg(long)]
    rotation_lr: Option<f64>,
    #[arg(long)]
    scaling_lr: Option<f64>,
    #[arg(long)]
    sh_lr: Option<f64>,
    #[arg(long)]
    boundary_scale: Option<f64>,
    /// Background color as r,g,b.
    #[arg(long)]
    background: Option<String>,
    #[arg(long)]
    log_every: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory providing the cameras.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Focal-length zoom factor (crop-style close-up).
    #[arg(long, default_value_t = 1.0)]
    zoom: f64,
    /// Camera distance scale toward the origin (0.4 = close-up protocol).
    #[arg(long, default_value_t = 1.0)]
    distance_scale: f64,
    /// Also write lossless float dumps next to the PNGs.
    #[arg(long, default_value_t = false)]
    raw: bool,
    /// Dump index/coordinate maps and the boundary CSV per view.
    #[arg(long, default_value_t = false)]
    dump_buffers: bool,
    /// Render with blending coefficients forced to 1 (ablation).
    #[arg(long, default_value_t = false)]
    no_blending: bool,
    /// Render only the first N views.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = true)]
    srgb: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = false)]
    no_blending: bool,
    /// Reference surface points for the Chamfer metric.
    #[arg(long)]
    chamfer_points: Option<PathBuf>,
    /// Scene surface samples per primitive for Chamfer.
    #[arg(long, default_value_t = 40)]
    chamfer_samples: usize,
    /// Half-width in pixels of the boundary band for edge sharpness.
    #[arg(long, default_value_t = 2)]
    edge_band: u32,
    #[arg(long, default_value_t = 1.0)]
    distance_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    zoom: f64,
    #[arg(long, default_value_t = true)]
    srgb: bool,
}

#[derive(Args)]
struct ExportStrokesArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output geometry file (v/l records).
    #[arg(long)]
    out: PathBuf,
    /// Fixed tessellation level.
    #[arg(long, default_value_t = 3)]
    level: u32,
    /// Keep faces below this world area (default: 10x the median).
    #[arg(long)]
    area_threshold: Option<f64>,
}

#[derive(Args)]
struct CheckGradArgs {
    /// Checkpoint to probe (default: a built-in three-primitive scene).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset supplying the probe camera and target (default: built-in).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Randomly sampled parameters.
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Re-rasterize on every probe instead of freezing the buffers.
    #[arg(long, default_value_t = false)]
    no_freeze: bool,
    #[arg(long, default_value_t = 0.2)]
    lambda: f64,
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global()
            .expect("thread pool initializes once");
    }
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {:#}", e);
            1
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args, cli.seed),
        Command::Train(args) => cmd_train(args, cli.seed, cli.config.as_deref()),
        Command::Render(args) => cmd_render(args),
        Command::Eval(args) => cmd_eval(args),
        Command::ExportStrokes(args) => cmd_export_strokes(args),
        Command::CheckGrad(args) => cmd_check_grad(args, cli.seed),
    }
}

fn cmd_synth(args: SynthArgs, seed: Option<u64>) -> Result<()> {
    let params = DatasetParams {
        kind: match args.kind {
            KindArg::Cube => SurfaceKind::Cube,
            KindArg::Ball => SurfaceKind::Ball,
        },
        texture: match args.texture {
            TextureArg::Checker => TexturePattern::Checker,
            TextureArg::Stripes => TexturePattern::Stripes,
        },
        texels: args.texels,
        n_train: args.n_train,
        n_test: args.n_test,
        width: args.width,
        height: args.height,
        radius: args.radius,
        fov_x: args.fov_deg.to_radians(),
        supersampling: args.supersampling,
        seed: seed.unwrap_or(0),
        close_up: args.close_up,
        n_points: args.n_points,
    };
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    synth::make_dataset(&params, &args.out)?;
    println!(
        "wrote {} train and {} test views under {}",
        params.n_train,
        params.n_test,
        args.out.display()
    );
    Ok(())
}

fn build_train_config(
    args: &TrainArgs,
    seed: Option<u64>,
    config_file: Option<&Path>,
) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    if let Some(path) = config_file {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        config.apply_file(&text)?;
    }
    macro_rules! apply {
        ($($field:ident => $target:expr),* $(,)?) => {
            $( if let Some(v) = args.$field { $target = v; } )*
        };
    }
    apply! {
        lambda => config.lambda,
        iterations => config.iterations,
        split_prune_interval => config.split_prune_interval,
        split_prune_until => config.split_prune_until,
        tau_g => config.refine.tau_g,
        tau_b => config.refine.tau_b,
        tau_v => config.refine.tau_v,
        tau_r => config.refine.tau_r,
        tau_a => config.refine.tau_a,
        tau_s => config.refine.tau_s,
        position_lr => config.position_lr,
        position_lr_decay => config.position_lr_decay,
        color_lr => config.color_lr,
        rotation_lr => config.rotation_lr,
        scaling_lr => config.scaling_lr,
        sh_lr => config.sh_lr,
        boundary_scale => config.boundary_scale,
        log_every => config.log_every,
        checkpoint_every => config.checkpoint_every,
    }
    if let Some(v) = args.primitive_ceiling {
        config.refine.primitive_ceiling = v as usize;
    }
    if let Some(bg) = &args.background {
        config.apply_kv("background", bg)?;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

fn cmd_train(args: TrainArgs, seed: Option<u64>, config_file: Option<&Path>) -> Result<()> {
    let mut config = build_train_config(&args, seed, config_file)?;
    let dataset = dataio::load_dataset(&args.data, args.srgb)?;
    let views: Vec<TrainView> = dataset
        .views
        .iter()
        .map(|v| TrainView {
            camera: v.camera.clone(),
            target: v.composited_target(config.background),
        })
        .collect();

    let scene = match args.init {
        InitArg::Points => {
            let points_path = args
                .points
                .clone()
                .unwrap_or_else(|| args.data.join("../points.csv"));
            let points = dataio::load_points(&points_path)?;
            bgtriangle::scene::init_from_point_cloud(
                &points,
                args.target_count,
                args.triangle_size,
                config.seed,
            )?
        }
        InitArg::Cube => {
            bgtriangle::scene::init_from_cube(Vec3::zeros(), args.cube_edge, args.cube_subdiv)?
        }
    };

    let checkpoints = args.out.join("checkpoints");
    let logs = args.out.join("logs");
    std::fs::create_dir_all(&checkpoints)
        .with_context(|| format!("creating {}", checkpoints.display()))?;
    std::fs::create_dir_all(&logs).with_context(|| format!("creating {}", logs.display()))?;
    config.checkpoint_dir = Some(checkpoints.clone());

    let result = train::train_loop(scene, &views, &config)?;
    let final_path = checkpoints.join("final.bgt");
    dataio::save_checkpoint(&result.scene, Some(&result.optimizer), &final_path)?;
    std::fs::write(logs.join("train_log.csv"), train::log_to_csv(&result.log))
        .with_context(|| "writing training log")?;
    println!(
        "trained {} iterations: l2 {:.5} -> {:.5}, {} primitives, checkpoint {}",
        config.iterations,
        result.initial_l2,
        result.final_l2,
        result.scene.primitives.len(),
        final_path.display()
    );
    Ok(())
}

fn adjusted_cameras(
    dataset: &dataio::SceneDataset,
    zoom: f64,
    distance_scale: f64,
) -> Vec<bgtriangle::camera::Camera> {
    dataset
        .views
        .iter()
        .map(|v| {
            let mut cam = v.camera.clone();
            if distance_scale != 1.0 {
                cam = cam.with_distance_scaled(Vec3::zeros(), distance_scale);
            }
            if zoom != 1.0 {
                cam = cam.zoomed(zoom);
            }
            cam
        })
        .collect()
}

fn cmd_render(args: RenderArgs) -> Result<()> {
    let (scene, _) = dataio::load_checkpoint(&args.checkpoint)?;
    let dataset = dataio::load_dataset(&args.data, args.srgb)?;
    let renders = args.out.join("renders");
    std::fs::create_dir_all(&renders)
        .with_context(|| format!("creating {}", renders.display()))?;
    let cameras = adjusted_cameras(&dataset, args.zoom, args.distance_scale);
    let opts = RenderOptions { disable_blending: args.no_blending, collect_records: false };
    let limit = args.limit.unwrap_or(cameras.len());
    for (i, cam) in cameras.iter().take(limit).enumerate() {
        let pass = render(&scene, cam, &opts);
        let name = format!("r_{}", i);
        dataio::save_png_rgb(
            &renders.join(format!("{}.png", name)),
            pass.image(),
            cam.width,
            cam.height,
            args.srgb,
        )?;
        if args.raw {
            dataio::save_raw_f32(
                &renders.join(format!("{}.bgtf", name)),
                pass.image(),
                cam.width,
                cam.height,
            )?;
        }
        if args.dump_buffers {
            dataio::dump_id_map(&renders.join(format!("{}_id.png", name)), &pass.buffers)?;
            dataio::dump_uv_map(&renders.join(format!("{}_uv.png", name)), &pass.buffers)?;
            dataio::dump_boundary_csv(
                &renders.join(format!("{}_boundary.csv", name)),
                &pass.boundary,
            )?;
        }
    }
    println!("rendered {} views into {}", limit, renders.display());
    Ok(())
}

/// Boundary band: pixels within `band` (Chebyshev) of an id change.
fn boundary_band_mask(buffers: &bgtriangle::raster::RasterBuffers, band: u32) -> Vec<bool> {
    let (w, h) = (buffers.width as i64, buffers.height as i64);
    let mut boundary = vec![false; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let idx = (y * w + x) as usize;
            let id = buffers.i_id[idx];
            if id < 0 {
                continue;
            }
            for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                if buffers.i_id[(ny * w + nx) as usize] != id {
                    boundary[idx] = true;
                    break;
                }
            }
        }
    }
    let band = band as i64;
    let mut mask = vec![false; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            if !boundary[(y * w + x) as usize] {
                continue;
            }
            for dy in -band..=band {
                for dx in -band..=band {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0 && ny >= 0 && nx < w && ny < h {
                        mask[(ny * w + nx) as usize] = true;
                    }
                }
            }
        }
    }
    mask
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (scene, _) = dataio::load_checkpoint(&args.checkpoint)?;
    let dataset = dataio::load_dataset(&args.data, args.srgb)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let cameras = adjusted_cameras(&dataset, args.zoom, args.distance_scale);
    let opts = RenderOptions { disable_blending: args.no_blending, collect_records: false };

    let mut per_view = Vec::new();
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    let mut edge_sum = 0.0;
    let mut edge_count = 0usize;
    for (view, cam) in dataset.views.iter().zip(&cameras) {
        let pass = render(&scene, cam, &opts);
        let target = view.composited_target(scene.background);
        let psnr = metrics::psnr(pass.image(), &target)?;
        let ssim =
            metrics::ssim(pass.image(), &target, cam.width as usize, cam.height as usize)?;
        let band = boundary_band_mask(&pass.buffers, args.edge_band);
        let edge = if band.iter().any(|m| *m) {
            let v = metrics::edge_sharpness(
                pass.image(),
                cam.width as usize,
                cam.height as usize,
                &band,
            )?;
            edge_sum += v;
            edge_count += 1;
            Some(v)
        } else {
            None
        };
        psnr_sum += if psnr.is_finite() { psnr } else { 99.0 };
        ssim_sum += ssim;
        per_view.push(serde_json::json!({
            "psnr": if psnr.is_finite() { Some(psnr) } else { None },
            "ssim": ssim,
            "edge_sharpness": edge,
        }));
    }

    let chamfer = match &args.chamfer_points {
        Some(path) => {
            let reference = dataio::load_points(path)?;
            let samples = scene.sample_surface_points(args.chamfer_samples, 0x5a317e);
            Some(metrics::chamfer(&samples, &reference)?)
        }
        None => None,
    };

    let n = dataset.views.len() as f64;
    let report = serde_json::json!({
        "views": per_view,
        "aggregate": {
            "psnr": psnr_sum / n,
            "ssim": ssim_sum / n,
            "edge_sharpness": if edge_count > 0 { Some(edge_sum / edge_count as f64) } else { None },
            "chamfer": chamfer,
        },
        "settings": {
            "no_blending": args.no_blending,
            "distance_scale": args.distance_scale,
            "zoom": args.zoom,
        },
    });
    let path = args.out.join("metrics.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)?)
        .with_context(|| format!("writing {}", path.display()))?;
    println!(
        "eval: mean psnr {:.2} dB, mean ssim {:.4}{} ({} views) -> {}",
        psnr_sum / n,
        ssim_sum / n,
        chamfer.map(|c| format!(", chamfer {:.5}", c)).unwrap_or_default(),
        dataset.views.len(),
        path.display()
    );
    Ok(())
}

fn cmd_export_strokes(args: ExportStrokesArgs) -> Result<()> {
    let (scene, _) = dataio::load_checkpoint(&args.checkpoint)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    dataio::export_strokes(&scene, args.level, args.area_threshold, &args.out)?;
    println!("wrote strokes to {}", args.out.display());
    Ok(())
}

/// Built-in gradient-check scene: three curved primitives over a ball
/// target, 16x16.
fn builtin_check_scene(seed: u64) -> Result<(Scene, bgtriangle::camera::Camera, Vec<Vec3>)> {
    let analytic = synth::AnalyticScene::new(SurfaceKind::Ball, TexturePattern::Checker, 4)?;
    let fx = bgtriangle::camera::Camera::focal_from_fov(16, 0.7);
    let cam = bgtriangle::camera::Camera::look_at(
        synth::fibonacci_directions(7)[3] * 3.0,
        Vec3::zeros(),
        Vec3::new(0.0, 1.0, 0.0),
        fx,
        fx,
        16,
        16,
        0.01,
        100.0,
    )?;
    let (target, _) = synth::render_reference(&analytic, &cam, 2, seed)?;
    let points = analytic.sample_surface(64, seed);
    let mut scene = bgtriangle::scene::init_from_point_cloud(&points, 3, Some(1.2), seed)?;
    scene.boundary_scale = 0.05;
    // Move parameters off their initialization so every group contributes.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0ffee);
    for prim in &mut scene.primitives {
        for p in prim.geometry.points_mut() {
            *p += Vec3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
                * 0.1;
        }
        for (i, c) in prim.color_net.iter_mut().enumerate() {
            *c = Vec3::new(0.3 + 0.05 * i as f64, 0.5, 0.6 - 0.04 * i as f64);
        }
        for v in prim.rotation_map.values_mut() {
            *v += (rng.gen::<f64>() - 0.5) * 0.2;
        }
        for v in prim.sh_map.values_mut() {
            *v = (rng.gen::<f64>() - 0.5) * 0.05;
        }
    }
    Ok((scene, cam, target))
}

fn cmd_check_grad(args: CheckGradArgs, seed: Option<u64>) -> Result<()> {
    let seed = seed.unwrap_or(1);
    let (scene, cam, target) = match (&args.checkpoint, &args.data) {
        (Some(ckpt), Some(data)) => {
            let (scene, _) = dataio::load_checkpoint(ckpt)?;
            let dataset = dataio::load_dataset(data, true)?;
            let view = &dataset.views[0];
            (scene.clone(), view.camera.clone(), view.composited_target(scene.background))
        }
        (None, None) => builtin_check_scene(seed)?,
        _ => bail!("--checkpoint and --data must be given together"),
    };

    let all = ParamRef::enumerate(&scene);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<ParamRef> = Vec::new();
    let mut indices: Vec<usize> = (0..all.len()).collect();
    let count = args.count.min(all.len());
    for i in 0..count {
        let j = i + (rng.gen::<u64>() as usize) % (indices.len() - i);
        indices.swap(i, j);
        picked.push(all[indices[i]]);
    }

    let width = cam.width as usize;
    let height = cam.height as usize;
    let lambda = args.lambda;
    let loss = move |image: &[Vec3]| {
        let out = train::photometric_loss(image, &target, width, height, lambda)
            .expect("probe images share the camera size");
        (out.total, out.grad)
    };
    let report = finite_difference_check(&scene, &cam, &picked, args.eps, !args.no_freeze, &loss)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    std::fs::write(&args.out, report.to_csv())
        .with_context(|| format!("writing {}", args.out.display()))?;
    let worst = report.max_rel_error();
    println!(
        "checked {} parameters (eps {:.1e}, freeze={}): max rel error {:.3e} -> {}",
        report.entries.len(),
        args.eps,
        !args.no_freeze,
        worst,
        args.out.display()
    );
    if worst > 2e-3 {
        bail!("gradient check failed: max rel error {:.3e} exceeds 2e-3", worst);
    }
    let _ = TILE_SIZE;
    Ok(())
}
