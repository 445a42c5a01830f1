//! Training loop: photometric loss, moment-based optimizer, and the
//! split/prune scheduler.

pub mod loss;
pub mod optim;
pub mod refine;

pub use loss::{photometric_loss, LossOutput};
pub use optim::{GroupRates, OptimizerState};
pub use refine::{accumulate_split_stats, split_and_prune, RefineConfig, RefineReport};

use crate::backward::backward_pass;
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::metrics;
use crate::render::{render, RenderOptions};
use crate::scene::Scene;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

/// One training view: a posed camera and its target image (already
/// composited over the training background where a mask applies).
#[derive(Clone, Debug)]
pub struct TrainView {
    pub camera: Camera,
    pub target: Vec<Vec3>,
}

/// Full training configuration. Every field maps to one key in the flat
/// `key = value` config-file format and to one CLI flag.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    /// D-SSIM weight in the loss.
    pub lambda: f64,
    pub iterations: u64,
    pub split_prune_interval: u64,
    /// Scheduler events stop after this iteration.
    pub split_prune_until: u64,
    pub refine: RefineConfig,
    /// Position learning rate per unit scene extent; decays exponentially.
    pub position_lr: f64,
    /// Final/initial position learning-rate ratio over the run.
    pub position_lr_decay: f64,
    pub color_lr: f64,
    pub rotation_lr: f64,
    pub scaling_lr: f64,
    pub sh_lr: f64,
    pub seed: u64,
    /// World radius of boundary Gaussians (applied to the scene).
    pub boundary_scale: f64,
    /// Background color (applied to the scene and target compositing).
    pub background: Vec3,
    pub log_every: u64,
    /// Zero disables periodic checkpoints.
    pub checkpoint_every: u64,
    /// Where periodic checkpoints go (required if checkpoint_every > 0).
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            iterations: 3000,
            split_prune_interval: 300,
            split_prune_until: 15_000,
            refine: RefineConfig::default(),
            position_lr: 1.6e-4,
            position_lr_decay: 0.01,
            color_lr: 2.5e-3,
            rotation_lr: 1e-3,
            scaling_lr: 5e-3,
            sh_lr: 2.5e-3,
            seed: 0,
            boundary_scale: 0.01,
            background: Vec3::new(1.0, 1.0, 1.0),
            log_every: 100,
            checkpoint_every: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    /// Applies `key = value` lines (# starts a comment). Unknown keys are
    /// rejected so typos cannot silently fall back to defaults.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::InvalidConfig(format!("{}: {}", what, value));
        let f = |v: &str, what: &str| v.trim().parse::<f64>().map_err(|_| bad(what));
        let u = |v: &str, what: &str| v.trim().parse::<u64>().map_err(|_| bad(what));
        match key.trim() {
            "lambda" => self.lambda = f(value, "lambda")?,
            "iterations" => self.iterations = u(value, "iterations")?,
            "split_prune_interval" => self.split_prune_interval = u(value, "split_prune_interval")?,
            "split_prune_until" => self.split_prune_until = u(value, "split_prune_until")?,
            "tau_g" => self.refine.tau_g = f(value, "tau_g")?,
            "tau_b" => self.refine.tau_b = f(value, "tau_b")?,
            "tau_v" => self.refine.tau_v = f(value, "tau_v")?,
            "tau_r" => self.refine.tau_r = f(value, "tau_r")?,
            "tau_a" => self.refine.tau_a = f(value, "tau_a")?,
            "tau_s" => self.refine.tau_s = f(value, "tau_s")?,
            "primitive_ceiling" => {
                self.refine.primitive_ceiling = u(value, "primitive_ceiling")? as usize
            }
            "position_lr" => self.position_lr = f(value, "position_lr")?,
            "position_lr_decay" => self.position_lr_decay = f(value, "position_lr_decay")?,
            "color_lr" => self.color_lr = f(value, "color_lr")?,
            "rotation_lr" => self.rotation_lr = f(value, "rotation_lr")?,
            "scaling_lr" => self.scaling_lr = f(value, "scaling_lr")?,
            "sh_lr" => self.sh_lr = f(value, "sh_lr")?,
            "seed" => self.seed = u(value, "seed")?,
            "boundary_scale" => self.boundary_scale = f(value, "boundary_scale")?,
            "background" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("background"))?;
                if parts.len() != 3 {
                    return Err(bad("background"));
                }
                self.background = Vec3::new(parts[0], parts[1], parts[2]);
            }
            "log_every" => self.log_every = u(value, "log_every")?,
            "checkpoint_every" => self.checkpoint_every = u(value, "checkpoint_every")?,
            other => {
                return Err(Error::InvalidConfig(format!("unknown config key: {}", other)));
            }
        }
        Ok(())
    }

    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidConfig(format!("expected key = value, got: {}", line)));
            };
            self.apply_kv(key, value)?;
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig("lambda must be in [0, 1]".into()));
        }
        if self.split_prune_interval == 0 {
            return Err(Error::InvalidConfig("split_prune_interval must be positive".into()));
        }
        let r = &self.refine;
        for (name, v) in [
            ("tau_g", r.tau_g),
            ("tau_b", r.tau_b),
            ("tau_v", r.tau_v),
            ("tau_r", r.tau_r),
            ("tau_a", r.tau_a),
            ("tau_s", r.tau_s),
        ] {
            if v <= 0.0 {
                return Err(Error::InvalidConfig(format!("{} must be positive", name)));
            }
        }
        Ok(())
    }

    fn rates_at(&self, iteration: u64, extent: f64) -> GroupRates {
        let t = if self.iterations <= 1 {
            0.0
        } else {
            iteration as f64 / (self.iterations - 1) as f64
        };
        GroupRates {
            position: self.position_lr * extent * self.position_lr_decay.powf(t),
            color: self.color_lr,
            rotation: self.rotation_lr,
            scaling: self.scaling_lr,
            sh: self.sh_lr,
        }
    }
}

/// One row of the training log.
#[derive(Clone, Debug)]
pub struct LogRow {
    pub iteration: u64,
    pub loss: f64,
    pub l2: f64,
    pub dssim: f64,
    pub primitive_count: usize,
    pub psnr_running: f64,
}

pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("iteration,loss,l2,dssim,primitive_count,psnr_running\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.8e},{:.8e},{:.8e},{},{:.4}\n",
            r.iteration, r.loss, r.l2, r.dssim, r.primitive_count, r.psnr_running
        ));
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub scene: Scene,
    pub optimizer: OptimizerState,
    pub log: Vec<LogRow>,
    pub initial_l2: f64,
    pub final_l2: f64,
}

/// Runs the optimization loop: per iteration, render one view (seeded
/// per-epoch shuffle), evaluate the loss, backpropagate, step, and run the
/// split/prune scheduler on its interval. Deterministic under a fixed seed.
pub fn train_loop(mut scene: Scene, views: &[TrainView], config: &TrainConfig) -> Result<TrainResult> {
    config.validate()?;
    if views.is_empty() {
        return Err(Error::InvalidConfig("training needs at least one view".into()));
    }
    scene.background = config.background;
    scene.boundary_scale = config.boundary_scale;

    // Edge priors (0-255 Sobel of the grayscale target), one per view.
    let edge_maps: Vec<Vec<f64>> = views
        .iter()
        .map(|v| {
            let gray: Vec<f64> =
                metrics::luminance(&v.target).iter().map(|l| l * 255.0).collect();
            metrics::sobel_magnitude(&gray, v.camera.width as usize, v.camera.height as usize)
        })
        .collect();

    let extent = scene.extent().max(1e-9);
    let mut optimizer = OptimizerState::new();
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..views.len()).collect();
    let mut psnr_running = 0.0;
    let mut initial_l2 = f64::NAN;
    let mut final_l2 = f64::NAN;
    let opts = RenderOptions { disable_blending: false, collect_records: true };

    for iteration in 0..config.iterations {
        let slot = (iteration as usize) % views.len();
        if slot == 0 {
            let epoch = iteration / views.len() as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (epoch.wrapping_mul(0x9e3779b97f4a7c15)));
            for i in (1..order.len()).rev() {
                let j = (rng.gen::<u64>() as usize) % (i + 1);
                order.swap(i, j);
            }
        }
        let view = &views[order[slot]];
        let edge_map = &edge_maps[order[slot]];

        let pass = render(&scene, &view.camera, &opts);
        let loss_out = photometric_loss(
            pass.image(),
            &view.target,
            view.camera.width as usize,
            view.camera.height as usize,
            config.lambda,
        )?;
        if iteration == 0 {
            initial_l2 = loss_out.l2;
        }
        final_l2 = loss_out.l2;

        let grads = backward_pass(&scene, &view.camera, &pass, &loss_out.grad)?;
        accumulate_split_stats(&mut scene, &grads, &pass.buffers, edge_map);
        optim::step(&mut scene, &grads, &mut optimizer, &config.rates_at(iteration, extent))?;

        let psnr = metrics::psnr(pass.image(), &view.target)?.min(99.0);
        psnr_running = if iteration == 0 { psnr } else { 0.95 * psnr_running + 0.05 * psnr };

        if config.log_every > 0 && (iteration % config.log_every == 0 || iteration + 1 == config.iterations)
        {
            log.push(LogRow {
                iteration,
                loss: loss_out.total,
                l2: loss_out.l2,
                dssim: loss_out.dssim,
                primitive_count: scene.primitives.len(),
                psnr_running,
            });
        }

        let step_number = iteration + 1;
        if step_number % config.split_prune_interval == 0
            && step_number <= config.split_prune_until
            && step_number < config.iterations
        {
            split_and_prune(&mut scene, &config.refine, config.seed ^ step_number)?;
            optimizer.retain_ids(&scene);
        }

        if config.checkpoint_every > 0 && step_number % config.checkpoint_every == 0 {
            if let Some(dir) = &config.checkpoint_dir {
                let path = dir.join(format!("iter_{:06}.bgt", step_number));
                crate::dataio::save_checkpoint(&scene, Some(&optimizer), &path)?;
            }
        }
    }

    Ok(TrainResult { scene, optimizer, log, initial_l2, final_l2 })
}
