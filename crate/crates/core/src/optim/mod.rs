//! Garment optimization: guidance-driven gradient descent with adaptive
//! density control.

mod adam;
mod density;
mod guidance;
mod loss;

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState, MIN_SCALE};
pub use density::{adaptive_density_control, DensityOutcome, GradAccum};
pub use guidance::{
    alpha_bar, build_guidance, decode_image, encode_image, Guidance, GuidanceMode, GuidanceRequest, GuidanceSpec,
    HttpGuidance, MockGuidance, MockTarget, TargetView, Weighting, WireCamera, WireRequest, WireResponse,
    DEFAULT_T_RANGE, IMAGE_GUIDANCE_SCALE, TEXT_GUIDANCE_SCALE,
};
pub use loss::{image_loss, sds_pixel_grad, ImageLoss, SdsSample};

use crate::cloud::GaussianCloud;
use crate::error::{check_dim, Error, Result};
use crate::image::Image;
use crate::render::{render, render_backward, Camera, RenderGrads};

pub const TEXT_ITERATIONS: usize = 800;
pub const IMAGE_ITERATIONS: usize = 2000;

/// Random orbit views around a target point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewConfig {
    pub target: [f64; 3],
    pub radius: f64,
    /// Half-open azimuth interval, degrees.
    pub azimuth_deg: [f64; 2],
    pub elevation_deg: [f64; 2],
    pub width: usize,
    pub height: usize,
    pub fov_y_deg: f64,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self {
            target: [0.0, 1.1, 0.0],
            radius: 2.5,
            azimuth_deg: [0.0, 360.0],
            elevation_deg: [-10.0, 30.0],
            width: 512,
            height: 512,
            fov_y_deg: 45.0,
        }
    }
}

impl ViewConfig {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<Camera> {
        let az = uniform(rng, self.azimuth_deg);
        let el = uniform(rng, self.elevation_deg);
        let target = Vector3::from(self.target);
        let mut cam = Camera::orbit(target, az, el, self.radius, self.width, self.height)?;
        let f = self.height as f64 / 2.0 / (self.fov_y_deg.to_radians() / 2.0).tan();
        cam.fx = f;
        cam.fy = f;
        Ok(cam)
    }
}

fn uniform<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Where training views come from.
#[derive(Clone, Debug, PartialEq)]
pub enum Views {
    Random(ViewConfig),
    /// Cycled in order, `batch_views` per iteration.
    Fixed(Vec<Camera>),
}

impl Views {
    fn batch<R: Rng>(&self, iter: usize, batch: usize, rng: &mut R) -> Result<Vec<Camera>> {
        match self {
            Views::Random(v) => (0..batch).map(|_| v.sample(rng)).collect(),
            Views::Fixed(cams) => {
                if cams.is_empty() {
                    return Err(Error::invalid("fixed view list is empty"));
                }
                Ok((0..batch)
                    .map(|b| cams[(iter * batch + b) % cams.len()].clone())
                    .collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr_position: f64,
    /// Applied to log-scale.
    pub lr_scale: f64,
    pub lr_color: f64,
    pub lr_opacity: f64,
    pub lr_rotation: f64,
    pub iterations: usize,
    pub batch_views: usize,
    pub densify: bool,
    pub densify_grad_threshold: f64,
    pub split_scale_threshold: f64,
    pub densify_interval: usize,
    pub opacity_prune_threshold: f64,
    /// Split children sit at `±split_offset·s`.
    pub split_offset: f64,
    /// Split children get scale `s / split_factor`.
    pub split_factor: f64,
    pub lambda_rgb: f64,
    pub lambda_mask: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub background: [f64; 3],
    pub views: ViewConfig,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_position: 5e-5,
            lr_scale: 5e-3,
            lr_color: 1e-2,
            lr_opacity: 1e-2,
            lr_rotation: 1e-3,
            iterations: TEXT_ITERATIONS,
            batch_views: 4,
            densify: true,
            densify_grad_threshold: 2e-4,
            split_scale_threshold: 0.01,
            densify_interval: 100,
            opacity_prune_threshold: 0.01,
            split_offset: 0.5,
            split_factor: 1.6,
            lambda_rgb: 1e5,
            lambda_mask: 50.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-15,
            background: [1.0, 1.0, 1.0],
            views: ViewConfig::default(),
            seed: 0,
        }
    }
}

impl OptimConfig {
    /// Defaults with the iteration count for `mode`.
    pub fn for_mode(mode: GuidanceMode) -> Self {
        Self {
            iterations: if mode == GuidanceMode::Image {
                IMAGE_ITERATIONS
            } else {
                TEXT_ITERATIONS
            },
            ..Self::default()
        }
    }

    pub fn background(&self) -> Vector3<f64> {
        Vector3::from(self.background)
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lr_position", self.lr_position),
            ("lr_scale", self.lr_scale),
            ("lr_color", self.lr_color),
            ("lr_opacity", self.lr_opacity),
            ("lr_rotation", self.lr_rotation),
            ("densify_grad_threshold", self.densify_grad_threshold),
            ("split_scale_threshold", self.split_scale_threshold),
            ("opacity_prune_threshold", self.opacity_prune_threshold),
            ("split_offset", self.split_offset),
            ("lambda_rgb", self.lambda_rgb),
            ("lambda_mask", self.lambda_mask),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0")));
            }
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be >= 1"));
        }
        if self.batch_views == 0 {
            return Err(Error::invalid("batch_views must be >= 1"));
        }
        if self.densify_interval == 0 {
            return Err(Error::invalid("densify_interval must be >= 1"));
        }
        if !(self.split_factor > 1.0 && self.split_factor.is_finite()) {
            return Err(Error::invalid("split_factor must be > 1"));
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2)) {
            return Err(Error::invalid("adam betas must lie in [0, 1)"));
        }
        if !self.background.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("background must be finite"));
        }
        Ok(())
    }
}

/// Reference view for image-conditioned runs.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePrompt {
    pub camera: Camera,
    pub rgb: Image,
    pub mask: Image,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub iter: usize,
    /// Image loss against the guidance target or prompt view, 0 when neither exists.
    pub loss_image: f64,
    /// Mean norm of the per-view score-distillation pixel gradients.
    pub grad_norm: f64,
    pub points: usize,
    pub ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub rows: Vec<LossRow>,
}

impl LossReport {
    /// CSV with header `iter,loss_image,grad_norm,points,ms`. Without
    /// `timing` the `ms` column is written as 0 so runs compare byte-exact.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut s = String::from("iter,loss_image,grad_norm,points,ms\n");
        for r in &self.rows {
            let ms = if timing { r.ms } else { 0.0 };
            let _ = writeln!(
                s,
                "{},{:e},{:e},{},{:.3}",
                r.iter, r.loss_image, r.grad_norm, r.points, ms
            );
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, timing: bool) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv(timing)).map_err(|e| Error::io_path(path, e))
    }

    pub fn last(&self) -> Option<&LossRow> {
        self.rows.last()
    }
}

/// What to optimize against.
pub struct Problem<'a> {
    pub guidance: &'a dyn Guidance,
    pub spec: &'a GuidanceSpec,
    pub views: &'a Views,
    /// Added image loss on a reference view (image-conditioned runs).
    pub prompt: Option<&'a ImagePrompt>,
    /// Points allowed to change; `None` trains everything. Frozen points are
    /// also exempt from density control.
    pub trainable: Option<Vec<bool>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Optimized {
    pub cloud: GaussianCloud,
    pub report: LossReport,
    pub trainable: Vec<bool>,
}

struct ViewResult {
    grads: RenderGrads,
    loss: Option<f64>,
    sds_norm: f64,
}

/// Run `cfg.iterations` optimization steps.
///
/// Each step renders `batch_views` views (in parallel, joined in view
/// order), turns guidance residuals into pixel gradients, backpropagates,
/// averages over views, adds the prompt-view image loss if any, and takes
/// one Adam step. Density control runs every `densify_interval` steps except
/// after the last one.
pub fn optimize(cloud: &GaussianCloud, problem: &Problem<'_>, cfg: &OptimConfig) -> Result<Optimized> {
    cfg.validate()?;
    problem.spec.validate()?;
    if cloud.is_empty() {
        return Err(Error::invalid("cannot optimize an empty cloud"));
    }
    cloud.validate()?;
    let mut trainable = problem.trainable.clone().unwrap_or_else(|| vec![true; cloud.len()]);
    check_dim("trainable mask length", cloud.len(), trainable.len())?;

    let bg = cfg.background();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cloud = cloud.clone();
    let mut state = AdamState::new(cloud.len());
    let mut accum = GradAccum::new(cloud.len());
    let mut report = LossReport::default();

    for iter in 0..cfg.iterations {
        let start = Instant::now();
        let cams = problem.views.batch(iter, cfg.batch_views, &mut rng)?;
        let seeds: Vec<u64> = cams.iter().map(|_| rng.random()).collect();
        let results: Vec<Result<ViewResult>> = cams
            .par_iter()
            .zip(&seeds)
            .map(|(cam, &seed)| {
                let mut vr = ChaCha8Rng::seed_from_u64(seed);
                let out = render(&cloud, cam, bg)?;
                let sds = sds_pixel_grad(&out.rgb, cam, problem.guidance, problem.spec, &mut vr)?;
                let grads = render_backward(&cloud, cam, bg, &sds.d_rgb, None)?;
                let loss = match problem.guidance.target(cam)? {
                    Some(t) => Some(image_loss(&out, &t.rgb, &t.mask, cfg)?.loss),
                    None => None,
                };
                Ok(ViewResult {
                    grads,
                    loss,
                    sds_norm: sds.d_rgb.norm(),
                })
            })
            .collect();

        let mut grads = RenderGrads::zeros(cloud.len());
        let (mut loss_sum, mut loss_n, mut norm_sum) = (0.0, 0usize, 0.0);
        for r in results {
            let r = r?;
            grads.add_assign(&r.grads)?;
            if let Some(l) = r.loss {
                loss_sum += l;
                loss_n += 1;
            }
            norm_sum += r.sds_norm;
        }
        grads.scale(1.0 / cams.len() as f64);
        let mut loss_image = if loss_n > 0 { loss_sum / loss_n as f64 } else { 0.0 };

        if let Some(p) = problem.prompt {
            let out = render(&cloud, &p.camera, bg)?;
            let il = image_loss(&out, &p.rgb, &p.mask, cfg)?;
            let g = render_backward(&cloud, &p.camera, bg, &il.d_rgb, Some(&il.d_alpha))?;
            grads.add_assign(&g)?;
            loss_image = il.loss;
        }
        if !grads.is_finite() || !loss_image.is_finite() {
            return Err(Error::NonFinite(format!("gradient at iteration {iter}")));
        }

        adam_step(&mut cloud, &grads, &mut state, cfg, Some(&trainable))?;
        accum.add(&grads)?;

        if cfg.densify && (iter + 1) % cfg.densify_interval == 0 && iter + 1 < cfg.iterations {
            let out = adaptive_density_control(&cloud, &accum.mean(), cfg, Some(&trainable), &mut rng)?;
            state = state.remap(&out.origin);
            trainable = out.parent.iter().map(|&p| trainable[p]).collect();
            cloud = out.cloud;
            accum = GradAccum::new(cloud.len());
            if cloud.is_empty() {
                return Err(Error::NonFinite("density control removed every point".into()));
            }
        }

        report.rows.push(LossRow {
            iter,
            loss_image,
            grad_norm: norm_sum / cams.len() as f64,
            points: cloud.len(),
            ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(Optimized {
        cloud,
        report,
        trainable,
    })
}
