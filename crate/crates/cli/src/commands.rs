//! Subcommand implementations.

use std::path::Path;

use garment_core::body::{load_body, make_test_humanoid, save_body, Pose, RegionSpec};
use garment_core::cloud::{load_ply, save_ply, GaussianCloud};
use garment_core::editor::{animate, edit_local, edit_shape, edit_texture_global};
use garment_core::image::Image;
use garment_core::init::init_garment;
use garment_core::occlusion::run_pipeline;
use garment_core::optim::{
    build_guidance, optimize, Guidance, GuidanceMode, GuidanceSpec, ImagePrompt, LossReport, MockTarget, OptimConfig,
    Problem, Views,
};
use garment_core::render::{render, Camera};
use garment_core::{Error, Result};
use nalgebra::Vector3;

use crate::config::Settings;
use crate::inputs::{read_camera, read_pose, read_sequence, split_names};
use crate::{
    AnimateArgs, BodyCommand, Command, EditCommand, GenerateArgs, GuidanceArgs, GuidanceKind, OcclusionArgs,
    RenderArgs, RunArgs,
};

pub const ENDPOINT_ENV: &str = "GARMENT_GUIDANCE_URL";

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Body(BodyCommand::MakeTest { out, segments, radial }) => {
            save_body(&make_test_humanoid(segments, radial)?, out)
        }
        Command::Generate(a) => generate(a),
        Command::Edit(e) => edit(e),
        Command::OcclusionFix(a) => occlusion_fix(a),
        Command::Animate(a) => animate_cmd(a),
        Command::Render(a) => render_cmd(a),
    }
}

/// Everything an optimization run needs besides the cloud.
struct Guided {
    guidance: Box<dyn Guidance>,
    spec: GuidanceSpec,
    views: Views,
    prompt: Option<ImagePrompt>,
}

impl Guided {
    fn problem(&self) -> Problem<'_> {
        Problem {
            guidance: self.guidance.as_ref(),
            spec: &self.spec,
            views: &self.views,
            prompt: self.prompt.as_ref(),
            trainable: None,
        }
    }
}

fn mode(g: &GuidanceArgs) -> Result<GuidanceMode> {
    match (g.guidance, &g.prompt, &g.target) {
        (GuidanceKind::Mock, _, _) => Ok(GuidanceMode::Mock),
        (GuidanceKind::Bridge, Some(_), None) => Ok(GuidanceMode::Text),
        (GuidanceKind::Bridge, None, Some(_)) => Ok(GuidanceMode::Image),
        (GuidanceKind::Bridge, Some(_), Some(_)) => {
            Err(Error::invalid("bridge guidance takes --prompt or --target, not both"))
        }
        (GuidanceKind::Bridge, None, None) => Err(Error::invalid("bridge guidance needs --prompt or --target")),
    }
}

fn settings(run: &RunArgs, mode: GuidanceMode) -> Result<Settings> {
    let mut s = Settings::load(run.config.as_deref(), OptimConfig::for_mode(mode))?;
    s.optim.seed = run.seed;
    s.init.seed = run.seed;
    if let Some(n) = run.iterations {
        s.optim.iterations = n;
    }
    Ok(s)
}

fn is_ply(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply"))
}

fn target_image(g: &GuidanceArgs, path: &Path) -> Result<(Image, Image)> {
    let rgb = Image::read_any(path)?;
    if rgb.channels != 3 {
        return Err(Error::invalid(format!(
            "{}: target image needs 3 channels",
            path.display()
        )));
    }
    let mask = match &g.target_mask {
        Some(m) => Image::read_mask(m)?,
        None => Image::filled(rgb.width, rgb.height, 1, 1.0),
    };
    if (mask.width, mask.height) != (rgb.width, rgb.height) {
        return Err(Error::invalid(format!(
            "target mask is {}x{}, target image is {}x{}",
            mask.width, mask.height, rgb.width, rgb.height
        )));
    }
    Ok((rgb, mask))
}

/// Resolve guidance; `None` for mock guidance without a target.
fn guided(g: &GuidanceArgs, s: &mut Settings) -> Result<Option<Guided>> {
    let mode = mode(g)?;
    let mut spec = s.guidance.clone();
    spec.mode = mode;
    if let Some(p) = &g.prompt {
        spec.prompt = p.clone();
    }
    if mode != GuidanceMode::Mock {
        spec.endpoint = g
            .endpoint
            .clone()
            .or_else(|| std::env::var(ENDPOINT_ENV).ok())
            .or(spec.endpoint);
    }
    let bg = s.optim.background();
    let (guidance, prompt) = match (mode, &g.target) {
        (GuidanceMode::Mock, None) => return Ok(None),
        (GuidanceMode::Mock, Some(t)) if is_ply(t) => {
            (build_guidance(&spec, Some(MockTarget::Cloud(load_ply(t)?)), bg)?, None)
        }
        (GuidanceMode::Mock, Some(t)) => {
            let (rgb, mask) = target_image(g, t)?;
            s.optim.views.width = rgb.width;
            s.optim.views.height = rgb.height;
            (build_guidance(&spec, Some(MockTarget::Image { rgb, mask }), bg)?, None)
        }
        (GuidanceMode::Image, Some(t)) => {
            let (rgb, mask) = target_image(g, t)?;
            let camera = match &g.target_camera {
                Some(c) => read_camera(c, rgb.width)?,
                None => Camera::orbit(
                    Vector3::from(s.optim.views.target),
                    0.0,
                    0.0,
                    s.optim.views.radius,
                    rgb.width,
                    rgb.height,
                )?,
            };
            if (camera.width, camera.height) != (rgb.width, rgb.height) {
                return Err(Error::invalid("target camera size differs from the target image"));
            }
            (
                build_guidance(&spec, None, bg)?,
                Some(ImagePrompt { camera, rgb, mask }),
            )
        }
        _ => (build_guidance(&spec, None, bg)?, None),
    };
    Ok(Some(Guided {
        guidance,
        spec,
        views: Views::Random(s.optim.views.clone()),
        prompt,
    }))
}

fn write_report(report: &LossReport, run: &RunArgs) -> Result<()> {
    match &run.report {
        Some(p) => report.write_csv(p, run.timing),
        None => Ok(()),
    }
}

fn region(body: &garment_core::body::SkinnedBody, list: &str) -> Result<RegionSpec> {
    let names = split_names(list);
    if names.is_empty() {
        return Err(Error::invalid("region lists no labels"));
    }
    RegionSpec::from_names(body, &names)
}

fn generate(a: GenerateArgs) -> Result<()> {
    let body = load_body(&a.body)?;
    let region = region(&body, &a.region)?;
    let mut s = settings(&a.run, mode(&a.guidance)?)?;
    let g = guided(&a.guidance, &mut s)?;
    let cloud = init_garment(&body, &region, &s.init)?;
    match g {
        None => save_ply(&cloud, &a.out),
        Some(g) => {
            let out = optimize(&cloud, &g.problem(), &s.optim)?;
            save_ply(&out.cloud, &a.out)?;
            write_report(&out.report, &a.run)
        }
    }
}

fn required(g: Option<Guided>, what: &str) -> Result<Guided> {
    g.ok_or_else(|| Error::invalid(format!("{what} needs --target or --prompt guidance")))
}

fn edit(e: EditCommand) -> Result<()> {
    match e {
        EditCommand::Texture {
            cloud,
            guidance,
            run,
            out,
        } => {
            let cloud = load_ply(&cloud)?;
            let mut s = settings(&run, mode(&guidance)?)?;
            let g = required(guided(&guidance, &mut s)?, "edit texture")?;
            let res = edit_texture_global(&cloud, &g.problem(), &s.optim)?;
            save_ply(&res.cloud, &out)?;
            write_report(&res.report, &run)
        }
        EditCommand::Shape {
            cloud,
            body,
            beta_src,
            beta_dst,
            k,
            out,
        } => {
            let cloud = load_ply(&cloud)?;
            let body = load_body(&body)?;
            let src = beta_src.unwrap_or_else(|| vec![0.0; body.num_betas()]);
            save_ply(&edit_shape(&cloud, &body, &src, &beta_dst, k)?, &out)
        }
        EditCommand::Local {
            cloud,
            body,
            region: names,
            guidance,
            run,
            out,
        } => {
            let cloud = load_ply(&cloud)?;
            let body = load_body(&body)?;
            let region = region(&body, &names)?;
            let mut s = settings(&run, mode(&guidance)?)?;
            let g = required(guided(&guidance, &mut s)?, "edit local")?;
            let res = edit_local(&cloud, &body, &region, &s.init, &g.problem(), &s.optim)?;
            save_ply(&res.cloud, &out)?;
            write_report(&res.report, &run)
        }
    }
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(format!("report: {e}")))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io_path(path, e))
}

fn occlusion_fix(a: OcclusionArgs) -> Result<()> {
    let cloud = load_ply(&a.cloud)?;
    let body = load_body(&a.body)?;
    let pose = read_pose(&a.pose, &body)?;
    let mut s = Settings::load(a.config.as_deref(), OptimConfig::default())?;
    if let Some(list) = &a.region {
        s.occlusion.region = split_names(list);
    }
    let res = run_pipeline(&cloud, &body, &pose, &s.occlusion)?;
    save_ply(&res.cloud, &a.out)?;
    match &a.report {
        Some(p) => write_json(&res.report, p),
        None => Ok(()),
    }
}

fn animate_cmd(a: AnimateArgs) -> Result<()> {
    let cloud = load_ply(&a.cloud)?;
    let body = load_body(&a.body)?;
    let frames = read_sequence(&a.poses, &body)?;
    let poses: Vec<Pose> = frames.iter().map(|(_, p)| p.clone()).collect();
    let clouds: Vec<GaussianCloud> = animate(&cloud, &body, &poses)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io_path(&a.out_dir, e))?;
    for ((frame, _), c) in frames.iter().zip(&clouds) {
        save_ply(c, a.out_dir.join(format!("frame_{frame:04}.ply")))?;
    }
    Ok(())
}

fn render_cmd(a: RenderArgs) -> Result<()> {
    let cloud = load_ply(&a.cloud)?;
    let camera = read_camera(&a.camera, a.size)?;
    let out = render(&cloud, &camera, Vector3::from(a.background))?;
    out.rgb.write_png(&a.out)?;
    if let Some(m) = &a.mask {
        out.alpha.write_png(m)?;
    }
    if let Some(d) = &a.depth {
        out.depth.write_pfm(d)?;
    }
    Ok(())
}
