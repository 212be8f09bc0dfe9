//! `garment`: generate, edit, repair, animate and render Gaussian garments.

mod commands;
mod config;
mod inputs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use garment_core::Error;

#[derive(Parser, Debug)]
#[command(name = "garment", version, about = "Semantic 3D Gaussian garments on a skinned body")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Body model utilities.
    #[command(subcommand)]
    Body(BodyCommand),
    /// Initialize a garment on body regions and optimize it against guidance.
    Generate(GenerateArgs),
    /// Edit an existing garment.
    #[command(subcommand)]
    Edit(EditCommand),
    /// Repair self-occlusion artifacts of a posed garment; writes it in T-pose.
    OcclusionFix(OcclusionArgs),
    /// Repose a canonical garment for every frame of a pose sequence.
    Animate(AnimateArgs),
    /// Render a garment to PNG.
    Render(RenderArgs),
}

#[derive(Subcommand, Debug)]
enum BodyCommand {
    /// Write the procedural test humanoid.
    MakeTest {
        #[arg(long)]
        out: PathBuf,
        /// Rings per body part.
        #[arg(long, default_value_t = 6)]
        segments: usize,
        /// Vertices per ring.
        #[arg(long, default_value_t = 12)]
        radial: usize,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum GuidanceKind {
    /// Deterministic stand-in: residual is the rendering minus a target.
    Mock,
    /// External guidance service over HTTP.
    Bridge,
}

#[derive(Args, Debug, Clone)]
struct GuidanceArgs {
    #[arg(long, value_enum, default_value_t = GuidanceKind::Mock)]
    guidance: GuidanceKind,
    /// Target image (PNG or PFM), or a reference cloud (.ply) for mock guidance.
    #[arg(long)]
    target: Option<PathBuf>,
    /// Coverage mask for an image target (PNG or PFM, first channel).
    #[arg(long)]
    target_mask: Option<PathBuf>,
    /// Camera JSON for the reference view of an image target.
    #[arg(long)]
    target_camera: Option<PathBuf>,
    /// Text prompt (bridge guidance).
    #[arg(long)]
    prompt: Option<String>,
    /// Guidance service base URL; falls back to GARMENT_GUIDANCE_URL.
    #[arg(long)]
    endpoint: Option<String>,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// TOML or JSON settings overriding the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the iteration count.
    #[arg(long)]
    iterations: Option<usize>,
    /// Per-iteration loss CSV.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Record wall-clock milliseconds in the report.
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    body: PathBuf,
    /// Comma-separated label names.
    #[arg(long)]
    region: String,
    #[command(flatten)]
    guidance: GuidanceArgs,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum EditCommand {
    /// Recolor while keeping geometry fixed.
    Texture {
        #[arg(long)]
        cloud: PathBuf,
        #[command(flatten)]
        guidance: GuidanceArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retarget to another body shape.
    Shape {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        body: PathBuf,
        /// Comma-separated source shape coefficients; zeros when omitted.
        #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
        beta_src: Option<Vec<f64>>,
        /// Comma-separated target shape coefficients.
        #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true, required = true)]
        beta_dst: Vec<f64>,
        /// Vertices blended per Gaussian.
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replace the labeled part of the garment.
    Local {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        body: PathBuf,
        #[arg(long)]
        region: String,
        #[command(flatten)]
        guidance: GuidanceArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct OcclusionArgs {
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long)]
    body: PathBuf,
    /// Pose JSON the garment is in.
    #[arg(long)]
    pose: PathBuf,
    /// Comma-separated label names; armpits and torso sides when omitted.
    #[arg(long)]
    region: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pipeline report JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AnimateArgs {
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long)]
    body: PathBuf,
    /// JSON list of {frame, theta, beta, psi}.
    #[arg(long)]
    poses: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long)]
    camera: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the coverage mask.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Also write alpha-weighted depth as PFM.
    #[arg(long)]
    depth: Option<PathBuf>,
    /// Linear RGB background.
    #[arg(long, value_parser = inputs::parse_rgb, default_value = "1,1,1")]
    background: [f64; 3],
    /// Size for cameras that leave it unspecified.
    #[arg(long, default_value_t = 512)]
    size: usize,
}

/// Error class and exit code.
fn classify(e: &Error) -> (&'static str, u8) {
    match e {
        Error::Invalid(_) | Error::UnknownLabel(_) | Error::Dimension { .. } => ("usage", 2),
        Error::Io(_) | Error::IoPath { .. } | Error::Format(_) => ("io", 3),
        Error::NonFinite(_) => ("numerical", 4),
        Error::Guidance(_) => ("guidance", 5),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = classify(&e);
            eprintln!("error[{kind}]: {}", one_line(&e.to_string()));
            ExitCode::from(code)
        }
    }
}
