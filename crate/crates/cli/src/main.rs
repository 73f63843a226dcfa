use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gridsynth_core::config::{BackendSpec, PipelineConfig};
use gridsynth_core::frame::{Dims, Frame, WarpedView};
use gridsynth_core::grid::{CellStatus, Grid4D};
use gridsynth_core::io::{
    read_grid, save_input_video, save_pfm, save_png, write_grid, BitDepth, GridManifest, ManifestMeta,
};
use gridsynth_core::metrics::{xt_slice, MetricsReport};
use gridsynth_core::pipeline::{prepare_input, run_pipeline};
use gridsynth_core::warp::warp_video_row;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "gridsynth",
    version,
    about = "Fill a camera × time video grid from a single video"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic scene's full ground-truth grid and depths.
    RenderSynthetic(RunArgs),
    /// Warp the input video into every view and write frames and hole masks.
    Warp(RunArgs),
    /// Generate the grid boundary only.
    Keyframes(RunArgs),
    /// Run the full pipeline.
    Fill(RunArgs),
    /// Compare a grid against a reference grid.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Depth {
    #[value(name = "8")]
    Eight,
    #[value(name = "16")]
    Sixteen,
}

impl From<Depth> for BitDepth {
    fn from(d: Depth) -> Self {
        match d {
            Depth::Eight => BitDepth::Eight,
            Depth::Sixteen => BitDepth::Sixteen,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// ideal, noisy-ideal, gaussian, identity or external:<command>.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    no_warp_guidance: bool,
    #[arg(long)]
    no_stbi: bool,
    #[arg(long)]
    parallel: bool,
    /// PNG bit depth of written frames.
    #[arg(long, value_enum, default_value = "16")]
    bit_depth: Depth,
}

impl RunArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(b) = &self.backend {
            cfg.backend = BackendSpec::from_cli(b)?;
        }
        cfg.ablation.disable_warp_guidance |= self.no_warp_guidance;
        cfg.ablation.disable_stbi |= self.no_stbi;
        cfg.parallel |= self.parallel;
        cfg.validate()?;
        Ok(cfg)
    }

    fn meta(&self, cfg: &PipelineConfig) -> ManifestMeta {
        ManifestMeta {
            seed: cfg.seed,
            config_digest: cfg.digest(),
            trajectory: Some(cfg.trajectory.clone()),
            bit_depth: self.bit_depth.into(),
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Grid directory to evaluate.
    #[arg(long)]
    grid: PathBuf,
    /// Reference grid directory.
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Image row used for the x–t slices; defaults to the middle row.
    #[arg(long)]
    xt_y: Option<usize>,
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn summarize(manifest: &GridManifest, out: &Path) {
    println!(
        "wrote {}x{} grid to {} (config {})",
        manifest.n_views,
        manifest.n_frames,
        out.display(),
        &manifest.config_digest[..12.min(manifest.config_digest.len())]
    );
}

fn render_synthetic(args: &RunArgs) -> Result<()> {
    let cfg = args.load()?;
    if cfg.scene.is_none() {
        bail!("render-synthetic needs a [scene] block");
    }
    let input = prepare_input(&cfg)?;
    let truth = input.ground_truth.expect("synthetic input has ground truth");
    create_out(&args.out)?;
    let mut grid = Grid4D::new(truth.frames[0].clone(), truth.frames.len())?;
    for (v, row) in truth.frames.iter().enumerate().skip(1) {
        for (t, f) in row.iter().enumerate() {
            grid.update(v, t, f.clone(), CellStatus::Final, 0.0)?;
        }
    }
    let manifest = write_grid(&args.out, &grid, &args.meta(&cfg))?;
    for (v, row) in truth.depths.iter().enumerate() {
        for (t, d) in row.iter().enumerate() {
            save_pfm(&args.out.join(format!("depth_view{v:03}_time{t:03}.pfm")), d)?;
        }
    }
    save_input_video(
        &args.out.join("input"),
        &truth.frames[0],
        &truth.depths[0],
        args.bit_depth.into(),
    )?;
    summarize(&manifest, &args.out);
    Ok(())
}

/// White where the warp left a hole.
fn mask_image(w: &WarpedView) -> Frame {
    let m = &w.mask;
    Frame::from_fn(Dims::new(m.height(), m.width(), 1), |r, c, _| {
        if m.is_missing(r, c) {
            1.0
        } else {
            0.0
        }
    })
}

#[derive(Serialize)]
struct WarpCell {
    view: usize,
    time: usize,
    hole_fraction: f64,
}

fn warp(args: &RunArgs) -> Result<()> {
    let cfg = args.load()?;
    let input = prepare_input(&cfg)?;
    let warped = warp_video_row(&input.frames, &input.depths, &input.trajectory, &input.intrinsics)?;
    create_out(&args.out)?;
    let mut cells = Vec::new();
    for v in 0..warped.n_views() {
        for t in 0..warped.n_frames() {
            let w = warped.get(v, t);
            save_png(
                &args.out.join(format!("view{v:03}_time{t:03}.png")),
                &w.frame,
                args.bit_depth.into(),
            )?;
            save_png(
                &args.out.join(format!("mask_view{v:03}_time{t:03}.png")),
                &mask_image(w),
                BitDepth::Eight,
            )?;
            cells.push(WarpCell {
                view: v,
                time: t,
                hole_fraction: w.mask.missing_count() as f64 / (w.mask.height() * w.mask.width()) as f64,
            });
        }
    }
    let path = args.out.join("warp.json");
    fs::write(&path, serde_json::to_string_pretty(&cells)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    println!(
        "wrote {} warped views to {}",
        warped.n_views() * warped.n_frames(),
        args.out.display()
    );
    Ok(())
}

fn run(args: &RunArgs, keyframes_only: bool) -> Result<()> {
    let cfg = args.load()?;
    let result = run_pipeline(&cfg, keyframes_only)?;
    create_out(&args.out)?;
    let manifest = write_grid(&args.out, &result.output.grid, &args.meta(&cfg))?;
    summarize(&manifest, &args.out);
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    grid_config_digest: &'a str,
    reference_config_digest: &'a str,
    xt_row: usize,
    metrics: &'a MetricsReport,
}

fn eval(args: &EvalArgs) -> Result<()> {
    let (gm, grid) = read_grid(&args.grid)?;
    let (rm, reference) = read_grid(&args.reference)?;
    if (gm.n_views, gm.n_frames) != (rm.n_views, rm.n_frames) {
        bail!(
            "grid is {}x{} but the reference is {}x{}",
            gm.n_views,
            gm.n_frames,
            rm.n_views,
            rm.n_frames
        );
    }
    if gm.trajectory != rm.trajectory {
        eprintln!("warning: grid and reference were made with different trajectories");
    }
    let report = MetricsReport::compute(&grid, &reference)?;
    let y = args.xt_y.unwrap_or(gm.height / 2);
    create_out(&args.out)?;
    let xt_dir = args.out.join("xt");
    create_out(&xt_dir)?;
    for (v, row) in grid.iter().enumerate() {
        save_png(
            &xt_dir.join(format!("view{v:03}.png")),
            &xt_slice(row, y)?,
            BitDepth::Sixteen,
        )?;
    }
    let out = EvalOutput {
        grid_config_digest: &gm.config_digest,
        reference_config_digest: &rm.config_digest,
        xt_row: y,
        metrics: &report,
    };
    let path = args.out.join("report.json");
    fs::write(&path, serde_json::to_string_pretty(&out)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    let interior = report.interior_mean.map_or("n/a".to_string(), |p| p.to_string());
    let b = report.boundary_exact;
    println!(
        "mean PSNR {}, interior {interior}, boundary exact: input row {}, first column {}, last row {}, last column {}",
        report.mean, b.input_row, b.first_column, b.last_row, b.last_column
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::RenderSynthetic(a) => render_synthetic(a),
        Command::Warp(a) => warp(a),
        Command::Keyframes(a) => run(a, true),
        Command::Fill(a) => run(a, false),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
