//! End-to-end runs driven by a [`PipelineConfig`].

use std::sync::Arc;

use crate::backend::{
    Denoiser, ExternalDenoiser, ExternalOptions, GaussianAnalyticDenoiser, GroundTruth, IdealDenoiser,
    IdentityDenoiser, NoisyIdealDenoiser,
};
use crate::camera::{Intrinsics, Trajectory};
use crate::config::{BackendSpec, PipelineConfig};
use crate::frame::{DepthMap, Frame};
use crate::grid::{run_engine, EngineOutput, PipelineError};
use crate::io::load_input_video;
use crate::scene::{RenderedGrid, SyntheticScene};

/// The input row the engine starts from, plus the full rendered grid when
/// the input is synthetic.
#[derive(Debug, Clone)]
pub struct PreparedInput {
    pub trajectory: Trajectory,
    pub intrinsics: Intrinsics,
    pub frames: Vec<Frame>,
    pub depths: Vec<DepthMap>,
    pub ground_truth: Option<RenderedGrid>,
}

pub fn prepare_input(cfg: &PipelineConfig) -> Result<PreparedInput, PipelineError> {
    let trajectory = cfg.build_trajectory()?;
    let k = cfg.intrinsics;
    let f = cfg.grid.n_frames;
    if let Some(spec) = &cfg.scene {
        let scene = SyntheticScene::new(spec.clone(), k.height, k.width, f)?;
        let rendered = scene.render_grid(&trajectory, &k)?;
        return Ok(PreparedInput {
            frames: rendered.frames[0].clone(),
            depths: rendered.depths[0].clone(),
            ground_truth: Some(rendered),
            trajectory,
            intrinsics: k,
        });
    }
    let dir = cfg
        .input_dir()
        .ok_or_else(|| PipelineError::Config("no input source".into()))?;
    let (frames, depths) = load_input_video(&dir, f)?;
    let d = frames[0].dims();
    if (d.height, d.width) != (k.height, k.width) {
        return Err(PipelineError::Config(format!(
            "input frames are {}x{} but the intrinsics say {}x{}",
            d.height, d.width, k.height, k.width
        )));
    }
    Ok(PreparedInput {
        trajectory,
        intrinsics: k,
        frames,
        depths,
        ground_truth: None,
    })
}

pub fn build_backend(spec: &BackendSpec, truth: Option<&RenderedGrid>) -> Result<Box<dyn Denoiser>, PipelineError> {
    let need_truth = || {
        truth
            .map(|t| GroundTruth::new(t.frames.clone()).map(Arc::new))
            .ok_or_else(|| PipelineError::Config("this backend needs a synthetic scene".into()))
    };
    Ok(match spec {
        BackendSpec::Ideal => Box::new(IdealDenoiser::new(need_truth()??)),
        BackendSpec::NoisyIdeal {
            amplitude,
            prior_std,
            seed,
        } => Box::new(NoisyIdealDenoiser::new(need_truth()??, *amplitude, *prior_std, *seed)?),
        BackendSpec::Gaussian { mean, std } => Box::new(GaussianAnalyticDenoiser::new(*mean, *std)?),
        BackendSpec::Identity => Box::new(IdentityDenoiser::new()),
        BackendSpec::External { command, timeout_secs } => {
            if !(timeout_secs.is_finite() && *timeout_secs > 0.0) {
                return Err(PipelineError::Config(format!(
                    "timeout must be positive (got {timeout_secs})"
                )));
            }
            let opts = ExternalOptions::from_command_line(command)?
                .with_timeout(std::time::Duration::from_secs_f64(*timeout_secs));
            Box::new(ExternalDenoiser::spawn(&opts)?)
        }
    })
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub input: PreparedInput,
    pub output: EngineOutput,
}

/// Prepares the input, starts the backend and runs the engine.
pub fn run_pipeline(cfg: &PipelineConfig, keyframes_only: bool) -> Result<PipelineRun, PipelineError> {
    cfg.validate()?;
    let input = prepare_input(cfg)?;
    let denoiser = build_backend(&cfg.backend, input.ground_truth.as_ref())?;
    let engine = cfg.engine_config()?;
    let output = run_engine(
        &input.frames,
        &input.depths,
        &input.trajectory,
        &input.intrinsics,
        denoiser.as_ref(),
        &engine,
        keyframes_only,
    )?;
    Ok(PipelineRun { input, output })
}
