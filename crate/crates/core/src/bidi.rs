//! Bidirectional interpolation between two known end frames.
//!
//! One step denoises the clip under the start condition, steps it down,
//! lifts it back to the current level, then repeats the pass on the reversed
//! clip under the end condition. Iterating over a schedule fills the clip.

use serde::{Deserialize, Serialize};

use crate::backend::{CallContext, ClipAddress, Condition, Denoiser};
use crate::frame::{Frame, WarpedView};
use crate::noise::{add_scaled_noise, label, noised, SeedSource};
use crate::sampler::{
    call_denoiser, check_levels, euler_update, renoise, warp_guided_estimate, ClipState, NoiseSchedule, ResidualMode,
    SamplerError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BidiStepConfig {
    pub residual_mode: ResidualMode,
    pub apply_warp_guidance: bool,
    /// Write the (noised) condition frames into the clip's end slots before
    /// each step, and exactly once the clip reaches σ = 0.
    pub pin_endpoints: bool,
}

impl Default for BidiStepConfig {
    fn default() -> Self {
        Self {
            residual_mode: ResidualMode::Unconditional,
            apply_warp_guidance: true,
            pin_endpoints: true,
        }
    }
}

/// The fixed inputs of an interpolated clip.
#[derive(Debug, Clone, Copy)]
pub struct BidiClip<'a> {
    pub start: &'a Condition,
    pub end: &'a Condition,
    pub warped: &'a [WarpedView],
    pub address: ClipAddress,
}

impl BidiClip<'_> {
    fn check(&self) -> Result<(), SamplerError> {
        if self.warped.len() < 2 {
            return Err(SamplerError::Shape(format!(
                "interpolation needs both end frames; clip has {} slot(s)",
                self.warped.len()
            )));
        }
        let dims = self.warped[0].dims();
        if self.warped.iter().any(|w| w.dims() != dims)
            || self.start.frame.dims() != dims
            || self.end.frame.dims() != dims
        {
            return Err(SamplerError::Shape("conditions and warped views differ in size".into()));
        }
        Ok(())
    }
}

/// One bidirectional step from `x_t.sigma` down to `sigma_prev`.
pub fn bidi_step(
    denoiser: &dyn Denoiser,
    x_t: &ClipState,
    sigma_prev: f64,
    clip: &BidiClip<'_>,
    cfg: &BidiStepConfig,
    step: usize,
    seed: SeedSource,
) -> Result<ClipState, SamplerError> {
    clip.check()?;
    let sigma = x_t.sigma;
    check_levels(sigma, sigma_prev)?;
    let len = clip.warped.len();
    if x_t.frames.len() != len || x_t.frames.iter().any(|f| f.dims() != clip.warped[0].dims()) {
        return Err(SamplerError::Shape(format!(
            "clip state has {} frames, warped list has {len}",
            x_t.frames.len()
        )));
    }

    let mut x = x_t.frames.clone();
    if cfg.pin_endpoints {
        x[0] = noised(&clip.start.frame, sigma, &mut seed.child(label::PIN_START).rng());
        x[len - 1] = noised(&clip.end.frame, sigma, &mut seed.child(label::PIN_END).rng());
    }

    let mut ctx = CallContext {
        clip: clip.address,
        reversed: false,
        step,
        round: 0,
    };
    let forward = directional_pass(denoiser, &x, sigma, sigma_prev, clip.start, clip.warped, cfg, ctx)?;
    let lifted = renoise(
        &ClipState {
            frames: forward,
            sigma: sigma_prev,
        },
        sigma,
        seed.child(label::RENOISE),
    )?;

    let mut flipped = lifted.frames;
    flipped.reverse();
    let warped_rev: Vec<WarpedView> = clip.warped.iter().rev().cloned().collect();
    ctx.reversed = true;
    ctx.round = 1;
    let mut out = directional_pass(denoiser, &flipped, sigma, sigma_prev, clip.end, &warped_rev, cfg, ctx)?;
    out.reverse();

    if cfg.pin_endpoints && sigma_prev == 0.0 {
        out[0] = clip.start.frame.clone();
        out[len - 1] = clip.end.frame.clone();
    }
    Ok(ClipState {
        frames: out,
        sigma: sigma_prev,
    })
}

#[allow(clippy::too_many_arguments)]
fn directional_pass(
    denoiser: &dyn Denoiser,
    x: &[Frame],
    sigma: f64,
    sigma_prev: f64,
    condition: &Condition,
    warped: &[WarpedView],
    cfg: &BidiStepConfig,
    ctx: CallContext,
) -> Result<Vec<Frame>, SamplerError> {
    let out = call_denoiser(denoiser, x, sigma, condition, 0, warped, ctx)?;
    let guided = if cfg.apply_warp_guidance {
        warp_guided_estimate(&out.conditional, warped)?
    } else {
        out.conditional.clone()
    };
    let base = cfg.residual_mode.pick(&out, &guided);
    Ok(euler_update(x, &guided, base, sigma, sigma_prev))
}

/// Runs [`bidi_step`] over the whole schedule. Without `init` the clip
/// starts from fresh noise at the top level. Step `k` draws from
/// `seed.child(k)`.
pub fn interpolate_clip(
    denoiser: &dyn Denoiser,
    init: Option<ClipState>,
    clip: &BidiClip<'_>,
    schedule: &NoiseSchedule,
    cfg: &BidiStepConfig,
    seed: SeedSource,
) -> Result<Vec<Frame>, SamplerError> {
    clip.check()?;
    let top = schedule.sigma_max();
    let mut state = match init {
        Some(s) => {
            if s.sigma != top {
                return Err(SamplerError::Sigma(format!(
                    "initial clip is at level {} but the schedule starts at {top}",
                    s.sigma
                )));
            }
            s
        }
        None => {
            let dims = clip.warped[0].dims();
            let mut rng = seed.child(label::INIT).rng();
            let frames = clip
                .warped
                .iter()
                .map(|_| {
                    let mut f = Frame::zeros(dims);
                    add_scaled_noise(&mut f, top, &mut rng);
                    f
                })
                .collect();
            ClipState { frames, sigma: top }
        }
    };
    for k in 0..schedule.steps() {
        let (_, sigma_prev) = schedule.pair(k);
        state = bidi_step(denoiser, &state, sigma_prev, clip, cfg, k, seed.child(k as u64))?;
    }
    Ok(state.frames)
}
