//! EDM-style Euler sampling with warp guidance and resampling annealing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, CallContext, ClipAddress, Condition, DenoiseOutput, DenoiseRequest, Denoiser};
use crate::frame::{Frame, WarpedView};
use crate::noise::{add_scaled_noise, label, noised, SeedSource};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("invalid annealing parameters: {0}")]
    Annealing(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid noise levels: {0}")]
    Sigma(String),
    #[error("denoiser failed on {clip} at step {step}, round {round}")]
    Backend {
        clip: ClipAddress,
        step: usize,
        round: usize,
        #[source]
        source: BackendError,
    },
}

/// Noise levels `σ_T > … > σ_1 > σ_0 = 0`, stored from the largest down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    /// Karras power interpolation between `sigma_max` and `sigma_min` over
    /// `steps` levels, followed by a final 0.
    pub fn karras(steps: usize, sigma_min: f64, sigma_max: f64, rho: f64) -> Result<Self, SamplerError> {
        if steps == 0 {
            return Err(SamplerError::Schedule("steps must be >= 1".into()));
        }
        if !(sigma_min.is_finite() && sigma_max.is_finite() && 0.0 < sigma_min && sigma_min < sigma_max) {
            return Err(SamplerError::Schedule(format!(
                "need 0 < sigma_min < sigma_max (got {sigma_min}, {sigma_max})"
            )));
        }
        if !(rho.is_finite() && rho > 0.0) {
            return Err(SamplerError::Schedule(format!("rho must be > 0 (got {rho})")));
        }
        let lo = sigma_min.powf(1.0 / rho);
        let hi = sigma_max.powf(1.0 / rho);
        let mut sigmas: Vec<f64> = (0..steps)
            .map(|k| {
                if k == 0 {
                    sigma_max
                } else if k == steps - 1 {
                    sigma_min
                } else {
                    (hi + k as f64 / (steps - 1) as f64 * (lo - hi)).powf(rho)
                }
            })
            .collect();
        sigmas.push(0.0);
        Self::from_sigmas(sigmas)
    }

    /// Accepts an explicit list; it must be strictly decreasing, finite and
    /// end in 0.
    pub fn from_sigmas(sigmas: Vec<f64>) -> Result<Self, SamplerError> {
        if sigmas.len() < 2 {
            return Err(SamplerError::Schedule("need at least two levels".into()));
        }
        if sigmas.last() != Some(&0.0) {
            return Err(SamplerError::Schedule("final level must be 0".into()));
        }
        if sigmas.iter().any(|s| !s.is_finite()) {
            return Err(SamplerError::Schedule("levels must be finite".into()));
        }
        if let Some(k) = sigmas.windows(2).position(|w| w[1] >= w[0]) {
            return Err(SamplerError::Schedule(format!(
                "levels not strictly decreasing at index {k}: {} then {}",
                sigmas[k],
                sigmas[k + 1]
            )));
        }
        Ok(Self { sigmas })
    }

    /// Number of denoising steps `T`.
    pub fn steps(&self) -> usize {
        self.sigmas.len() - 1
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigmas[0]
    }

    /// `(σ_t, σ_{t−1})` for step `k` (0-based from the noisiest).
    pub fn pair(&self, k: usize) -> (f64, f64) {
        (self.sigmas[k], self.sigmas[k + 1])
    }
}

pub fn make_schedule(steps: usize, sigma_min: f64, sigma_max: f64, rho: f64) -> Result<NoiseSchedule, SamplerError> {
    NoiseSchedule::karras(steps, sigma_min, sigma_max, rho)
}

/// Resampling annealing: the first `t_guide` steps run `r_total` rounds,
/// with warp guidance applied in the first `r_guide` of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnealingParams {
    pub t_guide: usize,
    pub r_total: usize,
    pub r_guide: usize,
}

impl AnnealingParams {
    pub fn default_for(steps: usize) -> Self {
        Self {
            t_guide: steps / 2,
            r_total: 3,
            r_guide: 2,
        }
    }

    /// A single guided round at every step.
    pub fn none() -> Self {
        Self {
            t_guide: 0,
            r_total: 1,
            r_guide: 1,
        }
    }

    pub fn validate(&self, steps: usize) -> Result<(), SamplerError> {
        if self.t_guide > steps {
            return Err(SamplerError::Annealing(format!(
                "t_guide {} exceeds the {steps} schedule steps",
                self.t_guide
            )));
        }
        if self.r_guide < 1 || self.r_guide > self.r_total {
            return Err(SamplerError::Annealing(format!(
                "need 1 <= r_guide <= r_total (got {} and {})",
                self.r_guide, self.r_total
            )));
        }
        Ok(())
    }
}

/// Which estimate forms the Euler residual `x_t − ·`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMode {
    /// The backend's unconditional estimate, or the conditional one when it
    /// has none.
    Unconditional,
    /// The conditional estimate `x̂`.
    #[default]
    Conditional,
    /// The warp-guided estimate `x̄`.
    Guided,
}

impl ResidualMode {
    pub(crate) fn pick<'a>(self, out: &'a DenoiseOutput, guided: &'a [Frame]) -> &'a [Frame] {
        match self {
            ResidualMode::Unconditional => out.unconditional.as_deref().unwrap_or(&out.conditional),
            ResidualMode::Conditional => &out.conditional,
            ResidualMode::Guided => guided,
        }
    }
}

/// A clip of frames at a common noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipState {
    pub frames: Vec<Frame>,
    pub sigma: f64,
}

impl ClipState {
    pub fn new(frames: Vec<Frame>, sigma: f64) -> Result<Self, SamplerError> {
        check_uniform(&frames)?;
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(SamplerError::Sigma(format!("clip level must be >= 0 (got {sigma})")));
        }
        Ok(Self { frames, sigma })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

fn check_uniform(frames: &[Frame]) -> Result<(), SamplerError> {
    let Some(first) = frames.first() else {
        return Err(SamplerError::Shape("empty clip".into()));
    };
    if frames.iter().any(|f| f.dims() != first.dims()) {
        return Err(SamplerError::Shape("clip frames differ in size".into()));
    }
    Ok(())
}

fn check_same(a: &[Frame], b: &[Frame], what: &str) -> Result<(), SamplerError> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.dims() != y.dims()) {
        return Err(SamplerError::Shape(format!("{what} does not match the clip")));
    }
    Ok(())
}

pub(crate) fn check_levels(sigma_t: f64, sigma_prev: f64) -> Result<(), SamplerError> {
    if !(sigma_t.is_finite() && sigma_t > 0.0) {
        return Err(SamplerError::Sigma(format!("sigma_t must be > 0 (got {sigma_t})")));
    }
    if !(sigma_prev.is_finite() && sigma_prev >= 0.0 && sigma_prev < sigma_t) {
        return Err(SamplerError::Sigma(format!(
            "need 0 <= sigma_prev < sigma_t (got {sigma_prev}, {sigma_t})"
        )));
    }
    Ok(())
}

/// `estimate + (σ'/σ)(x − base)`, or `estimate` itself when `σ' = 0`.
pub(crate) fn euler_update(
    x: &[Frame],
    estimate: &[Frame],
    base: &[Frame],
    sigma_t: f64,
    sigma_prev: f64,
) -> Vec<Frame> {
    if sigma_prev == 0.0 {
        return estimate.to_vec();
    }
    let ratio = sigma_prev / sigma_t;
    x.iter()
        .zip(estimate)
        .zip(base)
        .map(|((xf, ef), bf)| {
            let mut out = ef.clone();
            for ((o, &xv), &bv) in out.data_mut().iter_mut().zip(xf.data()).zip(bf.data()) {
                *o = (*o as f64 + ratio * (xv as f64 - bv as f64)) as f32;
            }
            out
        })
        .collect()
}

/// Plain Euler step `x̂ + (σ'/σ)(x_t − x̂)` from `x_t.sigma` to `sigma_prev`.
pub fn euler_step(x_t: &ClipState, x_hat: &[Frame], sigma_prev: f64) -> Result<ClipState, SamplerError> {
    check_levels(x_t.sigma, sigma_prev)?;
    check_same(&x_t.frames, x_hat, "estimate")?;
    Ok(ClipState {
        frames: euler_update(&x_t.frames, x_hat, x_hat, x_t.sigma, sigma_prev),
        sigma: sigma_prev,
    })
}

/// Replaces the estimate by the warped frame wherever the warp is visible.
pub fn warp_guided_estimate(x_hat: &[Frame], warped: &[WarpedView]) -> Result<Vec<Frame>, SamplerError> {
    if x_hat.len() != warped.len() || x_hat.iter().zip(warped).any(|(x, w)| x.dims() != w.dims()) {
        return Err(SamplerError::Shape("warped views do not match the estimate".into()));
    }
    Ok(x_hat
        .iter()
        .zip(warped)
        .map(|(x, w)| {
            let mut out = x.clone();
            let c = out.channels();
            for (p, &missing) in w.mask.as_slice().iter().enumerate() {
                if !missing {
                    out.data_mut()[p * c..(p + 1) * c].copy_from_slice(&w.frame.data()[p * c..(p + 1) * c]);
                }
            }
            out
        })
        .collect())
}

/// Guided step `x̄ + (σ'/σ)(x_t − x̂)` with the unguided residual.
pub fn guided_euler_step(
    x_t: &ClipState,
    x_hat: &[Frame],
    warped: &[WarpedView],
    sigma_prev: f64,
) -> Result<ClipState, SamplerError> {
    check_levels(x_t.sigma, sigma_prev)?;
    check_same(&x_t.frames, x_hat, "estimate")?;
    let guided = warp_guided_estimate(x_hat, warped)?;
    Ok(ClipState {
        frames: euler_update(&x_t.frames, &guided, x_hat, x_t.sigma, sigma_prev),
        sigma: sigma_prev,
    })
}

/// Adds noise of scale `sqrt(σ_t² − σ_prev²)` to lift a clip from
/// `x_prev.sigma` back up to `sigma_t`.
pub fn renoise(x_prev: &ClipState, sigma_t: f64, seed: SeedSource) -> Result<ClipState, SamplerError> {
    let sigma_prev = x_prev.sigma;
    if !(sigma_t.is_finite() && sigma_prev <= sigma_t) {
        return Err(SamplerError::Sigma(format!(
            "cannot renoise from {sigma_prev} down to {sigma_t}"
        )));
    }
    let scale = (sigma_t * sigma_t - sigma_prev * sigma_prev).sqrt();
    let mut rng = seed.rng();
    let frames = if scale == 0.0 {
        x_prev.frames.clone()
    } else {
        x_prev.frames.iter().map(|f| noised(f, scale, &mut rng)).collect()
    };
    Ok(ClipState { frames, sigma: sigma_t })
}

/// Knobs for [`sample_warp_guided_clip`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GuidedSamplerConfig {
    pub annealing: AnnealingParams,
    pub residual_mode: ResidualMode,
}

pub(crate) fn call_denoiser(
    denoiser: &dyn Denoiser,
    x_t: &[Frame],
    sigma: f64,
    condition: &Condition,
    condition_slot: usize,
    warped: &[WarpedView],
    context: CallContext,
) -> Result<DenoiseOutput, SamplerError> {
    let request = DenoiseRequest {
        x_t,
        sigma,
        condition,
        condition_slot,
        warped,
        context,
    };
    let wrap = |source| SamplerError::Backend {
        clip: context.clip,
        step: context.step,
        round: context.round,
        source,
    };
    let out = denoiser.denoise(&request).map_err(wrap)?;
    let shape_ok = |frames: &[Frame]| check_same(x_t, frames, "denoiser output").is_ok();
    if !shape_ok(&out.conditional) || out.unconditional.as_deref().is_some_and(|u| !shape_ok(u)) {
        return Err(wrap(BackendError::Shape(
            "output shape differs from the input clip".into(),
        )));
    }
    Ok(out)
}

/// Samples a whole clip from noise, conditioned on its first frame, with
/// warp guidance and resampling annealing in the early steps.
pub fn sample_warp_guided_clip(
    denoiser: &dyn Denoiser,
    warped: &[WarpedView],
    condition: &Condition,
    schedule: &NoiseSchedule,
    cfg: &GuidedSamplerConfig,
    clip: ClipAddress,
    seed: SeedSource,
) -> Result<Vec<Frame>, SamplerError> {
    let first = warped
        .first()
        .ok_or_else(|| SamplerError::Shape("no warped views".into()))?;
    let dims = first.dims();
    if warped.iter().any(|w| w.dims() != dims) || condition.frame.dims() != dims {
        return Err(SamplerError::Shape("condition and warped views differ in size".into()));
    }
    cfg.annealing.validate(schedule.steps())?;

    let mut init = seed.child(label::INIT).rng();
    let mut x: Vec<Frame> = warped
        .iter()
        .map(|_| {
            let mut f = Frame::zeros(dims);
            add_scaled_noise(&mut f, schedule.sigma_max(), &mut init);
            f
        })
        .collect();

    for k in 0..schedule.steps() {
        let (sigma, sigma_prev) = schedule.pair(k);
        let rounds = if k < cfg.annealing.t_guide {
            cfg.annealing.r_total
        } else {
            1
        };
        let mut cur = x;
        for r in 0..rounds {
            let guide = k < cfg.annealing.t_guide && r < cfg.annealing.r_guide;
            let ctx = CallContext {
                clip,
                reversed: false,
                step: k,
                round: r,
            };
            let out = call_denoiser(denoiser, &cur, sigma, condition, 0, warped, ctx)?;
            let guided = if guide {
                warp_guided_estimate(&out.conditional, warped)?
            } else {
                out.conditional.clone()
            };
            let base = cfg.residual_mode.pick(&out, &guided);
            if r + 1 < rounds {
                let mut rng = seed.path(&[label::REDRAW, k as u64, r as u64]).rng();
                cur = guided.iter().map(|f| noised(f, sigma, &mut rng)).collect();
            } else {
                cur = euler_update(&cur, &guided, base, sigma, sigma_prev);
            }
        }
        x = cur;
    }
    Ok(x)
}
