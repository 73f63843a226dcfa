use std::sync::Arc;

use super::{
    validate_request, Axis, BackendDescriptor, BackendError, ClipAddress, DenoiseOutput, DenoiseRequest, Denoiser,
};
use crate::frame::Frame;
use crate::noise::{label, standard_normal, SeedSource};

/// Known clean frames for every cell of a grid, indexed `[view][time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    frames: Vec<Vec<Frame>>,
}

impl GroundTruth {
    pub fn new(frames: Vec<Vec<Frame>>) -> Result<Self, BackendError> {
        let n_frames = frames.first().map(Vec::len).unwrap_or(0);
        if frames.is_empty() || n_frames == 0 {
            return Err(BackendError::Shape("ground truth grid is empty".into()));
        }
        if frames.iter().any(|row| row.len() != n_frames) {
            return Err(BackendError::Shape("ground truth rows differ in length".into()));
        }
        let dims = frames[0][0].dims();
        if frames.iter().flatten().any(|f| f.dims() != dims) {
            return Err(BackendError::Shape("ground truth frames differ in size".into()));
        }
        Ok(Self { frames })
    }

    pub fn n_views(&self) -> usize {
        self.frames.len()
    }

    pub fn n_frames(&self) -> usize {
        self.frames[0].len()
    }

    pub fn get(&self, view: usize, time: usize) -> &Frame {
        &self.frames[view][time]
    }

    pub fn rows(&self) -> &[Vec<Frame>] {
        &self.frames
    }

    /// The clip at `addr` in natural order.
    pub fn clip(&self, addr: ClipAddress) -> Result<Vec<Frame>, BackendError> {
        match addr.axis {
            Axis::Camera if addr.index < self.n_frames() => {
                Ok(self.frames.iter().map(|row| row[addr.index].clone()).collect())
            }
            Axis::Time if addr.index < self.n_views() => Ok(self.frames[addr.index].clone()),
            _ => Err(BackendError::OutOfRange(addr.to_string())),
        }
    }

    fn slot_frame(&self, addr: ClipAddress, slot: usize, len: usize, reversed: bool) -> Result<&Frame, BackendError> {
        let natural = match addr.axis {
            Axis::Camera => self.n_views(),
            Axis::Time => self.n_frames(),
        };
        if natural != len {
            return Err(BackendError::Shape(format!(
                "{addr} has {natural} slots but the request carries {len}"
            )));
        }
        let s = if reversed { len - 1 - slot } else { slot };
        let coord = addr.coord(s);
        if coord.view >= self.n_views() || coord.time >= self.n_frames() {
            return Err(BackendError::OutOfRange(addr.to_string()));
        }
        Ok(&self.frames[coord.view][coord.time])
    }
}

/// Returns the ground-truth clip regardless of `x_t`.
#[derive(Debug, Clone)]
pub struct IdealDenoiser {
    truth: Arc<GroundTruth>,
    fixed: Option<ClipAddress>,
    desc: BackendDescriptor,
}

impl IdealDenoiser {
    /// Looks up the clip named in each request's context.
    pub fn new(truth: Arc<GroundTruth>) -> Self {
        let mut desc = BackendDescriptor::flexible("ideal");
        desc.has_unconditional = false;
        Self {
            truth,
            fixed: None,
            desc,
        }
    }

    /// Always answers with the clip at `clip`.
    pub fn for_clip(truth: Arc<GroundTruth>, clip: ClipAddress) -> Self {
        Self {
            fixed: Some(clip),
            ..Self::new(truth)
        }
    }
}

impl Denoiser for IdealDenoiser {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.desc
    }

    fn denoise(&self, request: &DenoiseRequest<'_>) -> Result<DenoiseOutput, BackendError> {
        validate_request(&self.desc, request)?;
        let addr = self.fixed.unwrap_or(request.context.clip);
        let len = request.x_t.len();
        let frames = (0..len)
            .map(|s| self.truth.slot_frame(addr, s, len, request.context.reversed).cloned())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DenoiseOutput::conditional(frames))
    }
}

/// An imperfect oracle. Pixels the request marks visible get the exact
/// ground truth; missing pixels get the posterior mean under a Gaussian
/// prior centred on a perturbed ground truth:
/// `(τ² x_t + σ² (g + δ)) / (τ² + σ²)`.
///
/// `δ ~ N(0, amplitude²)` is a deterministic function of the clip, its
/// orientation, σ and the slot, so repeated identical requests agree.
#[derive(Debug, Clone)]
pub struct NoisyIdealDenoiser {
    truth: Arc<GroundTruth>,
    amplitude: f64,
    prior_std: f64,
    seed: SeedSource,
    desc: BackendDescriptor,
}

impl NoisyIdealDenoiser {
    pub fn new(truth: Arc<GroundTruth>, amplitude: f64, prior_std: f64, seed: u64) -> Result<Self, BackendError> {
        if !(amplitude.is_finite() && amplitude >= 0.0 && prior_std.is_finite() && prior_std >= 0.0) {
            return Err(BackendError::Shape(format!(
                "noisy ideal needs amplitude >= 0 and prior std >= 0 (got {amplitude}, {prior_std})"
            )));
        }
        Ok(Self {
            truth,
            amplitude,
            prior_std,
            seed: SeedSource::new(seed).child(label::PERTURB),
            desc: BackendDescriptor::flexible("noisy_ideal"),
        })
    }
}

impl Denoiser for NoisyIdealDenoiser {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.desc
    }

    fn denoise(&self, request: &DenoiseRequest<'_>) -> Result<DenoiseOutput, BackendError> {
        let dims = validate_request(&self.desc, request)?;
        let ctx = request.context;
        let len = request.x_t.len();
        let tau2 = self.prior_std * self.prior_std;
        let s2 = request.sigma * request.sigma;
        let c = dims.channels;
        let mut frames = Vec::with_capacity(len);
        for slot in 0..len {
            let truth = self.truth.slot_frame(ctx.clip, slot, len, ctx.reversed)?;
            let x = &request.x_t[slot];
            let mask = request.warped[slot].mask.as_slice();
            let mut rng = self
                .seed
                .path(&[
                    ctx.clip.axis.code(),
                    ctx.clip.index as u64,
                    ctx.reversed as u64,
                    request.sigma.to_bits(),
                    slot as u64,
                ])
                .rng();
            let mut out = truth.clone();
            let data = out.data_mut();
            for (p, &missing) in mask.iter().enumerate() {
                for (k, value) in data.iter_mut().enumerate().skip(p * c).take(c) {
                    let delta = self.amplitude * standard_normal(&mut rng);
                    if missing {
                        let prior = truth.data()[k] as f64 + delta;
                        *value = ((tau2 * x.data()[k] as f64 + s2 * prior) / (tau2 + s2)) as f32;
                    }
                }
            }
            frames.push(out);
        }
        Ok(DenoiseOutput::conditional(frames))
    }
}
