use super::{validate_request, BackendDescriptor, BackendError, DenoiseOutput, DenoiseRequest, Denoiser};
use crate::frame::Frame;

/// Returns `x_t` unchanged.
#[derive(Debug, Clone)]
pub struct IdentityDenoiser {
    desc: BackendDescriptor,
}

impl IdentityDenoiser {
    pub fn new() -> Self {
        Self {
            desc: BackendDescriptor::flexible("identity"),
        }
    }
}

impl Default for IdentityDenoiser {
    fn default() -> Self {
        Self::new()
    }
}

impl Denoiser for IdentityDenoiser {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.desc
    }

    fn denoise(&self, request: &DenoiseRequest<'_>) -> Result<DenoiseOutput, BackendError> {
        validate_request(&self.desc, request)?;
        Ok(DenoiseOutput::conditional(request.x_t.to_vec()))
    }
}

/// Posterior mean for data drawn i.i.d. from `N(μ, τ²)`:
/// `D(x; σ) = (τ² x + σ² μ) / (τ² + σ²)`.
#[derive(Debug, Clone)]
pub struct GaussianAnalyticDenoiser {
    mean: f64,
    std: f64,
    desc: BackendDescriptor,
}

impl GaussianAnalyticDenoiser {
    pub fn new(mean: f64, std: f64) -> Result<Self, BackendError> {
        if !(mean.is_finite() && std.is_finite() && std >= 0.0) {
            return Err(BackendError::Shape(format!(
                "gaussian prior needs finite mean and std >= 0 (got {mean}, {std})"
            )));
        }
        Ok(Self {
            mean,
            std,
            desc: BackendDescriptor::flexible("gaussian"),
        })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    pub fn estimate(&self, x: &Frame, sigma: f64) -> Frame {
        let tau2 = self.std * self.std;
        let s2 = sigma * sigma;
        let denom = tau2 + s2;
        let mut out = x.clone();
        for v in out.data_mut() {
            *v = ((tau2 * *v as f64 + s2 * self.mean) / denom) as f32;
        }
        out
    }
}

impl Denoiser for GaussianAnalyticDenoiser {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.desc
    }

    fn denoise(&self, request: &DenoiseRequest<'_>) -> Result<DenoiseOutput, BackendError> {
        validate_request(&self.desc, request)?;
        let frames = request.x_t.iter().map(|f| self.estimate(f, request.sigma)).collect();
        Ok(DenoiseOutput::conditional(frames))
    }
}
