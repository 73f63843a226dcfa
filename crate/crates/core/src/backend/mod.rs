//! Conditional denoiser interface and the shipped backends.
//!
//! A backend receives a noisy clip `x_t` at level `σ`, one conditioning
//! frame anchored at a grid coordinate, and the warped guidance for the
//! clip. It returns its estimate of the clean clip (plus an unconditional
//! estimate when it has one).

mod external;
mod ideal;
pub mod protocol;
mod simple;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{Dims, Frame, WarpedView};

pub use external::{ExternalDenoiser, ExternalOptions, DEFAULT_TIMEOUT};
pub use ideal::{GroundTruth, IdealDenoiser, NoisyIdealDenoiser};
pub use simple::{GaussianAnalyticDenoiser, IdentityDenoiser};

/// The two grid axes a clip can run along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// All views at one time index (a grid column).
    Camera,
    /// All times at one view (a grid row).
    Time,
}

impl Axis {
    pub fn code(self) -> u64 {
        match self {
            Axis::Camera => 0,
            Axis::Time => 1,
        }
    }
}

/// Identifies a clip: the column at time `index` or the row at view `index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClipAddress {
    pub axis: Axis,
    pub index: usize,
}

impl ClipAddress {
    pub fn column(time: usize) -> Self {
        Self {
            axis: Axis::Camera,
            index: time,
        }
    }

    pub fn row(view: usize) -> Self {
        Self {
            axis: Axis::Time,
            index: view,
        }
    }

    /// Grid coordinate of slot `slot` of this clip (in its natural order).
    pub fn coord(&self, slot: usize) -> GridCoord {
        match self.axis {
            Axis::Camera => GridCoord::new(slot, self.index),
            Axis::Time => GridCoord::new(self.index, slot),
        }
    }
}

impl fmt::Display for ClipAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.axis {
            Axis::Camera => write!(f, "column t={}", self.index),
            Axis::Time => write!(f, "row v={}", self.index),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridCoord {
    pub view: usize,
    pub time: usize,
}

impl GridCoord {
    pub fn new(view: usize, time: usize) -> Self {
        Self { view, time }
    }
}

/// Where a denoise call sits in the sampling loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CallContext {
    pub clip: ClipAddress,
    /// The clip is presented in reversed slot order.
    pub reversed: bool,
    pub step: usize,
    pub round: usize,
}

impl CallContext {
    pub fn new(clip: ClipAddress, step: usize) -> Self {
        Self {
            clip,
            reversed: false,
            step,
            round: 0,
        }
    }
}

/// A conditioning frame and the grid cell it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub anchor: GridCoord,
    pub frame: Frame,
}

impl Condition {
    pub fn new(anchor: GridCoord, frame: Frame) -> Self {
        Self { anchor, frame }
    }
}

pub struct DenoiseRequest<'a> {
    pub x_t: &'a [Frame],
    pub sigma: f64,
    pub condition: &'a Condition,
    /// Slot of `x_t` the condition frame belongs to.
    pub condition_slot: usize,
    pub warped: &'a [WarpedView],
    pub context: CallContext,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseOutput {
    pub conditional: Vec<Frame>,
    pub unconditional: Option<Vec<Frame>>,
}

impl DenoiseOutput {
    pub fn conditional(frames: Vec<Frame>) -> Self {
        Self {
            conditional: frames,
            unconditional: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub concurrent_safe: bool,
    pub has_unconditional: bool,
    /// Required frame size, if the backend is tied to one.
    pub frame_dims: Option<(usize, usize, usize)>,
    pub min_clip_len: usize,
    pub max_clip_len: usize,
}

impl BackendDescriptor {
    pub fn flexible(name: &str) -> Self {
        Self {
            name: name.to_string(),
            concurrent_safe: true,
            has_unconditional: false,
            frame_dims: None,
            min_clip_len: 1,
            max_clip_len: usize::MAX,
        }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("malformed request: {0}")]
    Shape(String),
    #[error("request outside backend limits: {0}")]
    Limit(String),
    #[error("no ground truth for {0}")]
    OutOfRange(String),
    #[error("transport failure on {clip} at step {step}: {detail}")]
    Transport {
        clip: ClipAddress,
        step: usize,
        detail: String,
    },
    #[error("backend timed out after {secs:.1}s on {clip} at step {step}")]
    Timeout { clip: ClipAddress, step: usize, secs: f64 },
    #[error("protocol version mismatch: expected {expected}, backend speaks {got}")]
    VersionMismatch { expected: u32, got: u32 },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("backend reported an error: {0}")]
    Remote(String),
    #[error("failed to start backend process: {0}")]
    Spawn(String),
}

/// A conditional denoiser `D(x_t; σ, c)`.
pub trait Denoiser: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Estimate of the clean clip. Must be a pure function of the request.
    fn denoise(&self, request: &DenoiseRequest<'_>) -> Result<DenoiseOutput, BackendError>;
}

/// Checks a request against the descriptor and for internal consistency.
pub fn validate_request(desc: &BackendDescriptor, req: &DenoiseRequest<'_>) -> Result<Dims, BackendError> {
    if !(req.sigma.is_finite() && req.sigma > 0.0) {
        return Err(BackendError::Shape(format!("sigma must be > 0 (got {})", req.sigma)));
    }
    let first = req
        .x_t
        .first()
        .ok_or_else(|| BackendError::Shape("empty clip".into()))?;
    let dims = first.dims();
    let len = req.x_t.len();
    if let Some(bad) = req.x_t.iter().position(|f| f.dims() != dims) {
        return Err(BackendError::Shape(format!(
            "slot {bad} is {} but slot 0 is {dims}",
            req.x_t[bad].dims()
        )));
    }
    if req.condition.frame.dims() != dims {
        return Err(BackendError::Shape(format!(
            "condition frame is {} but clip frames are {dims}",
            req.condition.frame.dims()
        )));
    }
    if req.condition_slot >= len {
        return Err(BackendError::Shape(format!(
            "condition slot {} outside clip of length {len}",
            req.condition_slot
        )));
    }
    if req.warped.len() != len {
        return Err(BackendError::Shape(format!(
            "{} warped views for a clip of length {len}",
            req.warped.len()
        )));
    }
    if let Some(bad) = req.warped.iter().position(|w| w.dims() != dims) {
        return Err(BackendError::Shape(format!("warped view {bad} has wrong size")));
    }
    if len < desc.min_clip_len || len > desc.max_clip_len {
        return Err(BackendError::Limit(format!(
            "clip length {len} outside [{}, {}]",
            desc.min_clip_len, desc.max_clip_len
        )));
    }
    if let Some((h, w, c)) = desc.frame_dims {
        if (h, w, c) != (dims.height, dims.width, dims.channels) {
            return Err(BackendError::Limit(format!(
                "frames are {dims}, backend needs {h}x{w}x{c}"
            )));
        }
    }
    Ok(dims)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_coords() {
        assert_eq!(ClipAddress::column(3).coord(1), GridCoord::new(1, 3));
        assert_eq!(ClipAddress::row(2).coord(4), GridCoord::new(2, 4));
    }

    #[test]
    fn validation_catches_mismatches() {
        let dims = Dims::new(2, 2, 1);
        let x = vec![Frame::zeros(dims); 3];
        let w = vec![WarpedView::holes(dims); 3];
        let cond = Condition::new(GridCoord::new(0, 0), Frame::zeros(dims));
        let ctx = CallContext::new(ClipAddress::row(0), 0);
        let desc = BackendDescriptor::flexible("t");
        let ok = DenoiseRequest {
            x_t: &x,
            sigma: 1.0,
            condition: &cond,
            condition_slot: 0,
            warped: &w,
            context: ctx,
        };
        assert!(validate_request(&desc, &ok).is_ok());

        let bad_sigma = DenoiseRequest { sigma: 0.0, ..ok };
        assert!(matches!(
            validate_request(&desc, &bad_sigma),
            Err(BackendError::Shape(_))
        ));
        let bad_slot = DenoiseRequest {
            condition_slot: 3,
            ..ok
        };
        assert!(validate_request(&desc, &bad_slot).is_err());
        let bad_warp = DenoiseRequest { warped: &w[..2], ..ok };
        assert!(validate_request(&desc, &bad_warp).is_err());

        let mut small = desc.clone();
        small.max_clip_len = 2;
        assert!(matches!(validate_request(&small, &ok), Err(BackendError::Limit(_))));
    }
}
