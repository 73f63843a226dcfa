//! Pixel containers shared by every stage: frames, depth maps, occlusion
//! masks and warped views.
//!
//! All buffers are row-major. Frames interleave channels (`H × W × C`).

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("dimensions must be positive (got {height}x{width}x{channels})")]
    EmptyDims {
        height: usize,
        width: usize,
        channels: usize,
    },
    #[error("unsupported channel count {0}; expected 1 or 3")]
    Channels(usize),
    #[error("buffer holds {got} values, expected {expected}")]
    BufferLength { expected: usize, got: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("depth at (row {row}, col {col}) is {value}; depths must be finite and > 0")]
    InvalidDepth { row: usize, col: usize, value: f32 },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Height, width and channel count of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Dims {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// A single image or sampler state. Images live nominally in `[0, 1]`;
/// sampler states are unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    dims: Dims,
    data: Vec<f32>,
}

impl Frame {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.len()],
        }
    }

    pub fn filled(dims: Dims, value: f32) -> Self {
        Self {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn from_vec(dims: Dims, data: Vec<f32>) -> Result<Self, FrameError> {
        if dims.is_empty() {
            return Err(FrameError::EmptyDims {
                height: dims.height,
                width: dims.width,
                channels: dims.channels,
            });
        }
        if dims.channels != 1 && dims.channels != 3 {
            return Err(FrameError::Channels(dims.channels));
        }
        if data.len() != dims.len() {
            return Err(FrameError::BufferLength {
                expected: dims.len(),
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(FrameError::NonFinite(i));
        }
        Ok(Self { dims, data })
    }

    /// Builds a frame by evaluating `f(row, col, channel)` at every element.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for row in 0..dims.height {
            for col in 0..dims.width {
                for ch in 0..dims.channels {
                    data.push(f(row, col, ch));
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn channels(&self) -> usize {
        self.dims.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.dims.width + col) * self.dims.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f32) {
        self.data[(row * self.dims.width + col) * self.dims.channels + ch] = value;
    }

    /// The channel values of one pixel.
    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let c = self.dims.channels;
        let start = (row * self.dims.width + col) * c;
        &self.data[start..start + c]
    }

    #[inline]
    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f32] {
        let c = self.dims.channels;
        let start = (row * self.dims.width + col) * c;
        &mut self.data[start..start + c]
    }

    pub fn max_abs_diff(&self, other: &Frame) -> f32 {
        assert_eq!(self.dims, other.dims, "max_abs_diff on mismatched frames");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Bitwise equality of the two buffers (distinguishes `0.0` and `-0.0`).
    pub fn bit_eq(&self, other: &Frame) -> bool {
        self.dims == other.dims
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Per-pixel z-depth of the visible surface, in scene units.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl DepthMap {
    /// Validates that every depth is finite and strictly positive; the
    /// error names the first offending pixel.
    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self, FrameError> {
        if height == 0 || width == 0 {
            return Err(FrameError::EmptyDims {
                height,
                width,
                channels: 1,
            });
        }
        if data.len() != height * width {
            return Err(FrameError::BufferLength {
                expected: height * width,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(FrameError::InvalidDepth {
                row: i / width,
                col: i % width,
                value: data[i],
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn constant(height: usize, width: usize, depth: f32) -> Result<Self, FrameError> {
        Self::from_vec(height, width, vec![depth; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }
}

/// Binary hole map: `true` marks a missing (occluded / uncovered) pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OcclusionMask {
    height: usize,
    width: usize,
    missing: Vec<bool>,
}

impl OcclusionMask {
    pub fn all_visible(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            missing: vec![false; height * width],
        }
    }

    pub fn all_missing(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            missing: vec![true; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, missing: Vec<bool>) -> Result<Self, FrameError> {
        if missing.len() != height * width {
            return Err(FrameError::BufferLength {
                expected: height * width,
                got: missing.len(),
            });
        }
        Ok(Self { height, width, missing })
    }

    /// Converts an opacity mask (1 = warped content present) into the hole
    /// polarity used throughout the crate.
    pub fn from_opacity(height: usize, width: usize, opacity: &[f32]) -> Result<Self, FrameError> {
        if opacity.len() != height * width {
            return Err(FrameError::BufferLength {
                expected: height * width,
                got: opacity.len(),
            });
        }
        Ok(Self {
            height,
            width,
            missing: opacity.iter().map(|&o| o < 0.5).collect(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.missing
    }

    #[inline]
    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.missing[row * self.width + col]
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }
}

/// A frame warped into a target view together with its hole mask.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedView {
    pub frame: Frame,
    pub mask: OcclusionMask,
}

impl WarpedView {
    /// Enforces shared dimensions and zeroes any value under a hole.
    pub fn new(mut frame: Frame, mask: OcclusionMask) -> Result<Self, FrameError> {
        if frame.height() != mask.height() || frame.width() != mask.width() {
            return Err(FrameError::Shape(format!(
                "frame {} vs mask {}x{}",
                frame.dims(),
                mask.height(),
                mask.width()
            )));
        }
        let c = frame.channels();
        for (i, &m) in mask.as_slice().iter().enumerate() {
            if m {
                frame.data_mut()[i * c..(i + 1) * c].fill(0.0);
            }
        }
        Ok(Self { frame, mask })
    }

    /// A view that carries the frame unchanged with nothing missing.
    pub fn visible(frame: Frame) -> Self {
        let mask = OcclusionMask::all_visible(frame.height(), frame.width());
        Self { frame, mask }
    }

    /// A view with no usable content: black frame, every pixel missing.
    pub fn holes(dims: Dims) -> Self {
        Self {
            frame: Frame::zeros(dims),
            mask: OcclusionMask::all_missing(dims.height, dims.width),
        }
    }

    pub fn dims(&self) -> Dims {
        self.frame.dims()
    }
}
