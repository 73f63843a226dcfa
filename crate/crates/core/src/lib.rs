//! Training-free filling of a camera × time video grid.
//!
//! A single input video becomes row 0 of an `N × F` grid of frames (views ×
//! time steps). Depth-based forward warping gives partial guidance for every
//! other view; a conditional diffusion denoiser fills the rest with an
//! EDM-style Euler sampler, first along the grid boundary and then across the
//! interior with alternating camera-axis and time-axis interpolation.

pub mod backend;
pub mod bidi;
pub mod camera;
pub mod config;
pub mod frame;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod noise;
pub mod pipeline;
pub mod sampler;
pub mod scene;
pub mod warp;
