//! Procedural layered scene with exact depth: a textured background plane,
//! a textured square moving in front of it, rendered by ray casting.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{project, CameraError, Intrinsics, Pose, Trajectory};
use crate::frame::{DepthMap, Dims, Frame, FrameError};
use crate::noise::SeedSource;

/// Per-channel sums and sums of squares, plus a sample count.
type Bucket = (Vec<f64>, Vec<f64>, usize);

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("time index {index} out of range for {n_frames} frames")]
    TimeOutOfRange { index: usize, n_frames: usize },
    #[error("pixel (row {row}, col {col}) sees no surface")]
    NoSurface { row: usize, col: usize },
    #[error("foreground leaves the image in view {view} at time {time}")]
    OutOfFrustum { view: usize, time: usize },
    #[error("grid has {got} views but the trajectory has {expected}")]
    ViewCount { expected: usize, got: usize },
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// Path of the foreground square's centre (world x, y) over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Motion {
    Static {
        center: [f64; 2],
    },
    /// `start + t · velocity`, with `t` the frame index.
    Linear {
        start: [f64; 2],
        velocity: [f64; 2],
    },
    /// Counter-clockwise in the image, `period` frames per revolution.
    Circular {
        center: [f64; 2],
        radius: f64,
        period: f64,
    },
}

impl Motion {
    pub fn center_at(&self, t: usize) -> [f64; 2] {
        let t = t as f64;
        match *self {
            Motion::Static { center } => center,
            Motion::Linear { start, velocity } => [start[0] + t * velocity[0], start[1] + t * velocity[1]],
            Motion::Circular { center, radius, period } => {
                let a = TAU * t / period;
                [center[0] + radius * a.cos(), center[1] - radius * a.sin()]
            }
        }
    }
}

fn default_channels() -> usize {
    3
}

fn default_checker() -> f64 {
    0.25
}

fn default_true() -> bool {
    true
}

/// Scene description as it appears in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub background_depth: f64,
    pub foreground_depth: f64,
    /// Half the side length of the foreground square, in world units.
    pub foreground_half_size: f64,
    pub motion: Motion,
    #[serde(default)]
    pub texture_seed: u64,
    #[serde(default = "default_channels")]
    pub channels: usize,
    /// Side of one background checker cell, in world units.
    #[serde(default = "default_checker")]
    pub checker_size: f64,
    #[serde(default = "default_true")]
    pub foreground: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Wave {
    fx: f64,
    fy: f64,
    phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Background,
    Foreground,
}

/// What one pixel ray hits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub layer: Layer,
    /// Camera-space z of the hit point.
    pub depth: f64,
    pub world: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    spec: SceneSpec,
    dims: Dims,
    n_frames: usize,
    bg_waves: Vec<Wave>,
    fg_waves: Vec<Wave>,
}

impl SyntheticScene {
    pub fn new(spec: SceneSpec, height: usize, width: usize, n_frames: usize) -> Result<Self, SceneError> {
        let (zf, zb) = (spec.foreground_depth, spec.background_depth);
        if !(zf.is_finite() && zb.is_finite() && 0.0 < zf && zf < zb) {
            return Err(SceneError::Invalid(format!(
                "need 0 < foreground depth < background depth (got {zf}, {zb})"
            )));
        }
        if !(spec.foreground_half_size.is_finite() && spec.foreground_half_size > 0.0) {
            return Err(SceneError::Invalid("foreground half size must be > 0".into()));
        }
        if !(spec.checker_size.is_finite() && spec.checker_size > 0.0) {
            return Err(SceneError::Invalid("checker size must be > 0".into()));
        }
        if spec.channels != 1 && spec.channels != 3 {
            return Err(SceneError::Invalid(format!(
                "channels must be 1 or 3 (got {})",
                spec.channels
            )));
        }
        if let Motion::Circular { period, radius, .. } = spec.motion {
            if !(period.is_finite() && period > 0.0 && radius.is_finite()) {
                return Err(SceneError::Invalid("circular motion needs a positive period".into()));
            }
        }
        if height == 0 || width == 0 || n_frames == 0 {
            return Err(SceneError::Invalid(
                "frame size and frame count must be positive".into(),
            ));
        }
        let mut rng = SeedSource::new(spec.texture_seed).rng();
        let mut waves = |n: usize, lo: f64, hi: f64| -> Vec<Wave> {
            (0..n)
                .map(|_| Wave {
                    fx: rng.random_range(lo..hi),
                    fy: rng.random_range(lo..hi),
                    phase: rng.random_range(0.0..TAU),
                })
                .collect()
        };
        let bg_waves = waves(3, 0.3, 1.2);
        let fg_waves = waves(3, 2.0, 5.0);
        Ok(Self {
            dims: Dims::new(height, width, spec.channels),
            spec,
            n_frames,
            bg_waves,
            fg_waves,
        })
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    /// The same scene with the foreground removed.
    pub fn without_foreground(&self) -> Self {
        let mut s = self.clone();
        s.spec.foreground = false;
        s
    }

    fn check_time(&self, t: usize) -> Result<(), SceneError> {
        if t >= self.n_frames {
            return Err(SceneError::TimeOutOfRange {
                index: t,
                n_frames: self.n_frames,
            });
        }
        Ok(())
    }

    fn background_color(&self, x: f64, y: f64, ch: usize) -> f32 {
        let cell = self.spec.checker_size;
        let checker = ((x / cell).floor() + (y / cell).floor()).rem_euclid(2.0);
        let w = self.bg_waves[ch];
        let wave = 0.5 + 0.5 * (TAU * (w.fx * x + w.fy * y) + w.phase).sin();
        (0.1 + 0.35 * checker + 0.45 * wave) as f32
    }

    fn foreground_color(&self, lx: f64, ly: f64, ch: usize) -> f32 {
        let w = self.fg_waves[ch];
        let wave = 0.5 + 0.5 * (TAU * (w.fx * lx + w.fy * ly) + w.phase).sin();
        (0.2 + 0.75 * wave) as f32
    }

    fn foreground_center(&self, t: usize) -> [f64; 2] {
        self.spec.motion.center_at(t)
    }

    /// Casts the ray through pixel `(row, col)`.
    pub fn trace(&self, pose: &Pose, t: usize, k: &Intrinsics, row: usize, col: usize) -> Option<Hit> {
        let dir_cam = Vector3::new((col as f64 - k.cx) / k.fx, (row as f64 - k.cy) / k.fy, 1.0);
        let origin = pose.center();
        let dir = pose.rotation().transpose() * dir_cam;
        if dir.z.is_nan() || dir.z <= 0.0 {
            return None;
        }
        if self.spec.foreground {
            let s = (self.spec.foreground_depth - origin.z) / dir.z;
            if s > 0.0 {
                let p = origin + dir * s;
                let [cx, cy] = self.foreground_center(t);
                let h = self.spec.foreground_half_size;
                if (p.x - cx).abs() <= h && (p.y - cy).abs() <= h {
                    return Some(Hit {
                        layer: Layer::Foreground,
                        depth: s,
                        world: p,
                    });
                }
            }
        }
        let s = (self.spec.background_depth - origin.z) / dir.z;
        (s > 0.0).then(|| Hit {
            layer: Layer::Background,
            depth: s,
            world: origin + dir * s,
        })
    }

    fn shade(&self, hit: &Hit, t: usize, ch: usize) -> f32 {
        match hit.layer {
            Layer::Background => self.background_color(hit.world.x, hit.world.y, ch),
            Layer::Foreground => {
                let [cx, cy] = self.foreground_center(t);
                self.foreground_color(hit.world.x - cx, hit.world.y - cy, ch)
            }
        }
    }

    /// Colour and depth seen from `pose` at time `t`.
    pub fn render(&self, pose: &Pose, t: usize, k: &Intrinsics) -> Result<(Frame, DepthMap), SceneError> {
        self.check_time(t)?;
        self.check_intrinsics(k)?;
        let (h, w, c) = (self.dims.height, self.dims.width, self.dims.channels);
        let mut frame = Frame::zeros(self.dims);
        let mut depth = Vec::with_capacity(h * w);
        for row in 0..h {
            for col in 0..w {
                let hit = self
                    .trace(pose, t, k, row, col)
                    .ok_or(SceneError::NoSurface { row, col })?;
                for ch in 0..c {
                    frame.set(row, col, ch, self.shade(&hit, t, ch));
                }
                depth.push(hit.depth as f32);
            }
        }
        Ok((frame, DepthMap::from_vec(h, w, depth)?))
    }

    pub fn render_frame(&self, pose: &Pose, t: usize, k: &Intrinsics) -> Result<Frame, SceneError> {
        Ok(self.render(pose, t, k)?.0)
    }

    pub fn render_depth(&self, pose: &Pose, t: usize, k: &Intrinsics) -> Result<DepthMap, SceneError> {
        Ok(self.render(pose, t, k)?.1)
    }

    fn check_intrinsics(&self, k: &Intrinsics) -> Result<(), SceneError> {
        if k.width != self.dims.width || k.height != self.dims.height {
            return Err(SceneError::Invalid(format!(
                "intrinsics are for {}x{} but the scene renders {}x{}",
                k.height, k.width, self.dims.height, self.dims.width
            )));
        }
        Ok(())
    }

    /// Fails if any corner of the foreground square leaves the image (or goes
    /// behind a camera) for any view and time.
    pub fn check_in_frustum(&self, trajectory: &Trajectory, k: &Intrinsics) -> Result<(), SceneError> {
        if !self.spec.foreground {
            return Ok(());
        }
        let ks = trajectory.view_intrinsics(k)?;
        let h = self.spec.foreground_half_size;
        for (view, (pose, kv)) in trajectory.poses().iter().zip(&ks).enumerate() {
            for time in 0..self.n_frames {
                let [cx, cy] = self.foreground_center(time);
                for (sx, sy) in [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)] {
                    let corner = Vector3::new(cx + sx * h, cy + sy * h, self.spec.foreground_depth);
                    let inside = project(&pose.transform_point(&corner), kv).is_ok_and(|p| {
                        p.x >= 0.0 && p.y >= 0.0 && p.x <= (kv.width - 1) as f64 && p.y <= (kv.height - 1) as f64
                    });
                    if !inside {
                        return Err(SceneError::OutOfFrustum { view, time });
                    }
                }
            }
        }
        Ok(())
    }

    /// Renders every (view, time) cell after checking the frustum constraint.
    pub fn render_grid(&self, trajectory: &Trajectory, k: &Intrinsics) -> Result<RenderedGrid, SceneError> {
        self.check_in_frustum(trajectory, k)?;
        let ks = trajectory.view_intrinsics(k)?;
        let mut frames = Vec::with_capacity(trajectory.len());
        let mut depths = Vec::with_capacity(trajectory.len());
        for (pose, kv) in trajectory.poses().iter().zip(&ks) {
            let mut row_f = Vec::with_capacity(self.n_frames);
            let mut row_d = Vec::with_capacity(self.n_frames);
            for t in 0..self.n_frames {
                let (f, d) = self.render(pose, t, kv)?;
                row_f.push(f);
                row_d.push(d);
            }
            frames.push(row_f);
            depths.push(row_d);
        }
        Ok(RenderedGrid { frames, depths })
    }

    /// Mean cross-view variance of background pixels that image the same
    /// world point at the same time. Lower means the views agree better.
    ///
    /// Background hits are bucketed by time and by world position quantised
    /// to the background pixel pitch of the reference camera.
    pub fn background_consistency(
        &self,
        grid: &[Vec<Frame>],
        trajectory: &Trajectory,
        k: &Intrinsics,
    ) -> Result<f64, SceneError> {
        if grid.len() != trajectory.len() {
            return Err(SceneError::ViewCount {
                expected: trajectory.len(),
                got: grid.len(),
            });
        }
        let ks = trajectory.view_intrinsics(k)?;
        let pitch = self.spec.background_depth / k.fx;
        let c = self.dims.channels;
        let mut buckets: BTreeMap<(usize, i64, i64), Bucket> = BTreeMap::new();
        for ((row, pose), kv) in grid.iter().zip(trajectory.poses()).zip(&ks) {
            if row.len() != self.n_frames {
                return Err(SceneError::TimeOutOfRange {
                    index: row.len(),
                    n_frames: self.n_frames,
                });
            }
            for (t, frame) in row.iter().enumerate() {
                if frame.dims() != self.dims {
                    return Err(SceneError::Invalid(format!(
                        "frame is {}, scene is {}",
                        frame.dims(),
                        self.dims
                    )));
                }
                for r in 0..self.dims.height {
                    for col in 0..self.dims.width {
                        let Some(hit) = self.trace(pose, t, kv, r, col) else {
                            continue;
                        };
                        if hit.layer != Layer::Background {
                            continue;
                        }
                        let key = (
                            t,
                            (hit.world.x / pitch).round() as i64,
                            (hit.world.y / pitch).round() as i64,
                        );
                        let e = buckets.entry(key).or_insert_with(|| (vec![0.0; c], vec![0.0; c], 0));
                        for (ch, &v) in frame.pixel(r, col).iter().enumerate() {
                            e.0[ch] += v as f64;
                            e.1[ch] += (v as f64) * (v as f64);
                        }
                        e.2 += 1;
                    }
                }
            }
        }
        let mut total = 0.0;
        let mut groups = 0usize;
        for (sum, sq, n) in buckets.values() {
            if *n < 2 {
                continue;
            }
            let n = *n as f64;
            let var: f64 = sum
                .iter()
                .zip(sq)
                .map(|(s, q)| (q / n - (s / n).powi(2)).max(0.0))
                .sum::<f64>()
                / c as f64;
            total += var;
            groups += 1;
        }
        Ok(if groups == 0 { 0.0 } else { total / groups as f64 })
    }
}

/// Ground-truth frames and depths, indexed `[view][time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedGrid {
    pub frames: Vec<Vec<Frame>>,
    pub depths: Vec<Vec<DepthMap>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{make_custom_trajectory, make_dolly_trajectory};
    use crate::warp::warp_frame;
    use nalgebra::Matrix3;

    fn spec() -> SceneSpec {
        SceneSpec {
            background_depth: 4.0,
            foreground_depth: 2.0,
            foreground_half_size: 0.25,
            motion: Motion::Linear {
                start: [0.5, 0.375],
                velocity: [0.0, -0.03125],
            },
            texture_seed: 3,
            channels: 3,
            checker_size: 0.25,
            foreground: true,
        }
    }

    fn k64() -> Intrinsics {
        Intrinsics::new(64.0, 64.0, 32.0, 32.0, 64, 64).unwrap()
    }

    fn lateral(n: usize) -> Trajectory {
        make_custom_trajectory((0..n).map(|i| Pose::translation(-0.125 * i as f64, 0.0, 0.0)).collect()).unwrap()
    }

    #[test]
    fn rejects_bad_depth_order() {
        let mut s = spec();
        s.foreground_depth = 5.0;
        assert!(SyntheticScene::new(s, 8, 8, 2).is_err());
    }

    #[test]
    fn depths_are_exact_layer_depths() {
        let scene = SyntheticScene::new(spec(), 64, 64, 3).unwrap();
        let d = scene.render_depth(&Pose::identity(), 0, &k64()).unwrap();
        // Foreground centre projects to (44, 48).
        assert_eq!(d.get(44, 48), 2.0);
        assert_eq!(d.get(5, 5), 4.0);
    }

    #[test]
    fn texture_range_and_determinism() {
        let scene = SyntheticScene::new(spec(), 64, 64, 3).unwrap();
        let a = scene.render_frame(&Pose::identity(), 1, &k64()).unwrap();
        let b = scene.render_frame(&Pose::identity(), 1, &k64()).unwrap();
        assert!(a.bit_eq(&b));
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(scene.render_frame(&Pose::identity(), 3, &k64()).is_err());
    }

    #[test]
    fn half_turn_rotates_the_image() {
        let k = Intrinsics::new(40.0, 40.0, 15.5, 15.5, 32, 32).unwrap();
        let mut s = spec();
        s.motion = Motion::Static { center: [0.1, -0.2] };
        let scene = SyntheticScene::new(s, 32, 32, 1).unwrap();
        let flip = Pose::new(Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0)), Vector3::zeros()).unwrap();
        let a = scene.render_frame(&Pose::identity(), 0, &k).unwrap();
        let b = scene.render_frame(&flip, 0, &k).unwrap();
        for r in 0..32 {
            for c in 0..32 {
                assert_eq!(a.pixel(r, c), b.pixel(31 - r, 31 - c));
            }
        }
    }

    #[test]
    fn hidden_foreground_leaves_background() {
        let mut s = spec();
        s.motion = Motion::Static { center: [40.0, 0.0] };
        let scene = SyntheticScene::new(s, 64, 64, 1).unwrap();
        let a = scene.render_frame(&Pose::identity(), 0, &k64()).unwrap();
        let b = scene
            .without_foreground()
            .render_frame(&Pose::identity(), 0, &k64())
            .unwrap();
        assert!(a.bit_eq(&b));
        let traj = lateral(2);
        assert!(matches!(
            scene.render_grid(&traj, &k64()),
            Err(SceneError::OutOfFrustum { .. })
        ));
    }

    #[test]
    fn background_is_static_in_time() {
        let scene = SyntheticScene::new(spec(), 64, 64, 4).unwrap();
        let k = k64();
        let (f0, d0) = scene.render(&Pose::identity(), 0, &k).unwrap();
        let (f3, d3) = scene.render(&Pose::identity(), 3, &k).unwrap();
        for r in 0..64 {
            for c in 0..64 {
                if d0.get(r, c) == 4.0 && d3.get(r, c) == 4.0 {
                    assert_eq!(f0.pixel(r, c), f3.pixel(r, c));
                }
            }
        }
    }

    #[test]
    fn lateral_warp_matches_render_at_visible_pixels() {
        let scene = SyntheticScene::new(spec(), 64, 64, 2).unwrap();
        let k = k64();
        let traj = lateral(4);
        let (src, depth) = scene.render(&Pose::identity(), 1, &k).unwrap();
        for pose in &traj.poses()[1..] {
            let target = scene.render_frame(pose, 1, &k).unwrap();
            let w = warp_frame(&src, &depth, pose, &k).unwrap();
            let mut visible = 0;
            for r in 0..64 {
                for c in 0..64 {
                    if !w.mask.is_missing(r, c) {
                        visible += 1;
                        assert_eq!(w.frame.pixel(r, c), target.pixel(r, c), "({r}, {c})");
                    }
                }
            }
            assert!(visible > 3000);
            assert!(w.mask.missing_count() > 0);
        }
    }

    #[test]
    fn grid_shape_and_first_row() {
        let scene = SyntheticScene::new(spec(), 64, 64, 2).unwrap();
        let traj = lateral(2);
        let g = scene.render_grid(&traj, &k64()).unwrap();
        assert_eq!(g.frames.len() * g.frames[0].len(), 4);
        for t in 0..2 {
            assert!(g.frames[0][t].bit_eq(&scene.render_frame(&Pose::identity(), t, &k64()).unwrap()));
        }
    }

    #[test]
    fn consistency_metric_is_zero_on_truth_and_positive_on_noise() {
        let scene = SyntheticScene::new(spec(), 64, 64, 2).unwrap();
        let traj = lateral(3);
        let g = scene.render_grid(&traj, &k64()).unwrap();
        assert_eq!(scene.background_consistency(&g.frames, &traj, &k64()).unwrap(), 0.0);
        let mut noisy = g.frames.clone();
        for v in noisy[1][0].data_mut() {
            *v += 0.1;
        }
        assert!(scene.background_consistency(&noisy, &traj, &k64()).unwrap() > 1e-3);
    }

    #[test]
    fn dolly_views_stay_renderable() {
        let mut s = spec();
        s.motion = Motion::Static { center: [0.0, 0.0] };
        let scene = SyntheticScene::new(s, 64, 64, 2).unwrap();
        let traj = make_dolly_trajectory(0.5, 3).unwrap();
        let g = scene.render_grid(&traj, &k64()).unwrap();
        assert_eq!(g.depths[2][0].get(0, 0), 3.5);
    }
}
