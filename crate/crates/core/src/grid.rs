//! The `N × F` camera-time grid and the two filling stages.
//!
//! Stage A fills the boundary: the first column by guided sampling from the
//! input's first frame, the last row by guided sampling from the new corner
//! frame, and the last column by interpolating between its two known ends.
//! Stage B fills the interior by alternating camera-axis and time-axis
//! bidirectional steps over a shared noise schedule.

use std::borrow::Cow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ClipAddress, Condition, Denoiser, GridCoord};
use crate::bidi::{bidi_step, interpolate_clip, BidiClip, BidiStepConfig};
use crate::camera::{CameraError, Intrinsics, Trajectory};
use crate::frame::{DepthMap, Dims, Frame, FrameError};
use crate::noise::{label, noised, SeedSource};
use crate::sampler::{
    renoise, sample_warp_guided_clip, AnnealingParams, ClipState, GuidedSamplerConfig, NoiseSchedule, ResidualMode,
    SamplerError,
};
use crate::scene::SceneError;
use crate::warp::{warp_video_row, WarpError, WarpGrid};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("cell (view {view}, time {time}) cannot go from {from:?} to {to:?}")]
    StatusRegression {
        view: usize,
        time: usize,
        from: CellStatus,
        to: CellStatus,
    },
    #[error("stage {stage} failed on {clip}")]
    Stage {
        stage: &'static str,
        clip: ClipAddress,
        #[source]
        source: SamplerError,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Warp(#[from] WarpError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    File(#[from] crate::io::IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Unknown,
    Warped,
    Key,
    Final,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub state: Frame,
    pub status: CellStatus,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid4D {
    n_views: usize,
    n_frames: usize,
    dims: Dims,
    cells: Vec<Cell>,
}

impl Grid4D {
    /// Row 0 holds the input video and is final from the start.
    pub fn new(input_row: Vec<Frame>, n_views: usize) -> Result<Self, PipelineError> {
        let n_frames = input_row.len();
        if n_views < 2 || n_frames < 2 {
            return Err(PipelineError::Grid(format!(
                "need at least 2 views and 2 frames (got {n_views} x {n_frames})"
            )));
        }
        let dims = input_row[0].dims();
        if input_row.iter().any(|f| f.dims() != dims) {
            return Err(PipelineError::Grid("input frames differ in size".into()));
        }
        let mut cells = Vec::with_capacity(n_views * n_frames);
        cells.extend(input_row.into_iter().map(|state| Cell {
            state,
            status: CellStatus::Final,
            sigma: 0.0,
        }));
        for _ in n_frames..n_views * n_frames {
            cells.push(Cell {
                state: Frame::zeros(dims),
                status: CellStatus::Unknown,
                sigma: 0.0,
            });
        }
        Ok(Self {
            n_views,
            n_frames,
            dims,
            cells,
        })
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    fn idx(&self, view: usize, time: usize) -> usize {
        assert!(
            view < self.n_views && time < self.n_frames,
            "cell ({view}, {time}) outside grid"
        );
        view * self.n_frames + time
    }

    pub fn cell(&self, view: usize, time: usize) -> &Cell {
        &self.cells[self.idx(view, time)]
    }

    pub fn frame(&self, view: usize, time: usize) -> &Frame {
        &self.cell(view, time).state
    }

    pub fn status(&self, view: usize, time: usize) -> CellStatus {
        self.cell(view, time).status
    }

    /// Replaces a cell's content. Final cells are immutable and statuses
    /// never move backwards.
    pub fn update(
        &mut self,
        view: usize,
        time: usize,
        state: Frame,
        status: CellStatus,
        sigma: f64,
    ) -> Result<(), PipelineError> {
        let i = self.idx(view, time);
        let cell = &mut self.cells[i];
        if cell.status == CellStatus::Final || status < cell.status {
            return Err(PipelineError::StatusRegression {
                view,
                time,
                from: cell.status,
                to: status,
            });
        }
        if state.dims() != self.dims {
            return Err(PipelineError::Grid(format!(
                "frame is {}, grid is {}",
                state.dims(),
                self.dims
            )));
        }
        *cell = Cell { state, status, sigma };
        Ok(())
    }

    /// Marks every unknown cell as warped, seeding it with its warped view.
    pub fn attach_warps(&mut self, warped: &WarpGrid) -> Result<(), PipelineError> {
        check_warp_shape(self, warped)?;
        for v in 0..self.n_views {
            for t in 0..self.n_frames {
                if self.status(v, t) == CellStatus::Unknown {
                    self.update(v, t, warped.get(v, t).frame.clone(), CellStatus::Warped, 0.0)?;
                }
            }
        }
        Ok(())
    }

    /// Promotes every non-final cell to final at σ = 0.
    fn finalize(&mut self) {
        for cell in &mut self.cells {
            cell.status = CellStatus::Final;
            cell.sigma = 0.0;
        }
    }

    pub fn is_complete(&self) -> bool {
        self.cells
            .iter()
            .all(|c| c.status == CellStatus::Final && c.sigma == 0.0)
    }

    pub fn column(&self, time: usize) -> Vec<Frame> {
        (0..self.n_views).map(|v| self.frame(v, time).clone()).collect()
    }

    pub fn row(&self, view: usize) -> Vec<Frame> {
        (0..self.n_frames).map(|t| self.frame(view, t).clone()).collect()
    }

    /// All frames indexed `[view][time]`.
    pub fn frames(&self) -> Vec<Vec<Frame>> {
        (0..self.n_views).map(|v| self.row(v)).collect()
    }

    fn condition(&self, view: usize, time: usize) -> Condition {
        Condition::new(GridCoord::new(view, time), self.frame(view, time).clone())
    }
}

fn check_warp_shape(grid: &Grid4D, warped: &WarpGrid) -> Result<(), PipelineError> {
    if warped.n_views() != grid.n_views || warped.n_frames() != grid.n_frames {
        return Err(PipelineError::Grid(format!(
            "warp grid is {}x{}, frame grid is {}x{}",
            warped.n_views(),
            warped.n_frames(),
            grid.n_views,
            grid.n_frames
        )));
    }
    if warped.get(0, 0).dims() != grid.dims {
        return Err(PipelineError::Grid("warped views differ in size from the grid".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Replace every warped view by an all-missing black frame.
    pub disable_warp_guidance: bool,
    /// Fill each interior row independently, with no camera-axis passes.
    pub disable_stbi: bool,
}

/// Everything the stages need besides the grid, warps and denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub schedule: NoiseSchedule,
    pub annealing: AnnealingParams,
    pub keyframe_residual: ResidualMode,
    pub bidi: BidiStepConfig,
    pub ablation: Ablation,
    /// Alternate which axis goes first (and gets the renoise) every step.
    pub symmetric_renoise: bool,
    /// Also run clips whose cells are all known, discarding their output.
    /// Only useful to confirm that skipping them changes nothing.
    pub visit_known_clips: bool,
    pub parallel: bool,
    pub seed: u64,
}

impl EngineConfig {
    pub fn new(schedule: NoiseSchedule, seed: u64) -> Self {
        let annealing = AnnealingParams::default_for(schedule.steps());
        Self {
            schedule,
            annealing,
            keyframe_residual: ResidualMode::Conditional,
            bidi: BidiStepConfig::default(),
            ablation: Ablation::default(),
            symmetric_renoise: false,
            visit_known_clips: false,
            parallel: false,
            seed,
        }
    }

    fn effective_warps<'a>(&self, warped: &'a WarpGrid) -> Cow<'a, WarpGrid> {
        if self.ablation.disable_warp_guidance {
            Cow::Owned(warped.without_guidance())
        } else {
            Cow::Borrowed(warped)
        }
    }

    fn run_parallel(&self, denoiser: &dyn Denoiser) -> bool {
        self.parallel && denoiser.descriptor().concurrent_safe
    }
}

fn stage_err(stage: &'static str, clip: ClipAddress) -> impl Fn(SamplerError) -> PipelineError {
    move |source| PipelineError::Stage { stage, clip, source }
}

/// Stage A: first column, last row, last column.
pub fn stage_a_keyframes(
    grid: &mut Grid4D,
    warped: &WarpGrid,
    denoiser: &dyn Denoiser,
    cfg: &EngineConfig,
) -> Result<(), PipelineError> {
    check_warp_shape(grid, warped)?;
    let warped = cfg.effective_warps(warped);
    let (n, f) = (grid.n_views, grid.n_frames);
    let root = SeedSource::new(cfg.seed);
    let sampler = GuidedSamplerConfig {
        annealing: cfg.annealing,
        residual_mode: cfg.keyframe_residual,
    };

    let clip = ClipAddress::column(0);
    let column = sample_warp_guided_clip(
        denoiser,
        &warped.column(0),
        &grid.condition(0, 0),
        &cfg.schedule,
        &sampler,
        clip,
        root.child(label::STAGE_A1),
    )
    .map_err(stage_err("a1", clip))?;
    for (v, frame) in column.into_iter().enumerate().skip(1) {
        grid.update(v, 0, frame, CellStatus::Key, 0.0)?;
    }

    let clip = ClipAddress::row(n - 1);
    let row = sample_warp_guided_clip(
        denoiser,
        &warped.row(n - 1),
        &grid.condition(n - 1, 0),
        &cfg.schedule,
        &sampler,
        clip,
        root.child(label::STAGE_A2),
    )
    .map_err(stage_err("a2", clip))?;
    for (t, frame) in row.into_iter().enumerate().skip(1) {
        grid.update(n - 1, t, frame, CellStatus::Key, 0.0)?;
    }

    if n > 2 {
        let clip = ClipAddress::column(f - 1);
        let (start, end) = (grid.condition(0, f - 1), grid.condition(n - 1, f - 1));
        let warps = warped.column(f - 1);
        let bidi = BidiClip {
            start: &start,
            end: &end,
            warped: &warps,
            address: clip,
        };
        let column = interpolate_clip(
            denoiser,
            None,
            &bidi,
            &cfg.schedule,
            &cfg.bidi,
            root.child(label::STAGE_A3),
        )
        .map_err(stage_err("a3", clip))?;
        for (v, frame) in column.into_iter().enumerate().take(n - 1).skip(1) {
            grid.update(v, f - 1, frame, CellStatus::Key, 0.0)?;
        }
    }
    Ok(())
}

/// Counts of the clip passes Stage B performed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageBStats {
    pub camera_passes: usize,
    pub time_passes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Camera,
    Time,
}

struct Fill<'a> {
    warped: &'a WarpGrid,
    denoiser: &'a dyn Denoiser,
    cfg: &'a EngineConfig,
    root: SeedSource,
    parallel: bool,
}

impl Fill<'_> {
    fn map<T: Send>(
        &self,
        indices: &[usize],
        f: impl Fn(usize) -> Result<T, PipelineError> + Sync + Send,
    ) -> Result<Vec<T>, PipelineError> {
        if self.parallel {
            indices.par_iter().map(|&i| f(i)).collect()
        } else {
            indices.iter().map(|&i| f(i)).collect()
        }
    }

    /// One bidirectional step on every clip along `phase`; optionally lifts
    /// the result back to σ_t. Writes only interior cells.
    fn phase(&self, grid: &mut Grid4D, phase: Phase, k: usize, lift: bool) -> Result<usize, PipelineError> {
        let (n, f) = (grid.n_views, grid.n_frames);
        let (sigma, sigma_prev) = self.cfg.schedule.pair(k);
        let (extent, pass_label, lift_label) = match phase {
            Phase::Camera => (f, label::CAMERA_PASS, label::CAMERA_RENOISE),
            Phase::Time => (n, label::TIME_PASS, label::TIME_RENOISE),
        };
        let indices: Vec<usize> = if self.cfg.visit_known_clips {
            (0..extent).collect()
        } else {
            (1..extent - 1).collect()
        };
        let snapshot: &Grid4D = grid;
        let results = self.map(&indices, |i| {
            let (address, frames, start, end, warps) = match phase {
                Phase::Camera => (
                    ClipAddress::column(i),
                    snapshot.column(i),
                    snapshot.condition(0, i),
                    snapshot.condition(n - 1, i),
                    self.warped.column(i),
                ),
                Phase::Time => (
                    ClipAddress::row(i),
                    snapshot.row(i),
                    snapshot.condition(i, 0),
                    snapshot.condition(i, f - 1),
                    self.warped.row(i),
                ),
            };
            let clip = BidiClip {
                start: &start,
                end: &end,
                warped: &warps,
                address,
            };
            let err = stage_err("b", address);
            let state = ClipState { frames, sigma };
            let seed = self.root.path(&[pass_label, i as u64, k as u64]);
            let mut out = bidi_step(self.denoiser, &state, sigma_prev, &clip, &self.cfg.bidi, k, seed).map_err(&err)?;
            if lift {
                out = renoise(&out, sigma, self.root.path(&[lift_label, i as u64, k as u64])).map_err(&err)?;
            }
            Ok((i, out))
        })?;
        let count = results.len();
        for (i, out) in results {
            let interior = match phase {
                Phase::Camera => 0 < i && i < f - 1,
                Phase::Time => 0 < i && i < n - 1,
            };
            if !interior {
                continue;
            }
            let len = out.frames.len();
            for (s, frame) in out.frames.into_iter().enumerate().take(len - 1).skip(1) {
                let (v, t) = match phase {
                    Phase::Camera => (s, i),
                    Phase::Time => (i, s),
                };
                grid.update(v, t, frame, CellStatus::Warped, out.sigma)?;
            }
        }
        Ok(count)
    }
}

/// Stage B: fills the interior, then marks every cell final.
pub fn stage_b_fill(
    grid: &mut Grid4D,
    warped: &WarpGrid,
    denoiser: &dyn Denoiser,
    cfg: &EngineConfig,
) -> Result<StageBStats, PipelineError> {
    check_warp_shape(grid, warped)?;
    for (v, t) in [
        (0, 0),
        (grid.n_views - 1, 0),
        (0, grid.n_frames - 1),
        (grid.n_views - 1, grid.n_frames - 1),
    ] {
        if grid.status(v, t) < CellStatus::Key {
            return Err(PipelineError::Grid("stage B needs a finished boundary".into()));
        }
    }
    let warped = cfg.effective_warps(warped);
    let (n, f) = (grid.n_views, grid.n_frames);
    let mut stats = StageBStats::default();
    if n < 3 || f < 3 {
        grid.finalize();
        return Ok(stats);
    }
    let root = SeedSource::new(cfg.seed);
    let top = cfg.schedule.sigma_max();
    for v in 1..n - 1 {
        for t in 1..f - 1 {
            let mut rng = root.path(&[label::INTERIOR_INIT, v as u64, t as u64]).rng();
            let state = noised(&Frame::zeros(grid.dims), top, &mut rng);
            grid.update(v, t, state, CellStatus::Warped, top)?;
        }
    }
    let fill = Fill {
        warped: &warped,
        denoiser,
        cfg,
        root,
        parallel: cfg.run_parallel(denoiser),
    };

    if cfg.ablation.disable_stbi {
        let rows: Vec<usize> = (1..n - 1).collect();
        let snapshot: &Grid4D = grid;
        let results = fill.map(&rows, |j| {
            let address = ClipAddress::row(j);
            let (start, end) = (snapshot.condition(j, 0), snapshot.condition(j, f - 1));
            let warps = warped.row(j);
            let clip = BidiClip {
                start: &start,
                end: &end,
                warped: &warps,
                address,
            };
            let init = ClipState {
                frames: snapshot.row(j),
                sigma: top,
            };
            let seed = root.path(&[label::TIME_PASS, j as u64]);
            let out = interpolate_clip(denoiser, Some(init), &clip, &cfg.schedule, &cfg.bidi, seed)
                .map_err(stage_err("b", address))?;
            Ok((j, out))
        })?;
        for (j, out) in results {
            for (t, frame) in out.into_iter().enumerate().take(f - 1).skip(1) {
                grid.update(j, t, frame, CellStatus::Warped, 0.0)?;
            }
        }
        stats.time_passes = rows.len() * cfg.schedule.steps();
    } else {
        for k in 0..cfg.schedule.steps() {
            let camera_first = !cfg.symmetric_renoise || k % 2 == 0;
            let (first, second) = if camera_first {
                (Phase::Camera, Phase::Time)
            } else {
                (Phase::Time, Phase::Camera)
            };
            for (phase, lift) in [(first, true), (second, false)] {
                let count = fill.phase(grid, phase, k, lift)?;
                match phase {
                    Phase::Camera => stats.camera_passes += count,
                    Phase::Time => stats.time_passes += count,
                }
            }
        }
    }
    grid.finalize();
    Ok(stats)
}

/// Result of [`run_engine`].
#[derive(Debug, Clone)]
pub struct EngineOutput {
    pub grid: Grid4D,
    pub warped: WarpGrid,
    pub stage_b: StageBStats,
}

/// Warps the input row and runs Stage A (and Stage B unless
/// `keyframes_only`).
pub fn run_engine(
    input_row: &[Frame],
    depths: &[DepthMap],
    trajectory: &Trajectory,
    k: &Intrinsics,
    denoiser: &dyn Denoiser,
    cfg: &EngineConfig,
    keyframes_only: bool,
) -> Result<EngineOutput, PipelineError> {
    let warped = warp_video_row(input_row, depths, trajectory, k)?;
    let mut grid = Grid4D::new(input_row.to_vec(), trajectory.len())?;
    grid.attach_warps(&warped)?;
    stage_a_keyframes(&mut grid, &warped, denoiser, cfg)?;
    let stage_b = if keyframes_only {
        StageBStats::default()
    } else {
        stage_b_fill(&mut grid, &warped, denoiser, cfg)?
    };
    Ok(EngineOutput { grid, warped, stage_b })
}
