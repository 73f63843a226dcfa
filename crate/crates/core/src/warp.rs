//! Depth-based forward warping with z-buffered occlusion masks.
//!
//! Every source pixel is lifted with its depth, moved into the target camera
//! and splatted to the nearest target pixel. When several source pixels land
//! on the same target pixel the one with the smallest target-space depth
//! wins; exact depth ties go to the lowest row-major source index. Target
//! pixels that receive nothing are holes (mask = 1, value 0).

use nalgebra::Vector2;
use rayon::prelude::*;
use thiserror::Error;

use crate::camera::{project, relative_transform, unproject, CameraError, Intrinsics, Pose, Trajectory};
use crate::frame::{DepthMap, Frame, FrameError, OcclusionMask, WarpedView};

#[derive(Debug, Error)]
pub enum WarpError {
    #[error("frame {frame_h}x{frame_w} and depth {depth_h}x{depth_w} differ in size")]
    DepthSize {
        frame_h: usize,
        frame_w: usize,
        depth_h: usize,
        depth_w: usize,
    },
    #[error("{frames} frames but {depths} depth maps")]
    RowLength { frames: usize, depths: usize },
    #[error("{poses} poses but {intrinsics} target intrinsics")]
    IntrinsicsCount { poses: usize, intrinsics: usize },
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// Result of moving one pixel into the target camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reprojection {
    /// Continuous target pixel plus the point's target-space z-depth.
    Visible { pixel: Vector2<f64>, depth: f64 },
    /// The transformed point has z ≤ 0.
    BehindCamera,
}

/// Continuous target location of source pixel `pixel` at z-depth `depth`,
/// `r_j = K_dst · P · (depth · K_src⁻¹ r_i)`.
pub fn reproject_pixel(
    pixel: Vector2<f64>,
    depth: f64,
    transform: &Pose,
    k_src: &Intrinsics,
    k_dst: &Intrinsics,
) -> Result<Reprojection, CameraError> {
    let point = transform.transform_point(&unproject(&pixel, depth, k_src)?);
    match project(&point, k_dst) {
        Ok(pixel) => Ok(Reprojection::Visible { pixel, depth: point.z }),
        Err(CameraError::BehindCamera(_)) => Ok(Reprojection::BehindCamera),
        Err(e) => Err(e),
    }
}

/// Nearest target pixel index for a continuous location, if inside the image.
#[inline]
fn target_index(pixel: &Vector2<f64>, width: usize, height: usize) -> Option<usize> {
    let col = pixel.x.round();
    let row = pixel.y.round();
    if col >= 0.0 && row >= 0.0 && col < width as f64 && row < height as f64 {
        Some(row as usize * width + col as usize)
    } else {
        None
    }
}

fn check_sizes(src: &Frame, depth: &DepthMap) -> Result<(), WarpError> {
    if src.height() != depth.height() || src.width() != depth.width() {
        return Err(WarpError::DepthSize {
            frame_h: src.height(),
            frame_w: src.width(),
            depth_h: depth.height(),
            depth_w: depth.width(),
        });
    }
    Ok(())
}

/// Warps `src` into the camera related to it by `transform`.
pub fn warp_frame(src: &Frame, depth: &DepthMap, transform: &Pose, k: &Intrinsics) -> Result<WarpedView, WarpError> {
    warp_frame_to(src, depth, transform, k, k)
}

/// [`warp_frame`] with distinct source and target intrinsics.
///
/// Reprojection runs in parallel per source row; the z-buffer is resolved
/// afterwards with a single ordered pass keyed on `(depth, source index)`.
pub fn warp_frame_to(
    src: &Frame,
    depth: &DepthMap,
    transform: &Pose,
    k_src: &Intrinsics,
    k_dst: &Intrinsics,
) -> Result<WarpedView, WarpError> {
    check_sizes(src, depth)?;
    let (h, w) = (src.height(), src.width());

    // (target index, target depth) per source pixel, in source order.
    let hits: Vec<Option<(usize, f64)>> = (0..h)
        .into_par_iter()
        .flat_map_iter(|row| {
            (0..w).map(move |col| {
                let px = Vector2::new(col as f64, row as f64);
                match reproject_pixel(px, depth.get(row, col) as f64, transform, k_src, k_dst) {
                    Ok(Reprojection::Visible { pixel, depth }) => target_index(&pixel, w, h).map(|t| (t, depth)),
                    Ok(Reprojection::BehindCamera) => None,
                    Err(_) => unreachable!("depth maps hold positive finite depths"),
                }
            })
        })
        .collect();

    let mut winner: Vec<Option<(f64, usize)>> = vec![None; h * w];
    for (source, hit) in hits.into_iter().enumerate() {
        if let Some((target, z)) = hit {
            let slot = &mut winner[target];
            let better = match *slot {
                None => true,
                Some((best_z, best_src)) => z < best_z || (z == best_z && source < best_src),
            };
            if better {
                *slot = Some((z, source));
            }
        }
    }

    let mut frame = Frame::zeros(src.dims());
    let mut missing = vec![true; h * w];
    for (target, slot) in winner.iter().enumerate() {
        if let Some((_, source)) = *slot {
            missing[target] = false;
            let (sr, sc) = (source / w, source % w);
            frame
                .pixel_mut(target / w, target % w)
                .copy_from_slice(src.pixel(sr, sc));
        }
    }
    Ok(WarpedView {
        frame,
        mask: OcclusionMask::from_vec(h, w, missing)?,
    })
}

/// Reference implementation of [`warp_frame`]: a plain double loop over
/// source pixels writing through an explicit z-buffer.
pub fn oracle_warp_frame(
    src: &Frame,
    depth: &DepthMap,
    transform: &Pose,
    k: &Intrinsics,
) -> Result<WarpedView, WarpError> {
    check_sizes(src, depth)?;
    let (h, w, c) = (src.height(), src.width(), src.channels());
    let mut zbuf = vec![f64::INFINITY; h * w];
    let mut filled = vec![false; h * w];
    let mut out = Frame::zeros(src.dims());

    for row in 0..h {
        for col in 0..w {
            let px = Vector2::new(col as f64, row as f64);
            let (target, z) = match reproject_pixel(px, depth.get(row, col) as f64, transform, k, k)? {
                Reprojection::BehindCamera => continue,
                Reprojection::Visible { pixel, depth } => {
                    let tc = pixel.x.round();
                    let tr = pixel.y.round();
                    if tc < 0.0 || tr < 0.0 || tc >= w as f64 || tr >= h as f64 {
                        continue;
                    }
                    ((tr as usize, tc as usize), depth)
                }
            };
            let t = target.0 * w + target.1;
            // Strict comparison: on equal depth the earlier source pixel stays.
            if !filled[t] || z < zbuf[t] {
                zbuf[t] = z;
                filled[t] = true;
                for ch in 0..c {
                    out.set(target.0, target.1, ch, src.get(row, col, ch));
                }
            }
        }
    }
    let mask = OcclusionMask::from_vec(h, w, filled.iter().map(|f| !f).collect())?;
    Ok(WarpedView { frame: out, mask })
}

/// Warped guidance for the whole grid, indexed `[view][time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpGrid {
    views: Vec<Vec<WarpedView>>,
}

impl WarpGrid {
    pub fn from_rows(views: Vec<Vec<WarpedView>>) -> Self {
        Self { views }
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn n_frames(&self) -> usize {
        self.views.first().map_or(0, Vec::len)
    }

    pub fn get(&self, view: usize, time: usize) -> &WarpedView {
        &self.views[view][time]
    }

    /// All views at one time index (a grid column).
    pub fn column(&self, time: usize) -> Vec<WarpedView> {
        self.views.iter().map(|row| row[time].clone()).collect()
    }

    /// All times at one view (a grid row).
    pub fn row(&self, view: usize) -> Vec<WarpedView> {
        self.views[view].clone()
    }

    pub fn len(&self) -> usize {
        self.n_views() * self.n_frames()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same shape, every view replaced by an all-missing black frame.
    pub fn without_guidance(&self) -> Self {
        Self {
            views: self
                .views
                .iter()
                .map(|row| row.iter().map(|v| WarpedView::holes(v.dims())).collect())
                .collect(),
        }
    }
}

/// Warps every frame of the input row into every trajectory view.
/// View 0 is the input itself with nothing missing.
pub fn warp_video_row(
    row: &[Frame],
    depths: &[DepthMap],
    trajectory: &Trajectory,
    k: &Intrinsics,
) -> Result<WarpGrid, WarpError> {
    let targets = trajectory.view_intrinsics(k)?;
    warp_video_row_poses(row, depths, trajectory.poses(), k, &targets)
}

/// [`warp_video_row`] over an explicit pose list with per-view target
/// intrinsics.
pub fn warp_video_row_poses(
    row: &[Frame],
    depths: &[DepthMap],
    poses: &[Pose],
    k: &Intrinsics,
    targets: &[Intrinsics],
) -> Result<WarpGrid, WarpError> {
    if row.len() != depths.len() {
        return Err(WarpError::RowLength {
            frames: row.len(),
            depths: depths.len(),
        });
    }
    if poses.len() != targets.len() {
        return Err(WarpError::IntrinsicsCount {
            poses: poses.len(),
            intrinsics: targets.len(),
        });
    }
    for (frame, depth) in row.iter().zip(depths) {
        check_sizes(frame, depth)?;
    }
    let base = poses.first().copied().unwrap_or_else(Pose::identity);
    let views = poses
        .iter()
        .zip(targets)
        .enumerate()
        .map(|(n, (pose, k_dst))| {
            if n == 0 {
                return Ok(row.iter().cloned().map(WarpedView::visible).collect());
            }
            let transform = relative_transform(&base, pose);
            row.iter()
                .zip(depths)
                .map(|(frame, depth)| warp_frame_to(frame, depth, &transform, k, k_dst))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, WarpError>>()?;
    Ok(WarpGrid { views })
}
