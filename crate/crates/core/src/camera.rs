//! Pinhole camera model, pose algebra and viewpoint trajectories.
//!
//! Conventions: right-handed axes with +z forward and +y down (so image rows
//! grow with +y). A [`Pose`] maps world coordinates into camera coordinates,
//! `X_cam = R · X_world + t`. Pixel centers sit at integer coordinates.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("invalid intrinsics: {0}")]
    Intrinsics(String),
    #[error("invalid pose: {0}")]
    Pose(String),
    #[error("invalid trajectory: {0}")]
    Trajectory(String),
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("depth must be finite and > 0 (got {0})")]
    NonPositiveDepth(f64),
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self, CameraError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return Err(CameraError::Intrinsics(format!(
                "focal lengths must be finite and positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::Intrinsics("image size must be positive".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(CameraError::Intrinsics(format!(
                "cx={} outside [0, {})",
                self.cx, self.width
            )));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(CameraError::Intrinsics(format!(
                "cy={} outside [0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }

    /// Same principal point and image size, focal lengths multiplied by `scale`.
    pub fn with_focal_scale(&self, scale: f64) -> Result<Self, CameraError> {
        Self::new(
            self.fx * scale,
            self.fy * scale,
            self.cx,
            self.cy,
            self.width,
            self.height,
        )
    }
}

/// Projects a camera-space point to continuous pixel coordinates.
pub fn project(point: &Vector3<f64>, k: &Intrinsics) -> Result<Vector2<f64>, CameraError> {
    if point.z.is_nan() || point.z <= 0.0 {
        return Err(CameraError::BehindCamera(point.z));
    }
    Ok(Vector2::new(
        k.fx * point.x / point.z + k.cx,
        k.fy * point.y / point.z + k.cy,
    ))
}

/// Lifts a pixel to the camera-space point at z-depth `depth`.
pub fn unproject(pixel: &Vector2<f64>, depth: f64, k: &Intrinsics) -> Result<Vector3<f64>, CameraError> {
    if !(depth.is_finite() && depth > 0.0) {
        return Err(CameraError::NonPositiveDepth(depth));
    }
    Ok(Vector3::new(
        (pixel.x - k.cx) * depth / k.fx,
        (pixel.y - k.cy) * depth / k.fy,
        depth,
    ))
}

/// Rigid camera-from-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, CameraError> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(CameraError::Pose("non-finite entry".into()));
        }
        let gram = rotation.transpose() * rotation;
        let off = (gram - Matrix3::identity()).abs().max();
        if off > ORTHONORMAL_TOL {
            return Err(CameraError::Pose(format!(
                "rotation is not orthonormal (max |RᵀR − I| = {off:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(CameraError::Pose(format!("rotation determinant is {det}")));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Pure translation of camera-space coordinates (`X_cam = X + t`).
    pub fn translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    /// Pose from a camera-from-world rotation and the camera center in world
    /// coordinates.
    pub fn from_center(rotation: Matrix3<f64>, center: Vector3<f64>) -> Result<Self, CameraError> {
        Self::new(rotation, -(rotation * center))
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_rotation(rot_x(angle))
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_rotation(rot_y(angle))
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_rotation(rot_z(angle))
    }

    fn from_rotation(rotation: Matrix3<f64>) -> Self {
        Self {
            rotation,
            translation: Vector3::zeros(),
        }
    }

    /// Camera at `center` looking at `target`, with image rows aligned to
    /// world +y (down) as far as the viewing direction allows.
    pub fn look_at(center: Vector3<f64>, target: Vector3<f64>) -> Result<Self, CameraError> {
        let forward = target - center;
        let norm = forward.norm();
        if norm.is_nan() || norm <= 1e-12 {
            return Err(CameraError::Pose("look-at target coincides with camera center".into()));
        }
        let z = forward / norm;
        let down = Vector3::new(0.0, 1.0, 0.0);
        let x = down.cross(&z);
        let xn = x.norm();
        if xn < 1e-9 {
            return Err(CameraError::Pose(
                "viewing direction is parallel to the vertical axis".into(),
            ));
        }
        let x = x / xn;
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Self::from_center(rotation, center)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation_vector(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    #[inline]
    pub fn transform_point(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Largest elementwise difference over rotation and translation.
    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        let r = (self.rotation - other.rotation).abs().max();
        let t = (self.translation - other.translation).abs().max();
        r.max(t)
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == Matrix3::identity() && self.translation.iter().all(|&v| v == 0.0)
    }
}

pub fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Transform taking camera-`i` coordinates to camera-`j` coordinates.
pub fn relative_transform(pose_i: &Pose, pose_j: &Pose) -> Pose {
    pose_j.compose(&pose_i.inverse())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Orbit,
    Dolly,
    Elevation,
    Complex,
    Custom,
}

/// Ordered target viewpoints; `poses[0]` is the input camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    poses: Vec<Pose>,
    kind: TrajectoryKind,
    focal_scales: Option<Vec<f64>>,
}

impl Trajectory {
    /// Rebases the poses so the first one becomes the identity.
    pub fn new(poses: Vec<Pose>, kind: TrajectoryKind) -> Result<Self, CameraError> {
        if poses.len() < 2 {
            return Err(CameraError::Trajectory(format!(
                "need at least 2 views, got {}",
                poses.len()
            )));
        }
        let base = poses[0];
        let poses = if base.is_identity() {
            poses
        } else {
            let mut rebased: Vec<Pose> = poses.iter().map(|p| relative_transform(&base, p)).collect();
            rebased[0] = Pose::identity();
            rebased
        };
        Ok(Self {
            poses,
            kind,
            focal_scales: None,
        })
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn kind(&self) -> TrajectoryKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Per-view focal multipliers, present only for focal-compensated dollies.
    pub fn focal_scales(&self) -> Option<&[f64]> {
        self.focal_scales.as_deref()
    }

    /// Intrinsics of each target view.
    pub fn view_intrinsics(&self, k: &Intrinsics) -> Result<Vec<Intrinsics>, CameraError> {
        match &self.focal_scales {
            None => Ok(vec![*k; self.poses.len()]),
            Some(scales) => scales.iter().map(|&s| k.with_focal_scale(s)).collect(),
        }
    }
}

fn check_views(n_views: usize) -> Result<(), CameraError> {
    if n_views < 2 {
        return Err(CameraError::Trajectory(format!("n_views must be >= 2 (got {n_views})")));
    }
    Ok(())
}

fn check_finite(name: &str, v: f64) -> Result<(), CameraError> {
    if !v.is_finite() {
        return Err(CameraError::Trajectory(format!("{name} must be finite (got {v})")));
    }
    Ok(())
}

fn fraction(n: usize, n_views: usize) -> f64 {
    n as f64 / (n_views - 1) as f64
}

/// Horizontal orbit about the vertical axis through `(0, 0, center_depth)`.
/// Positive angles swing the camera towards −x while it keeps facing the pivot.
pub fn make_orbit_trajectory(center_depth: f64, max_angle_deg: f64, n_views: usize) -> Result<Trajectory, CameraError> {
    check_views(n_views)?;
    check_finite("center_depth", center_depth)?;
    check_finite("max_angle", max_angle_deg)?;
    if center_depth <= 0.0 {
        return Err(CameraError::Trajectory("center_depth must be > 0".into()));
    }
    if max_angle_deg <= -180.0 || max_angle_deg >= 180.0 {
        return Err(CameraError::Trajectory(format!(
            "max_angle {max_angle_deg} outside (-180, 180)"
        )));
    }
    let pivot = Vector3::new(0.0, 0.0, center_depth);
    let poses = (0..n_views)
        .map(|n| {
            let angle = (max_angle_deg * fraction(n, n_views)).to_radians();
            let world_from_cam = rot_y(angle);
            let center = pivot - world_from_cam * pivot;
            Pose::from_center(world_from_cam.transpose(), center)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Trajectory::new(poses, TrajectoryKind::Orbit)
}

/// Optional focal compensation for dolly moves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DollyZoom {
    /// Depth of the subject whose image size is held fixed.
    pub subject_depth: f64,
}

/// Translation along the optical axis; positive distance moves the camera
/// forward (dolly-in).
pub fn make_dolly_trajectory(distance: f64, n_views: usize) -> Result<Trajectory, CameraError> {
    make_dolly_trajectory_with(distance, n_views, None)
}

/// Dolly with optional focal compensation: view `n` gets
/// `f_n = f · (d − s_n) / d` so a fronto-parallel subject at depth `d` keeps
/// its image size while the camera advances by `s_n`.
pub fn make_dolly_trajectory_with(
    distance: f64,
    n_views: usize,
    zoom: Option<DollyZoom>,
) -> Result<Trajectory, CameraError> {
    check_views(n_views)?;
    check_finite("distance", distance)?;
    let steps: Vec<f64> = (0..n_views).map(|n| distance * fraction(n, n_views)).collect();
    let poses = steps
        .iter()
        .map(|&s| Pose::from_center(Matrix3::identity(), Vector3::new(0.0, 0.0, s)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut traj = Trajectory::new(poses, TrajectoryKind::Dolly)?;
    if let Some(zoom) = zoom {
        check_finite("subject_depth", zoom.subject_depth)?;
        let d = zoom.subject_depth;
        if d <= 0.0 || steps.iter().any(|&s| d - s <= 0.0) {
            return Err(CameraError::Trajectory(
                "dolly zoom needs the subject in front of every camera".into(),
            ));
        }
        traj.focal_scales = Some(steps.iter().map(|&s| (d - s) / d).collect());
    }
    Ok(traj)
}

/// Vertical move of `height` (positive = up, i.e. towards −y) while the
/// camera keeps `(0, 0, pivot_depth)` on its optical axis.
pub fn make_elevation_trajectory(height: f64, pivot_depth: f64, n_views: usize) -> Result<Trajectory, CameraError> {
    check_views(n_views)?;
    check_finite("height", height)?;
    check_finite("pivot_depth", pivot_depth)?;
    if pivot_depth <= 0.0 {
        return Err(CameraError::Trajectory("pivot_depth must be > 0".into()));
    }
    let pivot = Vector3::new(0.0, 0.0, pivot_depth);
    let poses = (0..n_views)
        .map(|n| Pose::look_at(Vector3::new(0.0, -height * fraction(n, n_views), 0.0), pivot))
        .collect::<Result<Vec<_>, _>>()?;
    Trajectory::new(poses, TrajectoryKind::Elevation)
}

/// Camera centers spaced uniformly by arc length along the polyline through
/// `waypoints`, each view looking at `(0, 0, pivot_depth)`.
pub fn make_complex_trajectory(
    waypoints: &[Vector3<f64>],
    pivot_depth: f64,
    n_views: usize,
) -> Result<Trajectory, CameraError> {
    check_views(n_views)?;
    if waypoints.len() < 2 {
        return Err(CameraError::Trajectory("need at least 2 waypoints".into()));
    }
    if waypoints.iter().flat_map(|w| w.iter()).any(|v| !v.is_finite()) {
        return Err(CameraError::Trajectory("non-finite waypoint".into()));
    }
    check_finite("pivot_depth", pivot_depth)?;
    let lengths: Vec<f64> = waypoints.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let total: f64 = lengths.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(CameraError::Trajectory("waypoints are all equal".into()));
    }
    let pivot = Vector3::new(0.0, 0.0, pivot_depth);
    let poses = (0..n_views)
        .map(|n| {
            Pose::look_at(
                point_on_polyline(waypoints, &lengths, total * fraction(n, n_views)),
                pivot,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Trajectory::new(poses, TrajectoryKind::Complex)
}

fn point_on_polyline(points: &[Vector3<f64>], lengths: &[f64], arc: f64) -> Vector3<f64> {
    let mut remaining = arc;
    for (i, &len) in lengths.iter().enumerate() {
        if len == 0.0 {
            continue;
        }
        let last = i + 1 == lengths.len();
        if remaining <= len || last {
            let t = (remaining / len).clamp(0.0, 1.0);
            if t == 1.0 {
                return points[i + 1];
            }
            return points[i] + (points[i + 1] - points[i]) * t;
        }
        remaining -= len;
    }
    *points.last().expect("non-empty polyline")
}

/// Trajectory from explicit poses.
pub fn make_custom_trajectory(poses: Vec<Pose>) -> Result<Trajectory, CameraError> {
    Trajectory::new(poses, TrajectoryKind::Custom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn k_unit() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 0.0, 0.0, 64, 64).unwrap()
    }

    fn assert_valid_rotation(p: &Pose) {
        let r = p.rotation();
        assert!(((r.transpose() * r) - Matrix3::identity()).abs().max() < 1e-9);
        assert!((r.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn project_scalar_case() {
        let px = project(&Vector3::new(0.1, 0.0, 2.0), &k_unit()).unwrap();
        assert!((px.x - 5.0).abs() < 1e-12 && px.y.abs() < 1e-12);
    }

    #[test]
    fn principal_ray_unprojects_to_axis() {
        let k = Intrinsics::new(80.0, 90.0, 31.5, 20.25, 64, 48).unwrap();
        let p = unproject(&Vector2::new(k.cx, k.cy), 3.5, &k).unwrap();
        assert_eq!(p, Vector3::new(0.0, 0.0, 3.5));
    }

    #[test]
    fn behind_camera_and_bad_depth_rejected() {
        assert!(matches!(
            project(&Vector3::new(0.0, 0.0, -1.0), &k_unit()),
            Err(CameraError::BehindCamera(_))
        ));
        assert!(unproject(&Vector2::new(1.0, 1.0), 0.0, &k_unit()).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(Intrinsics::new(0.0, 1.0, 0.0, 0.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 4.0, 0.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 3.9, 3.9, 4, 4).is_ok());
    }

    #[test]
    fn pose_rejects_non_rotation() {
        let mut m = Matrix3::identity();
        m[(0, 0)] = -1.0;
        assert!(Pose::new(m, Vector3::zeros()).is_err());
        assert!(Pose::new(m * 2.0, Vector3::zeros()).is_err());
    }

    #[test]
    fn relative_transform_examples() {
        let id = Pose::identity();
        assert!(relative_transform(&id, &id).max_abs_diff(&id) == 0.0);
        let t = relative_transform(&id, &Pose::translation(0.1, 0.0, 0.0));
        assert!(t.max_abs_diff(&Pose::translation(0.1, 0.0, 0.0)) < 1e-15);

        // Oracle: compose the two rotation matrices by hand.
        let a = rot_z(30f64.to_radians());
        let b = rot_z(75f64.to_radians());
        let expected = b * a.transpose();
        let rel = relative_transform(&Pose::rot_z(30f64.to_radians()), &Pose::rot_z(75f64.to_radians()));
        assert!((rel.rotation() - expected).abs().max() < 1e-12);
        assert!((rel.rotation() - rot_z(45f64.to_radians())).abs().max() < 1e-12);
    }

    #[test]
    fn zero_magnitude_trajectories_are_identity() {
        let checks = [
            make_orbit_trajectory(2.0, 0.0, 5).unwrap(),
            make_dolly_trajectory(0.0, 4).unwrap(),
            make_elevation_trajectory(0.0, 2.0, 3).unwrap(),
        ];
        for traj in &checks {
            for p in traj.poses() {
                assert!(p.max_abs_diff(&Pose::identity()) == 0.0, "{:?}", traj.kind());
            }
        }
        assert_eq!(checks[0].len(), 5);
    }

    #[test]
    fn orbit_last_pose_matches_hand_composition() {
        let traj = make_orbit_trajectory(2.0, 30.0, 25).unwrap();
        assert_eq!(traj.len(), 25);
        // World-from-camera = T(p) · R_y(30°) · T(−p); invert by hand.
        let theta = 30f64.to_radians();
        let (s, c) = theta.sin_cos();
        let r_wc = Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c);
        let p = Vector3::new(0.0, 0.0, 2.0);
        let t_wc = p - r_wc * p;
        let r_cw = r_wc.transpose();
        let t_cw = -(r_cw * t_wc);
        let last = traj.poses()[24];
        assert!((last.rotation() - r_cw).abs().max() < 1e-12);
        assert!((last.translation_vector() - t_cw).abs().max() < 1e-12);
        // The pivot stays on the optical axis at its original depth.
        let pc = last.transform_point(&p);
        assert!(pc.x.abs() < 1e-12 && pc.y.abs() < 1e-12 && (pc.z - 2.0).abs() < 1e-12);
        for pose in traj.poses() {
            assert_valid_rotation(pose);
        }
    }

    #[test]
    fn orbit_negative_angle_mirrors() {
        let pos = make_orbit_trajectory(2.0, 30.0, 3).unwrap();
        let neg = make_orbit_trajectory(2.0, -30.0, 3).unwrap();
        let s = Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0));
        for (a, b) in pos.poses().iter().zip(neg.poses()) {
            assert!((s * a.rotation() * s - b.rotation()).abs().max() < 1e-12);
            assert!((s * a.translation_vector() - b.translation_vector()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn orbit_rejects_bad_inputs() {
        assert!(make_orbit_trajectory(2.0, 180.0, 3).is_err());
        assert!(make_orbit_trajectory(-1.0, 10.0, 3).is_err());
        assert!(make_orbit_trajectory(2.0, f64::NAN, 3).is_err());
        assert!(make_orbit_trajectory(2.0, 10.0, 1).is_err());
    }

    #[test]
    fn dolly_spacing() {
        let traj = make_dolly_trajectory(1.0, 5).unwrap();
        let zs: Vec<f64> = traj.poses().iter().map(|p| p.center().z).collect();
        assert_eq!(zs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        for p in traj.poses() {
            assert_eq!(p.rotation(), &Matrix3::identity());
        }
        let out = make_dolly_trajectory(-1.0, 2).unwrap();
        assert_eq!(out.poses()[1].center(), Vector3::new(0.0, 0.0, -1.0));
        assert!(make_dolly_trajectory(f64::INFINITY, 3).is_err());
    }

    #[test]
    fn dolly_zoom_keeps_subject_size() {
        let traj = make_dolly_trajectory_with(1.0, 3, Some(DollyZoom { subject_depth: 2.0 })).unwrap();
        let k = Intrinsics::new(100.0, 100.0, 32.0, 32.0, 64, 64).unwrap();
        let ks = traj.view_intrinsics(&k).unwrap();
        let edge = Vector3::new(0.3, 0.0, 2.0);
        for (pose, kv) in traj.poses().iter().zip(&ks) {
            let px = project(&pose.transform_point(&edge), kv).unwrap();
            assert!((px.x - project(&edge, &k).unwrap().x).abs() < 1e-9);
        }
        assert!(make_dolly_trajectory_with(2.0, 3, Some(DollyZoom { subject_depth: 2.0 })).is_err());
    }

    #[test]
    fn elevation_keeps_pivot_centered() {
        let k = Intrinsics::new(64.0, 64.0, 32.0, 32.0, 64, 64).unwrap();
        let traj = make_elevation_trajectory(0.5, 2.0, 2).unwrap();
        let last = traj.poses()[1];
        assert!((last.center() - Vector3::new(0.0, -0.5, 0.0)).norm() < 1e-12);
        let px = project(&last.transform_point(&Vector3::new(0.0, 0.0, 2.0)), &k).unwrap();
        assert!((px.x - k.cx).abs() < 1e-9 && (px.y - k.cy).abs() < 1e-9);
        assert_valid_rotation(&last);

        let down = make_elevation_trajectory(-0.5, 2.0, 2).unwrap();
        let s = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 1.0));
        let b = down.poses()[1];
        assert!((s * last.rotation() * s - b.rotation()).abs().max() < 1e-12);
        assert!((s * last.translation_vector() - b.translation_vector()).abs().max() < 1e-12);
    }

    #[test]
    fn complex_single_segment_is_a_dolly() {
        let c = make_complex_trajectory(&[Vector3::zeros(), Vector3::new(0.0, 0.0, 1.0)], 2.0, 5).unwrap();
        let d = make_dolly_trajectory(1.0, 5).unwrap();
        for (a, b) in c.poses().iter().zip(d.poses()) {
            assert!(a.max_abs_diff(b) < 1e-12);
        }
    }

    #[test]
    fn complex_in_then_out_returns_home() {
        let wp = [Vector3::zeros(), Vector3::new(0.0, 0.0, 0.5), Vector3::zeros()];
        let c = make_complex_trajectory(&wp, 2.0, 7).unwrap();
        assert!(c.poses()[0].max_abs_diff(&c.poses()[6]) < 1e-12);
        assert!((c.poses()[3].center().z - 0.5).abs() < 1e-12);
    }

    #[test]
    fn complex_l_path_centers_on_polyline() {
        let wp = [
            Vector3::zeros(),
            Vector3::new(0.6, 0.0, 0.0),
            Vector3::new(0.6, -0.4, 0.0),
        ];
        let c = make_complex_trajectory(&wp, 3.0, 11).unwrap();
        // Oracle: point-to-segment distance against both legs.
        let seg_dist = |p: Vector3<f64>, a: Vector3<f64>, b: Vector3<f64>| {
            let ab = b - a;
            let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
            (p - (a + ab * t)).norm()
        };
        for pose in c.poses() {
            let p = pose.center();
            let d = seg_dist(p, wp[0], wp[1]).min(seg_dist(p, wp[1], wp[2]));
            assert!(d < 1e-9, "center {p:?} off the path by {d}");
            assert_valid_rotation(pose);
        }
        // Total length 1.0 split into 10 equal arcs.
        assert!((c.poses()[6].center() - Vector3::new(0.6, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn complex_rejects_degenerate_waypoints() {
        let wp = [Vector3::new(0.1, 0.0, 0.0); 3];
        assert!(make_complex_trajectory(&wp, 2.0, 4).is_err());
        assert!(make_complex_trajectory(&wp[..1], 2.0, 4).is_err());
    }

    #[test]
    fn rot_z_half_turn_is_exactly_representable_via_from_rotation() {
        let p = Pose::rot_z(PI);
        assert!(
            (p.rotation() - Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0)))
                .abs()
                .max()
                < 1e-15
        );
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (-PI..PI, -PI..PI, -PI..PI, -2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64)
            .prop_map(|(a, b, c, x, y, z)| Pose::new(rot_z(a) * rot_y(b) * rot_x(c), Vector3::new(x, y, z)).unwrap())
    }

    proptest! {
        #[test]
        fn project_unproject_round_trip(
            u in 0.0..640.0f64, v in 0.0..480.0f64, d in 0.01..100.0f64,
            fx in 10.0..2000.0f64, fy in 10.0..2000.0f64,
            cx in 0.0..640.0f64, cy in 0.0..480.0f64,
        ) {
            let k = Intrinsics::new(fx, fy, cx, cy, 640, 480).unwrap();
            let px = Vector2::new(u, v);
            let back = project(&unproject(&px, d, &k).unwrap(), &k).unwrap();
            prop_assert!((back - px).abs().max() < 1e-9);
        }

        #[test]
        fn relative_transforms_chain(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let ab = relative_transform(&a, &b);
            let bc = relative_transform(&b, &c);
            let ac = relative_transform(&a, &c);
            prop_assert!(bc.compose(&ab).max_abs_diff(&ac) < 1e-9);
            prop_assert!(relative_transform(&a, &a).max_abs_diff(&Pose::identity()) < 1e-12);
        }

        #[test]
        fn generated_poses_are_rotations(
            angle in -179.0..179.0f64, depth in 0.5..10.0f64, n in 2usize..30, h in -2.0..2.0f64,
        ) {
            for traj in [
                make_orbit_trajectory(depth, angle, n).unwrap(),
                make_elevation_trajectory(h, depth, n).unwrap(),
            ] {
                for p in traj.poses() {
                    let r = p.rotation();
                    prop_assert!(((r.transpose() * r) - Matrix3::identity()).abs().max() < 1e-9);
                    prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}
