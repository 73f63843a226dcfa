//! TOML pipeline configuration.
//!
//! ```toml
//! seed = 7
//!
//! [grid]
//! n_views = 9
//! n_frames = 9
//!
//! [intrinsics]
//! fx = 64.0
//! fy = 64.0
//! cx = 32.0
//! cy = 32.0
//! width = 64
//! height = 64
//!
//! [trajectory]
//! kind = "orbit"
//! center_depth = 4.0
//! max_angle_deg = 10.0
//!
//! [backend]
//! kind = "ideal"
//! ```
//!
//! Every other block is optional; see the README for the full schema.

use std::path::{Path, PathBuf};
use std::time::Duration;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bidi::BidiStepConfig;
use crate::camera::{
    make_complex_trajectory, make_custom_trajectory, make_dolly_trajectory_with, make_elevation_trajectory,
    make_orbit_trajectory, DollyZoom, Intrinsics, Pose, Trajectory,
};
use crate::grid::{Ablation, EngineConfig, PipelineError};
use crate::sampler::{AnnealingParams, NoiseSchedule, ResidualMode};
use crate::scene::SceneSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n_views: usize,
    pub n_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomPose {
    /// Camera centre in world coordinates.
    pub center: [f64; 3],
    /// Point the camera faces; omitted means axis-aligned (looking down +z).
    #[serde(default)]
    pub look_at: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySpec {
    Orbit {
        center_depth: f64,
        max_angle_deg: f64,
    },
    Dolly {
        distance: f64,
        /// Keep a subject at this depth the same size by scaling the focal length.
        #[serde(default)]
        subject_depth: Option<f64>,
    },
    Elevation {
        height: f64,
        pivot_depth: f64,
    },
    Complex {
        waypoints: Vec<[f64; 3]>,
        pivot_depth: f64,
    },
    Custom {
        poses: Vec<CustomPose>,
    },
}

impl TrajectorySpec {
    pub fn build(&self, n_views: usize) -> Result<Trajectory, PipelineError> {
        let traj = match self {
            TrajectorySpec::Orbit {
                center_depth,
                max_angle_deg,
            } => make_orbit_trajectory(*center_depth, *max_angle_deg, n_views)?,
            TrajectorySpec::Dolly {
                distance,
                subject_depth,
            } => make_dolly_trajectory_with(
                *distance,
                n_views,
                subject_depth.map(|subject_depth| DollyZoom { subject_depth }),
            )?,
            TrajectorySpec::Elevation { height, pivot_depth } => {
                make_elevation_trajectory(*height, *pivot_depth, n_views)?
            }
            TrajectorySpec::Complex { waypoints, pivot_depth } => {
                let pts: Vec<Vector3<f64>> = waypoints.iter().map(|p| Vector3::from(*p)).collect();
                make_complex_trajectory(&pts, *pivot_depth, n_views)?
            }
            TrajectorySpec::Custom { poses } => {
                if poses.len() != n_views {
                    return Err(PipelineError::Config(format!(
                        "custom trajectory lists {} poses for {n_views} views",
                        poses.len()
                    )));
                }
                let poses = poses
                    .iter()
                    .map(|p| {
                        let center = Vector3::from(p.center);
                        match p.look_at {
                            Some(target) => Pose::look_at(center, Vector3::from(target)),
                            None => Pose::from_center(nalgebra::Matrix3::identity(), center),
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                make_custom_trajectory(poses)?
            }
        };
        Ok(traj)
    }
}

fn default_steps() -> usize {
    25
}
fn default_sigma_min() -> f64 {
    0.002
}
fn default_sigma_max() -> f64 {
    80.0
}
fn default_rho() -> f64 {
    7.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_sigma_min")]
    pub sigma_min: f64,
    #[serde(default = "default_sigma_max")]
    pub sigma_max: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Residual used by the keyframe sampler.
    #[serde(default)]
    pub residual_mode: ResidualMode,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self {
            steps: default_steps(),
            sigma_min: default_sigma_min(),
            sigma_max: default_sigma_max(),
            rho: default_rho(),
            residual_mode: ResidualMode::default(),
        }
    }
}

/// Annealing knobs; anything omitted takes the default for the step count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealingSpec {
    #[serde(default)]
    pub t_guide: Option<usize>,
    #[serde(default)]
    pub r_total: Option<usize>,
    #[serde(default)]
    pub r_guide: Option<usize>,
}

impl AnnealingSpec {
    pub fn resolve(&self, steps: usize) -> AnnealingParams {
        let d = AnnealingParams::default_for(steps);
        AnnealingParams {
            t_guide: self.t_guide.unwrap_or(d.t_guide),
            r_total: self.r_total.unwrap_or(d.r_total),
            r_guide: self.r_guide.unwrap_or(d.r_guide),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpolationSpec {
    pub residual_mode: ResidualMode,
    pub apply_warp_guidance: bool,
    pub pin_endpoints: bool,
    pub symmetric_renoise: bool,
}

impl Default for InterpolationSpec {
    fn default() -> Self {
        let step = BidiStepConfig::default();
        Self {
            residual_mode: step.residual_mode,
            apply_warp_guidance: step.apply_warp_guidance,
            pin_endpoints: step.pin_endpoints,
            symmetric_renoise: false,
        }
    }
}

impl InterpolationSpec {
    pub fn step(&self) -> BidiStepConfig {
        BidiStepConfig {
            residual_mode: self.residual_mode,
            apply_warp_guidance: self.apply_warp_guidance,
            pin_endpoints: self.pin_endpoints,
        }
    }
}

fn default_amplitude() -> f64 {
    0.1
}
fn default_prior_std() -> f64 {
    0.05
}
fn default_timeout() -> f64 {
    300.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    /// Ground truth of the synthetic scene.
    Ideal,
    /// Ground truth with seeded perturbations wherever the warp has holes.
    NoisyIdeal {
        #[serde(default = "default_amplitude")]
        amplitude: f64,
        #[serde(default = "default_prior_std")]
        prior_std: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Posterior mean of an i.i.d. Gaussian prior.
    Gaussian {
        mean: f64,
        std: f64,
    },
    Identity,
    /// A child process speaking the binary protocol on stdin/stdout.
    External {
        command: String,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
    },
}

impl BackendSpec {
    /// Parses the command-line form: `ideal`, `noisy-ideal`, `gaussian`,
    /// `identity` or `external:<command line>`.
    pub fn from_cli(s: &str) -> Result<Self, PipelineError> {
        if let Some(cmd) = s.strip_prefix("external:") {
            if cmd.trim().is_empty() {
                return Err(PipelineError::Config("external backend needs a command".into()));
            }
            return Ok(BackendSpec::External {
                command: cmd.to_string(),
                timeout_secs: default_timeout(),
            });
        }
        Ok(match s {
            "ideal" => BackendSpec::Ideal,
            "noisy-ideal" | "noisy_ideal" => BackendSpec::NoisyIdeal {
                amplitude: default_amplitude(),
                prior_std: default_prior_std(),
                seed: 0,
            },
            "gaussian" => BackendSpec::Gaussian { mean: 0.5, std: 0.25 },
            "identity" => BackendSpec::Identity,
            other => {
                return Err(PipelineError::Config(format!(
                    "unknown backend {other:?}; expected ideal, noisy-ideal, gaussian, identity or external:<cmd>"
                )))
            }
        })
    }

    pub fn timeout(&self) -> Option<Duration> {
        match self {
            BackendSpec::External { timeout_secs, .. } => Some(Duration::from_secs_f64(*timeout_secs)),
            _ => None,
        }
    }
}

/// Input video on disk: `frame_{fff}.png` and `depth_{fff}.pfm`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    /// Run independent clips concurrently. Does not change results.
    #[serde(default)]
    pub parallel: bool,
    pub grid: GridSpec,
    pub intrinsics: Intrinsics,
    pub trajectory: TrajectorySpec,
    #[serde(default)]
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub annealing: AnnealingSpec,
    #[serde(default)]
    pub interpolation: InterpolationSpec,
    #[serde(default)]
    pub scene: Option<SceneSpec>,
    #[serde(default)]
    pub input: Option<InputSpec>,
    pub backend: BackendSpec,
    #[serde(default)]
    pub ablation: Ablation,
    /// Directory relative input paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PipelineError::Io(format!("reading {}: {e}", path.display())))?;
        let mut cfg =
            Self::from_toml_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.grid.n_views < 2 || self.grid.n_frames < 2 {
            return Err(PipelineError::Config(format!(
                "grid must be at least 2x2 (got {}x{})",
                self.grid.n_views, self.grid.n_frames
            )));
        }
        self.intrinsics.validate()?;
        match (&self.scene, &self.input) {
            (Some(_), Some(_)) => return Err(PipelineError::Config("give either [scene] or [input], not both".into())),
            (None, None) => return Err(PipelineError::Config("need a [scene] or an [input] block".into())),
            _ => {}
        }
        if self.scene.is_none() && matches!(self.backend, BackendSpec::Ideal | BackendSpec::NoisyIdeal { .. }) {
            return Err(PipelineError::Config(
                "the ideal backends need a synthetic [scene]".into(),
            ));
        }
        let steps = self.schedule()?.steps();
        self.annealing
            .resolve(steps)
            .validate(steps)
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, PipelineError> {
        let s = &self.sampler;
        NoiseSchedule::karras(s.steps, s.sigma_min, s.sigma_max, s.rho)
            .map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn build_trajectory(&self) -> Result<Trajectory, PipelineError> {
        self.trajectory.build(self.grid.n_views)
    }

    pub fn engine_config(&self) -> Result<EngineConfig, PipelineError> {
        let schedule = self.schedule()?;
        let annealing = self.annealing.resolve(schedule.steps());
        Ok(EngineConfig {
            annealing,
            keyframe_residual: self.sampler.residual_mode,
            bidi: self.interpolation.step(),
            ablation: self.ablation,
            symmetric_renoise: self.interpolation.symmetric_renoise,
            visit_known_clips: false,
            parallel: self.parallel,
            seed: self.seed,
            schedule,
        })
    }

    pub fn input_dir(&self) -> Option<PathBuf> {
        self.input.as_ref().map(|i| self.base_dir.join(&i.dir))
    }

    /// SHA-256 of the canonical JSON form of every result-affecting field.
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("parallel");
        }
        let canonical = serde_json::to_string(&value).expect("json value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}
