//! Scenario files: TOML with the unit of every quantity in its key name.
//!
//! ```toml
//! name = "single_obstacle"
//!
//! [scene]
//! floor_height_m = 0.0
//! bounds_min_m = [-1.0, -2.0, -0.5]
//! bounds_max_m = [5.0, 2.0, 2.5]
//!
//! [[scene.obstacles]]
//! kind = "cylinder"
//! center_xy_m = [2.0, 0.25]
//! radius_m = 0.4
//! z_min_m = 0.0
//! z_max_m = 1.0
//!
//! [robot]
//! start_xy_m = [0.0, 0.0]
//! start_heading_rad = 0.0
//! goal_xy_m = [4.0, 0.0]
//! ```
//!
//! Every other table (`sim`, `sensor`, `trainer`, `controller`) and every
//! key inside them is optional; missing keys take the defaults of
//! [`ScenarioConfig::default`]. Obstacle kinds are `sphere` (`center_m`,
//! `radius_m`), `box` (`center_m`, `half_extents_m`), `cylinder` (as above)
//! and `plane` (`normal`, `offset_m`).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::control::{ActuatorLimits, AlphaFunction, ControllerConfig, Steering};
use crate::error::{Error, Result};
use crate::field::{AdamConfig, NetworkConfig};
use crate::scene::{Aabb, Primitive, Scene};
use crate::sensor::{CameraIntrinsics, DepthNoise, FLOOR_TOLERANCE};
use crate::trainer::{EikonalMode, GradientScope, KeyframeConfig, LossConfig, NearSurfaceLoss, SamplingConfig, TrainerConfig};
use crate::Vec3;

/// Which barrier source drives the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Online neural field trained on floor-masked frames.
    Rnbf,
    /// Exact distances from the ground-truth scene.
    Parametric,
    /// Neural field with L1 surface loss and no floor masking.
    IsdfAblation,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Rnbf, Arm::Parametric, Arm::IsdfAblation];

    pub fn name(&self) -> &'static str {
        match self {
            Arm::Rnbf => "rnbf",
            Arm::Parametric => "parametric",
            Arm::IsdfAblation => "isdf_ablation",
        }
    }

    pub fn is_neural(&self) -> bool {
        !matches!(self, Arm::Parametric)
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown arm '{s}' (expected rnbf, parametric or isdf_ablation)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObstacleSpec {
    Sphere {
        center_m: [f64; 3],
        radius_m: f64,
    },
    Box {
        center_m: [f64; 3],
        half_extents_m: [f64; 3],
    },
    Cylinder {
        center_xy_m: [f64; 2],
        radius_m: f64,
        z_min_m: f64,
        z_max_m: f64,
    },
    Plane {
        normal: [f64; 3],
        offset_m: f64,
    },
}

impl ObstacleSpec {
    pub fn primitive(&self) -> Primitive {
        match *self {
            ObstacleSpec::Sphere { center_m, radius_m } => Primitive::sphere(Vec3::from(center_m), radius_m),
            ObstacleSpec::Box {
                center_m,
                half_extents_m,
            } => Primitive::cuboid(Vec3::from(center_m), Vec3::from(half_extents_m)),
            ObstacleSpec::Cylinder {
                center_xy_m,
                radius_m,
                z_min_m,
                z_max_m,
            } => Primitive::cylinder(center_xy_m[0], center_xy_m[1], radius_m, z_min_m, z_max_m),
            ObstacleSpec::Plane { normal, offset_m } => Primitive::plane(Vec3::from(normal), offset_m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default)]
    pub floor_height_m: Option<f64>,
    pub bounds_min_m: [f64; 3],
    pub bounds_max_m: [f64; 3],
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
}

impl SceneSpec {
    pub fn build(&self) -> Result<Scene> {
        Scene::new(
            self.obstacles.iter().map(ObstacleSpec::primitive).collect(),
            self.floor_height_m,
            Aabb::new(Vec3::from(self.bounds_min_m), Vec3::from(self.bounds_max_m)),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotSpec {
    pub start_xy_m: [f64; 2],
    pub start_heading_rad: f64,
    pub goal_xy_m: [f64; 2],
    pub goal_tolerance_m: f64,
    /// Height of the camera and of barrier queries.
    pub query_height_m: f64,
    pub camera_pitch_rad: f64,
    /// Per-seed uniform perturbation of the start position.
    pub start_jitter_m: f64,
    /// Per-seed uniform perturbation of the start heading.
    pub heading_jitter_rad: f64,
}

impl Default for RobotSpec {
    fn default() -> Self {
        Self {
            start_xy_m: [0.0, 0.0],
            start_heading_rad: 0.0,
            goal_xy_m: [1.0, 0.0],
            goal_tolerance_m: 0.15,
            query_height_m: 0.3,
            camera_pitch_rad: 0.0,
            start_jitter_m: 0.05,
            heading_jitter_rad: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSpec {
    pub duration_cap_s: f64,
    pub controller_period_s: f64,
    pub sensor_rate_hz: f64,
    pub trainer_iterations_per_frame: usize,
    /// Neural arms hold the zero command this long while the field
    /// bootstraps.
    pub warmup_s: f64,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            duration_cap_s: 30.0,
            controller_period_s: 0.05,
            sensor_rate_hz: 10.0,
            trainer_iterations_per_frame: 10,
            warmup_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSpec {
    pub width_px: usize,
    pub height_px: usize,
    pub hfov_deg: f64,
    pub min_depth_m: f64,
    pub max_depth_m: f64,
    pub noise_sigma0_m: f64,
    pub noise_sigma1_per_m: f64,
    /// Invalidate floor pixels before training (forced off for the
    /// ablation arm).
    pub mask_floor: bool,
    pub floor_tolerance_m: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        let intr = CameraIntrinsics::default();
        let noise = DepthNoise::default();
        Self {
            width_px: intr.width,
            height_px: intr.height,
            hfov_deg: 60.0,
            min_depth_m: intr.min_depth,
            max_depth_m: intr.max_depth,
            noise_sigma0_m: noise.sigma0,
            noise_sigma1_per_m: noise.sigma1,
            mask_floor: true,
            floor_tolerance_m: FLOOR_TOLERANCE,
        }
    }
}

impl SensorSpec {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::with_fov(
            self.width_px,
            self.height_px,
            self.hfov_deg.to_radians(),
            self.min_depth_m,
            self.max_depth_m,
        )
    }

    pub fn noise(&self) -> DepthNoise {
        DepthNoise {
            sigma0: self.noise_sigma0_m,
            sigma1: self.noise_sigma1_per_m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSpec {
    pub hidden_width: usize,
    pub learning_rate: f64,
    pub rays_per_frame: usize,
    pub stratified_samples: usize,
    pub surface_samples: usize,
    pub replay_frames: usize,
    pub keyframe_capacity: usize,
    pub keyframe_threshold_m: f64,
    pub publish_every_iterations: usize,
    /// Output bias offset at initialisation.
    pub initial_distance_m: f64,
    pub free_space_beta_per_m: f64,
    pub huber_delta_m: f64,
    pub surface_band_m: f64,
    pub eikonal_threshold: f64,
    pub surface_weight: f64,
    pub gradient_weight: f64,
    pub eikonal_weight: f64,
    /// `huber` or `l1` (forced to `l1` for the ablation arm).
    pub near_surface_loss: NearSurfaceLoss,
    /// `one_sided` or `two_sided`.
    pub eikonal_mode: EikonalMode,
    pub gradient_scope: GradientScope,
}

impl Default for TrainerSpec {
    fn default() -> Self {
        let loss = LossConfig::default();
        let sampling = SamplingConfig::default();
        let kf = KeyframeConfig::default();
        Self {
            hidden_width: NetworkConfig::default().hidden_width,
            learning_rate: AdamConfig::default().learning_rate,
            rays_per_frame: sampling.rays_per_frame,
            stratified_samples: sampling.stratified,
            surface_samples: sampling.surface,
            replay_frames: sampling.replay_frames,
            keyframe_capacity: kf.capacity,
            keyframe_threshold_m: kf.admission_threshold,
            publish_every_iterations: TrainerConfig::default().publish_every,
            initial_distance_m: TrainerConfig::default().initial_distance,
            free_space_beta_per_m: loss.free_space_beta,
            huber_delta_m: loss.huber_delta,
            surface_band_m: loss.surface_band,
            eikonal_threshold: loss.eikonal_threshold,
            surface_weight: loss.surface_weight,
            gradient_weight: loss.gradient_weight,
            eikonal_weight: loss.eikonal_weight,
            near_surface_loss: loss.near_surface,
            eikonal_mode: loss.eikonal_mode,
            gradient_scope: loss.gradient_scope,
        }
    }
}

impl TrainerSpec {
    pub fn trainer_config(&self) -> TrainerConfig {
        let d = TrainerConfig::default();
        TrainerConfig {
            network: NetworkConfig {
                hidden_width: self.hidden_width,
                ..d.network
            },
            loss: LossConfig {
                free_space_beta: self.free_space_beta_per_m,
                huber_delta: self.huber_delta_m,
                surface_band: self.surface_band_m,
                eikonal_threshold: self.eikonal_threshold,
                surface_weight: self.surface_weight,
                gradient_weight: self.gradient_weight,
                eikonal_weight: self.eikonal_weight,
                near_surface: self.near_surface_loss,
                eikonal_mode: self.eikonal_mode,
                gradient_scope: self.gradient_scope,
            },
            sampling: SamplingConfig {
                rays_per_frame: self.rays_per_frame,
                stratified: self.stratified_samples,
                surface: self.surface_samples,
                replay_frames: self.replay_frames,
                ..d.sampling
            },
            keyframes: KeyframeConfig {
                capacity: self.keyframe_capacity,
                admission_threshold: self.keyframe_threshold_m,
                ..d.keyframes
            },
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                ..d.adam
            },
            publish_every: self.publish_every_iterations,
            initial_distance: self.initial_distance_m,
            ..d
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSpec {
    pub speed_mps: f64,
    pub shift_m: f64,
    pub margin_m: f64,
    pub alpha_gain_per_s: f64,
    pub v_min_mps: f64,
    pub v_max_mps: f64,
    pub w_max_radps: f64,
    pub steering: Steering,
}

impl Default for ControllerSpec {
    fn default() -> Self {
        let c = ControllerConfig::default();
        let AlphaFunction::Linear { gain } = c.alpha;
        Self {
            speed_mps: c.speed,
            shift_m: c.shift,
            margin_m: c.margin,
            alpha_gain_per_s: gain,
            v_min_mps: c.limits.v_min,
            v_max_mps: c.limits.v_max,
            w_max_radps: c.limits.w_max,
            steering: c.steering,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub scene: SceneSpec,
    pub robot: RobotSpec,
    #[serde(default)]
    pub sim: SimSpec,
    #[serde(default)]
    pub sensor: SensorSpec,
    #[serde(default)]
    pub trainer: TrainerSpec,
    #[serde(default)]
    pub controller: ControllerSpec,
    /// Arms run by `suite`.
    #[serde(default = "default_suite_arms")]
    pub suite_arms: Vec<Arm>,
}

fn default_suite_arms() -> Vec<Arm> {
    vec![Arm::Parametric, Arm::Rnbf]
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "unnamed".into(),
            scene: SceneSpec {
                floor_height_m: Some(0.0),
                bounds_min_m: [-2.0, -2.0, -0.5],
                bounds_max_m: [2.0, 2.0, 2.0],
                obstacles: Vec::new(),
            },
            robot: RobotSpec::default(),
            sim: SimSpec::default(),
            sensor: SensorSpec::default(),
            trainer: TrainerSpec::default(),
            controller: ControllerSpec::default(),
            suite_arms: default_suite_arms(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Invalid(e.to_string()))
    }

    /// Reads and validates a scenario file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let scenario = |message: String| Error::Scenario {
            path: path.to_path_buf(),
            message,
        };
        let cfg: Self = toml::from_str(&text).map_err(|e| scenario(e.to_string()))?;
        cfg.validate().map_err(|e| scenario(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serialises")
    }

    pub fn controller_config(&self) -> ControllerConfig {
        let c = &self.controller;
        ControllerConfig {
            shift: c.shift_m,
            speed: c.speed_mps,
            goal_tolerance: self.robot.goal_tolerance_m,
            period: self.sim.controller_period_s,
            margin: c.margin_m,
            alpha: AlphaFunction::Linear {
                gain: c.alpha_gain_per_s,
            },
            limits: ActuatorLimits {
                v_min: c.v_min_mps,
                v_max: c.v_max_mps,
                w_max: c.w_max_radps,
            },
            steering: c.steering,
        }
    }

    /// Trainer configuration with the arm's overrides applied.
    pub fn trainer_config(&self, arm: Arm) -> TrainerConfig {
        let mut cfg = self.trainer.trainer_config();
        if arm == Arm::IsdfAblation {
            cfg.loss.near_surface = NearSurfaceLoss::L1;
        }
        cfg
    }

    pub fn masks_floor(&self, arm: Arm) -> bool {
        self.sensor.mask_floor && arm != Arm::IsdfAblation
    }

    pub fn validate(&self) -> Result<()> {
        let scene = self.scene.build()?;
        self.controller_config().validate()?;
        self.trainer.trainer_config().validate()?;
        self.sensor.intrinsics().validate()?;
        let noise = self.sensor.noise();
        if !(noise.sigma0 >= 0.0 && noise.sigma1 >= 0.0) {
            return Err(Error::invalid("noise parameters must be non-negative"));
        }
        let s = &self.sim;
        if !(s.duration_cap_s > 0.0 && s.controller_period_s > 0.0 && s.sensor_rate_hz > 0.0 && s.warmup_s >= 0.0) {
            return Err(Error::invalid("sim durations and rates must be positive"));
        }
        if s.trainer_iterations_per_frame == 0 {
            return Err(Error::invalid("trainer_iterations_per_frame must be positive"));
        }
        if s.controller_period_s < 1e-6 || 1.0 / s.sensor_rate_hz < 1e-6 {
            return Err(Error::invalid("periods below one microsecond are not supported"));
        }
        let r = &self.robot;
        if !(r.goal_tolerance_m > 0.0 && r.start_jitter_m >= 0.0 && r.heading_jitter_rad >= 0.0) {
            return Err(Error::invalid("goal tolerance must be positive and jitters non-negative"));
        }
        let z = r.query_height_m;
        let goal = Vec3::new(r.goal_xy_m[0], r.goal_xy_m[1], z);
        if !scene.bounds.contains(&goal) {
            return Err(Error::invalid("goal lies outside the scene bounds"));
        }
        // the whole jitter box must start inside the safe set
        let j = r.start_jitter_m;
        for (dx, dy) in [(0.0, 0.0), (-j, -j), (-j, j), (j, -j), (j, j)] {
            let p = Vec3::new(r.start_xy_m[0] + dx, r.start_xy_m[1] + dy, z);
            if !scene.bounds.contains(&p) {
                return Err(Error::invalid("start lies outside the scene bounds"));
            }
            let clearance = scene.sdf(&p, false).distance;
            if clearance <= self.controller.margin_m {
                return Err(Error::invalid(format!(
                    "start clearance {clearance:.3} m does not exceed the safety margin {:.3} m",
                    self.controller.margin_m
                )));
            }
        }
        if self.suite_arms.is_empty() {
            return Err(Error::invalid("suite_arms must list at least one arm"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
[scene]
floor_height_m = 0.0
bounds_min_m = [-1.0, -2.0, -0.5]
bounds_max_m = [5.0, 2.0, 2.5]
[[scene.obstacles]]
kind = "cylinder"
center_xy_m = [2.0, 0.25]
radius_m = 0.4
z_min_m = 0.0
z_max_m = 1.0
[robot]
start_xy_m = [0.0, 0.0]
goal_xy_m = [4.0, 0.0]
"#;

    #[test]
    fn minimal_file_takes_defaults() {
        let cfg = ScenarioConfig::from_toml(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.sim, SimSpec::default());
        assert_eq!(cfg.trainer, TrainerSpec::default());
        assert_eq!(cfg.scene.build().unwrap().obstacles.len(), 1);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ScenarioConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(ScenarioConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("goal_xy_m", "goal_xy");
        assert!(ScenarioConfig::from_toml(&text).is_err());
    }

    #[test]
    fn start_inside_margin_is_rejected() {
        let text = MINIMAL.replace("start_xy_m = [0.0, 0.0]", "start_xy_m = [1.5, 0.25]");
        let cfg = ScenarioConfig::from_toml(&text).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn goal_outside_bounds_is_rejected() {
        let text = MINIMAL.replace("goal_xy_m = [4.0, 0.0]", "goal_xy_m = [9.0, 0.0]");
        assert!(ScenarioConfig::from_toml(&text).unwrap().validate().is_err());
    }

    #[test]
    fn ablation_overrides() {
        let cfg = ScenarioConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.trainer_config(Arm::IsdfAblation).loss.near_surface, NearSurfaceLoss::L1);
        assert_eq!(cfg.trainer_config(Arm::Rnbf).loss.near_surface, NearSurfaceLoss::Huber);
        assert!(cfg.masks_floor(Arm::Rnbf));
        assert!(!cfg.masks_floor(Arm::IsdfAblation));
    }

    #[test]
    fn arm_names_parse() {
        for arm in Arm::ALL {
            assert_eq!(arm.name().parse::<Arm>().unwrap(), arm);
        }
        assert!("rnbf2".parse::<Arm>().is_err());
    }
}
