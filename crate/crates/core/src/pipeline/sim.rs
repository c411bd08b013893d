//! Simulated-time event loop coupling the sensor, trainer and controller.

use std::sync::Arc;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scenario::{Arm, ScenarioConfig};
use crate::control::{control_step, nominal_for, integrate, BarrierQuery, BarrierSource, ControlInput, RobotState};
use crate::error::Result;
use crate::field::{FieldSnapshot, NetworkParams};
use crate::scene::Scene;
use crate::sensor::{apply_noise, mask_floor, render_depth, CameraPose};
use crate::trainer::{IterationRecord, Trainer};
use crate::Vec3;

/// One controller tick: the state at `t` and the command applied from it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub state: RobotState,
    pub nominal: ControlInput,
    pub command: ControlInput,
    /// Distance reported by the barrier source, before the margin.
    pub h: f64,
    pub grad_norm: f64,
    /// Snapshot version queried, 0 when none.
    pub snapshot: u64,
    pub infeasible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    Frame { valid_pixels: usize },
    Publish { version: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryLog {
    pub rows: Vec<TrajectoryRow>,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HaltReason {
    Reached,
    Collision,
    TimeCap,
}

impl HaltReason {
    pub fn name(&self) -> &'static str {
        match self {
            HaltReason::Reached => "reached",
            HaltReason::Collision => "collision",
            HaltReason::TimeCap => "time_cap",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub scenario: String,
    pub arm: Arm,
    pub seed: u64,
    /// Ground-truth clearance stayed positive for the whole rollout.
    pub safe: bool,
    pub reached: bool,
    pub halt: HaltReason,
    /// Simulated time at halt, seconds.
    pub duration_s: f64,
    pub min_clearance_m: f64,
    pub infeasible_steps: usize,
    /// Longest run of consecutive infeasible ticks, seconds.
    pub longest_infeasible_s: f64,
    pub controller_ticks: usize,
    pub trainer_iterations: u64,
    pub frames: usize,
    pub dropped_frames: usize,
    /// Largest gap between the newest published snapshot and the one the
    /// controller read, in versions.
    pub max_snapshot_lag: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: TrajectoryLog,
    pub metrics: RunMetrics,
    /// Final field parameters for the neural arms.
    pub params: Option<NetworkParams<f32>>,
    pub training: Vec<IterationRecord>,
}

const MICROS: f64 = 1e6;

fn micros(seconds: f64) -> u64 {
    (seconds * MICROS).round() as u64
}

fn barrier_at(
    arm: Arm,
    scene: &Scene,
    snapshot: Option<&Arc<FieldSnapshot>>,
    p: &Vec3,
    margin: f64,
) -> Result<Option<(BarrierQuery, u64)>> {
    if arm.is_neural() {
        let Some(snap) = snapshot else {
            return Ok(None);
        };
        let q = snap.query(p);
        Ok(Some((BarrierQuery::new(q.h, q.gradient, BarrierSource::Neural, margin)?, snap.version())))
    } else {
        let d = scene.sdf(p, false);
        if d.is_empty() {
            return Ok(None);
        }
        Ok(Some((BarrierQuery::new(d.distance, d.gradient, BarrierSource::Parametric, margin)?, 0)))
    }
}

/// Runs one rollout of `config` under `arm`, deterministic in `seed`.
///
/// Sensor frames, trainer iterations and controller ticks fire at fixed
/// simulated rates; at equal times the sensor goes first and the
/// controller last. The rollout halts on reaching the goal, on collision
/// (ground-truth clearance at most zero) or at the time cap.
pub fn run_scenario(config: &ScenarioConfig, arm: Arm, seed: u64) -> Result<RunOutput> {
    config.validate()?;
    let scene = config.scene.build()?;
    let ctrl = config.controller_config();
    let intr = config.sensor.intrinsics();
    let noise = config.sensor.noise();
    let mask = config.masks_floor(arm);
    let z = config.robot.query_height_m;
    let goal = Vector2::from(config.robot.goal_xy_m);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trainer_seed: u64 = rng.random();
    let noise_seed: u64 = rng.random();
    let j = config.robot.start_jitter_m;
    let hj = config.robot.heading_jitter_rad;
    let jitter = |rng: &mut ChaCha8Rng, r: f64| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
    let mut state = RobotState::new(
        config.robot.start_xy_m[0] + jitter(&mut rng, j),
        config.robot.start_xy_m[1] + jitter(&mut rng, j),
        config.robot.start_heading_rad + jitter(&mut rng, hj),
    );

    let mut trainer = if arm.is_neural() {
        Some(Trainer::new(config.trainer_config(arm), trainer_seed)?)
    } else {
        None
    };

    let sensor_period = micros(1.0 / config.sim.sensor_rate_hz);
    let train_period = (sensor_period / config.sim.trainer_iterations_per_frame as u64).max(1);
    let control_period = micros(config.sim.controller_period_s);
    let dt = control_period as f64 / MICROS;
    let cap = micros(config.sim.duration_cap_s);
    let warmup = if arm.is_neural() { micros(config.sim.warmup_s) } else { 0 };

    let mut log = TrajectoryLog::default();
    let mut training = Vec::new();
    let (mut next_sensor, mut next_train, mut next_control) = (0u64, 0u64, 0u64);
    let mut frames = 0usize;
    let mut min_clearance = scene.sdf(&Vec3::new(state.px, state.py, z), false).distance;
    let mut infeasible_steps = 0;
    let mut streak = 0usize;
    let mut longest = 0usize;
    let mut max_lag = 0u64;
    let mut newest = 0u64;

    let halt = loop {
        let t_train = if trainer.is_some() { next_train } else { u64::MAX };
        let now = next_sensor.min(t_train).min(next_control);
        let seconds = now as f64 / MICROS;
        if now == next_sensor && trainer.is_some() {
            next_sensor += sensor_period;
            // the camera rides on the wheel axis, the shift behind the controlled point
            let (s, c) = state.theta.sin_cos();
            let p = Vec3::new(state.px - ctrl.shift * c, state.py - ctrl.shift * s, z);
            let pose = CameraPose::looking(p, state.theta, config.robot.camera_pitch_rad);
            let mut frame = render_depth(&scene, &pose, &intr, seconds).frame;
            if !noise.is_zero() {
                frame = apply_noise(&frame, &noise, noise_seed.wrapping_add(frames as u64));
            }
            if mask {
                frame = mask_floor(&frame, &scene, config.sensor.floor_tolerance_m);
            }
            log.events.push(Event {
                t: seconds,
                kind: EventKind::Frame {
                    valid_pixels: frame.valid_count(),
                },
            });
            frames += 1;
            trainer.as_mut().expect("neural arm").push_frame(frame);
            continue;
        }
        if now == next_sensor {
            next_sensor = u64::MAX;
        }
        if now == t_train {
            next_train += train_period;
            let tr = trainer.as_mut().expect("neural arm");
            let record = tr.train_iteration()?;
            if let Some(version) = record.published {
                newest = version;
                log.events.push(Event {
                    t: seconds,
                    kind: EventKind::Publish { version },
                });
            }
            training.push(record);
            continue;
        }

        // controller tick
        next_control += control_period;
        let p = Vec3::new(state.px, state.py, z);
        let snapshot = trainer.as_ref().and_then(|t| t.latest_snapshot());
        let query = barrier_at(arm, &scene, snapshot.as_ref(), &p, ctrl.margin)?;
        let (nominal, command, infeasible, h, grad_norm, version) = match &query {
            _ if now < warmup => (ControlInput::STOP, ControlInput::STOP, false, f64::NAN, f64::NAN, 0),
            None => {
                let step = nominal_for(&ctrl, &state, &goal);
                let hold = arm.is_neural();
                let command = if hold { ControlInput::STOP } else { step };
                (step, command, false, f64::INFINITY, 0.0, 0)
            }
            Some((q, version)) => {
                let step = control_step(&ctrl, &state, &goal, q);
                (
                    step.nominal,
                    step.filtered.u,
                    step.filtered.infeasible,
                    q.h + q.margin,
                    q.gradient.norm(),
                    *version,
                )
            }
        };
        if arm.is_neural() && version > 0 {
            max_lag = max_lag.max(newest - version);
        }
        log.rows.push(TrajectoryRow {
            t: seconds,
            state,
            nominal,
            command,
            h,
            grad_norm,
            snapshot: version,
            infeasible,
        });
        if infeasible {
            infeasible_steps += 1;
            streak += 1;
            longest = longest.max(streak);
        } else {
            streak = 0;
        }
        state = integrate(&state, &command, dt, ctrl.shift);
        let after = next_control;
        let clearance = scene.sdf(&Vec3::new(state.px, state.py, z), false).distance;
        min_clearance = min_clearance.min(clearance);
        if clearance <= 0.0 {
            break (HaltReason::Collision, after);
        }
        if (state.position() - goal).norm() <= ctrl.goal_tolerance {
            break (HaltReason::Reached, after);
        }
        if after >= cap {
            break (HaltReason::TimeCap, after);
        }
    };

    let (reason, end) = halt;
    let metrics = RunMetrics {
        scenario: config.name.clone(),
        arm,
        seed,
        safe: min_clearance > 0.0,
        reached: reason == HaltReason::Reached,
        halt: reason,
        duration_s: end as f64 / MICROS,
        min_clearance_m: min_clearance,
        infeasible_steps,
        longest_infeasible_s: longest as f64 * dt,
        controller_ticks: log.rows.len(),
        trainer_iterations: trainer.as_ref().map_or(0, |t| t.iteration()),
        frames,
        dropped_frames: trainer.as_ref().map_or(0, |t| t.dropped_frames()),
        max_snapshot_lag: max_lag,
    };
    Ok(RunOutput {
        log,
        metrics,
        params: trainer.map(|t| t.params().clone()),
        training,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::scenario::ObstacleSpec;

    fn empty_scenario() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::default();
        cfg.scene.bounds_min_m = [-1.0, -2.0, -0.5];
        cfg.scene.bounds_max_m = [4.0, 2.0, 2.0];
        cfg.robot.goal_xy_m = [3.0, 0.0];
        cfg.robot.start_jitter_m = 0.0;
        cfg.robot.heading_jitter_rad = 0.0;
        cfg
    }

    #[test]
    fn parametric_empty_scene_drives_straight() {
        let cfg = empty_scenario();
        let out = run_scenario(&cfg, Arm::Parametric, 0).unwrap();
        let m = &out.metrics;
        assert!(m.reached && m.safe, "{m:?}");
        let expected = (3.0 - cfg.robot.goal_tolerance_m) / 0.5;
        assert!((m.duration_s - expected).abs() <= 0.1 * expected, "{} vs {expected}", m.duration_s);
        assert!(out.log.rows.iter().all(|r| r.state.py.abs() < 1e-12));
    }

    #[test]
    fn parametric_passes_a_blocking_sphere() {
        let mut cfg = empty_scenario();
        cfg.scene.obstacles.push(ObstacleSpec::Sphere {
            center_m: [1.5, 0.1, 0.3],
            radius_m: 0.4,
        });
        let out = run_scenario(&cfg, Arm::Parametric, 0).unwrap();
        let m = &out.metrics;
        assert!(m.reached && m.safe, "{m:?}");
        assert!(m.min_clearance_m >= 0.0);
    }

    #[test]
    fn timestamps_increase_and_controller_keeps_rate() {
        let cfg = empty_scenario();
        let out = run_scenario(&cfg, Arm::Parametric, 0).unwrap();
        assert!(out.log.rows.windows(2).all(|w| w[1].t > w[0].t));
        let ticks = out.metrics.controller_ticks as f64;
        assert!(ticks >= 20.0 * out.metrics.duration_s - 1.0);
    }

    #[test]
    fn same_seed_same_log() {
        let mut cfg = empty_scenario();
        cfg.robot.start_jitter_m = 0.05;
        let a = run_scenario(&cfg, Arm::Parametric, 3).unwrap();
        let b = run_scenario(&cfg, Arm::Parametric, 3).unwrap();
        assert_eq!(a.log, b.log);
        let c = run_scenario(&cfg, Arm::Parametric, 4).unwrap();
        assert_ne!(a.log.rows[0].state, c.log.rows[0].state);
    }

    #[test]
    fn invalid_config_fails_before_stepping() {
        let mut cfg = empty_scenario();
        cfg.robot.goal_xy_m = [10.0, 0.0];
        assert!(run_scenario(&cfg, Arm::Parametric, 0).is_err());
    }
}
