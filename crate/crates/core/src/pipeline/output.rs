//! Trajectory, metrics and SDF-slice writers.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::sim::{EventKind, RunMetrics, RunOutput, TrajectoryLog};
use crate::error::{Error, Result};
use crate::field::{save_checkpoint, NetworkParams};
use crate::scene::Scene;
use crate::trainer::TrainingLog;
use crate::Vec3;

pub const TRAJECTORY_HEADER: &str = "t,px,py,theta,v_nom,w_nom,v,w,h,grad_norm,snapshot,infeasible";

pub fn trajectory_csv(log: &TrajectoryLog) -> String {
    let mut s = String::with_capacity(64 * (log.rows.len() + 1));
    s.push_str(TRAJECTORY_HEADER);
    s.push('\n');
    for r in &log.rows {
        writeln!(
            s,
            "{:.3},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
            r.t,
            r.state.px,
            r.state.py,
            r.state.theta,
            r.nominal.v,
            r.nominal.w,
            r.command.v,
            r.command.w,
            r.h,
            r.grad_norm,
            r.snapshot,
            u8::from(r.infeasible)
        )
        .expect("writing to a string");
    }
    s
}

pub fn events_csv(log: &TrajectoryLog) -> String {
    let mut s = String::from("t,event,value\n");
    for e in &log.events {
        let (kind, value) = match e.kind {
            EventKind::Frame { valid_pixels } => ("frame", valid_pixels as u64),
            EventKind::Publish { version } => ("publish", version),
        };
        writeln!(s, "{:.3},{kind},{value}", e.t).expect("writing to a string");
    }
    s
}

/// `key = value` lines.
pub fn metrics_text(m: &RunMetrics) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("writing to a string");
    kv("scenario", format!("\"{}\"", m.scenario));
    kv("arm", format!("\"{}\"", m.arm));
    kv("seed", m.seed.to_string());
    kv("safe", m.safe.to_string());
    kv("reached", m.reached.to_string());
    kv("halt", format!("\"{}\"", m.halt.name()));
    kv("duration_s", format!("{:.3}", m.duration_s));
    kv("min_clearance_m", format!("{:.6}", m.min_clearance_m));
    kv("infeasible_steps", m.infeasible_steps.to_string());
    kv("longest_infeasible_s", format!("{:.3}", m.longest_infeasible_s));
    kv("controller_ticks", m.controller_ticks.to_string());
    kv("trainer_iterations", m.trainer_iterations.to_string());
    kv("frames", m.frames.to_string());
    kv("dropped_frames", m.dropped_frames.to_string());
    kv("max_snapshot_lag", m.max_snapshot_lag.to_string());
    s
}

/// Horizontal grid of SDF values at a fixed height. Row 0 is the largest
/// `y`, so the grid reads like a top-down map.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfSlice {
    pub min_xy: [f64; 2],
    pub resolution: f64,
    pub height: f64,
    /// `rows x cols`
    pub values: Array2<f64>,
}

impl SdfSlice {
    fn grid(min_xy: [f64; 2], max_xy: [f64; 2], resolution: f64) -> Result<(usize, usize)> {
        if !(resolution > 0.0) || !(max_xy[0] > min_xy[0] && max_xy[1] > min_xy[1]) {
            return Err(Error::invalid("slice needs a positive resolution and a non-empty extent"));
        }
        let cols = ((max_xy[0] - min_xy[0]) / resolution).floor() as usize + 1;
        let rows = ((max_xy[1] - min_xy[1]) / resolution).floor() as usize + 1;
        Ok((rows, cols))
    }

    /// World point at the centre of cell `(row, col)`.
    pub fn point(&self, row: usize, col: usize) -> Vec3 {
        let rows = self.values.nrows();
        Vec3::new(
            self.min_xy[0] + col as f64 * self.resolution,
            self.min_xy[1] + (rows - 1 - row) as f64 * self.resolution,
            self.height,
        )
    }

    pub fn from_fn(
        min_xy: [f64; 2],
        max_xy: [f64; 2],
        resolution: f64,
        height: f64,
        f: impl Fn(&Vec3) -> f64,
    ) -> Result<Self> {
        let (rows, cols) = Self::grid(min_xy, max_xy, resolution)?;
        let mut slice = Self {
            min_xy,
            resolution,
            height,
            values: Array2::zeros((rows, cols)),
        };
        for r in 0..rows {
            for c in 0..cols {
                slice.values[[r, c]] = f(&slice.point(r, c));
            }
        }
        Ok(slice)
    }

    pub fn ground_truth(scene: &Scene, include_floor: bool, resolution: f64, height: f64) -> Result<Self> {
        let (lo, hi) = (scene.bounds.min(), scene.bounds.max());
        Self::from_fn([lo.x, lo.y], [hi.x, hi.y], resolution, height, |p| {
            scene.sdf(p, include_floor).distance
        })
    }

    pub fn learned(
        params: &NetworkParams<f32>,
        min_xy: [f64; 2],
        max_xy: [f64; 2],
        resolution: f64,
        height: f64,
    ) -> Result<Self> {
        let (rows, cols) = Self::grid(min_xy, max_xy, resolution)?;
        let mut slice = Self {
            min_xy,
            resolution,
            height,
            values: Array2::zeros((rows, cols)),
        };
        let pts = Array2::from_shape_fn((rows * cols, 3), |(i, k)| slice.point(i / cols, i % cols)[k] as f32);
        let eval = params.evaluate(pts.view(), false)?;
        for (i, h) in eval.h.iter().enumerate() {
            slice.values[[i / cols, i % cols]] = *h as f64;
        }
        Ok(slice)
    }

    /// Binary graymap, `h` clamped to `[-1, 1]` m and mapped to `[0, 255]`.
    pub fn to_pgm(&self) -> Vec<u8> {
        let (rows, cols) = self.values.dim();
        let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
        out.extend(self.values.iter().map(|h| {
            let h = if h.is_nan() { 0.0 } else { h.clamp(-1.0, 1.0) };
            ((h + 1.0) * 127.5).round() as u8
        }));
        out
    }

    /// Mean absolute difference over cells where `mask` holds.
    pub fn mean_abs_difference(&self, other: &SdfSlice, mask: impl Fn(&Vec3) -> bool) -> Option<f64> {
        if self.values.dim() != other.values.dim() {
            return None;
        }
        let (rows, cols) = self.values.dim();
        let mut sum = 0.0;
        let mut n = 0usize;
        for r in 0..rows {
            for c in 0..cols {
                if mask(&self.point(r, c)) {
                    sum += (self.values[[r, c]] - other.values[[r, c]]).abs();
                    n += 1;
                }
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

pub const SLICE_RESOLUTION: f64 = 0.05;

fn write(path: PathBuf, bytes: &[u8]) -> Result<()> {
    fs::write(&path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `trajectory.csv`, `events.csv`, `metrics.txt`, the ground-truth
/// slice `slice_truth.pgm` and, for neural arms, `slice_learned.pgm`,
/// `training.csv` and `field.ckpt` into `out_dir`. Nothing is written when
/// the trajectory is empty.
pub fn emit_outputs(run: &RunOutput, scene: &Scene, include_floor: bool, height: f64, out_dir: &Path) -> Result<()> {
    if run.log.rows.is_empty() {
        return Err(Error::invalid("trajectory is empty; nothing written"));
    }
    let truth = SdfSlice::ground_truth(scene, include_floor, SLICE_RESOLUTION, height)?;
    let learned = match &run.params {
        Some(p) => {
            let (lo, hi) = (scene.bounds.min(), scene.bounds.max());
            Some(SdfSlice::learned(p, [lo.x, lo.y], [hi.x, hi.y], SLICE_RESOLUTION, height)?)
        }
        None => None,
    };
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write(out_dir.join("trajectory.csv"), trajectory_csv(&run.log).as_bytes())?;
    write(out_dir.join("events.csv"), events_csv(&run.log).as_bytes())?;
    write(out_dir.join("metrics.txt"), metrics_text(&run.metrics).as_bytes())?;
    write(out_dir.join("slice_truth.pgm"), &truth.to_pgm())?;
    if let (Some(slice), Some(params)) = (learned, &run.params) {
        write(out_dir.join("slice_learned.pgm"), &slice.to_pgm())?;
        save_checkpoint(params, &out_dir.join("field.ckpt"))?;
        let mut log = TrainingLog::new(Vec::new()).expect("writing to memory");
        for r in &run.training {
            log.record(r).expect("writing to memory");
        }
        write(out_dir.join("training.csv"), &log.into_inner())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Aabb, Primitive};

    #[test]
    fn pgm_maps_range_to_bytes() {
        let slice = SdfSlice {
            min_xy: [0.0, 0.0],
            resolution: 1.0,
            height: 0.0,
            values: Array2::from_shape_vec((1, 4), vec![-2.0, -1.0, 0.0, 1.0]).unwrap(),
        };
        let pgm = slice.to_pgm();
        let header = b"P5\n4 1\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(&pgm[header.len()..], &[0, 0, 128, 255]);
    }

    #[test]
    fn top_row_is_largest_y() {
        let s = SdfSlice::from_fn([0.0, 0.0], [1.0, 2.0], 1.0, 0.5, |p| p.y).unwrap();
        assert_eq!(s.values.dim(), (3, 2));
        assert_eq!(s.values[[0, 0]], 2.0);
        assert_eq!(s.values[[2, 1]], 0.0);
    }

    #[test]
    fn empty_trajectory_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let scene = Scene::new(
            vec![Primitive::sphere(Vec3::zeros(), 0.5)],
            None,
            Aabb::new(Vec3::repeat(-1.0), Vec3::repeat(1.0)),
        )
        .unwrap();
        let run = RunOutput {
            log: TrajectoryLog::default(),
            metrics: RunMetrics {
                scenario: "x".into(),
                arm: super::super::Arm::Parametric,
                seed: 0,
                safe: true,
                reached: false,
                halt: super::super::HaltReason::TimeCap,
                duration_s: 0.0,
                min_clearance_m: 1.0,
                infeasible_steps: 0,
                longest_infeasible_s: 0.0,
                controller_ticks: 0,
                trainer_iterations: 0,
                frames: 0,
                dropped_frames: 0,
                max_snapshot_lag: 0,
            },
            params: None,
            training: Vec::new(),
        };
        assert!(emit_outputs(&run, &scene, false, 0.0, &out).is_err());
        assert!(!out.exists());
    }
}
