//! Online training of the neural field from a stream of depth frames.

pub mod keyframes;
pub mod loss;
pub mod nearest;
pub mod queue;
pub mod sampling;

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use keyframes::{probe_loss, Keyframe, KeyframeConfig, KeyframeStore};
pub use loss::{
    eikonal_loss, evaluate_loss, free_space_loss, gradient_loss, loss_parameter_gradient, near_surface_loss,
    total_loss, EikonalMode, GradientScope, LossBreakdown, LossConfig, LossPartials, NearSurfaceLoss,
};
pub use nearest::PointTree;
pub use queue::DropOldestQueue;
pub use sampling::{batch_distance_bound, gradient_target, sample_batch, SampleBatch, SamplePoint, SamplingConfig};

use crate::error::{Error, Result};
use crate::field::{AdamConfig, FieldSnapshot, NetworkConfig, NetworkParams, OptimizerState, SnapshotPublisher};
use crate::scene::Aabb;
use crate::sensor::DepthFrame;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub network: NetworkConfig,
    pub loss: LossConfig,
    pub sampling: SamplingConfig,
    pub keyframes: KeyframeConfig,
    pub adam: AdamConfig,
    /// Iterations between snapshot publications.
    pub publish_every: usize,
    pub queue_capacity: usize,
    /// Added to the output bias at initialisation, meters.
    pub initial_distance: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            loss: LossConfig::default(),
            sampling: SamplingConfig::default(),
            keyframes: KeyframeConfig::default(),
            adam: AdamConfig::default(),
            publish_every: 5,
            queue_capacity: 4,
            initial_distance: 0.0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.loss.validate()?;
        self.sampling.validate()?;
        self.keyframes.validate()?;
        if self.publish_every == 0 || self.queue_capacity == 0 {
            return Err(Error::invalid("publish_every and queue_capacity must be positive"));
        }
        if !self.initial_distance.is_finite() {
            return Err(Error::invalid("initial_distance must be finite"));
        }
        Ok(())
    }
}

/// Summary of one training iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: u64,
    pub loss: LossBreakdown,
    pub keyframes: usize,
    /// Version published by this iteration, if any.
    pub published: Option<u64>,
}

/// Owns the live parameters, optimizer state and keyframe store.
#[derive(Debug)]
pub struct Trainer {
    config: TrainerConfig,
    params: NetworkParams<f32>,
    optimizer: OptimizerState<f32>,
    store: KeyframeStore,
    latest: Option<Keyframe>,
    queue: DropOldestQueue<DepthFrame>,
    rng: ChaCha8Rng,
    iteration: u64,
    next_frame_id: usize,
    region: Aabb,
    publisher: Arc<SnapshotPublisher>,
}

impl Trainer {
    pub fn new(config: TrainerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = NetworkParams::<f32>::init(config.network, seed)?;
        if let Some(out) = params.layers.last_mut() {
            out.bias[0] += config.initial_distance as f32;
        }
        let optimizer = OptimizerState::new(&params, config.adam);
        Ok(Self {
            config,
            optimizer,
            params,
            store: KeyframeStore::new(config.keyframes),
            latest: None,
            queue: DropOldestQueue::new(config.queue_capacity),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x7472_6169_6e65_7200),
            iteration: 0,
            next_frame_id: 0,
            region: Aabb::empty(),
            publisher: Arc::new(SnapshotPublisher::new()),
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn params(&self) -> &NetworkParams<f32> {
        &self.params
    }

    pub fn store(&self) -> &KeyframeStore {
        &self.store
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Bounding box of every observed surface point and camera position.
    pub fn trained_region(&self) -> &Aabb {
        &self.region
    }

    pub fn publisher(&self) -> Arc<SnapshotPublisher> {
        Arc::clone(&self.publisher)
    }

    pub fn latest_snapshot(&self) -> Option<Arc<FieldSnapshot>> {
        self.publisher.latest()
    }

    /// Frames dropped by the input queue so far.
    pub fn dropped_frames(&self) -> usize {
        self.queue.dropped()
    }

    /// Queues a frame for the next iteration. Returns false if an older
    /// frame had to be dropped.
    pub fn push_frame(&mut self, frame: DepthFrame) -> bool {
        self.queue.push(frame).is_none()
    }

    /// Moves queued frames into the keyframe store. Frames without valid
    /// pixels are skipped.
    fn ingest(&mut self) {
        while let Some(frame) = self.queue.pop() {
            let id = self.next_frame_id;
            self.next_frame_id += 1;
            let Ok(kf) = Keyframe::new(id, frame, 0.0) else {
                continue;
            };
            self.region.grow(&kf.frame.pose.position);
            for p in &kf.surface_points {
                self.region.grow(p);
            }
            self.store.admit(kf.clone(), &self.params, &mut self.rng);
            self.latest = Some(kf);
        }
    }

    /// One sample, loss, backward and optimizer step. Publishes a snapshot
    /// every `publish_every` iterations.
    pub fn train_iteration(&mut self) -> Result<IterationRecord> {
        self.ingest();
        let latest = self
            .latest
            .as_ref()
            .ok_or_else(|| Error::invalid("training needs at least one frame"))?;
        let mut frames = vec![latest];
        frames.extend(
            self.store
                .choose(self.config.sampling.replay_frames, Some(latest.id), &mut self.rng),
        );
        let batch = sample_batch(&frames, &mut self.rng, &self.config.sampling, self.config.loss.surface_band)?;
        let (loss, grad) = loss_parameter_gradient(&self.params, &batch, &self.config.loss)?;
        self.optimizer.step(&mut self.params, &grad)?;
        self.iteration += 1;
        let published = if self.iteration % self.config.publish_every as u64 == 0 {
            Some(self.publish()?.version())
        } else {
            None
        };
        Ok(IterationRecord {
            iteration: self.iteration,
            loss,
            keyframes: self.store.len(),
            published,
        })
    }

    /// Publishes the current parameters immediately.
    pub fn publish(&self) -> Result<Arc<FieldSnapshot>> {
        self.publisher.publish(&self.params, self.region)
    }
}

/// Comma-separated training log, one line per iteration.
pub struct TrainingLog<W: Write> {
    out: W,
    start: Instant,
    snapshot: u64,
}

impl<W: Write> TrainingLog<W> {
    pub const HEADER: &'static str =
        "iteration,wall_clock_s,total,near_surface,free_space,gradient,eikonal,keyframes,snapshot";

    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "{}", Self::HEADER)?;
        Ok(Self {
            out,
            start: Instant::now(),
            snapshot: 0,
        })
    }

    pub fn record(&mut self, r: &IterationRecord) -> std::io::Result<()> {
        if let Some(v) = r.published {
            self.snapshot = v;
        }
        let l = &r.loss;
        writeln!(
            self.out,
            "{},{:.4},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{},{}",
            r.iteration,
            self.start.elapsed().as_secs_f64(),
            l.total,
            l.near_surface,
            l.free_space,
            l.gradient,
            l.eikonal,
            r.keyframes,
            self.snapshot
        )
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Primitive, Scene};
    use crate::sensor::{render_depth, CameraIntrinsics, CameraPose};
    use crate::Vec3;

    fn small_config() -> TrainerConfig {
        TrainerConfig {
            network: NetworkConfig {
                hidden_width: 32,
                ..NetworkConfig::default()
            },
            sampling: SamplingConfig {
                rays_per_frame: 8,
                stratified: 4,
                surface: 2,
                ..SamplingConfig::default()
            },
            ..TrainerConfig::default()
        }
    }

    fn sphere_frame() -> DepthFrame {
        let scene = Scene::new(
            vec![Primitive::sphere(Vec3::new(2.0, 0.0, 0.0), 0.5)],
            None,
            Aabb::new(Vec3::repeat(-5.0), Vec3::repeat(5.0)),
        )
        .unwrap();
        let intr = CameraIntrinsics::with_fov(32, 24, 1.0, 0.1, 5.0);
        render_depth(&scene, &CameraPose::looking(Vec3::zeros(), 0.0, 0.0), &intr, 0.0).frame
    }

    #[test]
    fn needs_a_frame() {
        let mut t = Trainer::new(small_config(), 0).unwrap();
        assert!(t.train_iteration().is_err());
    }

    #[test]
    fn publishes_every_k_iterations() {
        let mut t = Trainer::new(small_config(), 0).unwrap();
        t.push_frame(sphere_frame());
        let published: Vec<_> = (0..10).map(|_| t.train_iteration().unwrap().published).collect();
        assert_eq!(published.iter().flatten().copied().collect::<Vec<_>>(), vec![1, 2]);
        assert!(published[4].is_some() && published[9].is_some());
        assert!(t.trained_region().contains(&Vec3::new(1.5, 0.0, 0.0)));
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let run = || {
            let mut t = Trainer::new(small_config(), 7).unwrap();
            t.push_frame(sphere_frame());
            for _ in 0..5 {
                t.train_iteration().unwrap();
            }
            t.params().clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn training_log_has_one_line_per_iteration() {
        let mut t = Trainer::new(small_config(), 0).unwrap();
        t.push_frame(sphere_frame());
        let mut log = TrainingLog::new(Vec::new()).unwrap();
        for _ in 0..6 {
            log.record(&t.train_iteration().unwrap()).unwrap();
        }
        let text = String::from_utf8(log.into_inner()).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[0], TrainingLog::<Vec<u8>>::HEADER);
        assert_eq!(lines[6].split(',').count(), 9);
        assert!(lines[6].ends_with(",1"));
    }
}
