//! Keyframe store with loss-driven admission and score-based eviction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::NetworkParams;
use crate::sensor::DepthFrame;
use crate::Vec3;

/// A frame retained for replay, with its valid pixels and observed
/// surface points cached.
#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub id: usize,
    pub frame: DepthFrame,
    pub valid: Vec<usize>,
    pub surface_points: Vec<Vec3>,
    /// Probe loss when the frame was offered to the store.
    pub score: f64,
}

impl Keyframe {
    pub fn new(id: usize, frame: DepthFrame, score: f64) -> Result<Self> {
        let valid = frame.valid_indices();
        if valid.is_empty() {
            return Err(Error::invalid("keyframe has no valid pixels"));
        }
        let surface_points = valid
            .iter()
            .map(|&i| {
                let (u, v) = frame.pixel(i);
                frame.pose.position + frame.world_ray(u, v) * frame.depth[i]
            })
            .collect();
        Ok(Self {
            id,
            frame,
            valid,
            surface_points,
            score,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyframeConfig {
    pub capacity: usize,
    /// Admission threshold on the probe loss, meters.
    pub admission_threshold: f64,
    pub probe_samples: usize,
}

impl Default for KeyframeConfig {
    fn default() -> Self {
        Self {
            capacity: 20,
            admission_threshold: 0.05,
            probe_samples: 200,
        }
    }
}

impl KeyframeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 || self.probe_samples == 0 {
            return Err(Error::invalid("keyframe capacity and probe count must be positive"));
        }
        if !(self.admission_threshold >= 0.0) {
            return Err(Error::invalid("admission threshold must be non-negative"));
        }
        Ok(())
    }
}

/// Mean `|h|` over randomly chosen observed surface points: how far the
/// current field is from explaining the frame's surface.
pub fn probe_loss<R: Rng>(kf: &Keyframe, params: &NetworkParams<f32>, samples: usize, rng: &mut R) -> f64 {
    let pts = ndarray::Array2::from_shape_fn((samples, 3), |(_, _)| 0.0f32);
    let mut pts = pts;
    for mut row in pts.outer_iter_mut() {
        let p = kf.surface_points[rng.random_range(0..kf.surface_points.len())];
        row[0] = p.x as f32;
        row[1] = p.y as f32;
        row[2] = p.z as f32;
    }
    let eval = params
        .evaluate(pts.view(), false)
        .expect("trainer parameters are valid");
    eval.h.iter().map(|h| h.abs() as f64).sum::<f64>() / samples as f64
}

#[derive(Debug, Clone, Default)]
pub struct KeyframeStore {
    config: KeyframeConfig,
    frames: Vec<Keyframe>,
}

impl KeyframeStore {
    pub fn new(config: KeyframeConfig) -> Self {
        Self {
            config,
            frames: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Keyframe] {
        &self.frames
    }

    pub fn config(&self) -> &KeyframeConfig {
        &self.config
    }

    /// Offers `kf` to the store. It is admitted when the store is empty or
    /// its probe loss under `params` exceeds the admission threshold. A full
    /// store then drops its lowest-scoring frame (oldest first on ties).
    pub fn admit<R: Rng>(&mut self, mut kf: Keyframe, params: &NetworkParams<f32>, rng: &mut R) -> bool {
        kf.score = probe_loss(&kf, params, self.config.probe_samples, rng);
        if !self.frames.is_empty() && kf.score <= self.config.admission_threshold {
            return false;
        }
        if self.frames.len() >= self.config.capacity {
            let worst = self
                .frames
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.score.total_cmp(&b.1.score))
                .map(|(i, _)| i)
                .expect("store is full");
            self.frames.remove(worst);
        }
        self.frames.push(kf);
        true
    }

    /// Up to `count` distinct stored frames other than `exclude`, uniformly
    /// at random.
    pub fn choose<R: Rng>(&self, count: usize, exclude: Option<usize>, rng: &mut R) -> Vec<&Keyframe> {
        let pool: Vec<&Keyframe> = self.frames.iter().filter(|k| Some(k.id) != exclude).collect();
        let mut picks = rand::seq::index::sample(rng, pool.len(), count.min(pool.len())).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|i| pool[i]).collect()
    }
}
