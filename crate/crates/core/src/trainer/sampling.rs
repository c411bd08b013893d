//! Ray-based sampling of training points with batch-distance supervision.
//!
//! Depths along a ray are ranges along the unit ray direction; the
//! measured z-depth `D[u, v]` is converted to the same units, so the ray
//! term `|D - s|` is the Euclidean distance to the observed surface point.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::keyframes::Keyframe;
use super::nearest::PointTree;
use crate::error::{Error, Result};
use crate::field::Scalar;
use crate::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePoint {
    pub position: Vec3,
    pub origin: Vec3,
    /// Unit ray direction; `position = origin + depth * direction`.
    pub direction: Vec3,
    /// Sample range along the ray, meters.
    pub depth: f64,
    /// Range of the measured surface along the same ray, meters.
    pub surface_depth: f64,
    /// Batch-distance estimate of the signed distance.
    pub bound: f64,
    /// Unit gradient target, `None` when the nearest surface point
    /// coincides with the sample.
    pub gradient_target: Option<Vec3>,
    pub near_surface: bool,
    /// Id of the frame this sample's ray came from.
    pub frame: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub points: Vec<SamplePoint>,
    /// Ids of the frames the batch was drawn from.
    pub frames: Vec<usize>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sample positions as an `N x 3` matrix.
    pub fn positions<T: Scalar>(&self) -> Array2<T> {
        Array2::from_shape_fn((self.points.len(), 3), |(i, k)| {
            T::from_f64(self.points[i].position[k])
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub rays_per_frame: usize,
    /// Stratified samples per ray in `[min_depth, D + band]`.
    pub stratified: usize,
    /// Gaussian samples per ray around the measured surface.
    pub surface: usize,
    /// Standard deviation of surface samples as a fraction of the band.
    pub surface_std_fraction: f64,
    /// Replayed keyframes per iteration, on top of the latest frame.
    pub replay_frames: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            rays_per_frame: 24,
            stratified: 12,
            surface: 6,
            surface_std_fraction: 1.0 / 3.0,
            replay_frames: 2,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rays_per_frame == 0 || self.stratified + self.surface == 0 {
            return Err(Error::invalid("sampling needs at least one ray and one sample per ray"));
        }
        if !(self.surface_std_fraction >= 0.0 && self.surface_std_fraction.is_finite()) {
            return Err(Error::invalid("surface_std_fraction must be non-negative"));
        }
        Ok(())
    }

    pub fn samples_per_frame(&self) -> usize {
        self.rays_per_frame * (self.stratified + self.surface)
    }
}

/// `sign(D - s) * min(|D - s|, distance to the nearest batch surface point)`
pub fn batch_distance_bound(point: &SamplePoint, surface: &PointTree) -> Result<f64> {
    if surface.is_empty() {
        return Err(Error::invalid("no surface points in the batch"));
    }
    let ray = point.surface_depth - point.depth;
    let nearest = surface
        .nearest_within(&point.position, ray.abs())
        .map_or(ray.abs(), |(_, d)| d);
    Ok(if ray < 0.0 { -nearest } else { nearest })
}

/// Coincidence radius below which no gradient target is defined.
pub const COINCIDENT: f64 = 1e-6;

/// `sign(b) (xi - p*) / |xi - p*|` for the nearest batch surface point `p*`.
pub fn gradient_target(point: &SamplePoint, surface: &PointTree) -> Result<Option<Vec3>> {
    let (idx, d) = surface
        .nearest(&point.position)
        .ok_or_else(|| Error::invalid("no surface points in the batch"))?;
    if d < COINCIDENT {
        return Ok(None);
    }
    let sign = if point.surface_depth - point.depth < 0.0 { -1.0 } else { 1.0 };
    Ok(Some((point.position - surface.points()[idx]) * (sign / d)))
}

/// Draws rays from `frames` and labels every sample.
///
/// Every frame contributes `rays_per_frame` pixels drawn uniformly from its
/// valid pixels. Bounds and gradient targets use all surface points of the
/// listed frames.
pub fn sample_batch<R: Rng>(
    frames: &[&Keyframe],
    rng: &mut R,
    config: &SamplingConfig,
    band: f64,
) -> Result<SampleBatch> {
    if frames.is_empty() {
        return Err(Error::invalid("sampling needs at least one keyframe"));
    }
    let mut points = Vec::with_capacity(frames.len() * config.samples_per_frame());
    for kf in frames {
        let frame = &kf.frame;
        let origin = frame.pose.position;
        for _ in 0..config.rays_per_frame {
            let pix = kf.valid[rng.random_range(0..kf.valid.len())];
            let (u, v) = frame.pixel(pix);
            let ray = frame.world_ray(u, v);
            let scale = ray.norm();
            let direction = ray / scale;
            let surface_depth = frame.depth[pix] * scale;
            let lo = frame.intrinsics.min_depth * scale;
            let hi = (surface_depth + band).max(lo);
            let width = (hi - lo) / config.stratified.max(1) as f64;
            let mut push = |s: f64| {
                points.push(SamplePoint {
                    position: origin + direction * s,
                    origin,
                    direction,
                    depth: s,
                    surface_depth,
                    bound: 0.0,
                    gradient_target: None,
                    near_surface: (surface_depth - s).abs() < band,
                    frame: kf.id,
                });
            };
            for j in 0..config.stratified {
                let t: f64 = rng.random();
                push(lo + (j as f64 + t) * width);
            }
            let std = config.surface_std_fraction * band;
            for _ in 0..config.surface {
                let e: f64 = StandardNormal.sample(rng);
                push(surface_depth + std * e);
            }
        }
    }
    let surface: Vec<Vec3> = frames
        .iter()
        .flat_map(|kf| kf.surface_points.iter().copied())
        .collect();
    let tree = PointTree::new(surface);
    for p in &mut points {
        p.bound = batch_distance_bound(p, &tree)?;
        p.gradient_target = gradient_target(p, &tree)?;
    }
    Ok(SampleBatch {
        points,
        frames: frames.iter().map(|kf| kf.id).collect(),
    })
}
