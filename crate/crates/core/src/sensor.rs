//! Simulated posed pinhole depth camera.
//!
//! Frames are z-depth images in a right-handed camera frame (x right,
//! y down, z forward). Pixel `(u, v)` sits at column `u`, row `v`; the
//! pixel grid is stored row-major.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{Scene, SurfaceId};
use crate::{Mat3, Vec3};

/// Depth value stored in pixels without a valid measurement.
pub const INVALID_DEPTH: f64 = 0.0;

/// Sphere tracing stops once `|sdf|` drops below this, in meters.
pub const RAYCAST_TOLERANCE: f64 = 1e-4;
pub const RAYCAST_MAX_STEPS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub min_depth: f64,
    pub max_depth: f64,
}

impl Default for CameraIntrinsics {
    /// 80x60 pixels with a 60 degree horizontal field of view.
    fn default() -> Self {
        Self::with_fov(80, 60, 60f64.to_radians(), 0.1, 6.0)
    }
}

impl CameraIntrinsics {
    /// Square pixels, principal point at the image center.
    pub fn with_fov(width: usize, height: usize, hfov: f64, min_depth: f64, max_depth: f64) -> Self {
        let f = 0.5 * width as f64 / (0.5 * hfov).tan();
        Self {
            width,
            height,
            fx: f,
            fy: f,
            cx: 0.5 * (width as f64 - 1.0),
            cy: 0.5 * (height as f64 - 1.0),
            min_depth,
            max_depth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::invalid("image must be at least 8x8 pixels"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !(self.min_depth > 0.0 && self.min_depth < self.max_depth && self.max_depth.is_finite()) {
            return Err(Error::invalid("need 0 < min_depth < max_depth"));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// `K^-1 [u, v, 1]^T`: camera-frame ray with unit z component.
    pub fn unproject(&self, u: usize, v: usize) -> Vec3 {
        Vec3::new(
            (u as f64 - self.cx) / self.fx,
            (v as f64 - self.cy) / self.fy,
            1.0,
        )
    }
}

/// World-from-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub position: Vec3,
    pub rotation: Mat3,
}

impl CameraPose {
    pub fn new(position: Vec3, rotation: Mat3) -> Result<Self> {
        let pose = Self { position, rotation };
        pose.validate()?;
        Ok(pose)
    }

    pub fn identity() -> Self {
        Self {
            position: Vec3::zeros(),
            rotation: Mat3::identity(),
        }
    }

    /// Camera at `position` with its optical axis at heading `yaw` in the
    /// world xy-plane, tilted down by `pitch` radians. Image rows point
    /// towards the floor.
    pub fn looking(position: Vec3, yaw: f64, pitch: f64) -> Self {
        let forward = Vec3::new(pitch.cos() * yaw.cos(), pitch.cos() * yaw.sin(), -pitch.sin());
        let right = Vec3::new(yaw.sin(), -yaw.cos(), 0.0);
        let down = forward.cross(&right);
        Self {
            position,
            rotation: Mat3::from_columns(&[right, down, forward]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let orth = (r.transpose() * r - Mat3::identity()).abs().max();
        if !self.position.iter().all(|x| x.is_finite()) || !(orth < 1e-9) || (r.determinant() - 1.0).abs() > 1e-9
        {
            return Err(Error::invalid("camera rotation must be orthonormal with det +1"));
        }
        Ok(())
    }

    pub fn transform(&self, camera_point: &Vec3) -> Vec3 {
        self.rotation * camera_point + self.position
    }

    pub fn forward(&self) -> Vec3 {
        self.rotation.column(2).into()
    }
}

/// A posed depth image.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
    /// Row-major z-depth in meters, [`INVALID_DEPTH`] where invalid.
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
    pub timestamp: f64,
}

impl DepthFrame {
    pub fn index(&self, u: usize, v: usize) -> usize {
        v * self.intrinsics.width + u
    }

    pub fn pixel(&self, index: usize) -> (usize, usize) {
        (index % self.intrinsics.width, index / self.intrinsics.width)
    }

    pub fn depth_at(&self, u: usize, v: usize) -> Option<f64> {
        let i = self.index(u, v);
        self.valid[i].then(|| self.depth[i])
    }

    pub fn valid_indices(&self) -> Vec<usize> {
        (0..self.valid.len()).filter(|&i| self.valid[i]).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    fn invalidate(&mut self, i: usize) {
        self.valid[i] = false;
        self.depth[i] = INVALID_DEPTH;
    }

    /// World-frame ray through pixel `(u, v)`, scaled so its camera-frame
    /// z component is one. `origin + z * ray` is the point at z-depth `z`.
    pub fn world_ray(&self, u: usize, v: usize) -> Vec3 {
        self.pose.rotation * self.intrinsics.unproject(u, v)
    }
}

/// A rendered frame with the raycaster's per-pixel ground-truth labels.
#[derive(Debug, Clone)]
pub struct RenderedFrame {
    pub frame: DepthFrame,
    pub labels: Vec<Option<SurfaceId>>,
}

/// Noiseless z-depth image by sphere tracing the scene, floor included.
pub fn render_depth(
    scene: &Scene,
    pose: &CameraPose,
    intrinsics: &CameraIntrinsics,
    timestamp: f64,
) -> RenderedFrame {
    let n = intrinsics.pixel_count();
    let mut depth = vec![INVALID_DEPTH; n];
    let mut valid = vec![false; n];
    let mut labels = vec![None; n];
    for v in 0..intrinsics.height {
        for u in 0..intrinsics.width {
            let ray = pose.rotation * intrinsics.unproject(u, v);
            let scale = ray.norm();
            let dir = ray / scale;
            let hit = scene.raycast(
                &pose.position,
                &dir,
                intrinsics.max_depth * scale,
                RAYCAST_TOLERANCE,
                RAYCAST_MAX_STEPS,
            );
            if let Some(hit) = hit {
                let z = hit.range / scale;
                if z >= intrinsics.min_depth && z <= intrinsics.max_depth {
                    let i = v * intrinsics.width + u;
                    depth[i] = z;
                    valid[i] = true;
                    labels[i] = Some(hit.surface);
                }
            }
        }
    }
    RenderedFrame {
        frame: DepthFrame {
            intrinsics: *intrinsics,
            pose: *pose,
            depth,
            valid,
            timestamp,
        },
        labels,
    }
}

/// Range-dependent Gaussian depth noise, `sigma(d) = sigma0 + sigma1 * d^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthNoise {
    /// meters
    pub sigma0: f64,
    /// 1/meters
    pub sigma1: f64,
}

impl Default for DepthNoise {
    fn default() -> Self {
        Self {
            sigma0: 0.005,
            sigma1: 0.005,
        }
    }
}

impl DepthNoise {
    pub const NONE: DepthNoise = DepthNoise {
        sigma0: 0.0,
        sigma1: 0.0,
    };

    pub fn sigma(&self, depth: f64) -> f64 {
        self.sigma0 + self.sigma1 * depth * depth
    }

    pub fn is_zero(&self) -> bool {
        self.sigma0 == 0.0 && self.sigma1 == 0.0
    }
}

/// Adds seeded Gaussian noise to every valid pixel.
pub fn apply_noise(frame: &DepthFrame, noise: &DepthNoise, seed: u64) -> DepthFrame {
    let mut out = frame.clone();
    if noise.is_zero() {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..out.depth.len() {
        if out.valid[i] {
            let eps: f64 = StandardNormal.sample(&mut rng);
            out.depth[i] += noise.sigma(out.depth[i]) * eps;
        }
    }
    out
}

/// Default height tolerance for geometric floor masking, meters.
pub const FLOOR_TOLERANCE: f64 = 0.03;

/// Invalidates pixels whose back-projected point lies within `z_tol` of
/// the scene's floor plane.
pub fn mask_floor(frame: &DepthFrame, scene: &Scene, z_tol: f64) -> DepthFrame {
    let mut out = frame.clone();
    let Some(floor) = scene.floor_height else {
        return out;
    };
    for i in 0..out.depth.len() {
        if !out.valid[i] {
            continue;
        }
        let (u, v) = out.pixel(i);
        let p = out.pose.position + out.world_ray(u, v) * out.depth[i];
        if (p.z - floor).abs() <= z_tol {
            out.invalidate(i);
        }
    }
    out
}

/// World-frame surface point observed at pixel `(u, v)`.
pub fn backproject(frame: &DepthFrame, u: usize, v: usize) -> Result<Vec3> {
    if u >= frame.intrinsics.width || v >= frame.intrinsics.height {
        return Err(Error::InvalidPixel { u, v });
    }
    let d = frame.depth_at(u, v).ok_or(Error::InvalidPixel { u, v })?;
    Ok(frame
        .pose
        .transform(&(frame.intrinsics.unproject(u, v) * d)))
}

/// Writes a debug dump of the frame: `<path>` holds a 32-byte header
/// (width and height as u32, then fx, fy, cx, cy, min_depth, max_depth as
/// f32) followed by row-major f32 depths; `<path>.pose` holds the rotation
/// (row-major) and translation as 12 f32. All little-endian.
pub fn write_frame_dump(frame: &DepthFrame, path: &Path) -> Result<()> {
    let intr = &frame.intrinsics;
    let mut buf = Vec::with_capacity(32 + 4 * frame.depth.len());
    buf.extend_from_slice(&(intr.width as u32).to_le_bytes());
    buf.extend_from_slice(&(intr.height as u32).to_le_bytes());
    for x in [intr.fx, intr.fy, intr.cx, intr.cy, intr.min_depth, intr.max_depth] {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    for (d, ok) in frame.depth.iter().zip(&frame.valid) {
        let d = if *ok { *d } else { INVALID_DEPTH };
        buf.extend_from_slice(&(d as f32).to_le_bytes());
    }
    write_bytes(path, &buf)?;

    let mut pose = Vec::with_capacity(48);
    for r in 0..3 {
        for c in 0..3 {
            pose.extend_from_slice(&(frame.pose.rotation[(r, c)] as f32).to_le_bytes());
        }
    }
    for x in frame.pose.position.iter() {
        pose.extend_from_slice(&(*x as f32).to_le_bytes());
    }
    write_bytes(&pose_sidecar(path), &pose)
}

/// Reads a dump written by [`write_frame_dump`]. Zero depths are invalid.
pub fn read_frame_dump(path: &Path) -> Result<DepthFrame> {
    let bytes = read_bytes(path)?;
    let bad = |m: &str| Error::invalid(format!("{}: {m}", path.display()));
    if bytes.len() < 32 {
        return Err(bad("truncated header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f32_at = |b: &[u8], o: usize| f32::from_le_bytes(b[o..o + 4].try_into().unwrap()) as f64;
    let (width, height) = (u32_at(0), u32_at(4));
    let intrinsics = CameraIntrinsics {
        width,
        height,
        fx: f32_at(&bytes, 8),
        fy: f32_at(&bytes, 12),
        cx: f32_at(&bytes, 16),
        cy: f32_at(&bytes, 20),
        min_depth: f32_at(&bytes, 24),
        max_depth: f32_at(&bytes, 28),
    };
    if bytes.len() != 32 + 4 * width * height {
        return Err(bad("pixel payload does not match header"));
    }
    let depth: Vec<f64> = (0..width * height).map(|i| f32_at(&bytes, 32 + 4 * i)).collect();
    let valid = depth.iter().map(|d| *d != INVALID_DEPTH).collect();

    let pose_bytes = read_bytes(&pose_sidecar(path))?;
    if pose_bytes.len() != 48 {
        return Err(bad("pose sidecar must hold 12 floats"));
    }
    let p: Vec<f64> = (0..12).map(|i| f32_at(&pose_bytes, 4 * i)).collect();
    let pose = CameraPose {
        rotation: Mat3::new(p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8]),
        position: Vec3::new(p[9], p[10], p[11]),
    };
    Ok(DepthFrame {
        intrinsics,
        pose,
        depth,
        valid,
        timestamp: 0.0,
    })
}

fn pose_sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".pose");
    s.into()
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}
