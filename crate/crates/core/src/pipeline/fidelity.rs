//! Offline training on a fixed frame sequence and field error against the
//! ground-truth scene.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::NetworkParams;
use crate::scene::Scene;
use crate::sensor::DepthFrame;
use crate::trainer::{Trainer, TrainerConfig};

/// Trains on `frames`, feeding frame `k` before iteration `k * frame_interval`.
pub fn train_offline(
    config: TrainerConfig,
    frames: &[DepthFrame],
    iterations: usize,
    frame_interval: usize,
    seed: u64,
) -> Result<Trainer> {
    if frames.is_empty() || frame_interval == 0 {
        return Err(Error::invalid("need at least one frame and a positive interval"));
    }
    let mut trainer = Trainer::new(config, seed)?;
    for it in 0..iterations {
        if it % frame_interval == 0 {
            if let Some(f) = frames.get(it / frame_interval) {
                trainer.push_frame(f.clone());
            }
        }
        trainer.train_iteration()?;
    }
    Ok(trainer)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldError {
    /// Mean `|h - sdf|` over points on observed rays.
    pub mae: f64,
    /// Mean `| |grad h| - 1 |` over the same points.
    pub eikonal: f64,
    /// Mean `|h|` at the observed surface points.
    pub surface_mae: f64,
    pub samples: usize,
}

/// Error of `params` over `per_frame` random valid pixels of each frame.
/// Free-space points are drawn uniformly along the ray between the minimum
/// depth and the measured depth; the surface term uses the measured point.
/// Pass noiseless frames so the measured points lie on the true surface.
pub fn field_error(
    params: &NetworkParams<f32>,
    frames: &[DepthFrame],
    scene: &Scene,
    include_floor: bool,
    per_frame: usize,
    seed: u64,
) -> Result<FieldError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut along = Vec::new();
    let mut surface = Vec::new();
    for f in frames {
        let valid = f.valid_indices();
        if valid.is_empty() {
            continue;
        }
        for _ in 0..per_frame {
            let i = valid[rng.random_range(0..valid.len())];
            let (u, v) = f.pixel(i);
            let ray = f.world_ray(u, v);
            let d = f.depth[i];
            let s = rng.random_range(f.intrinsics.min_depth..d);
            along.push(f.pose.position + ray * s);
            surface.push(f.pose.position + ray * d);
        }
    }
    if along.is_empty() {
        return Err(Error::invalid("frames have no valid pixels"));
    }
    let to_array = |pts: &[crate::Vec3]| Array2::from_shape_fn((pts.len(), 3), |(i, k)| pts[i][k] as f32);
    let eval = params.evaluate(to_array(&along).view(), true)?;
    let grad = eval.grad.as_ref().expect("evaluated with gradients");
    let mut mae = 0.0;
    let mut eik = 0.0;
    for (i, p) in along.iter().enumerate() {
        let truth = scene.sdf(p, include_floor).distance;
        mae += (eval.h[i] as f64 - truth).abs();
        let g = (0..3).map(|k| (grad[[i, k]] as f64).powi(2)).sum::<f64>().sqrt();
        eik += (g - 1.0).abs();
    }
    let on_surface = params.evaluate(to_array(&surface).view(), false)?;
    let surface_mae = on_surface.h.iter().map(|h| (*h as f64).abs()).sum::<f64>() / surface.len() as f64;
    let n = along.len() as f64;
    Ok(FieldError {
        mae: mae / n,
        eikonal: eik / n,
        surface_mae,
        samples: along.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Aabb, Primitive};
    use crate::sensor::{render_depth, CameraIntrinsics, CameraPose};
    use crate::Vec3;

    #[test]
    fn exact_plane_field_has_zero_error() {
        // h(x) = 2 - x is the distance to the plane x = 2
        let scene = Scene::new(
            vec![Primitive::plane(Vec3::new(-1.0, 0.0, 0.0), -2.0)],
            None,
            Aabb::new(Vec3::repeat(-3.0), Vec3::repeat(3.0)),
        )
        .unwrap();
        let frame = render_depth(&scene, &CameraPose::looking(Vec3::zeros(), 0.0, 0.0), &CameraIntrinsics::default(), 0.0).frame;
        let cfg = crate::field::NetworkConfig {
            hidden_width: 4,
            ..Default::default()
        };
        let mut p = NetworkParams::<f32>::zeros(cfg);
        // the raw coordinates lead the encoding, so unit 0 can carry
        // 10 - x through every layer in the linear part of Softplus
        let last = p.layers.len() - 1;
        p.layers[0].weight[[0, 0]] = -1.0;
        p.layers[0].bias[0] = 10.0;
        for l in 1..last {
            p.layers[l].weight[[0, 0]] = 1.0;
        }
        p.layers[last].weight[[0, 0]] = 1.0;
        p.layers[last].bias[0] = 2.0 - 10.0;
        let err = field_error(&p, &[frame], &scene, false, 50, 0).unwrap();
        assert!(err.mae < 1e-3, "{err:?}");
        assert!(err.eikonal < 1e-3, "{err:?}");
        assert!(err.surface_mae < 1e-3, "{err:?}");
    }
}
