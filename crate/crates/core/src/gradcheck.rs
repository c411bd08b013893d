//! Central finite-difference checks of the network's input gradients and
//! of the training loss's parameter gradients.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::field::{Encoding, NetworkConfig, NetworkParams};
use crate::trainer::{evaluate_loss, loss_parameter_gradient, EikonalMode, GradientScope, LossConfig, SampleBatch, SamplePoint};
use crate::Vec3;

/// `|a - b| / max(|a|, |b|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub checked: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_relative_error < self.tolerance
    }
}

/// Largest relative error between `grad h` and central differences of `h`
/// over `points`.
pub fn input_gradient_error(params: &NetworkParams<f64>, points: &[Vec3], step: f64, floor: f64) -> Result<f64> {
    let mut worst = 0.0f64;
    for p in points {
        let (_, g) = params.value_and_gradient([p.x, p.y, p.z])?;
        for k in 0..3 {
            let mut hi = [p.x, p.y, p.z];
            let mut lo = hi;
            hi[k] += step;
            lo[k] -= step;
            let fd = (params.forward(hi)? - params.forward(lo)?) / (2.0 * step);
            worst = worst.max(relative_error(g[k], fd, floor));
        }
    }
    Ok(worst)
}

/// Largest relative error between the analytic loss gradient and central
/// differences of the loss, over the flat parameter `indices`.
pub fn parameter_gradient_error(
    params: &NetworkParams<f64>,
    batch: &SampleBatch,
    config: &LossConfig,
    indices: &[usize],
    step: f64,
    floor: f64,
) -> Result<f64> {
    let (_, grad) = loss_parameter_gradient(params, batch, config)?;
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for &i in indices {
        let x = params.get_flat(i);
        probe.set_flat(i, x + step);
        let up = evaluate_loss(&probe, batch, config)?.total;
        probe.set_flat(i, x - step);
        let down = evaluate_loss(&probe, batch, config)?.total;
        probe.set_flat(i, x);
        let fd = (up - down) / (2.0 * step);
        worst = worst.max(relative_error(grad.get_flat(i), fd, floor));
    }
    Ok(worst)
}

/// A batch at `positions` whose supervision keeps every loss term on one
/// smooth branch, so that finite differences do not straddle a kink.
///
/// Near-surface targets sit inside the quadratic Huber region, free-space
/// bounds select the exponential branch for negative predictions and the
/// over-shoot branch otherwise, and the Eikonal threshold is placed below
/// the smallest residual so every point is penalised.
pub fn smooth_batch(
    params: &NetworkParams<f64>,
    positions: &[Vec3],
    config: &LossConfig,
    rng: &mut impl Rng,
) -> Result<(SampleBatch, LossConfig)> {
    let pts = Array2::from_shape_fn((positions.len(), 3), |(i, k)| positions[i][k]);
    let eval = params.evaluate(pts.view(), true)?;
    let grads = eval.grad.as_ref().expect("evaluated with gradients");
    let mut points = Vec::with_capacity(positions.len());
    let mut min_residual = f64::INFINITY;
    for (i, p) in positions.iter().enumerate() {
        let h = eval.h[i];
        let g = Vec3::new(grads[[i, 0]], grads[[i, 1]], grads[[i, 2]]);
        min_residual = min_residual.min((g.norm() - 1.0).abs());
        let near = i % 2 == 0 && h.abs() > 1e-3;
        let bound = if near {
            h + config.huber_delta * 0.25
        } else if h < -1e-3 {
            h + 0.5
        } else {
            h - 0.3 - (-config.free_space_beta * h).exp()
        };
        let target = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.5).normalize();
        points.push(SamplePoint {
            position: *p,
            origin: Vec3::zeros(),
            direction: Vec3::x(),
            depth: 0.0,
            surface_depth: if near { 0.0 } else { 1.0 },
            bound,
            gradient_target: Some(target),
            near_surface: near,
            frame: 0,
        });
    }
    let mut cfg = *config;
    cfg.eikonal_mode = EikonalMode::TwoSided;
    cfg.gradient_scope = GradientScope::AllPoints;
    cfg.eikonal_threshold = (min_residual * 0.5).max(1e-12);
    Ok((SampleBatch { points, frames: vec![0] }, cfg))
}

/// One parameter index per tensor plus `extra` random ones.
fn parameter_indices(params: &NetworkParams<f64>, extra: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut indices = Vec::new();
    let mut offset = 0;
    for t in params.tensors() {
        indices.push(offset + rng.random_range(0..t.len()));
        offset += t.len();
    }
    let total = params.parameter_count();
    indices.extend((0..extra).map(|_| rng.random_range(0..total)));
    indices
}

fn random_points(n: usize, rng: &mut impl Rng) -> Vec<Vec3> {
    (0..n)
        .map(|_| Vec3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-0.5..1.0)))
        .collect()
}

/// Two hidden units per layer and a single encoding frequency.
pub fn toy_config() -> NetworkConfig {
    NetworkConfig {
        encoding: Encoding {
            num_frequencies: 1,
            ..Encoding::default()
        },
        hidden_width: 2,
        softplus_beta: 5.0,
        ..NetworkConfig::default()
    }
}

/// Runs the input- and parameter-gradient suites on a toy network and on
/// the full-size network, all in double precision.
pub fn run_suites(seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    let loss = LossConfig::default();
    for (label, config, points, extra, tolerance) in [
        ("toy", toy_config(), 50, 200, 1e-4),
        ("full", NetworkConfig::default(), 100, 60, 1e-3),
    ] {
        let params = NetworkParams::<f64>::init(config, rng.random())?;
        let xs = random_points(points, &mut rng);
        reports.push(CheckReport {
            name: format!("{label} input gradient"),
            checked: xs.len() * 3,
            max_relative_error: input_gradient_error(&params, &xs, 1e-6, 1e-7)?,
            tolerance,
        });
        let (batch, cfg) = smooth_batch(&params, &xs, &loss, &mut rng)?;
        let indices = parameter_indices(&params, extra, &mut rng);
        reports.push(CheckReport {
            name: format!("{label} loss parameter gradient"),
            checked: indices.len(),
            max_relative_error: parameter_gradient_error(&params, &batch, &cfg, &indices, 1e-6, 1e-7)?,
            tolerance,
        });
    }
    Ok(reports)
}
