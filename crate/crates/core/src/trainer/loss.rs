//! Training losses for the neural SDF and their partial derivatives with
//! respect to the predicted value `h` and input gradient `grad h`.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::sampling::SampleBatch;
use crate::error::{Error, Result};
use crate::field::{NetworkParams, Scalar};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NearSurfaceLoss {
    Huber,
    L1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EikonalMode {
    /// Penalise only when `|grad h| - 1 >= threshold`.
    OneSided,
    /// Penalise when `||grad h| - 1| >= threshold`.
    TwoSided,
}

/// Which samples carry the gradient-direction term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientScope {
    #[default]
    NearSurface,
    /// Every sample. The free-space term is flat for `0 <= h <= b`, so
    /// this is the only term that acts on a spurious surface there.
    AllPoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Free-space exponential sharpness, 1/m.
    pub free_space_beta: f64,
    /// Huber transition, meters.
    pub huber_delta: f64,
    /// Half-width of the near-surface band around the measured depth, meters.
    pub surface_band: f64,
    /// Eikonal activation threshold.
    pub eikonal_threshold: f64,
    pub surface_weight: f64,
    pub gradient_weight: f64,
    pub eikonal_weight: f64,
    pub near_surface: NearSurfaceLoss,
    pub eikonal_mode: EikonalMode,
    pub gradient_scope: GradientScope,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            free_space_beta: 5.0,
            huber_delta: 0.02,
            surface_band: 0.1,
            eikonal_threshold: 0.1,
            surface_weight: 5.0,
            gradient_weight: 0.1,
            eikonal_weight: 0.25,
            near_surface: NearSurfaceLoss::Huber,
            eikonal_mode: EikonalMode::OneSided,
            gradient_scope: GradientScope::NearSurface,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("free_space_beta", self.free_space_beta),
            ("huber_delta", self.huber_delta),
            ("surface_band", self.surface_band),
            ("eikonal_threshold", self.eikonal_threshold),
        ];
        for (name, v) in pos {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("surface_weight", self.surface_weight),
            ("gradient_weight", self.gradient_weight),
            ("eikonal_weight", self.eikonal_weight),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be non-negative")));
            }
        }
        Ok(())
    }
}

/// `max(0, exp(-beta h) - 1, h - b)`
pub fn free_space_loss(h: f64, b: f64, beta: f64) -> f64 {
    free_space_loss_and_slope(h, b, beta).0
}

fn free_space_loss_and_slope(h: f64, b: f64, beta: f64) -> (f64, f64) {
    let exp_term = (-beta * h).exp() - 1.0;
    let over = h - b;
    if exp_term <= 0.0 && over <= 0.0 {
        (0.0, 0.0)
    } else if exp_term >= over {
        (exp_term, -beta * (exp_term + 1.0))
    } else {
        (over, 1.0)
    }
}

/// Huber (quadratic inside `delta`) or L1 penalty on `h - b`.
pub fn near_surface_loss(h: f64, b: f64, delta: f64, kind: NearSurfaceLoss) -> f64 {
    near_surface_loss_and_slope(h, b, delta, kind).0
}

fn near_surface_loss_and_slope(h: f64, b: f64, delta: f64, kind: NearSurfaceLoss) -> (f64, f64) {
    let r = h - b;
    match kind {
        NearSurfaceLoss::Huber if r.abs() <= delta => (0.5 * r * r, r),
        NearSurfaceLoss::Huber => (delta * (r.abs() - 0.5 * delta), delta * r.signum()),
        NearSurfaceLoss::L1 => (r.abs(), if r == 0.0 { 0.0 } else { r.signum() }),
    }
}

/// Below this norm the predicted gradient has no usable direction.
pub const DEGENERATE_GRADIENT: f64 = 1e-12;

/// Cosine distance `1 - cos(grad h, g)`; `None` when `grad h` vanishes.
pub fn gradient_loss(grad: &Vec3, target: &Vec3) -> Option<f64> {
    gradient_loss_and_slope(grad, target).map(|(l, _)| l)
}

fn gradient_loss_and_slope(grad: &Vec3, target: &Vec3) -> Option<(f64, Vec3)> {
    let n = grad.norm();
    let gn = target.norm();
    if n <= DEGENERATE_GRADIENT || gn <= DEGENERATE_GRADIENT {
        return None;
    }
    let cos = grad.dot(target) / (n * gn);
    let slope = -(target / (n * gn) - grad * (cos / (n * n)));
    Some((1.0 - cos, slope))
}

/// Eikonal penalty `||grad h| - 1|`, applied past the threshold.
pub fn eikonal_loss(grad: &Vec3, threshold: f64, mode: EikonalMode) -> f64 {
    eikonal_loss_and_slope(grad, threshold, mode).0
}

fn eikonal_loss_and_slope(grad: &Vec3, threshold: f64, mode: EikonalMode) -> (f64, Vec3) {
    let n = grad.norm();
    let excess = n - 1.0;
    let inactive = match mode {
        EikonalMode::OneSided => excess < threshold,
        EikonalMode::TwoSided => excess.abs() < threshold,
    };
    if inactive || n == 0.0 {
        return (if inactive { 0.0 } else { 1.0 }, Vec3::zeros());
    }
    (excess.abs(), grad * (excess.signum() / n))
}

/// Per-term contributions to the batch loss. Terms are already weighted
/// and divided by the batch size, so they sum to `total`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub near_surface: f64,
    pub free_space: f64,
    pub gradient: f64,
    pub eikonal: f64,
    pub points: usize,
    pub near_points: usize,
    /// Near-surface points left out of the gradient term (coincident
    /// target or vanishing predicted gradient).
    pub skipped_gradient: usize,
}

/// Batch loss plus `dL/dh` (length N) and `dL/d grad h` (N x 3).
#[derive(Debug, Clone)]
pub struct LossPartials {
    pub breakdown: LossBreakdown,
    pub dl_dh: Array1<f64>,
    pub dl_dgrad: Array2<f64>,
}

/// Mean over the batch of the SDF term (near-surface or free-space by the
/// band rule), plus the gradient term on the points selected by
/// `gradient_scope` and the Eikonal term on all points.
pub fn total_loss(batch: &SampleBatch, h: &[f64], grad: &[Vec3], config: &LossConfig) -> Result<LossPartials> {
    let n = batch.points.len();
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if h.len() != n || grad.len() != n {
        return Err(Error::Shape("predictions do not match the batch".into()));
    }
    let inv_n = 1.0 / n as f64;
    let mut out = LossBreakdown {
        points: n,
        ..LossBreakdown::default()
    };
    let mut dl_dh = Array1::zeros(n);
    let mut dl_dgrad = Array2::zeros((n, 3));
    for (i, p) in batch.points.iter().enumerate() {
        let mut dgrad = Vec3::zeros();
        if p.near_surface {
            out.near_points += 1;
            let (l, s) = near_surface_loss_and_slope(h[i], p.bound, config.huber_delta, config.near_surface);
            out.near_surface += config.surface_weight * l * inv_n;
            dl_dh[i] = config.surface_weight * s * inv_n;
        } else {
            let (l, s) = free_space_loss_and_slope(h[i], p.bound, config.free_space_beta);
            out.free_space += l * inv_n;
            dl_dh[i] = s * inv_n;
        }
        if p.near_surface || config.gradient_scope == GradientScope::AllPoints {
            match p.gradient_target.and_then(|g| gradient_loss_and_slope(&grad[i], &g)) {
                Some((l, s)) if config.gradient_weight > 0.0 => {
                    out.gradient += config.gradient_weight * l * inv_n;
                    dgrad += s * (config.gradient_weight * inv_n);
                }
                Some(_) => {}
                None => out.skipped_gradient += 1,
            }
        }
        if config.eikonal_weight > 0.0 {
            let (l, s) = eikonal_loss_and_slope(&grad[i], config.eikonal_threshold, config.eikonal_mode);
            out.eikonal += config.eikonal_weight * l * inv_n;
            dgrad += s * (config.eikonal_weight * inv_n);
        }
        for k in 0..3 {
            dl_dgrad[[i, k]] = dgrad[k];
        }
    }
    out.total = out.near_surface + out.free_space + out.gradient + out.eikonal;
    Ok(LossPartials {
        breakdown: out,
        dl_dh,
        dl_dgrad,
    })
}

/// Total loss of `batch` under `params` and its exact gradient with
/// respect to every parameter, including the pathway through `grad h`.
pub fn loss_parameter_gradient<T: Scalar>(
    params: &NetworkParams<T>,
    batch: &SampleBatch,
    config: &LossConfig,
) -> Result<(LossBreakdown, NetworkParams<T>)> {
    if batch.points.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let pts = batch.positions::<T>();
    let eval = params.evaluate(pts.view(), true)?;
    let grads_t = eval.grad.as_ref().expect("evaluated with gradients");
    let h: Vec<f64> = eval.h.iter().map(|&x| Scalar::to_f64(x)).collect();
    let grad: Vec<Vec3> = grads_t
        .outer_iter()
        .map(|r| Vec3::new(Scalar::to_f64(r[0]), Scalar::to_f64(r[1]), Scalar::to_f64(r[2])))
        .collect();
    let partials = total_loss(batch, &h, &grad, config)?;
    let dl_dh = partials.dl_dh.mapv(T::from_f64);
    let dl_dgrad = partials.dl_dgrad.mapv(T::from_f64);
    let g = params.backward(&eval, dl_dh.view(), Some(dl_dgrad.view()))?;
    Ok((partials.breakdown, g))
}

/// Loss only (no parameter gradient), for probes and finite differences.
pub fn evaluate_loss<T: Scalar>(
    params: &NetworkParams<T>,
    batch: &SampleBatch,
    config: &LossConfig,
) -> Result<LossBreakdown> {
    let pts = batch.positions::<T>();
    let eval = params.evaluate(pts.view(), true)?;
    let g = eval.grad.as_ref().expect("evaluated with gradients");
    let h: Vec<f64> = eval.h.iter().map(|&x| Scalar::to_f64(x)).collect();
    let grad: Vec<Vec3> = g
        .outer_iter()
        .map(|r| Vec3::new(Scalar::to_f64(r[0]), Scalar::to_f64(r[1]), Scalar::to_f64(r[2])))
        .collect();
    Ok(total_loss(batch, &h, &grad, config)?.breakdown)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::sampling::SamplePoint;

    fn point(near: bool, bound: f64, target: Option<Vec3>) -> SamplePoint {
        SamplePoint {
            position: Vec3::zeros(),
            origin: Vec3::zeros(),
            direction: Vec3::x(),
            depth: 0.0,
            surface_depth: if near { 0.0 } else { 1.0 },
            bound,
            gradient_target: target,
            near_surface: near,
            frame: 0,
        }
    }

    #[test]
    fn free_space_branches() {
        assert_eq!(free_space_loss(0.5, 1.0, 5.0), 0.0);
        assert!((free_space_loss(-0.2, 1.0, 5.0) - (1f64.exp() - 1.0)).abs() < 1e-12);
        assert!((free_space_loss(-0.2, 1.0, 5.0) - 1.71828).abs() < 1e-5);
        assert_eq!(free_space_loss(2.0, 1.0, 5.0), 1.0);
    }

    #[test]
    fn huber_and_l1() {
        use NearSurfaceLoss::*;
        assert_eq!(near_surface_loss(0.3, 0.3, 0.05, Huber), 0.0);
        assert!((near_surface_loss(0.51, 0.5, 0.05, Huber) - 5e-5).abs() < 1e-15);
        assert!((near_surface_loss(0.0, 0.2, 0.05, Huber) - 0.00875).abs() < 1e-15);
        assert!((near_surface_loss(0.0, 0.2, 0.05, L1) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn cosine_distance() {
        let g = Vec3::new(0.0, 0.0, 1.0);
        assert!(gradient_loss(&Vec3::new(0.0, 0.0, 3.0), &g).unwrap().abs() < 1e-15);
        assert!((gradient_loss(&Vec3::new(0.0, 0.0, -2.0), &g).unwrap() - 2.0).abs() < 1e-15);
        assert!((gradient_loss(&Vec3::new(1.0, 0.0, 0.0), &g).unwrap() - 1.0).abs() < 1e-15);
        assert!(gradient_loss(&Vec3::zeros(), &g).is_none());
    }

    #[test]
    fn eikonal_as_printed_and_two_sided() {
        use EikonalMode::*;
        assert_eq!(eikonal_loss(&Vec3::new(1.0, 0.0, 0.0), 0.1, OneSided), 0.0);
        assert!((eikonal_loss(&Vec3::new(1.5, 0.0, 0.0), 0.1, OneSided) - 0.5).abs() < 1e-15);
        assert_eq!(eikonal_loss(&Vec3::new(0.5, 0.0, 0.0), 0.1, OneSided), 0.0);
        assert!((eikonal_loss(&Vec3::new(0.5, 0.0, 0.0), 0.1, TwoSided) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn total_loss_reductions() {
        let cfg = LossConfig {
            gradient_weight: 0.0,
            eikonal_weight: 0.0,
            ..LossConfig::default()
        };
        let batch = SampleBatch {
            points: vec![point(true, 0.05, None), point(true, -0.02, None)],
            frames: vec![0],
        };
        let l = total_loss(&batch, &[0.05, -0.02], &[Vec3::x(); 2], &cfg).unwrap();
        assert_eq!(l.breakdown.total, 0.0);

        let batch = SampleBatch {
            points: vec![point(false, 1.0, None)],
            frames: vec![0],
        };
        let l = total_loss(&batch, &[-0.2], &[Vec3::x()], &cfg).unwrap();
        assert!((l.breakdown.total - 1.71828).abs() < 1e-5);
    }

    #[test]
    fn breakdown_sums_to_total() {
        let cfg = LossConfig::default();
        let batch = SampleBatch {
            points: vec![
                point(true, 0.03, Some(Vec3::y())),
                point(false, 0.8, None),
                point(false, 0.4, None),
                point(true, -0.05, Some(Vec3::z())),
            ],
            frames: vec![0],
        };
        let h = [0.1, -0.1, 0.9, 0.0];
        let g = [
            Vec3::new(1.5, 0.2, 0.0),
            Vec3::new(0.2, 0.3, 0.9),
            Vec3::new(0.0, 2.0, 0.0),
            Vec3::new(0.1, 0.1, 0.1),
        ];
        let b = total_loss(&batch, &h, &g, &cfg).unwrap().breakdown;
        assert!((b.near_surface + b.free_space + b.gradient + b.eikonal - b.total).abs() < 1e-12);
        assert!(b.gradient > 0.0 && b.eikonal > 0.0 && b.free_space > 0.0 && b.near_surface > 0.0);
        assert_eq!(b.near_points, 2);
    }

    #[test]
    fn degenerate_gradients_are_counted() {
        let batch = SampleBatch {
            points: vec![point(true, 0.0, Some(Vec3::x())), point(true, 0.0, None)],
            frames: vec![0],
        };
        let b = total_loss(&batch, &[0.0, 0.0], &[Vec3::zeros(), Vec3::x()], &LossConfig::default())
            .unwrap()
            .breakdown;
        assert_eq!(b.skipped_gradient, 2);
    }

    #[test]
    fn gradient_scope_selects_free_space_points() {
        let batch = SampleBatch {
            points: vec![point(false, 1.0, Some(Vec3::x()))],
            frames: vec![0],
        };
        let grad = [Vec3::y()];
        let mut cfg = LossConfig {
            eikonal_weight: 0.0,
            ..LossConfig::default()
        };
        let near_only = total_loss(&batch, &[0.5], &grad, &cfg).unwrap();
        assert_eq!(near_only.breakdown.gradient, 0.0);
        assert_eq!(near_only.dl_dgrad.sum(), 0.0);
        cfg.gradient_scope = GradientScope::AllPoints;
        let all = total_loss(&batch, &[0.5], &grad, &cfg).unwrap();
        // cosine distance between orthogonal directions is 1
        assert!((all.breakdown.gradient - cfg.gradient_weight).abs() < 1e-12);
        assert_eq!(all.breakdown.free_space, 0.0);
    }
}
