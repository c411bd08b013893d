//! Shifted-unicycle kinematics, go-to-goal control and the control barrier
//! function safety filter.
//!
//! The state tracks a point of interest a distance `a` ahead of the wheel
//! axis, which makes its planar velocity depend on both inputs:
//!
//! ```text
//! [px_dot]   [cos th  -a sin th] [v]
//! [py_dot] = [sin th   a cos th] [w]
//! ```
//!
//! A barrier `h(p) >= 0` stays non-negative when every command satisfies
//! `grad h . p_dot >= -alpha(h)`, which is linear in `(v, w)`.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub px: f64,
    pub py: f64,
    /// Heading in radians, wrapped to `(-pi, pi]`.
    pub theta: f64,
}

impl RobotState {
    pub fn new(px: f64, py: f64, theta: f64) -> Self {
        Self {
            px,
            py,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.px, self.py)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.px.is_finite() && self.py.is_finite() && self.theta.is_finite()) {
            return Err(Error::invalid("robot state must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// Forward speed, m/s.
    pub v: f64,
    /// Turn rate, rad/s.
    pub w: f64,
}

impl ControlInput {
    pub const STOP: ControlInput = ControlInput { v: 0.0, w: 0.0 };

    pub fn new(v: f64, w: f64) -> Self {
        Self { v, w }
    }

    fn vector(&self) -> Vector2<f64> {
        Vector2::new(self.v, self.w)
    }

    fn from_vector(u: Vector2<f64>) -> Self {
        Self { v: u.x, w: u.y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorLimits {
    pub v_min: f64,
    pub v_max: f64,
    pub w_max: f64,
}

impl Default for ActuatorLimits {
    fn default() -> Self {
        Self {
            v_min: -0.2,
            v_max: 1.0,
            w_max: 2.0,
        }
    }
}

impl ActuatorLimits {
    pub const UNBOUNDED: ActuatorLimits = ActuatorLimits {
        v_min: f64::NEG_INFINITY,
        v_max: f64::INFINITY,
        w_max: f64::INFINITY,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.v_min <= 0.0 && self.v_max >= 0.0 && self.w_max >= 0.0) {
            return Err(Error::invalid("actuator limits must contain the zero command"));
        }
        Ok(())
    }

    pub fn clamp(&self, u: ControlInput) -> ControlInput {
        ControlInput {
            v: u.v.clamp(self.v_min, self.v_max),
            w: u.w.clamp(-self.w_max, self.w_max),
        }
    }

    fn lower(&self) -> Vector2<f64> {
        Vector2::new(self.v_min, -self.w_max)
    }

    fn upper(&self) -> Vector2<f64> {
        Vector2::new(self.v_max, self.w_max)
    }
}

/// Extended class-K function applied to the barrier value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlphaFunction {
    /// `alpha(h) = gain * h`, gain in 1/s.
    Linear { gain: f64 },
}

impl Default for AlphaFunction {
    fn default() -> Self {
        AlphaFunction::Linear { gain: 1.0 }
    }
}

impl AlphaFunction {
    pub fn validate(&self) -> Result<()> {
        match self {
            AlphaFunction::Linear { gain } if gain.is_finite() && *gain > 0.0 => Ok(()),
            AlphaFunction::Linear { .. } => Err(Error::invalid("alpha gain must be positive")),
        }
    }

    pub fn eval(&self, h: f64) -> f64 {
        match self {
            AlphaFunction::Linear { gain } => gain * h,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierSource {
    Neural,
    Parametric,
}

/// Barrier value and planar gradient at the robot's point of interest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierQuery {
    /// Distance minus `margin`, meters.
    pub h: f64,
    /// x and y components of the distance gradient.
    pub gradient: Vector2<f64>,
    pub source: BarrierSource,
    pub margin: f64,
}

impl BarrierQuery {
    /// Builds a query from a raw distance and 3-d gradient. The vertical
    /// gradient component is dropped since the robot moves in the plane.
    pub fn new(distance: f64, gradient: Vec3, source: BarrierSource, margin: f64) -> Result<Self> {
        if !(margin >= 0.0 && margin.is_finite()) {
            return Err(Error::invalid("safety margin must be non-negative"));
        }
        if !(distance.is_finite() && gradient.iter().all(|g| g.is_finite())) {
            return Err(Error::invalid("barrier value and gradient must be finite"));
        }
        Ok(Self {
            h: distance - margin,
            gradient: Vector2::new(gradient.x, gradient.y),
            source,
            margin,
        })
    }
}

/// Position block of the shifted-unicycle input matrix.
fn input_matrix(theta: f64, a: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -a * s, s, a * c)
}

/// `(px_dot, py_dot, theta_dot)` of the point of interest.
pub fn shifted_unicycle_derivative(state: &RobotState, u: &ControlInput, a: f64) -> [f64; 3] {
    let p = input_matrix(state.theta, a) * u.vector();
    [p.x, p.y, u.w]
}

/// One explicit Euler step of the shifted unicycle.
pub fn integrate(state: &RobotState, u: &ControlInput, dt: f64, a: f64) -> RobotState {
    let d = shifted_unicycle_derivative(state, u, a);
    RobotState::new(state.px + dt * d[0], state.py + dt * d[1], state.theta + dt * d[2])
}

/// Drives at `speed` while turning toward the goal at `psi / dt`, where
/// `psi` is the heading error. Returns the zero command within `tolerance`
/// of the goal.
pub fn nominal_control(
    state: &RobotState,
    goal: &Vector2<f64>,
    dt: f64,
    speed: f64,
    tolerance: f64,
    limits: &ActuatorLimits,
) -> ControlInput {
    let to_goal = goal - state.position();
    if to_goal.norm() <= tolerance {
        return ControlInput::STOP;
    }
    let psi = wrap_angle(to_goal.y.atan2(to_goal.x) - state.theta);
    limits.clamp(ControlInput::new(speed, psi / dt))
}

/// Commands the point of interest to move toward the goal at `speed`,
/// inverting the input matrix: `u = G(theta)^-1 * speed * e_goal`.
/// Returns the zero command within `tolerance` of the goal.
pub fn point_velocity_control(
    state: &RobotState,
    goal: &Vector2<f64>,
    speed: f64,
    tolerance: f64,
    a: f64,
    limits: &ActuatorLimits,
) -> ControlInput {
    let to_goal = goal - state.position();
    let dist = to_goal.norm();
    if dist <= tolerance {
        return ControlInput::STOP;
    }
    let desired = to_goal * (speed / dist);
    let inv = input_matrix(state.theta, a).try_inverse().expect("shift is positive");
    limits.clamp(ControlInput::from_vector(inv * desired))
}

/// Barrier constraint `c . u >= d` with `c = G(theta)^T grad h` and
/// `d = -alpha(h)`.
pub fn cbf_constraint(state: &RobotState, query: &BarrierQuery, a: f64, alpha: &AlphaFunction) -> (Vector2<f64>, f64) {
    let c = input_matrix(state.theta, a).transpose() * query.gradient;
    (c, -alpha.eval(query.h))
}

/// Norm below which the constraint row is treated as vanished.
pub const DEGENERATE_CONSTRAINT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterOutput {
    pub u: ControlInput,
    /// The barrier constraint changed the command.
    pub active: bool,
    /// No admissible command exists; `u` is the safe stop.
    pub infeasible: bool,
}

/// The command closest to `u_nom` among those within `limits` that satisfy
/// `c . u >= d`.
///
/// Without active limits this is the closed-form projection
/// `u_nom + (d - c . u_nom) / |c|^2 c`. When that leaves the box, the
/// minimiser lies on the constraint line, clipped to the box. When the line
/// misses the box, or `c` vanishes while the constraint is violated, the
/// result is the stop command flagged infeasible.
pub fn cbf_qp_filter(u_nom: &ControlInput, c: &Vector2<f64>, d: f64, limits: &ActuatorLimits) -> FilterOutput {
    let boxed = limits.clamp(*u_nom);
    if c.dot(&boxed.vector()) >= d {
        return FilterOutput {
            u: boxed,
            active: false,
            infeasible: false,
        };
    }
    let stop = FilterOutput {
        u: ControlInput::STOP,
        active: true,
        infeasible: true,
    };
    let c2 = c.norm_squared();
    if c2.sqrt() < DEGENERATE_CONSTRAINT {
        return stop;
    }
    let un = u_nom.vector();
    let projected = un + c * ((d - c.dot(&un)) / c2);
    // points on the line: projected + t * dir; the objective grows with |t|
    let dir = Vector2::new(-c.y, c.x);
    let (lo, hi) = (limits.lower(), limits.upper());
    let (mut t_lo, mut t_hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..2 {
        if dir[k] == 0.0 {
            if projected[k] < lo[k] || projected[k] > hi[k] {
                return stop;
            }
        } else {
            let a = (lo[k] - projected[k]) / dir[k];
            let b = (hi[k] - projected[k]) / dir[k];
            t_lo = t_lo.max(a.min(b));
            t_hi = t_hi.min(a.max(b));
        }
    }
    if t_lo > t_hi {
        return stop;
    }
    let t = 0.0f64.clamp(t_lo, t_hi);
    let u = if t == 0.0 { projected } else { projected + dir * t };
    FilterOutput {
        u: ControlInput::from_vector(u),
        active: true,
        infeasible: false,
    }
}

/// [`cbf_qp_filter`] under the weighted objective
/// `(v - v_nom)^2 + a^2 (w - w_nom)^2`, which is the squared velocity
/// change of the point of interest.
pub fn cbf_qp_filter_point(
    u_nom: &ControlInput,
    c: &Vector2<f64>,
    d: f64,
    limits: &ActuatorLimits,
    a: f64,
) -> FilterOutput {
    let scaled = ActuatorLimits {
        w_max: limits.w_max * a,
        ..*limits
    };
    let out = cbf_qp_filter(
        &ControlInput::new(u_nom.v, u_nom.w * a),
        &Vector2::new(c.x, c.y / a),
        d,
        &scaled,
    );
    FilterOutput {
        u: ControlInput::new(out.u.v, out.u.w / a),
        ..out
    }
}

/// How the nominal command is formed and which norm the filter minimises.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Steering {
    /// [`point_velocity_control`] filtered by [`cbf_qp_filter_point`].
    #[default]
    PointVelocity,
    /// [`nominal_control`] filtered by [`cbf_qp_filter`].
    HeadingRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Distance of the point of interest ahead of the wheel axis, meters.
    pub shift: f64,
    /// Nominal forward speed, m/s.
    pub speed: f64,
    pub goal_tolerance: f64,
    /// Control period, seconds.
    pub period: f64,
    /// Subtracted from the distance before filtering, meters.
    pub margin: f64,
    pub alpha: AlphaFunction,
    pub limits: ActuatorLimits,
    pub steering: Steering,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            shift: 0.2,
            speed: 0.5,
            goal_tolerance: 0.1,
            period: 0.05,
            margin: 0.35,
            alpha: AlphaFunction::default(),
            limits: ActuatorLimits::default(),
            steering: Steering::default(),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("shift", self.shift),
            ("speed", self.speed),
            ("goal_tolerance", self.goal_tolerance),
            ("period", self.period),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::invalid("margin must be non-negative"));
        }
        self.alpha.validate()?;
        self.limits.validate()
    }
}

/// Result of one controller tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlStep {
    pub nominal: ControlInput,
    pub filtered: FilterOutput,
}

/// Nominal command followed by the barrier filter.
pub fn control_step(
    config: &ControllerConfig,
    state: &RobotState,
    goal: &Vector2<f64>,
    query: &BarrierQuery,
) -> ControlStep {
    let nominal = nominal_for(config, state, goal);
    let (c, d) = cbf_constraint(state, query, config.shift, &config.alpha);
    let filtered = match config.steering {
        Steering::PointVelocity => cbf_qp_filter_point(&nominal, &c, d, &config.limits, config.shift),
        Steering::HeadingRate => cbf_qp_filter(&nominal, &c, d, &config.limits),
    };
    ControlStep { nominal, filtered }
}

/// Unfiltered command under the configured steering.
pub fn nominal_for(config: &ControllerConfig, state: &RobotState, goal: &Vector2<f64>) -> ControlInput {
    match config.steering {
        Steering::PointVelocity => point_velocity_control(
            state,
            goal,
            config.speed,
            config.goal_tolerance,
            config.shift,
            &config.limits,
        ),
        Steering::HeadingRate => nominal_control(
            state,
            goal,
            config.period,
            config.speed,
            config.goal_tolerance,
            &config.limits,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: [f64; 3], b: [f64; 3]) -> bool {
        a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn derivative_examples() {
        let s = RobotState::new(0.0, 0.0, 0.0);
        assert!(close(shifted_unicycle_derivative(&s, &ControlInput::new(1.0, 0.0), 0.1), [1.0, 0.0, 0.0]));
        assert!(close(shifted_unicycle_derivative(&s, &ControlInput::new(0.0, 1.0), 0.1), [0.0, 0.1, 1.0]));
        let up = RobotState::new(0.0, 0.0, PI / 2.0);
        assert!(close(shifted_unicycle_derivative(&up, &ControlInput::new(1.0, 0.0), 0.1), [0.0, 1.0, 0.0]));
    }

    #[test]
    fn nominal_examples() {
        let lim = ActuatorLimits::default();
        let s = RobotState::new(0.0, 0.0, 0.0);
        let u = nominal_control(&s, &Vector2::new(1.0, 0.0), 0.05, 0.5, 0.1, &lim);
        assert_eq!(u, ControlInput::new(0.5, 0.0));
        let u = nominal_control(&s, &Vector2::new(0.0, 1.0), 0.05, 0.5, 0.1, &lim);
        assert_eq!(u, ControlInput::new(0.5, 2.0));
        let raw = nominal_control(&s, &Vector2::new(0.0, 1.0), 0.05, 0.5, 0.1, &ActuatorLimits::UNBOUNDED);
        assert!((raw.w - PI / 2.0 / 0.05).abs() < 1e-12);
        assert_eq!(nominal_control(&s, &Vector2::zeros(), 0.05, 0.5, 0.1, &lim), ControlInput::STOP);
    }

    #[test]
    fn point_velocity_moves_the_point_toward_the_goal() {
        let lim = ActuatorLimits::UNBOUNDED;
        let s = RobotState::new(0.0, 0.0, 0.3);
        let goal = Vector2::new(0.0, 2.0);
        let u = point_velocity_control(&s, &goal, 0.5, 0.1, 0.2, &lim);
        let d = shifted_unicycle_derivative(&s, &u, 0.2);
        assert!((d[0]).abs() < 1e-12 && (d[1] - 0.5).abs() < 1e-12);
        let ahead = point_velocity_control(&RobotState::new(0.0, 0.0, 0.0), &Vector2::new(1.0, 0.0), 0.5, 0.1, 0.2, &lim);
        assert_eq!(ahead, ControlInput::new(0.5, 0.0));
        assert_eq!(point_velocity_control(&s, &Vector2::zeros(), 0.5, 0.1, 0.2, &lim), ControlInput::STOP);
    }

    #[test]
    fn point_filter_minimises_the_weighted_objective() {
        // brute force over a fine grid of the constraint line within the box
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let lim = ActuatorLimits::default();
        let a = 0.2;
        for _ in 0..200 {
            let un = ControlInput::new(rng.random_range(-0.5..1.2), rng.random_range(-3.0..3.0));
            let c = Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-0.2..0.2));
            let d = rng.random_range(-0.5..0.5);
            let out = cbf_qp_filter_point(&un, &c, d, &lim, a);
            let cost = |u: &ControlInput| (u.v - un.v).powi(2) + a * a * (u.w - un.w).powi(2);
            if out.infeasible {
                continue;
            }
            assert!(c.dot(&out.u.vector()) >= d - 1e-12);
            assert!(out.u.v >= lim.v_min - 1e-12 && out.u.v <= lim.v_max + 1e-12 && out.u.w.abs() <= lim.w_max + 1e-12);
            let mut best = f64::INFINITY;
            let n = 400;
            for i in 0..=n {
                for j in 0..=n {
                    let u = ControlInput::new(
                        lim.v_min + (lim.v_max - lim.v_min) * i as f64 / n as f64,
                        -lim.w_max + 2.0 * lim.w_max * j as f64 / n as f64,
                    );
                    if c.dot(&u.vector()) >= d {
                        best = best.min(cost(&u));
                    }
                }
            }
            assert!(cost(&out.u) <= best + 1e-12, "{} > {best}", cost(&out.u));
        }
    }

    #[test]
    fn point_steering_slides_past_an_offset_obstacle() {
        // disc of radius 0.5 centred just off the straight line to the goal
        let cfg = ControllerConfig::default();
        let centre = Vector2::new(1.5, 0.1);
        let goal = Vector2::new(3.0, 0.0);
        let mut s = RobotState::new(0.0, 0.0, 0.0);
        let mut reached = false;
        for _ in 0..600 {
            let r = s.position() - centre;
            let g = r / r.norm();
            let q = BarrierQuery::new(r.norm() - 0.5, Vec3::new(g.x, g.y, 0.0), BarrierSource::Parametric, cfg.margin).unwrap();
            let step = control_step(&cfg, &s, &goal, &q);
            s = integrate(&s, &step.filtered.u, cfg.period, cfg.shift);
            assert!((s.position() - centre).norm() > 0.5);
            if (s.position() - goal).norm() <= cfg.goal_tolerance {
                reached = true;
                break;
            }
        }
        assert!(reached, "{s:?}");
    }

    #[test]
    fn constraint_examples() {
        let s = RobotState::new(0.0, 0.0, 0.0);
        let alpha = AlphaFunction::default();
        let q = |g: Vec3, h: f64| BarrierQuery::new(h, g, BarrierSource::Parametric, 0.0).unwrap();
        let (c, _) = cbf_constraint(&s, &q(Vec3::x(), 1.0), 0.1, &alpha);
        assert!((c - Vector2::new(1.0, 0.0)).norm() < 1e-15);
        let (c, _) = cbf_constraint(&s, &q(Vec3::y(), 1.0), 0.1, &alpha);
        assert!((c - Vector2::new(0.0, 0.1)).norm() < 1e-15);
        let (_, d) = cbf_constraint(&s, &q(Vec3::x(), 2.0), 0.1, &alpha);
        assert_eq!(d, -2.0);
    }

    #[test]
    fn margin_is_subtracted_and_z_dropped() {
        let q = BarrierQuery::new(1.0, Vec3::new(0.6, 0.0, 0.8), BarrierSource::Neural, 0.35).unwrap();
        assert!((q.h - 0.65).abs() < 1e-15);
        assert_eq!(q.gradient, Vector2::new(0.6, 0.0));
        assert!(BarrierQuery::new(1.0, Vec3::x(), BarrierSource::Neural, -0.1).is_err());
    }

    #[test]
    fn filter_examples() {
        let lim = ActuatorLimits::UNBOUNDED;
        let u = ControlInput::new(0.4, -0.3);
        let out = cbf_qp_filter(&u, &Vector2::new(1.0, 0.0), 0.0, &lim);
        assert_eq!(out.u, u);
        assert!(!out.active);
        let out = cbf_qp_filter(&ControlInput::new(1.0, 0.0), &Vector2::new(0.0, 1.0), 0.3, &lim);
        assert!((out.u.v - 1.0).abs() < 1e-15 && (out.u.w - 0.3).abs() < 1e-15);
        let out = cbf_qp_filter(&ControlInput::STOP, &Vector2::new(1.0, 1.0), 2.0, &lim);
        assert!((out.u.v - 1.0).abs() < 1e-15 && (out.u.w - 1.0).abs() < 1e-15);
    }

    #[test]
    fn vanished_gradient_stops() {
        let out = cbf_qp_filter(&ControlInput::new(0.5, 0.0), &Vector2::zeros(), 0.1, &ActuatorLimits::default());
        assert!(out.infeasible);
        assert_eq!(out.u, ControlInput::STOP);
    }

    #[test]
    fn unreachable_constraint_stops() {
        // needs v >= 2 but v_max = 1
        let out = cbf_qp_filter(&ControlInput::new(0.5, 0.0), &Vector2::new(1.0, 0.0), 2.0, &ActuatorLimits::default());
        assert!(out.infeasible);
    }

    #[test]
    fn clamped_solution_slides_along_the_line() {
        // projection of (1, 0) onto v + w >= 3 is (2, 1), outside v <= 1;
        // best admissible point on the line is (1, 2)
        let out = cbf_qp_filter(&ControlInput::new(1.0, 0.0), &Vector2::new(1.0, 1.0), 3.0, &ActuatorLimits::default());
        assert!(!out.infeasible);
        assert!((out.u.v - 1.0).abs() < 1e-12 && (out.u.w - 2.0).abs() < 1e-12);
    }

    #[test]
    fn euler_examples() {
        let s = RobotState::new(0.3, -0.2, 1.0);
        assert_eq!(integrate(&s, &ControlInput::STOP, 0.05, 0.2), s);
        let s = RobotState::new(0.0, 0.0, 0.0);
        let n = integrate(&s, &ControlInput::new(1.0, 0.0), 0.05, 0.2);
        assert!((n.px - 0.05).abs() < 1e-15 && n.py == 0.0);
    }

    #[test]
    fn euler_is_first_order() {
        let u = ControlInput::new(0.7, 1.3);
        let rollout = |dt: f64| {
            let mut s = RobotState::new(0.0, 0.0, 0.2);
            for _ in 0..(1.0 / dt).round() as usize {
                s = integrate(&s, &u, dt, 0.2);
            }
            s
        };
        let reference = rollout(1e-5);
        let err = |dt: f64| {
            let s = rollout(dt);
            ((s.px - reference.px).powi(2) + (s.py - reference.py).powi(2)).sqrt()
        };
        let (e1, e2, e3) = (err(0.02), err(0.01), err(0.005));
        assert!((e1 / e2 - 2.0).abs() < 0.15, "{e1} {e2}");
        assert!((e2 / e3 - 2.0).abs() < 0.15, "{e2} {e3}");
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(0.1 - 4.0 * PI) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn projection_branch_makes_constraint_active() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut fired = 0;
        for _ in 0..1000 {
            let u = ControlInput::new(rng.random_range(-2.0..2.0), rng.random_range(-3.0..3.0));
            let c = Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let d = rng.random_range(-1.0..1.0);
            let out = cbf_qp_filter(&u, &c, d, &ActuatorLimits::UNBOUNDED);
            if out.active {
                fired += 1;
                assert!((c.dot(&out.u.vector()) - d).abs() < 1e-12);
            } else {
                assert_eq!(out.u, u);
            }
        }
        assert!(fired > 100);
    }

    proptest! {
        #[test]
        fn alpha_is_class_k(gain in 1e-3f64..100.0, a in -10.0f64..10.0, b in -10.0f64..10.0) {
            let alpha = AlphaFunction::Linear { gain };
            prop_assert_eq!(alpha.eval(0.0), 0.0);
            if a < b {
                prop_assert!(alpha.eval(a) < alpha.eval(b));
            }
        }

        #[test]
        fn filtered_command_is_admissible(
            v in -1.0f64..2.0, w in -4.0f64..4.0,
            cx in -1.0f64..1.0, cy in -1.0f64..1.0, d in -1.0f64..1.0,
        ) {
            let lim = ActuatorLimits::default();
            let c = Vector2::new(cx, cy);
            let out = cbf_qp_filter(&ControlInput::new(v, w), &c, d, &lim);
            if !out.infeasible {
                prop_assert!(c.dot(&out.u.vector()) >= d - 1e-12);
                prop_assert!(out.u.v >= lim.v_min - 1e-12 && out.u.v <= lim.v_max + 1e-12);
                prop_assert!(out.u.w.abs() <= lim.w_max + 1e-12);
            }
        }
    }
}
