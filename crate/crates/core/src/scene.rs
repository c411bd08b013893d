//! Analytic world model: unions of convex primitives with exact signed
//! distances and surface normals.
//!
//! The scene is the ground truth for everything downstream. The depth
//! sensor raycasts it, evaluation compares learned fields against it, and
//! the parametric controller arm uses it directly as its barrier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

/// A convex solid (or half-space) in world coordinates, meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    /// Axis-aligned box given by its center and half extents.
    Box {
        center: [f64; 3],
        half_extents: [f64; 3],
    },
    /// Half-space `{q : normal·q < offset}`; the surface is `normal·q = offset`.
    Plane {
        normal: [f64; 3],
        offset: f64,
    },
    /// Capped cylinder with a vertical axis through `(center_x, center_y)`.
    Cylinder {
        center_xy: [f64; 2],
        radius: f64,
        z_min: f64,
        z_max: f64,
    },
}

impl Primitive {
    pub fn sphere(center: Vec3, radius: f64) -> Self {
        Primitive::Sphere {
            center: center.into(),
            radius,
        }
    }

    pub fn cuboid(center: Vec3, half_extents: Vec3) -> Self {
        Primitive::Box {
            center: center.into(),
            half_extents: half_extents.into(),
        }
    }

    pub fn plane(normal: Vec3, offset: f64) -> Self {
        Primitive::Plane {
            normal: normal.into(),
            offset,
        }
    }

    pub fn cylinder(center_x: f64, center_y: f64, radius: f64, z_min: f64, z_max: f64) -> Self {
        Primitive::Cylinder {
            center_xy: [center_x, center_y],
            radius,
            z_min,
            z_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Primitive::Sphere { center, radius } => {
                if !finite(center) || !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::invalid("sphere needs a finite center and radius > 0"));
                }
            }
            Primitive::Box {
                center,
                half_extents,
            } => {
                if !finite(center) || !half_extents.iter().all(|e| e.is_finite() && *e > 0.0) {
                    return Err(Error::invalid("box half extents must be strictly positive"));
                }
            }
            Primitive::Plane { normal, offset } => {
                let n = Vec3::from(*normal);
                if !offset.is_finite() || !finite(normal) || (n.norm() - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid("plane normal must be unit length"));
                }
            }
            Primitive::Cylinder {
                center_xy,
                radius,
                z_min,
                z_max,
            } => {
                if !finite(center_xy)
                    || !(radius.is_finite() && *radius > 0.0)
                    || !(z_min.is_finite() && z_max.is_finite() && z_max > z_min)
                {
                    return Err(Error::invalid(
                        "cylinder needs radius > 0 and z_max > z_min",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Exact signed distance from `q` to the primitive surface.
    pub fn sdf(&self, q: &Vec3) -> f64 {
        self.sdf_with_gradient(q).0
    }

    /// Signed distance together with its analytic gradient (the outward
    /// surface normal of the nearest surface point).
    pub fn sdf_with_gradient(&self, q: &Vec3) -> (f64, Vec3) {
        match self {
            Primitive::Sphere { center, radius } => {
                let d = q - Vec3::from(*center);
                let n = d.norm();
                let grad = if n > 0.0 { d / n } else { Vec3::x() };
                (n - radius, grad)
            }
            Primitive::Box {
                center,
                half_extents,
            } => {
                let local = q - Vec3::from(*center);
                let e = Vec3::from(*half_extents);
                let sign = local.map(|x| if x < 0.0 { -1.0 } else { 1.0 });
                let w = local.abs() - e;
                let outside = w.map(|x| x.max(0.0));
                let out_norm = outside.norm();
                if out_norm > 0.0 {
                    (out_norm, outside.component_mul(&sign) / out_norm)
                } else {
                    let axis = w.imax();
                    let mut grad = Vec3::zeros();
                    grad[axis] = sign[axis];
                    (w[axis], grad)
                }
            }
            Primitive::Plane { normal, offset } => {
                let n = Vec3::from(*normal);
                (n.dot(q) - offset, n)
            }
            Primitive::Cylinder {
                center_xy,
                radius,
                z_min,
                z_max,
            } => {
                let dx = q.x - center_xy[0];
                let dy = q.y - center_xy[1];
                let rho = dx.hypot(dy);
                let (ux, uy) = if rho > 0.0 {
                    (dx / rho, dy / rho)
                } else {
                    (1.0, 0.0)
                };
                let zc = 0.5 * (z_min + z_max);
                let hz = 0.5 * (z_max - z_min);
                let zs = if q.z < zc { -1.0 } else { 1.0 };
                let wr = rho - radius;
                let wz = (q.z - zc).abs() - hz;
                let (pr, pz) = (wr.max(0.0), wz.max(0.0));
                let out = pr.hypot(pz);
                if out > 0.0 {
                    (
                        out,
                        Vec3::new(ux * pr / out, uy * pr / out, zs * pz / out),
                    )
                } else if wr >= wz {
                    (wr, Vec3::new(ux, uy, 0.0))
                } else {
                    (wz, Vec3::new(0.0, 0.0, zs))
                }
            }
        }
    }

    /// Axis-aligned bounding box, `None` for unbounded primitives.
    pub fn aabb(&self) -> Option<Aabb> {
        match self {
            Primitive::Sphere { center, radius } => {
                let c = Vec3::from(*center);
                let r = Vec3::repeat(*radius);
                Some(Aabb::new(c - r, c + r))
            }
            Primitive::Box {
                center,
                half_extents,
            } => {
                let c = Vec3::from(*center);
                let e = Vec3::from(*half_extents);
                Some(Aabb::new(c - e, c + e))
            }
            Primitive::Plane { .. } => None,
            Primitive::Cylinder {
                center_xy,
                radius,
                z_min,
                z_max,
            } => Some(Aabb::new(
                Vec3::new(center_xy[0] - radius, center_xy[1] - radius, *z_min),
                Vec3::new(center_xy[0] + radius, center_xy[1] + radius, *z_max),
            )),
        }
    }
}

/// Axis-aligned box in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self {
            min: min.into(),
            max: max.into(),
        }
    }

    pub fn min(&self) -> Vec3 {
        Vec3::from(self.min)
    }

    pub fn max(&self) -> Vec3 {
        Vec3::from(self.max)
    }

    pub fn contains(&self, q: &Vec3) -> bool {
        (0..3).all(|i| q[i] >= self.min[i] && q[i] <= self.max[i])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.contains(&other.min()) && self.contains(&other.max())
    }

    pub fn grow(&mut self, q: &Vec3) {
        for i in 0..3 {
            self.min[i] = self.min[i].min(q[i]);
            self.max[i] = self.max[i].max(q[i]);
        }
    }

    pub fn empty() -> Self {
        Self {
            min: [f64::INFINITY; 3],
            max: [f64::NEG_INFINITY; 3],
        }
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|i| self.min[i] > self.max[i])
    }
}

/// Which surface a query or ray resolved to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SurfaceId {
    Obstacle(usize),
    Floor,
}

/// Result of a scene distance query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneDistance {
    /// Signed distance in meters; `+inf` when no geometry was considered.
    pub distance: f64,
    /// Unit gradient, or zero when the query found no geometry.
    pub gradient: Vec3,
    /// The minimizing surface, `None` for the empty sentinel.
    pub nearest: Option<SurfaceId>,
}

impl SceneDistance {
    pub fn is_empty(&self) -> bool {
        self.nearest.is_none()
    }

    fn empty() -> Self {
        Self {
            distance: f64::INFINITY,
            gradient: Vec3::zeros(),
            nearest: None,
        }
    }
}

/// A union of obstacles above an optional horizontal floor plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub obstacles: Vec<Primitive>,
    /// Height of the floor plane (normal +z), if the scene has one.
    pub floor_height: Option<f64>,
    pub bounds: Aabb,
}

impl Scene {
    pub fn new(obstacles: Vec<Primitive>, floor_height: Option<f64>, bounds: Aabb) -> Result<Self> {
        let scene = Self {
            obstacles,
            floor_height,
            bounds,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn empty(bounds: Aabb) -> Self {
        Self {
            obstacles: Vec::new(),
            floor_height: None,
            bounds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bounds.is_empty() {
            return Err(Error::invalid("scene bounds are empty"));
        }
        if let Some(z) = self.floor_height {
            if !z.is_finite() {
                return Err(Error::invalid("floor height must be finite"));
            }
        }
        for (i, p) in self.obstacles.iter().enumerate() {
            p.validate()
                .map_err(|e| Error::invalid(format!("obstacle {i}: {e}")))?;
            if let Some(b) = p.aabb() {
                if !self.bounds.contains_box(&b) {
                    return Err(Error::invalid(format!("obstacle {i} leaves the scene bounds")));
                }
            }
        }
        Ok(())
    }

    fn floor_primitive(&self) -> Option<Primitive> {
        self.floor_height
            .map(|z| Primitive::plane(Vec3::z(), z))
    }

    /// Distance to the union of obstacles (and optionally the floor).
    ///
    /// Ties between equidistant surfaces resolve to the lowest obstacle
    /// index; the floor ranks after every obstacle.
    pub fn sdf(&self, q: &Vec3, include_floor: bool) -> SceneDistance {
        let mut best = SceneDistance::empty();
        for (i, p) in self.obstacles.iter().enumerate() {
            let (d, g) = p.sdf_with_gradient(q);
            if best.is_empty() || d < best.distance {
                best = SceneDistance {
                    distance: d,
                    gradient: g,
                    nearest: Some(SurfaceId::Obstacle(i)),
                };
            }
        }
        if include_floor {
            if let Some(floor) = self.floor_primitive() {
                let (d, g) = floor.sdf_with_gradient(q);
                if best.is_empty() || d < best.distance {
                    best = SceneDistance {
                        distance: d,
                        gradient: g,
                        nearest: Some(SurfaceId::Floor),
                    };
                }
            }
        }
        best
    }

    /// Distance only, floor included. Used by the raycaster.
    pub fn distance(&self, q: &Vec3) -> f64 {
        self.sdf(q, true).distance
    }

    /// Number of surfaces within `tol` of the minimum distance at `q`.
    /// More than one means `q` sits on (or near) a medial axis.
    pub fn minimizer_count(&self, q: &Vec3, include_floor: bool, tol: f64) -> usize {
        let best = self.sdf(q, include_floor).distance;
        let mut n = self
            .obstacles
            .iter()
            .filter(|p| p.sdf(q) - best <= tol)
            .count();
        if include_floor {
            if let Some(floor) = self.floor_primitive() {
                if floor.sdf(q) - best <= tol {
                    n += 1;
                }
            }
        }
        n
    }

    /// Sphere-traces a ray against the scene (floor included).
    ///
    /// `direction` must be unit length. Returns the range along the ray
    /// and the surface hit, or `None` when the ray escapes `max_range` or
    /// the step budget runs out.
    pub fn raycast(
        &self,
        origin: &Vec3,
        direction: &Vec3,
        max_range: f64,
        tolerance: f64,
        max_steps: usize,
    ) -> Option<RayHit> {
        let mut t = 0.0;
        for _ in 0..max_steps {
            let p = origin + direction * t;
            let sd = self.sdf(&p, true);
            if sd.is_empty() {
                return None;
            }
            if sd.distance.abs() < tolerance {
                return Some(RayHit {
                    range: t,
                    surface: sd.nearest.expect("non-empty query"),
                });
            }
            t += sd.distance.abs();
            if t > max_range {
                return None;
            }
        }
        None
    }
}

/// A sphere-traced ray intersection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub range: f64,
    pub surface: SurfaceId,
}

/// Smallest obstacle clearance (floor excluded) along a trajectory.
pub fn min_clearance(scene: &Scene, trajectory: &[Vec3]) -> Result<f64> {
    if trajectory.is_empty() {
        return Err(Error::invalid("trajectory is empty"));
    }
    Ok(trajectory
        .iter()
        .map(|q| scene.sdf(q, false).distance)
        .fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn bounds() -> Aabb {
        Aabb::new(Vec3::repeat(-10.0), Vec3::repeat(10.0))
    }

    #[test]
    fn sphere_distances() {
        let s = Primitive::sphere(Vec3::zeros(), 1.0);
        assert_eq!(s.sdf(&Vec3::new(2.0, 0.0, 0.0)), 1.0);
        assert_eq!(s.sdf(&Vec3::zeros()), -1.0);
    }

    #[test]
    fn box_exterior_corner_distance() {
        let b = Primitive::cuboid(Vec3::zeros(), Vec3::repeat(1.0));
        assert_abs_diff_eq!(b.sdf(&Vec3::new(2.0, 2.0, 0.0)), 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(b.sdf(&Vec3::new(0.5, 0.0, 0.0)), -0.5);
    }

    #[test]
    fn cylinder_side_cap_and_inside() {
        let c = Primitive::cylinder(0.0, 0.0, 0.5, 0.0, 1.0);
        assert_abs_diff_eq!(c.sdf(&Vec3::new(1.5, 0.0, 0.5)), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.sdf(&Vec3::new(0.0, 0.0, 1.25)), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(c.sdf(&Vec3::new(0.0, 0.0, 0.5)), -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(c.sdf(&Vec3::new(0.8, 0.0, 1.4)), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn equidistant_spheres_break_tie_to_lowest_index() {
        let scene = Scene::new(
            vec![
                Primitive::sphere(Vec3::new(3.0, 0.0, 0.0), 1.0),
                Primitive::sphere(Vec3::new(-3.0, 0.0, 0.0), 1.0),
            ],
            None,
            bounds(),
        )
        .unwrap();
        let d = scene.sdf(&Vec3::zeros(), true);
        assert_eq!(d.distance, 2.0);
        assert_eq!(d.gradient, Vec3::new(-1.0, 0.0, 0.0));
        assert_eq!(d.nearest, Some(SurfaceId::Obstacle(0)));
        assert_eq!(scene.minimizer_count(&Vec3::zeros(), true, 1e-9), 2);
    }

    #[test]
    fn floor_only_scene_without_floor_is_empty_sentinel() {
        let scene = Scene::new(vec![], Some(0.0), bounds()).unwrap();
        let d = scene.sdf(&Vec3::new(0.0, 0.0, 0.5), false);
        assert!(d.is_empty());
        assert_eq!(d.distance, f64::INFINITY);
        assert_eq!(d.gradient, Vec3::zeros());
        let with_floor = scene.sdf(&Vec3::new(0.0, 0.0, 0.5), true);
        assert_eq!(with_floor.distance, 0.5);
        assert_eq!(with_floor.nearest, Some(SurfaceId::Floor));
    }

    #[test]
    fn sphere_gradient_is_radial() {
        let scene = Scene::new(vec![Primitive::sphere(Vec3::zeros(), 1.0)], None, bounds()).unwrap();
        let d = scene.sdf(&Vec3::new(0.0, 2.0, 0.0), false);
        assert_eq!(d.distance, 1.0);
        assert_eq!(d.gradient, Vec3::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn clearance_along_paths() {
        let scene = Scene::new(vec![Primitive::sphere(Vec3::zeros(), 1.0)], Some(-5.0), bounds()).unwrap();
        let through: Vec<Vec3> = (0..=20).map(|i| Vec3::new(-2.0 + 0.2 * i as f64, 0.0, 0.0)).collect();
        assert_abs_diff_eq!(min_clearance(&scene, &through).unwrap(), -1.0, epsilon = 1e-12);
        let ring: Vec<Vec3> = (0..64)
            .map(|i| {
                let a = i as f64 * std::f64::consts::TAU / 64.0;
                Vec3::new(1.5 * a.cos(), 1.5 * a.sin(), 0.0)
            })
            .collect();
        assert_abs_diff_eq!(min_clearance(&scene, &ring).unwrap(), 0.5, epsilon = 1e-12);
        assert!(min_clearance(&scene, &[]).is_err());
    }

    #[test]
    fn validation_rejects_bad_primitives() {
        assert!(Primitive::sphere(Vec3::zeros(), 0.0).validate().is_err());
        assert!(Primitive::cuboid(Vec3::zeros(), Vec3::new(1.0, 0.0, 1.0)).validate().is_err());
        assert!(Primitive::plane(Vec3::new(0.0, 0.0, 2.0), 0.0).validate().is_err());
        let outside = Scene::new(
            vec![Primitive::sphere(Vec3::new(9.5, 0.0, 0.0), 1.0)],
            None,
            bounds(),
        );
        assert!(outside.is_err());
    }

    #[test]
    fn raycast_hits_sphere_front() {
        let scene = Scene::new(vec![Primitive::sphere(Vec3::new(5.0, 0.0, 0.0), 1.0)], None, bounds()).unwrap();
        let hit = scene
            .raycast(&Vec3::zeros(), &Vec3::x(), 20.0, 1e-4, 256)
            .unwrap();
        assert_abs_diff_eq!(hit.range, 4.0, epsilon = 1e-4);
        assert_eq!(hit.surface, SurfaceId::Obstacle(0));
        assert!(scene.raycast(&Vec3::zeros(), &-Vec3::x(), 20.0, 1e-4, 256).is_none());
    }
}
