//! Randomised properties of the scene oracle, the sensor and the sampler,
//! each against an independent reference.

use std::f64::consts::PI;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sdfnav_core::scene::{Aabb, Primitive, Scene, SurfaceId};
use sdfnav_core::sensor::{backproject, mask_floor, render_depth, CameraIntrinsics, CameraPose, FLOOR_TOLERANCE};
use sdfnav_core::trainer::{sample_batch, Keyframe, SamplingConfig};
use sdfnav_core::Vec3;

fn world() -> Aabb {
    Aabb::new(Vec3::repeat(-6.0), Vec3::repeat(6.0))
}

/// A parameterised surface patch: point at `(s, t)` over the given ranges.
/// Periodic parameters may leave their range while refining.
struct Patch<'a> {
    at: Box<dyn Fn(f64, f64) -> Vec3 + 'a>,
    s: (f64, f64, bool),
    t: (f64, f64, bool),
}

/// Distance from `q` to a patch by a dense grid followed by repeated local
/// refinement around the best sample.
fn patch_distance(patch: &Patch, q: &Vec3) -> f64 {
    let n = 120;
    let dist = |s: f64, t: f64| ((patch.at)(s, t) - q).norm();
    let (mut s_lo, mut s_hi) = (patch.s.0, patch.s.1);
    let (mut t_lo, mut t_hi) = (patch.t.0, patch.t.1);
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for _ in 0..30 {
        for i in 0..=n {
            for j in 0..=n {
                let s = s_lo + (s_hi - s_lo) * i as f64 / n as f64;
                let t = t_lo + (t_hi - t_lo) * j as f64 / n as f64;
                let d = dist(s, t);
                if d < best.0 {
                    best = (d, s, t);
                }
            }
        }
        let (ds, dt) = ((s_hi - s_lo) * 0.05, (t_hi - t_lo) * 0.05);
        let clamp = |x: f64, (lo, hi, periodic): (f64, f64, bool)| if periodic { x } else { x.clamp(lo, hi) };
        (s_lo, s_hi) = (clamp(best.1 - ds, patch.s), clamp(best.1 + ds, patch.s));
        (t_lo, t_hi) = (clamp(best.2 - dt, patch.t), clamp(best.2 + dt, patch.t));
    }
    best.0
}

#[derive(Debug, Clone)]
enum Shape {
    Sphere { c: Vec3, r: f64 },
    Cuboid { c: Vec3, h: Vec3 },
    Cylinder { cx: f64, cy: f64, r: f64, z0: f64, z1: f64 },
}

impl Shape {
    fn primitive(&self) -> Primitive {
        match *self {
            Shape::Sphere { c, r } => Primitive::sphere(c, r),
            Shape::Cuboid { c, h } => Primitive::cuboid(c, h),
            Shape::Cylinder { cx, cy, r, z0, z1 } => Primitive::cylinder(cx, cy, r, z0, z1),
        }
    }

    fn contains(&self, q: &Vec3) -> bool {
        match *self {
            Shape::Sphere { c, r } => (q - c).norm() < r,
            Shape::Cuboid { c, h } => (0..3).all(|k| (q[k] - c[k]).abs() < h[k]),
            Shape::Cylinder { cx, cy, r, z0, z1 } => {
                (q.x - cx).hypot(q.y - cy) < r && q.z > z0 && q.z < z1
            }
        }
    }

    fn patches(&self) -> Vec<Patch<'_>> {
        let lin = |lo: f64, hi: f64| (lo, hi, false);
        let turn = (0.0, 2.0 * PI, true);
        match self {
            Shape::Sphere { c, r } => vec![Patch {
                at: Box::new(move |th, ph| c + *r * Vec3::new(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos())),
                s: lin(0.0, PI),
                t: turn,
            }],
            Shape::Cuboid { c, h } => {
                let mut out = Vec::new();
                for axis in 0..3 {
                    for sign in [-1.0, 1.0] {
                        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
                        out.push(Patch {
                            at: Box::new(move |s, t| {
                                let mut p = *c;
                                p[axis] += sign * h[axis];
                                p[a] += s * h[a];
                                p[b] += t * h[b];
                                p
                            }),
                            s: lin(-1.0, 1.0),
                            t: lin(-1.0, 1.0),
                        });
                    }
                }
                out
            }
            Shape::Cylinder { cx, cy, r, z0, z1 } => {
                let side = Patch {
                    at: Box::new(move |ph, z| Vec3::new(cx + r * ph.cos(), cy + r * ph.sin(), z)),
                    s: turn,
                    t: lin(*z0, *z1),
                };
                let cap = |z: f64| Patch {
                    at: Box::new(move |rho, ph| Vec3::new(cx + rho * ph.cos(), cy + rho * ph.sin(), z)),
                    s: lin(0.0, *r),
                    t: turn,
                };
                vec![side, cap(*z0), cap(*z1)]
            }
        }
    }

    fn signed_distance(&self, q: &Vec3) -> f64 {
        let d = self.patches().iter().map(|p| patch_distance(p, q)).fold(f64::INFINITY, f64::min);
        if self.contains(q) {
            -d
        } else {
            d
        }
    }
}

fn coord() -> std::ops::Range<f64> {
    -1.0..1.0
}

fn shape() -> impl Strategy<Value = Shape> {
    let center = (coord(), coord(), coord()).prop_map(|(x, y, z)| Vec3::new(x, y, z));
    prop_oneof![
        (center.clone(), 0.1f64..1.0).prop_map(|(c, r)| Shape::Sphere { c, r }),
        (center, 0.1f64..0.8, 0.1f64..0.8, 0.1f64..0.8).prop_map(|(c, a, b, d)| Shape::Cuboid {
            c,
            h: Vec3::new(a, b, d)
        }),
        (coord(), coord(), 0.1f64..0.8, -1.0f64..0.0, 0.1f64..1.0).prop_map(|(cx, cy, r, z0, len)| {
            Shape::Cylinder { cx, cy, r, z0, z1: z0 + len }
        }),
    ]
}

fn query() -> impl Strategy<Value = Vec3> {
    (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scene_distance_matches_dense_surface_sampling(shape in shape(), q in query()) {
        let scene = Scene::new(vec![shape.primitive()], None, world()).unwrap();
        let got = scene.sdf(&q, false).distance;
        let want = shape.signed_distance(&q);
        prop_assert!((got - want).abs() < 1e-3, "{shape:?} at {q:?}: {got} vs {want}");
    }

    #[test]
    fn exterior_gradient_is_a_unit_finite_difference(shape in shape(), q in query()) {
        let scene = Scene::new(vec![shape.primitive()], None, world()).unwrap();
        let at = scene.sdf(&q, false);
        // outside a convex primitive the nearest point is unique
        prop_assume!(at.distance > 1e-2);
        prop_assert!((at.gradient.norm() - 1.0).abs() < 1e-12);
        let step = 1e-5;
        for k in 0..3 {
            let mut e = Vec3::zeros();
            e[k] = step;
            let fd = (scene.sdf(&(q + e), false).distance - scene.sdf(&(q - e), false).distance) / (2.0 * step);
            prop_assert!((fd - at.gradient[k]).abs() < 1e-6, "axis {k}: {fd} vs {}", at.gradient[k]);
        }
    }

    #[test]
    fn floor_mask_removes_exactly_the_floor_hits(
        boxes in prop::collection::vec((0.8f64..3.0, -1.0f64..1.0, 0.05f64..0.6, 0.05f64..0.4), 1..4),
        height in 0.3f64..1.5,
        pitch in 0.1f64..1.0,
        yaw in -0.5f64..0.5,
    ) {
        // obstacles float clear of the masking band
        let obstacles = boxes
            .iter()
            .map(|&(x, y, lift, h)| Primitive::cuboid(Vec3::new(x, y, FLOOR_TOLERANCE + 0.01 + lift + h), Vec3::repeat(h)))
            .collect();
        let scene = Scene::new(obstacles, Some(0.0), world()).unwrap();
        let pose = CameraPose::looking(Vec3::new(0.0, 0.0, height), yaw, pitch);
        let rendered = render_depth(&scene, &pose, &CameraIntrinsics::default(), 0.0);
        let masked = mask_floor(&rendered.frame, &scene, FLOOR_TOLERANCE);
        for i in 0..rendered.labels.len() {
            match rendered.labels[i] {
                Some(SurfaceId::Floor) => prop_assert!(!masked.valid[i]),
                Some(SurfaceId::Obstacle(_)) => prop_assert_eq!(masked.valid[i], rendered.frame.valid[i]),
                None => prop_assert!(!masked.valid[i]),
            }
        }
    }

    #[test]
    fn valid_pixels_back_project_onto_surfaces(shape in shape(), yaw in -0.3f64..0.3) {
        let scene = Scene::new(vec![shape.primitive()], Some(-1.5), world()).unwrap();
        let pose = CameraPose::looking(Vec3::new(-3.5, 0.0, 0.5), yaw, 0.2);
        let frame = render_depth(&scene, &pose, &CameraIntrinsics::default(), 0.0).frame;
        let valid = frame.valid_indices();
        let on_surface = valid
            .iter()
            .filter(|&&i| {
                let (u, v) = frame.pixel(i);
                let p = backproject(&frame, u, v).unwrap();
                scene.sdf(&p, true).distance.abs() < 1e-3
            })
            .count();
        prop_assert!(on_surface as f64 >= 0.99 * valid.len() as f64, "{on_surface}/{}", valid.len());
    }

    #[test]
    fn samples_partition_and_bounds_cap_the_true_distance(
        c in (1.5f64..3.0, -0.5f64..0.5, -0.5f64..0.5),
        r in 0.2f64..0.8,
        seed in 0u64..1000,
    ) {
        let center = Vec3::new(c.0, c.1, c.2);
        let scene = Scene::new(vec![Primitive::sphere(center, r)], None, world()).unwrap();
        let pose = CameraPose::looking(Vec3::zeros(), 0.0, 0.0);
        let frame = render_depth(&scene, &pose, &CameraIntrinsics::default(), 0.0).frame;
        prop_assume!(!frame.valid_indices().is_empty());
        let kf = Keyframe::new(0, frame, 0.0).unwrap();
        let band = 0.1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = sample_batch(&[&kf], &mut rng, &SamplingConfig::default(), band).unwrap();
        for p in &batch.points {
            prop_assert_eq!(p.near_surface, (p.surface_depth - p.depth).abs() < band);
            if !p.near_surface && p.bound > 0.0 {
                let truth = scene.sdf(&p.position, false).distance;
                prop_assert!(p.bound >= truth - 1e-3, "bound {} below true distance {}", p.bound, truth);
            }
        }
    }
}
