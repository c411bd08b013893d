//! Static 3-d tree for nearest-surface-point queries.

use crate::Vec3;

#[derive(Debug, Clone)]
pub struct PointTree {
    points: Vec<Vec3>,
    // implicit balanced tree: node i covers order[lo..hi], split at mid
    order: Vec<usize>,
}

impl PointTree {
    pub fn new(points: Vec<Vec3>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build(&points, &mut order, 0);
        Self { points, order }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Nearest point to `q` strictly closer than `max_dist`, as
    /// `(index, distance)`.
    pub fn nearest_within(&self, q: &Vec3, max_dist: f64) -> Option<(usize, f64)> {
        let mut best = (usize::MAX, max_dist * max_dist);
        self.search(q, 0, self.order.len(), 0, &mut best);
        (best.0 != usize::MAX).then(|| (best.0, best.1.sqrt()))
    }

    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        self.nearest_within(q, f64::INFINITY)
    }

    fn search(&self, q: &Vec3, lo: usize, hi: usize, depth: usize, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx];
        let d2 = (p - q).norm_squared();
        if d2 < best.1 || (d2 == best.1 && idx < best.0) {
            *best = (idx, d2);
        }
        let axis = depth % 3;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, depth + 1, best);
        if diff * diff <= best.1 {
            self.search(q, far.0, far.1, depth + 1, best);
        }
    }
}

fn build(points: &[Vec3], order: &mut [usize], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    let (left, right) = order.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut right[1..], depth + 1);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn matches_brute_force(
            pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 1..200),
            q in (-6.0f64..6.0, -6.0f64..6.0, -6.0f64..6.0),
        ) {
            let points: Vec<Vec3> = pts.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
            let q = Vec3::new(q.0, q.1, q.2);
            let brute = points.iter().map(|p| (p - q).norm()).fold(f64::INFINITY, f64::min);
            let tree = PointTree::new(points);
            let (_, d) = tree.nearest(&q).unwrap();
            prop_assert!((d - brute).abs() < 1e-12);
            prop_assert!(tree.nearest_within(&q, brute * 0.999).is_none());
        }
    }

    #[test]
    fn empty_tree() {
        let t = PointTree::new(vec![]);
        assert!(t.nearest(&Vec3::zeros()).is_none());
    }
}
