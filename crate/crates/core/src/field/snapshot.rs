use std::sync::{Arc, RwLock};

use super::NetworkParams;
use crate::error::Result;
use crate::scene::Aabb;
use crate::Vec3;

/// A frozen copy of the field parameters that controllers query.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    params: NetworkParams<f32>,
    version: u64,
    trained_region: Aabb,
}

/// Field value and gradient at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldQuery {
    pub h: f64,
    pub gradient: Vec3,
    /// The point lies outside the region the field was trained on.
    pub extrapolated: bool,
}

impl FieldSnapshot {
    pub fn new(params: &NetworkParams<f32>, version: u64, trained_region: Aabb) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params: params.clone(),
            version,
            trained_region,
        })
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn trained_region(&self) -> &Aabb {
        &self.trained_region
    }

    pub fn params(&self) -> &NetworkParams<f32> {
        &self.params
    }

    pub fn query(&self, xi: &Vec3) -> FieldQuery {
        let p = [xi.x as f32, xi.y as f32, xi.z as f32];
        let (h, g) = self
            .params
            .value_and_gradient(p)
            .expect("snapshot parameters are validated on creation");
        FieldQuery {
            h: h as f64,
            gradient: Vec3::new(g[0] as f64, g[1] as f64, g[2] as f64),
            extrapolated: self.trained_region.is_empty() || !self.trained_region.contains(xi),
        }
    }

    pub fn value(&self, xi: &Vec3) -> f64 {
        self.params
            .forward([xi.x as f32, xi.y as f32, xi.z as f32])
            .expect("snapshot parameters are validated on creation") as f64
    }
}

/// Single-writer, many-reader publication point for snapshots.
///
/// Readers clone an `Arc` to the current snapshot and never observe a
/// partially written one; versions increase strictly.
#[derive(Debug, Default)]
pub struct SnapshotPublisher {
    current: RwLock<Option<Arc<FieldSnapshot>>>,
}

impl SnapshotPublisher {
    pub fn new() -> Self {
        Self::default()
    }

    /// Publishes a copy of `params` under the next version number.
    pub fn publish(&self, params: &NetworkParams<f32>, trained_region: Aabb) -> Result<Arc<FieldSnapshot>> {
        let mut slot = self.current.write().expect("publisher lock poisoned");
        let version = slot.as_ref().map_or(1, |s| s.version + 1);
        let snap = Arc::new(FieldSnapshot::new(params, version, trained_region)?);
        *slot = Some(Arc::clone(&snap));
        Ok(snap)
    }

    pub fn latest(&self) -> Option<Arc<FieldSnapshot>> {
        self.current.read().expect("publisher lock poisoned").clone()
    }
}
