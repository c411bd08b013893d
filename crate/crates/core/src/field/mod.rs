//! The neural signed distance field: encoding, network, optimizer,
//! immutable snapshots and checkpoints.

mod adam;
mod checkpoint;
mod encoding;
mod network;
mod snapshot;

pub use adam::{AdamConfig, OptimizerState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use encoding::Encoding;
pub use network::{Dense, Evaluation, NetworkConfig, NetworkParams};
pub use snapshot::{FieldQuery, FieldSnapshot, SnapshotPublisher};

use std::fmt::{Debug, Display};

/// Floating-point types the network runs in: `f32` for training, `f64`
/// for gradient verification.
pub trait Scalar:
    ndarray::LinalgScalar + num_traits::Float + Send + Sync + Debug + Display + 'static
{
    /// Largest `a` for which `exp(-a)` is still a normal number.
    const UNDERFLOW: f64;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    const UNDERFLOW: f64 = 87.0;
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const UNDERFLOW: f64 = 708.0;
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}
