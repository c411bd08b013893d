//! Online neural signed distance fields from posed depth, coupled to a
//! control-barrier-function safety filter for a shifted-unicycle robot.
//!
//! The crate is organised bottom-up:
//!
//! - [`scene`]: analytic ground-truth worlds built from convex primitives.
//! - [`sensor`]: a simulated pinhole depth camera with noise and floor masking.
//! - [`field`]: the neural SDF (positional encoding + Softplus MLP), its exact
//!   input and parameter gradients, Adam, snapshots and checkpoints.
//! - [`trainer`]: keyframe replay, ray sampling, batch-distance supervision
//!   and the training losses.
//! - [`control`]: unicycle kinematics, the nominal controller and the
//!   closed-form CBF-QP filter.
//! - [`pipeline`]: scenario files, the simulated-time event loop, suites and
//!   output writers.

pub mod control;
pub mod error;
pub mod field;
pub mod gradcheck;
pub mod pipeline;
pub mod scene;
pub mod sensor;
pub mod trainer;

pub use error::{Error, Result};

/// World-frame 3-vector in meters.
pub type Vec3 = nalgebra::Vector3<f64>;
/// World-frame rotation matrix.
pub type Mat3 = nalgebra::Matrix3<f64>;
