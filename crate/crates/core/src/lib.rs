//! Certifiably globally optimal truncated least squares (TLS) point cloud
//! registration by best-first branch and bound.
//!
//! Two problems are supported: rotation-only alignment over SO(3), and
//! full pose estimation when the rotation axis is known (`pose-so2`).

pub mod bnb;
pub mod contractor;
pub mod error;
pub mod geometry;
pub mod instances;
pub mod io;
pub mod relaxation;
pub mod sampling;
pub mod verify;
pub mod wls;

pub use error::{Error, Result};
pub use geometry::*;
