//! Interacting-particle models of self-attention on the unit sphere.
//!
//! Tokens are points on the sphere that move under attention-driven velocity
//! fields. The crate provides the fields, projected integrators, a scalar
//! reduction for equiangular configurations, diagnostics, a mean-shift view of
//! attention, and experiment drivers that write CSV and JSON artifacts.

pub mod cli;
pub mod diagnostics;
pub mod equiangular;
pub mod experiments;
pub mod error;
pub mod fields;
pub mod integrate;
pub mod meanshift;
pub mod sphere;
pub mod tokens;

pub use error::{Error, Result};
pub use fields::{DirectionalState, DynamicsSpec, Model, NormalizationScheme};
pub use integrate::{IntegratorSpec, Method, NoiseSpec, Observers, RescaleMode, Trajectory};
pub use sphere::{RandomStream, TangentVector, UnitVector};
pub use tokens::{SquareMatrix, TokenConfiguration, Velocities};
