//! Geometry and quantization on cotangent bundles of complex Grassmannians,
//! modeled by rank-`n` idempotent matrices.

pub mod error;
pub mod geometries;
pub mod grassmann;
pub mod matrix;
pub mod monte_carlo;
pub mod propagator;
pub mod quantization;
pub mod symplectic;
pub mod tolerances;
pub mod verification;

pub use error::{Error, Result};
pub use grassmann::{ProjectionPoint, TangentVector};
pub use matrix::{ComplexMatrix, RngState, C64};
